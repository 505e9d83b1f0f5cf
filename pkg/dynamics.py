import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from errors import ArgumentError, NumericalError

# Dense grid used to verify the self-map property of the piecewise map at construction.
SELF_MAP_GRID = 10_001
SELF_MAP_TOL = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box X = [lower, upper] in R^n."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if not lower or len(lower) != len(upper):
            raise ArgumentError(
                f"domain bounds must be non-empty and of equal length (got {len(lower)} and {len(upper)})"
            )
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise ArgumentError(f"domain axis {i}: lower {lo} must be < upper {hi}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def is_unit_interval(self) -> bool:
        return self.lower == (0.0,) and self.upper == (1.0,)

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lo) & (X <= self.hi), axis=1)

    def clamp(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Clip rows of X into the box. Returns (clipped, mask of rows that were outside)."""
        X = np.atleast_2d(X)
        outside = ~self.contains(X)
        return np.clip(X, self.lo, self.hi), outside

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(X) - self.lo) / self.extent

    def denormalize(self, U: np.ndarray) -> np.ndarray:
        return self.lo + np.atleast_2d(U) * self.extent

    def grid(self, per_axis: int) -> np.ndarray:
        """Cell-midpoint tensor grid with per_axis points along every axis, shape (per_axis**n, n)."""
        if per_axis < 1:
            raise ArgumentError(f"grid needs at least one point per axis (got {per_axis})")
        axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


UNIT_INTERVAL = Domain((0.0,), (1.0,))

# Position box covers the reach of both cables plus the stretch of a hard landing;
# velocity bounds cover a release from the anchor line.
CABLE_DOMAIN = Domain((-1.5, -1.7, -7.0, -7.0), (1.5, 0.3, 7.0, 7.0))


@dataclass(frozen=True)
class IdentityMap:
    domain: Domain = UNIT_INTERVAL
    kind = "identity"

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.array(X, dtype=float, copy=True)


@dataclass(frozen=True)
class CircleRotation:
    """F(x) = (x + shift) mod 1 on [0, 1]."""

    shift: float
    domain: Domain = UNIT_INTERVAL
    kind = "rotation"

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.mod(np.asarray(X, dtype=float) + self.shift, 1.0)


@dataclass(frozen=True)
class PiecewiseLinearMap:
    """
    Two affine branches on [0, 1] joined at x_star with a jump of size |a|:

        F(x) = c*x - c*x_star          for 0 <= x <= x_star
        F(x) = b*x + a - b*x_star      for x_star < x <= 1

    Defaults give an expanding left branch (slope -2) and a contracting right branch
    (slope 1/2). Orbits alternate between branches and settle on neutral period-4
    cycles inside (a, x_star/2) ∪ (x_star, ...), which is what keeps a group of
    lifted poles on the unit circle.
    """

    a: float = 0.1
    b: float = 0.5
    c: float = -2.0
    x_star: float = 0.4
    domain: Domain = field(default=UNIT_INTERVAL)
    kind = "piecewise"

    def __post_init__(self):
        if not self.domain.is_unit_interval:
            raise ArgumentError("piecewise map is defined on [0, 1] only")
        if not 0.0 < self.x_star < 1.0:
            raise ArgumentError(f"x_star must lie in (0, 1) (got {self.x_star})")
        if self.a == 0.0:
            raise ArgumentError("a = 0 removes the discontinuity at x_star; the map would not be hybrid")
        grid = np.linspace(0.0, 1.0, SELF_MAP_GRID)[:, None]
        image = self.apply(grid)
        if image.min() < -SELF_MAP_TOL or image.max() > 1.0 + SELF_MAP_TOL:
            raise ArgumentError(
                f"parameters a={self.a}, b={self.b}, c={self.c}, x_star={self.x_star} "
                f"do not map [0, 1] into itself (image spans [{image.min():.4f}, {image.max():.4f}])"
            )

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.x_star,)

    @property
    def jump(self) -> float:
        return abs(self.a)

    def region(self, x: float) -> str:
        return "L" if x <= self.x_star else "R"

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        x = X[:, 0]
        left = self.c * (x - self.x_star)
        right = self.b * (x - self.x_star) + self.a
        return np.where(x <= self.x_star, left, right)[:, None]


@dataclass(frozen=True)
class CableSystem:
    """
    Point mass hanging from two unilateral cables, integrated with one RK4 step of size `step`.

    State is (x_m, y_m, xdot_m, ydot_m). `gravity` is the acceleration vector (pointing down).
    Cable tension is k*(l - L) + damping*max(0, dl/dt) while stretched, zero while slack.
    """

    mass: float = 1.0
    gravity: tuple[float, float] = (0.0, -9.81)
    anchor_a: tuple[float, float] = (-1.0, 0.0)
    anchor_b: tuple[float, float] = (1.0, 0.0)
    length_a: float = 1.5
    length_b: float = 1.5
    stiffness: float = 200.0
    damping: float = 2.0
    step: float = 0.01
    domain: Domain = field(default=CABLE_DOMAIN)
    kind = "cable"

    def __post_init__(self):
        if self.mass <= 0:
            raise ArgumentError(f"mass must be > 0 (got {self.mass})")
        if self.stiffness <= 0:
            raise ArgumentError(f"stiffness must be > 0 (got {self.stiffness})")
        if self.damping < 0:
            raise ArgumentError(f"damping must be >= 0 (got {self.damping})")
        if self.step <= 0:
            raise ArgumentError(f"step must be > 0 (got {self.step})")
        if self.length_a <= 0 or self.length_b <= 0:
            raise ArgumentError(f"cable lengths must be > 0 (got {self.length_a}, {self.length_b})")
        if self.domain.dimension != 4:
            raise ArgumentError(f"cable domain must be 4-dimensional (got {self.domain.dimension})")
        for name in ("gravity", "anchor_a", "anchor_b"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 2:
                raise ArgumentError(f"{name} must be a 2-vector (got {value})")
            object.__setattr__(self, name, value)

    def _cables(self):
        return (
            (np.asarray(self.anchor_a), self.length_a),
            (np.asarray(self.anchor_b), self.length_b),
        )

    def tensions(self, pos: np.ndarray, vel: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        """Return (tensions (N, 2), lengths (N, 2), unit vectors toward each anchor)."""
        T = np.zeros((pos.shape[0], 2))
        ell = np.zeros((pos.shape[0], 2))
        units = []
        for j, (anchor, length) in enumerate(self._cables()):
            d = anchor - pos
            lj = np.linalg.norm(d, axis=1)
            n = np.divide(d, lj[:, None], out=np.zeros_like(d), where=lj[:, None] > 0)
            ldot = -np.sum(vel * n, axis=1)
            stretched = lj > length
            tension = self.stiffness * (lj - length) + self.damping * np.maximum(0.0, ldot)
            T[:, j] = np.where(stretched, np.maximum(0.0, tension), 0.0)
            ell[:, j] = lj
            units.append(n)
        return T, ell, units

    def acceleration(self, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
        T, _ell, units = self.tensions(pos, vel)
        acc = np.broadcast_to(np.asarray(self.gravity), pos.shape).copy()
        for j, n in enumerate(units):
            acc += (T[:, j] / self.mass)[:, None] * n
        return acc

    def _rhs(self, S: np.ndarray) -> np.ndarray:
        pos, vel = S[:, :2], S[:, 2:]
        return np.hstack([vel, self.acceleration(pos, vel)])

    def apply(self, X: np.ndarray) -> np.ndarray:
        S = np.asarray(X, dtype=float)
        h = self.step
        k1 = self._rhs(S)
        k2 = self._rhs(S + 0.5 * h * k1)
        k3 = self._rhs(S + 0.5 * h * k2)
        k4 = self._rhs(S + h * k3)
        return S + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def region(self, x) -> str:
        return classify_region(self, np.asarray(x, dtype=float)[:2])


SystemMap = IdentityMap | CircleRotation | PiecewiseLinearMap | CableSystem


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-indexed states (kind='state') or lifted vectors (kind='lifted')."""

    kind: str
    values: np.ndarray
    provenance: str
    regions: tuple[str, ...] | None = None
    clamped: int = 0
    start: int = 0

    def __post_init__(self):
        if self.kind not in {"state", "lifted"}:
            raise ArgumentError(f"trajectory kind must be 'state' or 'lifted' (got {self.kind!r})")
        if self.provenance not in {"truth", "predicted"}:
            raise ArgumentError(f"trajectory provenance must be 'truth' or 'predicted' (got {self.provenance!r})")
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ArgumentError(f"trajectory values must be 2-D (steps, dim), got shape {values.shape}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self))

    @property
    def dimension(self) -> int:
        return self.values.shape[1]


def _as_state(system: SystemMap, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = system.domain.dimension
    if x.shape != (n,):
        raise ArgumentError(f"state must have {n} components for a {system.kind} system (got shape {x.shape})")
    return x


def eval_map_batch(system: SystemMap, X: np.ndarray) -> tuple[np.ndarray, int]:
    """Apply F row-wise to X (N, n). Images outside the domain are clamped; returns (images, clamp count)."""
    X = np.asarray(X, dtype=float)
    n = system.domain.dimension
    if X.ndim != 2 or X.shape[1] != n:
        raise ArgumentError(f"expected an (N, {n}) array of states, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
        raise NumericalError(f"non-finite state at row {bad}: {X[bad]}")
    Y = system.apply(X)
    if not np.all(np.isfinite(Y)):
        bad = int(np.argmax(~np.all(np.isfinite(Y), axis=1)))
        raise NumericalError(f"{system.kind} map produced a non-finite image for row {bad}: {X[bad]}")
    Y, outside = system.domain.clamp(Y)
    return Y, int(outside.sum())


def eval_map(system: SystemMap, x, *, with_flag: bool = False):
    """F(x) for a single state. With with_flag=True returns (F(x), clamped)."""
    x = _as_state(system, x)
    Y, clamped = eval_map_batch(system, x[None, :])
    if with_flag:
        return Y[0], bool(clamped)
    return Y[0]


def cable_step(system: CableSystem, x) -> np.ndarray:
    if not isinstance(system, CableSystem):
        raise ArgumentError(f"cable_step needs a CableSystem (got {type(system).__name__})")
    return eval_map(system, x)


def classify_region(system: CableSystem, pos) -> str:
    """D1 both slack, D2 only A stretched, D3 only B stretched, D4 both stretched."""
    pos = np.asarray(pos, dtype=float)
    taut_a = math.dist(pos, system.anchor_a) > system.length_a
    taut_b = math.dist(pos, system.anchor_b) > system.length_b
    if taut_a and taut_b:
        return "D4"
    if taut_a:
        return "D2"
    if taut_b:
        return "D3"
    return "D1"


def piecewise_region(system: PiecewiseLinearMap, x: float) -> str:
    return system.region(float(x))


def cable_tensions(system: CableSystem, x) -> tuple[float, float]:
    """(T_A, T_B) at a single state."""
    x = _as_state(system, x)
    T, _ell, _units = system.tensions(x[None, :2], x[None, 2:])
    return float(T[0, 0]), float(T[0, 1])


def region_label(system: SystemMap, x) -> str | None:
    region = getattr(system, "region", None)
    return region(x if system.domain.dimension > 1 else float(x[0])) if region else None


def simulate_truth(system: SystemMap, x0, steps: int) -> Trajectory:
    """Iterate F from x0; entry t is F^t(x0)."""
    if steps < 0:
        raise ArgumentError(f"steps must be >= 0 (got {steps})")
    x = _as_state(system, x0)
    values = np.empty((steps + 1, x.size))
    values[0] = x
    clamped = 0
    for t in range(steps):
        x, flag = eval_map(system, x, with_flag=True)
        clamped += flag
        values[t + 1] = x
    regions = None
    if getattr(system, "region", None):
        regions = tuple(region_label(system, v) for v in values)
    return Trajectory(kind="state", values=values, provenance="truth", regions=regions, clamped=clamped)


def simulate_reference(system: CableSystem, x0, steps: int, refine: int = 100) -> Trajectory:
    """Truth at step h/refine, sampled every `refine` substeps so it lines up with simulate_truth."""
    if refine < 1:
        raise ArgumentError(f"refine must be >= 1 (got {refine})")
    fine = replace(system, step=system.step / refine)
    x = _as_state(system, x0)
    values = np.empty((steps + 1, x.size))
    values[0] = x
    for t in range(steps):
        for _ in range(refine):
            x = eval_map(fine, x)
        values[t + 1] = x
    regions = tuple(region_label(system, v) for v in values)
    return Trajectory(kind="state", values=values, provenance="truth", regions=regions)


def branch_switches(trajectory: Trajectory) -> int:
    regions = trajectory.regions or ()
    return sum(1 for prev, cur in zip(regions, regions[1:]) if prev != cur)


def count_bounces(trajectory: Trajectory, *, axis: int = 3, min_speed: float = 0.0) -> int:
    """Count reversals of the vertical velocity from downward to upward."""
    v = trajectory.values[:, axis]
    return int(np.sum((v[:-1] < -min_speed) & (v[1:] > min_speed)))


def clamp_rate(system: SystemMap, points: np.ndarray) -> float:
    _Y, clamped = eval_map_batch(system, points)
    return clamped / len(points)


def equilibrium_state(system: CableSystem) -> np.ndarray:
    """Static equilibrium (zero velocity, zero acceleration) with both cables stretched."""
    g = np.asarray(system.gravity)
    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        raise ArgumentError("equilibrium is undefined without gravity")
    a, b = np.asarray(system.anchor_a), np.asarray(system.anchor_b)
    half_span = float(np.linalg.norm(b - a)) / 2
    reach = max(system.length_a, system.length_b)
    drop = math.sqrt(max(reach**2 - half_span**2, 0.0)) + 0.05 * reach
    guess = (a + b) / 2 + drop * g / g_norm

    zero = np.zeros((1, 2))

    def residual(p):
        return system.acceleration(p[None, :], zero)[0]

    # hybr can flag xtol on a converged root; gate on the residual instead.
    sol = optimize.root(residual, guess, method="hybr", tol=1e-12)
    worst = float(np.max(np.abs(residual(sol.x))))
    if not np.isfinite(worst) or worst > 1e-9:
        raise NumericalError(f"equilibrium search failed: residual {worst:.3e} ({sol.message})")
    return np.array([sol.x[0], sol.x[1], 0.0, 0.0])
