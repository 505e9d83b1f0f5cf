import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from shapely.geometry import Point, box
from sklearn.cluster import KMeans

from dynamics import UNIT_INTERVAL, CableSystem, Domain, Trajectory, classify_region
from errors import ArgumentError, NumericalError

EXP_TRIG = "exp_trig"
REAL_FOURIER = "real_fourier"
GAUSSIAN_RBF = "gaussian_rbf"
KINDS = (EXP_TRIG, REAL_FOURIER, GAUSSIAN_RBF)

# Nearest neighbours used for the median-distance RBF width rule.
RBF_NEIGHBOURS = 3

# Sample set for center placement.
SAMPLE_TRAJECTORIES = 20
SAMPLE_STEPS = 500
SAMPLE_RELEASE_X = (-0.6, 0.6)
SAMPLE_RELEASE_Y = (-0.9, 0.0)

SWITCHING_BAND_HALF_WIDTH = 0.05


@dataclass(frozen=True, eq=False)
class ObservableDictionary:
    """
    Ordered dictionary of observables g_1..g_m over a box domain.

    Fourier kinds are parameterised by n_max. Gaussian RBFs keep their centers in
    state coordinates and their widths in coordinates normalised to the unit box.
    With augment_state the raw state coordinates are appended after the RBFs.
    """

    kind: str
    domain: Domain
    n_max: int | None = None
    centers: np.ndarray | None = None
    widths: np.ndarray | None = None
    width_scale: float = 1.0
    augment_state: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown dictionary kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        for name in ("centers", "widths"):
            value = getattr(self, name)
            if value is not None:
                value = np.array(value, dtype=float)
                value.setflags(write=False)
                object.__setattr__(self, name, value)

    @property
    def size(self) -> int:
        if self.kind == GAUSSIAN_RBF:
            extra = self.domain.dimension if self.augment_state else 0
            return len(self.centers) + extra
        return 2 * self.n_max + 1

    @property
    def is_real(self) -> bool:
        return self.kind != EXP_TRIG

    @property
    def dtype(self):
        return float if self.is_real else complex

    def labels(self) -> list[str]:
        if self.kind == EXP_TRIG:
            return [f"phi[{k}]" for k in wavenumbers(self.n_max)]
        if self.kind == REAL_FOURIER:
            names = ["1"]
            for n in range(1, self.n_max + 1):
                names += [f"cos{n}", f"sin{n}"]
            return names
        names = [f"rbf{k}" for k in range(len(self.centers))]
        if self.augment_state:
            names += [f"x{i}" for i in range(self.domain.dimension)]
        return names

    def describe(self) -> str:
        if self.kind == GAUSSIAN_RBF:
            return f"{self.kind} (K={len(self.centers)}, width_scale={self.width_scale}, m={self.size})"
        return f"{self.kind} (n_max={self.n_max}, m={self.size})"


@dataclass(frozen=True, eq=False)
class ConversionMatrices:
    """C maps the interleaved exponential vector to the real Fourier vector; C_inv undoes it."""

    C: np.ndarray
    C_inv: np.ndarray


def wavenumbers(n_max: int) -> np.ndarray:
    """Interleaved order 0, 1, -1, 2, -2, ..., n_max, -n_max."""
    k = np.zeros(2 * n_max + 1, dtype=int)
    k[1::2] = np.arange(1, n_max + 1)
    k[2::2] = -np.arange(1, n_max + 1)
    return k


def _check_n_max(n_max) -> int:
    if isinstance(n_max, bool) or not isinstance(n_max, (int, np.integer)) or n_max < 0:
        raise ArgumentError(f"n_max must be a non-negative integer (got {n_max!r})")
    return int(n_max)


def _check_unit(domain: Domain, kind: str):
    if not domain.is_unit_interval:
        raise ArgumentError(f"{kind} dictionary is orthogonal only on [0, 1] (got {domain.lower}..{domain.upper})")


def build_exp_trig(n_max: int, domain: Domain = UNIT_INTERVAL) -> ObservableDictionary:
    n_max = _check_n_max(n_max)
    _check_unit(domain, EXP_TRIG)
    return ObservableDictionary(kind=EXP_TRIG, domain=domain, n_max=n_max)


def build_real_fourier(n_max: int, domain: Domain = UNIT_INTERVAL) -> ObservableDictionary:
    n_max = _check_n_max(n_max)
    _check_unit(domain, REAL_FOURIER)
    return ObservableDictionary(kind=REAL_FOURIER, domain=domain, n_max=n_max)


def build_conversion(n_max: int) -> ConversionMatrices:
    n_max = _check_n_max(n_max)
    m = 2 * n_max + 1
    C = np.zeros((m, m), dtype=complex)
    C_inv = np.zeros((m, m), dtype=complex)
    C[0, 0] = C_inv[0, 0] = 1.0
    for n in range(1, n_max + 1):
        p, q = 2 * n - 1, 2 * n  # positions of +n and -n (also of cos n and sin n)
        C[p, p] = C[p, q] = 0.5
        C[q, p], C[q, q] = -0.5j, 0.5j
        C_inv[p, p], C_inv[p, q] = 1.0, 1.0j
        C_inv[q, p], C_inv[q, q] = 1.0, -1.0j
    return ConversionMatrices(C=C, C_inv=C_inv)


def rbf_widths(normalised_centers: np.ndarray, width_scale: float) -> np.ndarray:
    """
    sigma_k = width_scale * median distance from c_k to its RBF_NEIGHBOURS nearest centers.

    This is not the single-nearest-neighbour width: taking the median over a few neighbours
    keeps a pair of close centers from both getting a needle-thin Gaussian.
    """
    K, n = normalised_centers.shape
    if K == 1:
        return np.array([width_scale * np.sqrt(n)])
    k = min(RBF_NEIGHBOURS, K - 1)
    dist, _idx = cKDTree(normalised_centers).query(normalised_centers, k=k + 1)
    neighbours = dist[:, 1:]
    duplicate = np.flatnonzero(neighbours[:, 0] == 0.0)
    if duplicate.size:
        raise ArgumentError(f"duplicate RBF centers (center {int(duplicate[0])} coincides with another)")
    return width_scale * np.median(neighbours, axis=1)


def build_rbf(
    centers,
    width_scale: float = 1.0,
    domain: Domain = UNIT_INTERVAL,
    *,
    augment_state: bool = False,
    widths=None,
) -> ObservableDictionary:
    """
    Gaussian RBF dictionary g_k(x) = exp(-|u - u_k|^2 / (2 sigma_k^2)), u the box-normalised state.

    Explicit `widths` (normalised coordinates) bypass the nearest-neighbour rule, which is how
    a dictionary reloaded from a centers CSV is rebuilt bit-for-bit.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        raise ArgumentError("build_rbf needs at least one center")
    if centers.shape[1] != domain.dimension:
        raise ArgumentError(f"centers have dimension {centers.shape[1]}, domain has {domain.dimension}")
    if not width_scale > 0:
        raise ArgumentError(f"width_scale must be > 0 (got {width_scale})")
    outside = np.flatnonzero(~domain.contains(centers))
    if outside.size:
        raise ArgumentError(f"RBF center {int(outside[0])} lies outside the domain: {centers[outside[0]]}")
    if widths is None:
        widths = rbf_widths(domain.normalize(centers), width_scale)
    else:
        widths = np.asarray(widths, dtype=float)
        if widths.shape != (len(centers),) or not np.all(widths > 0):
            raise ArgumentError("explicit RBF widths must be positive, one per center")
    return ObservableDictionary(
        kind=GAUSSIAN_RBF,
        domain=domain,
        centers=centers,
        widths=widths,
        width_scale=float(width_scale),
        augment_state=augment_state,
    )


def evaluate_batch(dictionary: ObservableDictionary, X: np.ndarray) -> np.ndarray:
    """Evaluation table of shape (m, N) for states X of shape (N, n)."""
    X = np.asarray(X, dtype=float)
    n = dictionary.domain.dimension
    if X.ndim != 2 or X.shape[1] != n:
        raise ArgumentError(f"expected an (N, {n}) array of states, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
        raise NumericalError(f"cannot evaluate observables at non-finite state {bad}: {X[bad]}")

    if dictionary.kind == EXP_TRIG:
        k = wavenumbers(dictionary.n_max)
        return np.exp(2j * np.pi * np.outer(k, X[:, 0]))

    if dictionary.kind == REAL_FOURIER:
        table = np.empty((dictionary.size, X.shape[0]))
        table[0] = 1.0
        angle = 2 * np.pi * np.outer(np.arange(1, dictionary.n_max + 1), X[:, 0])
        table[1::2] = np.cos(angle)
        table[2::2] = np.sin(angle)
        return table

    U = dictionary.domain.normalize(X)
    U_c = dictionary.domain.normalize(dictionary.centers)
    sq = cdist(U_c, U, "sqeuclidean")
    table = np.exp(-sq / (2.0 * dictionary.widths[:, None] ** 2))
    if dictionary.augment_state:
        table = np.vstack([table, X.T])
    return table


def evaluate(dictionary: ObservableDictionary, x) -> np.ndarray:
    """Lifted vector chi(x) of length m."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (dictionary.domain.dimension,):
        raise ArgumentError(
            f"state has shape {x.shape}, dictionary expects {dictionary.domain.dimension} components"
        )
    return evaluate_batch(dictionary, x[None, :])[:, 0]


def kmeanspp_centers(samples, K: int, seed: int, *, domain: Domain | None = None, verbose: bool = True) -> np.ndarray:
    """
    K centers from k-means with k-means++ seeding. Clustering runs in domain-normalised
    coordinates when a domain is given. Deterministic for a fixed seed.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ArgumentError("kmeanspp_centers needs at least one sample")
    distinct = np.unique(samples, axis=0)
    if K < 1 or K > len(distinct):
        raise ArgumentError(f"K must be between 1 and the number of distinct samples ({len(distinct)}), got {K}")
    if K == len(distinct):
        return distinct

    U = domain.normalize(samples) if domain else samples
    if verbose:
        print(f"  k-means++: {K} centers from {len(samples)} samples (seed {seed})")
    km = KMeans(n_clusters=K, init="k-means++", n_init=1, random_state=seed).fit(U)
    centers = km.cluster_centers_
    return domain.denormalize(centers) if domain else centers


def sample_trajectories(
    system: CableSystem,
    count: int = SAMPLE_TRAJECTORIES,
    steps: int = SAMPLE_STEPS,
    seed: int = 0,
    *,
    verbose: bool = True,
) -> list[Trajectory]:
    """Ground-truth runs from random rest releases with both cables slack."""
    if count < 1 or steps < 0:
        raise ArgumentError(f"need count >= 1 and steps >= 0 (got {count}, {steps})")
    rng = np.random.default_rng(seed)
    releases = []
    while len(releases) < count:
        pos = (rng.uniform(*SAMPLE_RELEASE_X), rng.uniform(*SAMPLE_RELEASE_Y))
        if classify_region(system, pos) == "D1":
            releases.append((pos[0], pos[1], 0.0, 0.0))

    X = np.asarray(releases, dtype=float)
    runs = np.empty((steps + 1, count, X.shape[1]))
    runs[0] = X
    clamped = np.zeros(count, dtype=int)
    for t in range(steps):
        Y = system.apply(X)
        if not np.all(np.isfinite(Y)):
            raise NumericalError(f"sample trajectory went non-finite at step {t + 1}")
        X, outside = system.domain.clamp(Y)
        clamped += outside
        runs[t + 1] = X
        if verbose and (t + 1) % 100 == 0:
            print(f"  [{t + 1}/{steps}] steps of {count} sample trajectories")

    return [
        Trajectory(kind="state", values=runs[:, i, :].copy(), provenance="truth", clamped=int(clamped[i]))
        for i in range(count)
    ]


def switching_band(system: CableSystem, half_width: float = SWITCHING_BAND_HALF_WIDTH):
    """Union of annuli |p - anchor| in [L - hw, L + hw], clipped to the position box."""
    lo, hi = system.domain.lower, system.domain.upper
    position_box = box(lo[0], lo[1], hi[0], hi[1])
    rings = []
    for anchor, length in ((system.anchor_a, system.length_a), (system.anchor_b, system.length_b)):
        centre = Point(anchor)
        outer = centre.buffer(length + half_width, quad_segs=64)
        inner = centre.buffer(max(length - half_width, 0.0), quad_segs=64)
        rings.append(outer.difference(inner))
    return shapely.union_all(rings).intersection(position_box), position_box


def switching_band_density(system: CableSystem, centers, half_width: float = SWITCHING_BAND_HALF_WIDTH) -> float:
    """Share of centers inside the switching band divided by the band's share of the position box."""
    if not half_width > 0:
        raise ArgumentError(f"half_width must be > 0 (got {half_width})")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    band, position_box = switching_band(system, half_width)
    inside = shapely.contains_xy(band, centers[:, 0], centers[:, 1])
    return float(inside.mean()) / (band.area / position_box.area)


def write_centers_csv(dictionary: ObservableDictionary, path: Path) -> Path:
    """One row per center: coordinates then width (normalised coordinates)."""
    if dictionary.kind != GAUSSIAN_RBF:
        raise ArgumentError(f"only RBF dictionaries have centers (got {dictionary.kind})")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = dictionary.domain.dimension
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"# width_scale={dictionary.width_scale!r} augment_state={dictionary.augment_state}"])
        writer.writerow([f"x{i}" for i in range(n)] + ["width"])
        for c, w in zip(dictionary.centers, dictionary.widths):
            writer.writerow([repr(float(v)) for v in c] + [repr(float(w))])
    print(f"  Centers saved to {path} ({len(dictionary.centers)} rows)")
    return path


def read_centers_csv(path: Path, domain: Domain) -> ObservableDictionary:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    meta = dict(item.split("=", 1) for item in rows[0][0].lstrip("# ").split())
    body = np.asarray([[float(v) for v in row] for row in rows[2:]])
    return build_rbf(
        body[:, :-1],
        float(meta["width_scale"]),
        domain,
        augment_state=meta["augment_state"] == "True",
        widths=body[:, -1],
    )
