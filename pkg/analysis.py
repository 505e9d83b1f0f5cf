from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from dynamics import SystemMap, Trajectory, eval_map_batch, simulate_truth
from encoding import (
    CHUNK_SIZE,
    LiftedModel,
    TruncatedKernel,
    default_lambda,
    direct_encode,
    kernel_transform,
    solve_shifted,
    worker_count,
)
from errors import ArgumentError, DivergenceError, NumericalError
from observables import (
    EXP_TRIG,
    REAL_FOURIER,
    ObservableDictionary,
    build_exp_trig,
    build_real_fourier,
    evaluate,
    evaluate_batch,
    wavenumbers,
)
from quadrature import QuadratureRule, build_rule, default_panel_count

__all__ = [
    "Trajectory",
    "LinearDecoder",
    "Comparison",
    "SpectrumResult",
    "predict",
    "fit_decoder",
    "decode",
    "phase_decode",
    "lifted_to_state",
    "rmse_sweep",
    "spectrum",
    "membership_residuals",
    "compare_trajectories",
    "kernel_check",
]

DIVERGENCE_GUARD = 1e6
STABILITY_EPS = 0.01

STABLE = "stable"
MARGINAL = "marginally stable"
UNSTABLE = "unstable"

RESIDUAL_GRID = 1000
KERNEL_GRID = 200
KERNEL_EXCLUSION = 0.02

# Test observables for the kernel reproduction check.
KERNEL_OBSERVABLES = {
    "x": lambda X: X[:, 0],
    "x^2": lambda X: X[:, 0] ** 2,
    "x^3": lambda X: X[:, 0] ** 3,
    "cos(2 pi x)": lambda X: np.cos(2 * np.pi * X[:, 0]),
}


def predict(model: LiftedModel, x0, steps: int, *, guard: float = DIVERGENCE_GUARD) -> Trajectory:
    """chi_0 = chi(x0), chi_{t+1} = A chi_t. No re-lifting."""
    if steps < 0:
        raise ArgumentError(f"steps must be >= 0 (got {steps})")
    domain = model.dictionary.domain
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape == (domain.dimension,) and not domain.contains(x0)[0]:
        raise ArgumentError(f"initial state {x0.tolist()} lies outside the domain")
    chi = evaluate(model.dictionary, x0)
    values = np.empty((steps + 1, chi.size), dtype=np.result_type(chi, model.A))
    values[0] = chi
    limit = guard * max(np.linalg.norm(chi), np.finfo(float).tiny)
    for t in range(1, steps + 1):
        chi = model.A @ chi
        norm = np.linalg.norm(chi)
        if not np.isfinite(norm) or norm > limit:
            raise DivergenceError(
                f"lifted state diverged at step {t}: |chi_t| = {norm:.3e} > {guard:g} x |chi_0| "
                f"(max |A| entry {np.max(np.abs(model.A)):.3e})"
            )
        values[t] = chi
    return Trajectory(kind="lifted", values=values, provenance="predicted")


@dataclass(frozen=True, eq=False)
class LinearDecoder:
    D: np.ndarray
    residual: float


def fit_decoder(dictionary: ObservableDictionary, rule: QuadratureRule, lam: float | None = None) -> LinearDecoder:
    """Weighted least squares D = argmin sum_i w_i |xi_i - D chi(xi_i)|^2 on the quadrature nodes."""
    if dictionary.domain != rule.domain:
        raise ArgumentError("decoder dictionary and quadrature rule must share the domain")
    m, n = dictionary.size, dictionary.domain.dimension
    R = np.zeros((m, m), dtype=dictionary.dtype)
    P = np.zeros((n, m), dtype=dictionary.dtype)
    for s in range(0, rule.node_count, CHUNK_SIZE):
        X, w = rule.nodes[s : s + CHUNK_SIZE], rule.weights[s : s + CHUNK_SIZE]
        G = evaluate_batch(dictionary, X)
        GH = G.conj().T
        R += (G * w) @ GH
        P += (X.T * w) @ GH
    R = np.triu(R) + np.triu(R, 1).conj().T
    D, _lam, _shift = solve_shifted(R, P, default_lambda(dictionary) if lam is None else lam)

    sq = 0.0
    for s in range(0, rule.node_count, CHUNK_SIZE):
        X, w = rule.nodes[s : s + CHUNK_SIZE], rule.weights[s : s + CHUNK_SIZE]
        err = X.T - D @ evaluate_batch(dictionary, X)
        sq += float(np.sum(w * np.sum(np.abs(err) ** 2, axis=0)))
    residual = float(np.sqrt(sq / (rule.weights.sum() * n)))
    return LinearDecoder(D=D, residual=residual)


def decode(decoder: LinearDecoder, lifted: Trajectory) -> Trajectory:
    if lifted.kind != "lifted":
        raise ArgumentError(f"decode needs a lifted trajectory (got {lifted.kind})")
    if lifted.dimension != decoder.D.shape[1]:
        raise ArgumentError(f"decoder expects m={decoder.D.shape[1]}, trajectory has {lifted.dimension}")
    states = np.real(lifted.values @ decoder.D.T)
    return Trajectory(kind="state", values=states, provenance=lifted.provenance, start=lifted.start)


def phase_decode(dictionary: ObservableDictionary, lifted: Trajectory) -> Trajectory:
    """x = angle of the first harmonic / 2 pi, mod 1."""
    if dictionary.kind not in (REAL_FOURIER, EXP_TRIG) or dictionary.n_max < 1:
        raise ArgumentError("phase decoding needs a Fourier dictionary with n_max >= 1")
    chi = lifted.values
    if dictionary.kind == REAL_FOURIER:
        angle = np.arctan2(np.real(chi[:, 2]), np.real(chi[:, 1]))
    else:
        angle = np.angle(chi[:, 1])
    x = np.mod(angle / (2 * np.pi), 1.0)
    return Trajectory(kind="state", values=x[:, None], provenance=lifted.provenance, start=lifted.start)


def lifted_to_state(model: LiftedModel, decoder: LinearDecoder, lifted: Trajectory) -> Trajectory:
    if decoder.D.shape != (model.dictionary.domain.dimension, model.m):
        raise ArgumentError(f"decoder shape {decoder.D.shape} does not fit a model with m={model.m}")
    return decode(decoder, lifted)


@dataclass(frozen=True, eq=False)
class Comparison:
    errors: np.ndarray  # (T, n) predicted - truth
    truth: Trajectory
    predicted: Trajectory

    @property
    def per_step(self) -> np.ndarray:
        return np.linalg.norm(self.errors, axis=1)

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.errors**2)))

    @property
    def max_error(self) -> float:
        return float(self.per_step.max())

    @property
    def component_rmse(self) -> np.ndarray:
        return np.sqrt(np.mean(self.errors**2, axis=0))

    def rmse_of(self, components) -> float:
        return float(np.sqrt(np.mean(self.errors[:, list(components)] ** 2)))


def compare_trajectories(truth: Trajectory, predicted: Trajectory) -> Comparison:
    if truth.kind != predicted.kind:
        raise ArgumentError(f"cannot compare a {truth.kind} trajectory with a {predicted.kind} one")
    if truth.values.shape != predicted.values.shape:
        raise ArgumentError(f"trajectory shapes differ: {truth.values.shape} vs {predicted.values.shape}")
    return Comparison(errors=np.real(predicted.values - truth.values), truth=truth, predicted=predicted)


def _fourier_builder(family: str):
    builders = {REAL_FOURIER: build_real_fourier, EXP_TRIG: build_exp_trig}
    if family not in builders:
        raise ArgumentError(f"sweep family must be one of {', '.join(builders)} (got {family!r})")
    return builders[family]


def _n_max_for(m: int) -> int:
    if m < 1 or m % 2 == 0:
        raise ArgumentError(f"Fourier dictionary sizes are odd (m = 2 n_max + 1), got {m}")
    return (m - 1) // 2


def _starts(system: SystemMap, x0) -> np.ndarray:
    """One initial state, or a (k, n) ensemble of them, as a (k, n) array."""
    X = np.asarray(x0, dtype=float)
    if X.ndim < 2:
        X = X.reshape(1, -1)
    n = system.domain.dimension
    if X.ndim != 2 or X.shape[1] != n or len(X) == 0:
        raise ArgumentError(f"initial states must be one {n}-vector or a (k, {n}) array (got shape {X.shape})")
    return X


def sweep_point(
    system: SystemMap,
    family: str,
    m: int,
    x0,
    steps: int,
    rule: QuadratureRule | None = None,
    decoder: str = "phase",
) -> float:
    """
    Horizon RMSE of the decoded lifted prediction at one dictionary size.

    With an ensemble of initial states the model is encoded once and the squared errors of
    all runs are pooled.
    """
    if decoder not in ("linear", "phase"):
        raise ArgumentError(f"decoder must be 'linear' or 'phase' (got {decoder!r})")
    starts = _starts(system, x0)
    dictionary = _fourier_builder(family)(_n_max_for(m))
    if rule is None:
        rule = build_rule(
            dictionary.domain,
            panel_count=default_panel_count(dictionary.n_max),
            breakpoints=getattr(system, "breakpoints", ()),
        )
    model = direct_encode(dictionary, system, rule)
    linear = fit_decoder(dictionary, rule) if decoder == "linear" else None

    sq = 0.0
    for start in starts:
        lifted = predict(model, start, steps)
        states = phase_decode(dictionary, lifted) if linear is None else lifted_to_state(model, linear, lifted)
        sq += compare_trajectories(simulate_truth(system, start, steps), states).rmse ** 2
    return float(np.sqrt(sq / len(starts)))


def rmse_sweep(
    system: SystemMap,
    family: str,
    m_values: list[int],
    x0,
    steps: int,
    rule: QuadratureRule | None = None,
    *,
    decoder: str = "phase",
    verbose: bool = True,
) -> list[tuple[int, float]]:
    """(m, RMSE) per dictionary size; sizes run on a thread pool, results keep the input order."""
    _starts(system, x0)
    for m in m_values:
        _fourier_builder(family)
        _n_max_for(m)

    def run(m):
        rmse = sweep_point(system, family, m, x0, steps, rule, decoder)
        if verbose:
            print(f"  m={m}: RMSE {rmse:.6g}")
        return m, rmse

    with ThreadPoolExecutor(max_workers=worker_count()) as ex:
        return list(ex.map(run, m_values))


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    classification: str
    eps: float

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    def near_unit_circle(self, tol: float | None = None) -> int:
        tol = self.eps if tol is None else tol
        return int(np.sum(np.abs(np.abs(self.eigenvalues) - 1.0) < tol))


def spectrum(model, eps: float = STABILITY_EPS) -> SpectrumResult:
    """Eigenvalues of A sorted by modulus (largest first) and a stability class."""
    A = model.A if isinstance(model, LiftedModel) else np.asarray(model)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"spectrum needs a square matrix (got shape {A.shape})")
    if not np.all(np.isfinite(A)):
        raise NumericalError("transition matrix has non-finite entries")
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigenvalue solver failed: {e}") from e
    eigs = eigs[np.argsort(-np.abs(eigs), kind="stable")]
    top = float(np.max(np.abs(eigs)))
    if top < 1.0 - eps:
        label = STABLE
    elif top <= 1.0 + eps:
        label = MARGINAL
    else:
        label = UNSTABLE
    return SpectrumResult(eigenvalues=eigs, classification=label, eps=eps)


@dataclass(frozen=True)
class MembershipRow:
    N: int
    J_N: float
    I_N_error: float


def membership_residuals(
    dictionary: ObservableDictionary,
    system: SystemMap,
    rule: QuadratureRule,
    i: int,
    N_values: list[int],
    *,
    grid_size: int = RESIDUAL_GRID,
) -> tuple[float, list[MembershipRow]]:
    """
    Partial Bessel sums J_N = sum_{k<=N} |<phi_i o F, phi_k>|^2 and the grid RMS error of the
    partial expansion I_N, for wavenumber i and the first N exponentials in interleaved order.
    Returns (|phi_i o F|^2, rows).
    """
    if dictionary.kind != EXP_TRIG:
        raise ArgumentError(f"membership residuals use the {EXP_TRIG} dictionary (got {dictionary.kind})")
    if abs(i) > dictionary.n_max:
        raise ArgumentError(f"wavenumber {i} is outside the dictionary (n_max={dictionary.n_max})")
    for N in N_values:
        if not 1 <= N <= dictionary.size:
            raise ArgumentError(f"N must lie in [1, {dictionary.size}] (got {N})")

    images, _ = eval_map_batch(system, rule.nodes)
    composed = np.exp(2j * np.pi * i * images[:, 0])
    G = evaluate_batch(dictionary, rule.nodes)
    coeffs = G.conj() @ (rule.weights * composed)
    norm_sq = float(np.sum(rule.weights * np.abs(composed) ** 2))

    grid = dictionary.domain.grid(grid_size)
    grid_images, _ = eval_map_batch(system, grid)
    target = np.exp(2j * np.pi * i * grid_images[:, 0])
    basis = evaluate_batch(dictionary, grid)

    rows = []
    for N in N_values:
        J = float(np.sum(np.abs(coeffs[:N]) ** 2))
        approx = coeffs[:N] @ basis[:N]
        rows.append(MembershipRow(N=N, J_N=J, I_N_error=float(np.sqrt(np.mean(np.abs(approx - target) ** 2)))))
    return norm_sq, rows


def kernel_grid(system: SystemMap, count: int = KERNEL_GRID, exclusion: float = KERNEL_EXCLUSION) -> np.ndarray:
    """Evenly spaced points on [0, 1] with a neighbourhood of every breakpoint removed."""
    x = np.linspace(0.0, 1.0, count)
    keep = np.ones(count, dtype=bool)
    for b in getattr(system, "breakpoints", ()):
        keep &= np.abs(x - b) >= exclusion
    return x[keep]


@dataclass(frozen=True, eq=False)
class KernelProfile:
    name: str
    m: int
    x: np.ndarray
    target: np.ndarray
    reproduced: np.ndarray

    @property
    def rms_error(self) -> float:
        return float(np.sqrt(np.mean(np.abs(self.reproduced - self.target) ** 2)))


def kernel_check(
    system: SystemMap,
    n_max_values: list[int],
    observables: dict | None = None,
    grid: np.ndarray | None = None,
) -> list[KernelProfile]:
    """Truncated-kernel images of each test observable against g(F(x)), per dictionary size."""
    observables = KERNEL_OBSERVABLES if observables is None else observables
    x = kernel_grid(system) if grid is None else np.asarray(grid, dtype=float)
    images, _ = eval_map_batch(system, x[:, None])
    profiles = []
    for n_max in n_max_values:
        dictionary = build_exp_trig(n_max, system.domain)
        rule = build_rule(
            dictionary.domain,
            panel_count=default_panel_count(n_max),
            breakpoints=getattr(system, "breakpoints", ()),
        )
        kernel = TruncatedKernel(dictionary, system)
        for name, g in observables.items():
            profiles.append(
                KernelProfile(
                    name=name,
                    m=dictionary.size,
                    x=x,
                    target=g(images),
                    reproduced=kernel_transform(kernel, g, rule, x),
                )
            )
    return profiles


def basis_index(dictionary: ObservableDictionary, k: int) -> int:
    """Position of wavenumber k in the interleaved exponential order."""
    return int(np.flatnonzero(wavenumbers(dictionary.n_max) == k)[0])
