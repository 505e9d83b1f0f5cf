import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from dynamics import SystemMap, eval_map_batch
from errors import ArgumentError, ConditioningError, ConsistencyError, NumericalError
from observables import EXP_TRIG, GAUSSIAN_RBF, REAL_FOURIER, ObservableDictionary, build_conversion, evaluate_batch
from quadrature import QuadratureRule

THREADS_ENV = "DIRECT_ENCODING_THREADS"
CHUNK_SIZE = 4096

FOURIER_LAMBDA = 0.0
RBF_LAMBDA = 1e-10
LAMBDA_FLOOR = 1e-14
MAX_LAMBDA = 1e-6

IMAGINARY_TOL = 1e-8


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ArgumentError(f"{THREADS_ENV} must be a positive integer (got {raw!r})") from None
    if workers < 1:
        raise ArgumentError(f"{THREADS_ENV} must be a positive integer (got {raw!r})")
    return workers


def default_lambda(dictionary: ObservableDictionary) -> float:
    return RBF_LAMBDA if dictionary.kind == GAUSSIAN_RBF else FOURIER_LAMBDA


def _check_shared_domain(dictionary: ObservableDictionary, rule: QuadratureRule, system: SystemMap | None = None):
    if dictionary.domain != rule.domain:
        raise ArgumentError(f"dictionary domain {dictionary.domain} differs from quadrature domain {rule.domain}")
    if system is not None and system.domain != dictionary.domain:
        raise ArgumentError(f"{system.kind} map domain {system.domain} differs from dictionary domain {dictionary.domain}")


@dataclass(frozen=True, eq=False)
class EvaluationTables:
    """g(xi) and g(F(xi)) on every quadrature node, shape (m, N) each."""

    G: np.ndarray
    H: np.ndarray
    clamped: int


def build_tables(dictionary: ObservableDictionary, system: SystemMap, rule: QuadratureRule) -> EvaluationTables:
    _check_shared_domain(dictionary, rule, system)
    images, clamped = eval_map_batch(system, rule.nodes)
    return EvaluationTables(
        G=evaluate_batch(dictionary, rule.nodes),
        H=evaluate_batch(dictionary, images),
        clamped=clamped,
    )


def _chunk_products(dictionary, system, nodes, weights):
    G = evaluate_batch(dictionary, nodes)
    GH = G.conj().T
    R_part = (G * weights) @ GH
    if system is None:
        return R_part, None, 0
    images, clamped = eval_map_batch(system, nodes)
    H = evaluate_batch(dictionary, images)
    return R_part, (H * weights) @ GH, clamped


def _check_finite(M: np.ndarray, name: str):
    bad = np.argwhere(~np.isfinite(M))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise NumericalError(f"{name}[{i}, {j}] is non-finite ({M[i, j]})")


def assemble(
    dictionary: ObservableDictionary,
    system: SystemMap | None,
    rule: QuadratureRule,
    *,
    verbose: bool = False,
) -> tuple[np.ndarray, np.ndarray | None, int]:
    """
    R (and Q when a map is given) from node chunks. Chunks may run on a thread pool,
    partial sums are added in chunk order so the result does not depend on the worker count.
    """
    _check_shared_domain(dictionary, rule, system)
    starts = range(0, rule.node_count, CHUNK_SIZE)
    chunks = [(rule.nodes[s : s + CHUNK_SIZE], rule.weights[s : s + CHUNK_SIZE]) for s in starts]
    workers = worker_count()
    if verbose:
        print(f"  Assembling m={dictionary.size} over {rule.node_count} nodes ({len(chunks)} chunks, {workers} workers)")

    m = dictionary.size
    R = np.zeros((m, m), dtype=dictionary.dtype)
    Q = np.zeros((m, m), dtype=dictionary.dtype) if system is not None else None
    clamped = 0
    report_every = max(1, len(chunks) // 10)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        parts = ex.map(lambda c: _chunk_products(dictionary, system, *c), chunks)
        for done, (R_part, Q_part, n_clamped) in enumerate(parts, start=1):
            R += R_part
            if Q is not None:
                Q += Q_part
            clamped += n_clamped
            if verbose and done % report_every == 0:
                print(f"  [{done}/{len(chunks)}] chunks")

    R = np.triu(R) + np.triu(R, 1).conj().T
    _check_finite(R, "R")
    if Q is not None:
        _check_finite(Q, "Q")
    return R, Q, clamped


def gram_matrix(dictionary: ObservableDictionary, rule: QuadratureRule) -> np.ndarray:
    """R[i, j] = <g_i, g_j>."""
    R, _Q, _clamped = assemble(dictionary, None, rule)
    return R


def composition_matrix(dictionary: ObservableDictionary, system: SystemMap, rule: QuadratureRule) -> np.ndarray:
    """Q[i, j] = <g_i o F, g_j>."""
    _R, Q, _clamped = assemble(dictionary, system, rule)
    return Q


@dataclass(frozen=True, eq=False)
class LiftedModel:
    A: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    dictionary: ObservableDictionary
    system: SystemMap
    rule_kind: str
    node_count: int
    seed: int | None
    lam: float
    shift: float
    min_eigenvalue: float
    max_eigenvalue: float
    clamped: int = 0

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def condition(self) -> float:
        if self.min_eigenvalue <= 0:
            return float("inf")
        return self.max_eigenvalue / self.min_eigenvalue

    def metadata(self) -> dict:
        return {
            "m": self.m,
            "kind": self.dictionary.kind,
            "system": self.system.kind,
            "rule": self.rule_kind,
            "node_count": self.node_count,
            "seed": self.seed,
            "lambda": self.lam,
        }


def solve_shifted(R: np.ndarray, Q: np.ndarray, lam: float, *, max_lambda: float = MAX_LAMBDA):
    """
    Solve A (R + shift I) = Q by Cholesky, shift = lam * trace(R) / m. When R + shift I is not
    positive definite the shift grows tenfold up to max_lambda. Returns (A, lam, shift).
    """
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0 (got {lam})")
    m = R.shape[0]
    scale = float(np.real(np.trace(R))) / m
    identity = np.eye(m)
    while True:
        shift = lam * scale
        try:
            factor = linalg.cho_factor(R + shift * identity, lower=False)
            A = linalg.cho_solve(factor, Q.conj().T).conj().T
            return A, lam, shift
        except linalg.LinAlgError:
            lam = max(10 * lam, LAMBDA_FLOOR)
            if lam > max_lambda:
                min_eig = float(linalg.eigvalsh(R)[0])
                raise ConditioningError(
                    f"R is not positive definite even with lambda={max_lambda:g} (min eigenvalue {min_eig:.3e})"
                ) from None


def direct_encode(
    dictionary: ObservableDictionary,
    system: SystemMap,
    rule: QuadratureRule,
    lam: float | None = None,
    *,
    verbose: bool = False,
) -> LiftedModel:
    """A = Q R^-1 from quadrature inner products."""
    lam = default_lambda(dictionary) if lam is None else lam
    R, Q, clamped = assemble(dictionary, system, rule, verbose=verbose)
    A, lam_used, shift = solve_shifted(R, Q, lam)
    eigs = linalg.eigvalsh(R)
    if verbose:
        if lam_used != lam:
            print(f"  Shift raised from lambda={lam:g} to {lam_used:g}")
        print(f"  R eigenvalues in [{eigs[0]:.3e}, {eigs[-1]:.3e}], clamped images: {clamped}")
    return LiftedModel(
        A=A,
        R=R,
        Q=Q,
        dictionary=dictionary,
        system=system,
        rule_kind=rule.kind,
        node_count=rule.node_count,
        seed=rule.seed,
        lam=lam_used,
        shift=shift,
        min_eigenvalue=float(eigs[0]),
        max_eigenvalue=float(eigs[-1]),
        clamped=clamped,
    )


def abar_matrix(dictionary: ObservableDictionary, system: SystemMap, rule: QuadratureRule) -> np.ndarray:
    """Abar[i, j] = <phi_i o F, phi_j> for the orthonormal exponential dictionary."""
    if dictionary.kind != EXP_TRIG:
        raise ArgumentError(f"abar_matrix needs an orthonormal {EXP_TRIG} dictionary (got {dictionary.kind})")
    return composition_matrix(dictionary, system, rule)


def encode_via_conversion(
    exp_trig: ObservableDictionary,
    real_fourier: ObservableDictionary,
    system: SystemMap,
    rule: QuadratureRule,
    *,
    tol: float = IMAGINARY_TOL,
) -> np.ndarray:
    """Real transition matrix C Abar C^-1 for the real Fourier dictionary."""
    if exp_trig.kind != EXP_TRIG or real_fourier.kind != REAL_FOURIER:
        raise ArgumentError(
            f"encode_via_conversion needs ({EXP_TRIG}, {REAL_FOURIER}) dictionaries "
            f"(got {exp_trig.kind}, {real_fourier.kind})"
        )
    if exp_trig.n_max != real_fourier.n_max:
        raise ArgumentError(f"n_max mismatch: {exp_trig.n_max} vs {real_fourier.n_max}")
    conversion = build_conversion(exp_trig.n_max)
    A = conversion.C @ abar_matrix(exp_trig, system, rule) @ conversion.C_inv
    residue = float(np.max(np.abs(A.imag))) if A.size else 0.0
    if residue > tol:
        raise ConsistencyError(f"C Abar C^-1 has imaginary residue {residue:.3e} > {tol:g}")
    return np.ascontiguousarray(A.real)


@dataclass(frozen=True, eq=False)
class TruncatedKernel:
    """kappa_m(x, xi) = sum_k phi_k(F(x)) conj(phi_k(xi)) over the retained exponentials."""

    dictionary: ObservableDictionary
    system: SystemMap

    def __post_init__(self):
        if self.dictionary.kind != EXP_TRIG:
            raise ArgumentError(f"truncated kernel is built on {EXP_TRIG} (got {self.dictionary.kind})")
        if self.system.domain != self.dictionary.domain:
            raise ArgumentError("kernel map and dictionary must share the domain")

    def image_table(self, X: np.ndarray) -> np.ndarray:
        images, _clamped = eval_map_batch(self.system, np.asarray(X, dtype=float).reshape(-1, 1))
        return evaluate_batch(self.dictionary, images)


def kernel_values(kernel: TruncatedKernel, x_grid, xi_grid) -> np.ndarray:
    """kappa_m sampled on x_grid × xi_grid, shape (len(x_grid), len(xi_grid))."""
    xi = np.asarray(xi_grid, dtype=float).reshape(-1, 1)
    K = kernel.image_table(x_grid).T @ evaluate_batch(kernel.dictionary, xi).conj()
    _check_finite(K, "kappa")
    return K


def kernel_transform(kernel: TruncatedKernel, g, rule: QuadratureRule, x):
    """
    sum_i w_i kappa_m(x, xi_i) g(xi_i). Equivalent to projecting g onto the retained
    exponentials and evaluating the projection at F(x). Accepts a scalar x or a grid.
    """
    values = np.asarray(g(rule.nodes))
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericalError(f"g is non-finite at node {int(bad[0])} ({rule.nodes[bad[0]].tolist()})")
    coeffs = (evaluate_batch(kernel.dictionary, rule.nodes).conj() * rule.weights) @ values
    out = kernel.image_table(np.atleast_1d(x)).T @ coeffs
    if not np.all(np.isfinite(out)):
        raise NumericalError("truncated kernel transform produced non-finite values")
    return out[0] if np.ndim(x) == 0 else out


def one_step_residual(A: np.ndarray, tables: EvaluationTables, rule: QuadratureRule) -> float:
    """sum_i w_i |chi(F(xi_i)) - A chi(xi_i)|^2."""
    diff = tables.H - A @ tables.G
    return float(np.sum(rule.weights * np.sum(np.abs(diff) ** 2, axis=0)))


def conditioning_report(model: LiftedModel) -> dict:
    m = model.m
    lhs = model.A @ (model.R + model.shift * np.eye(m))
    q_norm = np.linalg.norm(model.Q)
    return {
        "m": m,
        "lambda": model.lam,
        "shift": model.shift,
        "min_eigenvalue": model.min_eigenvalue,
        "max_eigenvalue": model.max_eigenvalue,
        "condition": model.condition,
        "solver_residual": float(np.linalg.norm(lhs - model.Q) / q_norm) if q_norm else 0.0,
        "node_count": model.node_count,
        "clamped": model.clamped,
    }
