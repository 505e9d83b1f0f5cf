import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import qmc

from dynamics import Domain
from errors import ArgumentError, NumericalError

SEGMENTED_1D = "segmented_1d"
LOW_DISCREPANCY = "low_discrepancy"

POINTS_PER_PANEL = 8
PANEL_COUNT = 256
SAMPLE_COUNT = 200_000

# Integrands are vectorised over nodes: f(X) with X of shape (N, n) returns shape (N,).
Integrand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    domain: Domain
    breakpoints: tuple[float, ...] = ()
    seed: int | None = None

    def __post_init__(self):
        for name in ("nodes", "weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def node_count(self) -> int:
        return len(self.weights)

    def describe(self) -> str:
        if self.kind == SEGMENTED_1D:
            return f"{self.kind} ({self.node_count} nodes, breakpoints {list(self.breakpoints)})"
        return f"{self.kind} ({self.node_count} nodes, seed {self.seed})"


def default_panel_count(n_max: int) -> int:
    """Panel count that keeps 8-point panels accurate for harmonics up to n_max composed with a slope-2 branch."""
    return max(PANEL_COUNT, 4 * n_max)


def _allocate_panels(lengths: np.ndarray, panel_count: int) -> np.ndarray:
    """Split panel_count across segments in proportion to length, at least one each."""
    raw = panel_count * lengths / lengths.sum()
    alloc = np.maximum(1, np.floor(raw)).astype(int)
    remainder = raw - alloc
    deficit = panel_count - int(alloc.sum())
    for i in np.argsort(-remainder, kind="stable"):
        if deficit == 0:
            break
        if deficit > 0:
            alloc[i] += 1
            deficit -= 1
        elif alloc[i] > 1:
            alloc[i] -= 1
            deficit += 1
    return alloc


def segmented_rule(
    domain: Domain,
    points_per_panel: int = POINTS_PER_PANEL,
    panel_count: int = PANEL_COUNT,
    breakpoints=(),
) -> QuadratureRule:
    """Composite Gauss-Legendre on [lo, hi] with every breakpoint forced onto a panel edge."""
    if domain.dimension != 1:
        raise ArgumentError(f"segmented rule is 1-D only (domain has dimension {domain.dimension})")
    if points_per_panel < 1:
        raise ArgumentError(f"points_per_panel must be >= 1 (got {points_per_panel})")
    lo, hi = domain.lower[0], domain.upper[0]
    cuts = sorted(set(float(b) for b in breakpoints))
    for b in cuts:
        if not lo < b < hi:
            raise ArgumentError(f"breakpoint {b} is not interior to [{lo}, {hi}]")
    edges = np.array([lo, *cuts, hi])
    if panel_count < len(edges) - 1:
        raise ArgumentError(f"panel_count must be >= the number of segments ({len(edges) - 1}), got {panel_count}")

    x_ref, w_ref = roots_legendre(points_per_panel)
    per_segment = _allocate_panels(np.diff(edges), panel_count)
    nodes, weights = [], []
    for (a, b), panels in zip(zip(edges[:-1], edges[1:]), per_segment):
        panel_edges = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(panel_edges)
        mid = 0.5 * (panel_edges[:-1] + panel_edges[1:])
        nodes.append((mid[:, None] + half[:, None] * x_ref).ravel())
        weights.append((half[:, None] * w_ref).ravel())

    return QuadratureRule(
        nodes=np.concatenate(nodes)[:, None],
        weights=np.concatenate(weights),
        kind=SEGMENTED_1D,
        domain=domain,
        breakpoints=tuple(cuts),
    )


def low_discrepancy_rule(domain: Domain, sample_count: int = SAMPLE_COUNT, seed: int = 0) -> QuadratureRule:
    """Scrambled Sobol points scaled to the box, equal weights volume / N."""
    if sample_count < 1:
        raise ArgumentError(f"sample_count must be >= 1 (got {sample_count})")
    sampler = qmc.Sobol(d=domain.dimension, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # Sobol balance warning for counts that are not powers of two.
        warnings.simplefilter("ignore", UserWarning)
        unit = sampler.random(sample_count)
    return QuadratureRule(
        nodes=domain.denormalize(unit),
        weights=np.full(sample_count, domain.volume / sample_count),
        kind=LOW_DISCREPANCY,
        domain=domain,
        seed=seed,
    )


def build_rule(
    domain: Domain,
    *,
    points_per_panel: int | None = None,
    panel_count: int | None = None,
    breakpoints=(),
    sample_count: int | None = None,
    seed: int = 0,
) -> QuadratureRule:
    """Segmented Gauss-Legendre for 1-D domains, low-discrepancy sampling otherwise or when sample_count is given."""
    if sample_count is not None or domain.dimension > 1:
        if points_per_panel is not None or panel_count is not None:
            raise ArgumentError("panel settings apply to 1-D segmented rules only")
        return low_discrepancy_rule(domain, SAMPLE_COUNT if sample_count is None else sample_count, seed)
    return segmented_rule(
        domain,
        POINTS_PER_PANEL if points_per_panel is None else points_per_panel,
        PANEL_COUNT if panel_count is None else panel_count,
        breakpoints,
    )


def _values_at_nodes(f: Integrand, rule: QuadratureRule, name: str) -> np.ndarray:
    values = np.asarray(f(rule.nodes))
    if values.shape != (rule.node_count,):
        raise ArgumentError(f"{name} must return one value per node (got shape {values.shape})")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise NumericalError(f"{name} is non-finite at node {i} ({rule.nodes[i].tolist()})")
    return values


def integrate(f: Integrand, rule: QuadratureRule):
    values = _values_at_nodes(f, rule, "integrand")
    return np.sum(rule.weights * values)


def inner_product(f: Integrand, g: Integrand, rule: QuadratureRule):
    """<f, g> = sum_i w_i f(xi_i) conj(g(xi_i))."""
    fv = _values_at_nodes(f, rule, "f")
    gv = _values_at_nodes(g, rule, "g")
    value = np.sum(rule.weights * fv * np.conj(gv))
    return complex(value) if np.iscomplexobj(value) else float(value)
