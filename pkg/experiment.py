"""
Experiment configuration and object construction.

A config is a JSON file with the sections below; keys starting with "_" are comments.
Every section is optional and falls back to the dataclass defaults.

    {
      "system":     {"kind": "piecewise", "a": 0.1, "b": 0.5, "c": -2.0, "x_star": 0.4},
      "dictionary": {"kind": "real_fourier", "n_max": 128},
      "quadrature": {"points_per_panel": 8, "panel_count": null},
      "scenario":   {"x0": [0.93], "steps": 100},
      "analysis":   {"eps": 0.01, "sweep_m": [17, 33, 257, 1025]},
      "output": "data/output/sweep",
      "seed": 0
    }
"""
import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dynamics import (
    CableSystem,
    CircleRotation,
    Domain,
    IdentityMap,
    PiecewiseLinearMap,
    SystemMap,
    Trajectory,
    simulate_reference,
    simulate_truth,
)
from errors import ArgumentError
from observables import (
    EXP_TRIG,
    GAUSSIAN_RBF,
    REAL_FOURIER,
    SAMPLE_STEPS,
    SAMPLE_TRAJECTORIES,
    ObservableDictionary,
    build_exp_trig,
    build_rbf,
    build_real_fourier,
    kmeanspp_centers,
    read_centers_csv,
    sample_trajectories,
)
from quadrature import QuadratureRule, build_rule, default_panel_count

SYSTEMS = {
    "identity": IdentityMap,
    "rotation": CircleRotation,
    "piecewise": PiecewiseLinearMap,
    "cable": CableSystem,
}

DEFAULT_X0 = {
    "identity": None,  # domain centre
    "rotation": [0.1],
    "piecewise": [0.93],
    "cable": [0.3, -0.5, 0.0, 0.0],
}


@dataclass
class SystemSpec:
    kind: str = "piecewise"
    params: dict = field(default_factory=dict)
    domain: dict | None = None

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "system") -> "SystemSpec":
        if not isinstance(data, dict):
            raise ArgumentError(f"config section '{prefix}' must be an object")
        data = {k: v for k, v in data.items() if not k.startswith("_")}
        kind = data.pop("kind", "piecewise")
        if kind not in SYSTEMS:
            raise ArgumentError(f"{prefix}.kind: unknown system {kind!r} (expected one of {', '.join(SYSTEMS)})")
        domain = data.pop("domain", None)
        if domain is not None:
            if not isinstance(domain, dict) or set(domain) != {"lower", "upper"}:
                raise ArgumentError(f"{prefix}.domain must be an object with 'lower' and 'upper' lists")
        allowed = {f.name for f in dataclasses.fields(SYSTEMS[kind])} - {"domain"}
        for key in data:
            if key not in allowed:
                raise ArgumentError(f"unknown config key '{prefix}.{key}' for a {kind} system")
        return cls(kind=kind, params=data, domain=domain)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, **self.params}
        if self.domain is not None:
            out["domain"] = self.domain
        return out


@dataclass
class DictionarySpec:
    kind: str = REAL_FOURIER
    n_max: int | None = None
    centers: int | None = None
    width_scale: float = 1.0
    augment_state: bool = False
    centers_csv: str | None = None
    lam: float | None = None
    sample_trajectories: int = SAMPLE_TRAJECTORIES
    sample_steps: int = SAMPLE_STEPS


@dataclass
class QuadratureSpec:
    points_per_panel: int | None = None
    panel_count: int | None = None
    sample_count: int | None = None
    seed: int | None = None


@dataclass
class ScenarioSpec:
    x0: list[float] | None = None
    # sweep starts; pooled into one RMSE per dictionary size
    ensemble: list[list[float]] | None = None
    steps: int = 100
    refine: int = 1


@dataclass
class AnalysisSpec:
    eps: float = 0.01
    sweep_family: str = REAL_FOURIER
    sweep_m: list[int] = field(default_factory=lambda: [17, 33, 257, 1025])
    decoder: str = "phase"
    residual_i: list[int] = field(default_factory=lambda: [1, 2, 5])
    residual_N: list[int] = field(default_factory=lambda: [17, 33, 65, 129, 257, 513])
    kernel_n_max: list[int] = field(default_factory=lambda: [8, 16, 128])


# JSON names that differ from the attribute names.
JSON_NAMES = {"lam": "lambda"}


def _matches(value, annotation) -> bool:
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        return any(_matches(value, arg) for arg in typing.get_args(annotation))
    if annotation is type(None):
        return value is None
    if origin is list:
        (item,) = typing.get_args(annotation)
        return isinstance(value, list) and all(_matches(v, item) for v in value)
    if annotation is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, annotation)


def _section(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ArgumentError(f"config section '{prefix}' must be an object")
    hints = typing.get_type_hints(cls)
    by_json = {JSON_NAMES.get(f.name, f.name): f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key.startswith("_"):
            continue
        if key not in by_json:
            raise ArgumentError(f"unknown config key '{prefix}.{key}'")
        name = by_json[key]
        if not _matches(value, hints[name]):
            raise ArgumentError(f"config key '{prefix}.{key}' has invalid value {value!r}")
        kwargs[name] = float(value) if hints[name] is float else value
    return cls(**kwargs)


def _section_dict(obj) -> dict:
    return {JSON_NAMES.get(k, k): v for k, v in dataclasses.asdict(obj).items()}


@dataclass
class ExperimentConfig:
    system: SystemSpec = field(default_factory=SystemSpec)
    dictionary: DictionarySpec = field(default_factory=DictionarySpec)
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output: str = "data/output"
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ArgumentError("config must be a JSON object")
        known = {"system", "dictionary", "quadrature", "scenario", "analysis", "output", "seed"}
        for key in data:
            if not key.startswith("_") and key not in known:
                raise ArgumentError(f"unknown config key '{key}'")
        seed = data.get("seed", 0)
        if not _matches(seed, int):
            raise ArgumentError(f"config key 'seed' has invalid value {seed!r}")
        output = data.get("output", "data/output")
        if not isinstance(output, str):
            raise ArgumentError(f"config key 'output' has invalid value {output!r}")
        return cls(
            system=SystemSpec.from_dict(data.get("system", {})),
            dictionary=_section(DictionarySpec, data.get("dictionary", {}), "dictionary"),
            quadrature=_section(QuadratureSpec, data.get("quadrature", {}), "quadrature"),
            scenario=_section(ScenarioSpec, data.get("scenario", {}), "scenario"),
            analysis=_section(AnalysisSpec, data.get("analysis", {}), "analysis"),
            output=output,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "dictionary": _section_dict(self.dictionary),
            "quadrature": _section_dict(self.quadrature),
            "scenario": _section_dict(self.scenario),
            "analysis": _section_dict(self.analysis),
            "output": self.output,
            "seed": self.seed,
        }

    def sha256(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply `key.path=value` overrides; values are parsed as JSON, falling back to plain strings."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ArgumentError(f"override {item!r} must look like key.path=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.strip().split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ArgumentError(f"override {path!r}: '{key}' is not a section")
        node[keys[-1]] = value
    return data


def load_config(path, overrides: list[str] = (), *, output: str | None = None, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ArgumentError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ArgumentError(f"config file {path} is not valid JSON: {e}") from None
    data = apply_overrides(data, list(overrides))
    if output is not None:
        data["output"] = output
    if seed is not None:
        data["seed"] = seed
    return ExperimentConfig.from_dict(data)


def _domain(spec: dict | None) -> Domain | None:
    if spec is None:
        return None
    return Domain(tuple(spec["lower"]), tuple(spec["upper"]))


def build_system(spec: SystemSpec) -> SystemMap:
    params = dict(spec.params)
    for key in ("gravity", "anchor_a", "anchor_b"):
        if key in params:
            params[key] = tuple(params[key])
    domain = _domain(spec.domain)
    if domain is not None:
        params["domain"] = domain
    try:
        return SYSTEMS[spec.kind](**params)
    except TypeError as e:
        raise ArgumentError(f"system: {e}") from None


def sample_set(config: ExperimentConfig, system: CableSystem, *, verbose: bool = True) -> list[Trajectory]:
    spec = config.dictionary
    return sample_trajectories(
        system, spec.sample_trajectories, spec.sample_steps, config.seed, verbose=verbose
    )


def build_dictionary(config: ExperimentConfig, system: SystemMap, *, verbose: bool = True) -> ObservableDictionary:
    spec = config.dictionary
    if spec.kind in (EXP_TRIG, REAL_FOURIER):
        if spec.n_max is None:
            raise ArgumentError(f"dictionary.n_max is required for a {spec.kind} dictionary")
        builder = build_exp_trig if spec.kind == EXP_TRIG else build_real_fourier
        return builder(spec.n_max, system.domain)
    if spec.kind != GAUSSIAN_RBF:
        raise ArgumentError(f"dictionary.kind: unknown kind {spec.kind!r}")
    if spec.centers_csv:
        return read_centers_csv(Path(spec.centers_csv), system.domain)
    if spec.centers is None:
        raise ArgumentError("dictionary.centers (count) or dictionary.centers_csv is required for RBFs")
    if not isinstance(system, CableSystem):
        raise ArgumentError("k-means++ center placement needs sample trajectories from a cable system")
    samples = np.vstack([t.values for t in sample_set(config, system, verbose=verbose)])
    centers = kmeanspp_centers(samples, spec.centers, config.seed, domain=system.domain, verbose=verbose)
    return build_rbf(centers, spec.width_scale, system.domain, augment_state=spec.augment_state)


def build_quadrature(config: ExperimentConfig, system: SystemMap, dictionary: ObservableDictionary) -> QuadratureRule:
    spec = config.quadrature
    seed = config.seed if spec.seed is None else spec.seed
    if system.domain.dimension == 1 and spec.sample_count is None:
        panel_count = spec.panel_count
        if panel_count is None:
            panel_count = default_panel_count(dictionary.n_max or 0)
        return build_rule(
            system.domain,
            points_per_panel=spec.points_per_panel,
            panel_count=panel_count,
            breakpoints=getattr(system, "breakpoints", ()),
        )
    return build_rule(system.domain, sample_count=spec.sample_count, seed=seed)


def initial_state(config: ExperimentConfig, system: SystemMap) -> np.ndarray:
    x0 = config.scenario.x0 if config.scenario.x0 is not None else DEFAULT_X0[config.system.kind]
    if x0 is None:
        x0 = (system.domain.lo + system.domain.hi) / 2
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.domain.dimension,):
        raise ArgumentError(f"scenario.x0 must have {system.domain.dimension} components (got {x0.tolist()})")
    if not system.domain.contains(x0)[0]:
        raise ArgumentError(f"scenario.x0 {x0.tolist()} lies outside the domain")
    return x0


def initial_states(config: ExperimentConfig, system: SystemMap) -> np.ndarray:
    """scenario.ensemble as a (k, n) array, or the single initial state when no ensemble is set."""
    if config.scenario.ensemble is None:
        return initial_state(config, system)[None, :]
    n = system.domain.dimension
    try:
        X = np.asarray(config.scenario.ensemble, dtype=float)
    except ValueError:
        X = np.empty((0, 0))
    if X.ndim != 2 or X.shape[1] != n or len(X) == 0:
        raise ArgumentError(f"scenario.ensemble must be a non-empty list of {n}-component states")
    outside = np.flatnonzero(~system.domain.contains(X))
    if outside.size:
        raise ArgumentError(f"scenario.ensemble state {X[outside[0]].tolist()} lies outside the domain")
    return X


def truth_trajectory(config: ExperimentConfig, system: SystemMap, x0) -> Trajectory:
    steps, refine = config.scenario.steps, config.scenario.refine
    if steps < 0:
        raise ArgumentError(f"scenario.steps must be >= 0 (got {steps})")
    if refine > 1:
        if not isinstance(system, CableSystem):
            raise ArgumentError("scenario.refine applies to cable systems only")
        return simulate_reference(system, x0, steps, refine)
    return simulate_truth(system, x0, steps)

