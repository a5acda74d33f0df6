"""Experiment configuration: JSON schema, validation, and object builders.

Configs are JSON documents because experiments carry ~20 parameters; flags
only override. Validation is strict: unknown keys, wrong types, and violated
invariants are all reported with the offending field path. parse -> serialize
-> parse is the identity on the parsed value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from mflang import fields as F
from mflang.energy import (
    EnergySpec,
    Internal,
    KineticFields,
    Polynomial,
    ScalarFn,
    TwoBody,
    psi_identity,
    psi_poly,
    psi_square,
)

KINDS = ("contraction", "poc", "kinetic-contraction", "kinetic-poc",
         "fixed-point", "kinetic-constants")


class ConfigError(ValueError):
    """Configuration problem, carrying the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# config dataclasses (defaults are the documented ones)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialConfig:
    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TermConfig:
    kind: str  # pair | product
    potential: PotentialConfig
    k: int = 2


@dataclass(frozen=True)
class EnergyConfig:
    family: str = "two-body"
    V: PotentialConfig = PotentialConfig("zero")
    W: PotentialConfig = PotentialConfig("zero")
    terms: tuple[TermConfig, ...] = ()
    psi: PotentialConfig = PotentialConfig("identity")
    declared_lambda: float = 0.0
    declared_d2m_bound: float = 0.0
    declared_dm_lip: float = 0.0
    drift_zero_sup: float = 0.0


@dataclass(frozen=True)
class KineticConfig:
    A: PotentialConfig = PotentialConfig("linear", {"coeff": 1.0})
    D: PotentialConfig = PotentialConfig("zero")
    lambda_B: float = 1.0
    lip_A: float = 1.0
    mono_A: float = 1.0
    lip_D: float = 0.0
    gamma: Optional[float] = None
    epsilon: Optional[float] = None


@dataclass(frozen=True)
class InitConfig:
    mean_a: float = 0.0
    sd_a: float = 1.0
    mean_b: float = 0.0
    sd_b: float = 1.0
    sd_v: float = 1.0


@dataclass(frozen=True)
class GridConfig:
    lo: float = -10.0
    hi: float = 10.0
    m: int = 2001


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-9
    max_iter: int = 200
    init_mean: float = 3.0
    init_sd: float = 1.0


@dataclass(frozen=True)
class ToleranceConfig:
    rate_tol: float = 0.15
    slope_target: float = -0.5
    slope_tol: float = 0.15
    plateau_tol: float = 0.10
    ratio_slack: float = 0.02
    r2_min: float = 0.9
    envelope_tol: float = 0.15
    variance_tol: float = 1e-3


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = 20260810
    out_dir: Optional[str] = None
    threads: int = 1
    energy: EnergyConfig = EnergyConfig()
    kinetic: KineticConfig = KineticConfig()
    n: int = 256
    n_list: tuple[int, ...] = ()
    d: int = 1
    dt: float = 1e-3
    T: float = 1.0
    replicas: int = 4
    record_every: float = 0.01
    init: InitConfig = InitConfig()
    grid: GridConfig = GridConfig()
    picard: PicardConfig = PicardConfig()
    tolerances: ToleranceConfig = ToleranceConfig()
    fit_window: tuple[float, float] = (0.2, 0.9)
    ratio_pairs: int = 0
    expected_variance: Optional[float] = None
    residual_max: Optional[float] = None
    reference: str = "auto"
    n_ref: Optional[int] = None
    w2_check_every: float = 0.1
    w2_subsample: int = 256
    oracle: bool = False
    expect_feasible: bool = True


# ---------------------------------------------------------------------------
# validation walker
# ---------------------------------------------------------------------------

def _expect(d: Any, path: str, typ, what: str):
    if typ is float and isinstance(d, int) and not isinstance(d, bool):
        return float(d)
    if not isinstance(d, typ) or (typ is not bool and isinstance(d, bool)):
        raise ConfigError(path, f"expected {what}, got {type(d).__name__}")
    return d


def _take(raw: dict, path: str, allowed: dict) -> dict:
    out = {}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    for key, (typ, what, default) in allowed.items():
        here = f"{path}.{key}" if path else key
        if key in raw and raw[key] is not None:
            out[key] = _expect(raw[key], here, typ, what)
        elif default is not ...:
            out[key] = default  # absent or explicit null falls back to the default
        else:
            raise ConfigError(here, "missing required field")
    return out


def _potential(raw: Any, path: str) -> PotentialConfig:
    got = _take(_expect(raw, path, dict, "object"), path, {
        "name": (str, "string", ...),
        "params": (dict, "object", {}),
    })
    for k, v in got["params"].items():
        _expect(v, f"{path}.params.{k}", (int, float, list), "number or list")
    return PotentialConfig(got["name"], dict(got["params"]))


def _energy(raw: Any, path: str) -> EnergyConfig:
    got = _take(_expect(raw, path, dict, "object"), path, {
        "family": (str, "string", "two-body"),
        "V": (dict, "object", None),
        "W": (dict, "object", None),
        "terms": (list, "array", []),
        "psi": (dict, "object", None),
        "declared_lambda": (float, "number", 0.0),
        "declared_d2m_bound": (float, "number", 0.0),
        "declared_dm_lip": (float, "number", 0.0),
        "drift_zero_sup": (float, "number", 0.0),
    })
    if got["family"] not in ("two-body", "polynomial", "internal"):
        raise ConfigError(f"{path}.family", f"unknown energy family {got['family']!r}")
    for key in ("declared_lambda", "declared_d2m_bound", "declared_dm_lip", "drift_zero_sup"):
        if got[key] < 0:
            raise ConfigError(f"{path}.{key}", "must be nonnegative")
    terms = []
    for i, t in enumerate(got["terms"]):
        tp = f"{path}.terms[{i}]"
        tg = _take(_expect(t, tp, dict, "object"), tp, {
            "kind": (str, "string", ...),
            "potential": (dict, "object", ...),
            "k": (int, "integer", 2),
        })
        if tg["kind"] not in ("pair", "product"):
            raise ConfigError(f"{tp}.kind", f"unknown term kind {tg['kind']!r}")
        if tg["k"] < 2:
            raise ConfigError(f"{tp}.k", "k-body terms need k >= 2")
        terms.append(TermConfig(tg["kind"], _potential(tg["potential"], f"{tp}.potential"), tg["k"]))
    return EnergyConfig(
        family=got["family"],
        V=_potential(got["V"], f"{path}.V") if got["V"] is not None else PotentialConfig("zero"),
        W=_potential(got["W"], f"{path}.W") if got["W"] is not None else PotentialConfig("zero"),
        terms=tuple(terms),
        psi=_potential(got["psi"], f"{path}.psi") if got["psi"] is not None else PotentialConfig("identity"),
        declared_lambda=got["declared_lambda"],
        declared_d2m_bound=got["declared_d2m_bound"],
        declared_dm_lip=got["declared_dm_lip"],
        drift_zero_sup=got["drift_zero_sup"],
    )


def _kinetic(raw: Any, path: str) -> KineticConfig:
    got = _take(_expect(raw, path, dict, "object"), path, {
        "A": (dict, "object", None),
        "D": (dict, "object", None),
        "lambda_B": (float, "number", 1.0),
        "lip_A": (float, "number", 1.0),
        "mono_A": (float, "number", 1.0),
        "lip_D": (float, "number", 0.0),
        "gamma": (float, "number", None),
        "epsilon": (float, "number", None),
    })
    return KineticConfig(
        A=_potential(got["A"], f"{path}.A") if got["A"] is not None else PotentialConfig("linear", {"coeff": 1.0}),
        D=_potential(got["D"], f"{path}.D") if got["D"] is not None else PotentialConfig("zero"),
        lambda_B=got["lambda_B"], lip_A=got["lip_A"], mono_A=got["mono_A"],
        lip_D=got["lip_D"], gamma=got["gamma"], epsilon=got["epsilon"],
    )


def parse_config_dict(raw: dict, path: str = "") -> ExperimentConfig:
    got = _take(_expect(raw, path or "<config>", dict, "object"), path, {
        "kind": (str, "string", ...),
        "seed": (int, "integer", 20260810),
        "out_dir": (str, "string", None),
        "threads": (int, "integer", 1),
        "energy": (dict, "object", None),
        "kinetic": (dict, "object", None),
        "n": (int, "integer", 256),
        "n_list": (list, "array", []),
        "d": (int, "integer", 1),
        "dt": (float, "number", 1e-3),
        "T": (float, "number", 1.0),
        "replicas": (int, "integer", 4),
        "record_every": (float, "number", 0.01),
        "init": (dict, "object", None),
        "grid": (dict, "object", None),
        "picard": (dict, "object", None),
        "tolerances": (dict, "object", None),
        "fit_window": (list, "array", [0.2, 0.9]),
        "ratio_pairs": (int, "integer", 0),
        "expected_variance": (float, "number", None),
        "residual_max": (float, "number", None),
        "reference": (str, "string", "auto"),
        "n_ref": (int, "integer", None),
        "w2_check_every": (float, "number", 0.1),
        "w2_subsample": (int, "integer", 256),
        "oracle": (bool, "boolean", False),
        "expect_feasible": (bool, "boolean", True),
    })
    if got["kind"] not in KINDS:
        raise ConfigError("kind", f"unknown experiment kind {got['kind']!r}; expected one of {list(KINDS)}")
    if got["dt"] <= 0:
        raise ConfigError("dt", f"must be positive, got {got['dt']}")
    if got["T"] <= 0:
        raise ConfigError("T", f"must be positive, got {got['T']}")
    if got["replicas"] < 1:
        raise ConfigError("replicas", f"must be >= 1, got {got['replicas']}")
    if got["n"] < 1:
        raise ConfigError("n", f"must be >= 1, got {got['n']}")
    if got["d"] < 1:
        raise ConfigError("d", f"must be >= 1, got {got['d']}")
    if got["threads"] < 1:
        raise ConfigError("threads", f"must be >= 1, got {got['threads']}")
    if got["record_every"] <= 0:
        raise ConfigError("record_every", "must be positive")
    n_list = []
    for i, v in enumerate(got["n_list"]):
        n_list.append(_expect(v, f"n_list[{i}]", int, "integer"))
    if n_list and any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("n_list", f"must be strictly increasing, got {n_list}")
    fw = [
        _expect(v, f"fit_window[{i}]", float, "number")
        for i, v in enumerate(got["fit_window"])
    ]
    if len(fw) != 2 or not (0.0 <= fw[0] < fw[1] <= 1.0):
        raise ConfigError("fit_window", f"must be [lo, hi] fractions of T with 0 <= lo < hi <= 1, got {fw}")

    def sub(key, builder, default):
        return builder(got[key], key) if got[key] is not None else default

    init = sub("init", lambda r, p: InitConfig(**_take(r, p, {
        "mean_a": (float, "number", 0.0), "sd_a": (float, "number", 1.0),
        "mean_b": (float, "number", 0.0), "sd_b": (float, "number", 1.0),
        "sd_v": (float, "number", 1.0),
    })), InitConfig())
    grid = sub("grid", lambda r, p: GridConfig(**_take(r, p, {
        "lo": (float, "number", -10.0), "hi": (float, "number", 10.0),
        "m": (int, "integer", 2001),
    })), GridConfig())
    if not grid.lo < grid.hi:
        raise ConfigError("grid", f"needs lo < hi, got [{grid.lo}, {grid.hi}]")
    if grid.m < 3:
        raise ConfigError("grid.m", f"needs m >= 3, got {grid.m}")
    picard = sub("picard", lambda r, p: PicardConfig(**_take(r, p, {
        "tol": (float, "number", 1e-9), "max_iter": (int, "integer", 200),
        "init_mean": (float, "number", 3.0), "init_sd": (float, "number", 1.0),
    })), PicardConfig())
    if picard.tol <= 0:
        raise ConfigError("picard.tol", "must be positive")
    tol = sub("tolerances", lambda r, p: ToleranceConfig(**_take(r, p, {
        "rate_tol": (float, "number", 0.15), "slope_target": (float, "number", -0.5),
        "slope_tol": (float, "number", 0.15), "plateau_tol": (float, "number", 0.10),
        "ratio_slack": (float, "number", 0.02), "r2_min": (float, "number", 0.9),
        "envelope_tol": (float, "number", 0.15), "variance_tol": (float, "number", 1e-3),
    })), ToleranceConfig())
    if got["reference"] not in ("auto", "particle", "closed-form"):
        raise ConfigError("reference", f"unknown reference mode {got['reference']!r}")

    return ExperimentConfig(
        kind=got["kind"], seed=got["seed"], out_dir=got["out_dir"], threads=got["threads"],
        energy=sub("energy", _energy, EnergyConfig()),
        kinetic=sub("kinetic", _kinetic, KineticConfig()),
        n=got["n"], n_list=tuple(n_list), d=got["d"], dt=got["dt"], T=got["T"],
        replicas=got["replicas"], record_every=got["record_every"],
        init=init, grid=grid, picard=picard, tolerances=tol,
        fit_window=(fw[0], fw[1]), ratio_pairs=got["ratio_pairs"],
        expected_variance=got["expected_variance"], residual_max=got["residual_max"],
        reference=got["reference"], n_ref=got["n_ref"],
        w2_check_every=got["w2_check_every"], w2_subsample=got["w2_subsample"],
        oracle=got["oracle"], expect_feasible=got["expect_feasible"],
    )


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON experiment config."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(str(p), "config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(p), f"malformed JSON: {exc}") from None
    return parse_config_dict(raw)


def serialize_config(cfg: ExperimentConfig) -> dict:
    """Canonical JSON-ready form; parse(serialize(cfg)) == cfg."""

    def pot(p: PotentialConfig) -> dict:
        return {"name": p.name, "params": dict(p.params)}

    out = {
        "kind": cfg.kind, "seed": cfg.seed, "threads": cfg.threads,
        "energy": {
            "family": cfg.energy.family,
            "V": pot(cfg.energy.V), "W": pot(cfg.energy.W),
            "terms": [
                {"kind": t.kind, "potential": pot(t.potential), "k": t.k}
                for t in cfg.energy.terms
            ],
            "psi": pot(cfg.energy.psi),
            "declared_lambda": cfg.energy.declared_lambda,
            "declared_d2m_bound": cfg.energy.declared_d2m_bound,
            "declared_dm_lip": cfg.energy.declared_dm_lip,
            "drift_zero_sup": cfg.energy.drift_zero_sup,
        },
        "kinetic": {
            "A": pot(cfg.kinetic.A), "D": pot(cfg.kinetic.D),
            "lambda_B": cfg.kinetic.lambda_B, "lip_A": cfg.kinetic.lip_A,
            "mono_A": cfg.kinetic.mono_A, "lip_D": cfg.kinetic.lip_D,
        },
        "n": cfg.n, "n_list": list(cfg.n_list), "d": cfg.d,
        "dt": cfg.dt, "T": cfg.T, "replicas": cfg.replicas,
        "record_every": cfg.record_every,
        "init": {"mean_a": cfg.init.mean_a, "sd_a": cfg.init.sd_a,
                 "mean_b": cfg.init.mean_b, "sd_b": cfg.init.sd_b,
                 "sd_v": cfg.init.sd_v},
        "grid": {"lo": cfg.grid.lo, "hi": cfg.grid.hi, "m": cfg.grid.m},
        "picard": {"tol": cfg.picard.tol, "max_iter": cfg.picard.max_iter,
                   "init_mean": cfg.picard.init_mean, "init_sd": cfg.picard.init_sd},
        "tolerances": {
            "rate_tol": cfg.tolerances.rate_tol, "slope_target": cfg.tolerances.slope_target,
            "slope_tol": cfg.tolerances.slope_tol, "plateau_tol": cfg.tolerances.plateau_tol,
            "ratio_slack": cfg.tolerances.ratio_slack, "r2_min": cfg.tolerances.r2_min,
            "envelope_tol": cfg.tolerances.envelope_tol, "variance_tol": cfg.tolerances.variance_tol,
        },
        "fit_window": list(cfg.fit_window), "ratio_pairs": cfg.ratio_pairs,
        "reference": cfg.reference,
        "w2_check_every": cfg.w2_check_every, "w2_subsample": cfg.w2_subsample,
        "oracle": cfg.oracle, "expect_feasible": cfg.expect_feasible,
    }
    if cfg.out_dir is not None:
        out["out_dir"] = cfg.out_dir
    if cfg.kinetic.gamma is not None:
        out["kinetic"]["gamma"] = cfg.kinetic.gamma
    if cfg.kinetic.epsilon is not None:
        out["kinetic"]["epsilon"] = cfg.kinetic.epsilon
    if cfg.expected_variance is not None:
        out["expected_variance"] = cfg.expected_variance
    if cfg.residual_max is not None:
        out["residual_max"] = cfg.residual_max
    if cfg.n_ref is not None:
        out["n_ref"] = cfg.n_ref
    return out


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

_SCALAR_BUILDERS = {
    "quadratic": lambda p: F.quadratic(p.get("a", 1.0), p.get("b", 0.0), p.get("c", 0.0)),
    "quartic": lambda p: F.quartic(p.get("a", 1.0), p.get("b", 0.0), p.get("c", 0.0),
                                   p.get("d", 0.0), p.get("e", 0.0)),
    "cosine": lambda p: F.cosine(p.get("eps", 1.0), p.get("freq", 1.0)),
    "gaussian-well": lambda p: F.gaussian_well(p.get("depth", 1.0), p.get("width", 1.0)),
    "zero": lambda p: F.zero_field(),
}

_VECTOR_BUILDERS = {
    "linear": lambda p: F.linear_vector(p.get("coeff", 1.0)),
    "sine": lambda p: F.sine_vector(p.get("amp", 1.0), p.get("freq", 1.0)),
    "zero": lambda p: F.zero_vector(),
}


def build_scalar_field(pc: PotentialConfig, path: str = "potential") -> F.ScalarField:
    try:
        builder = _SCALAR_BUILDERS[pc.name]
    except KeyError:
        raise ConfigError(path, f"unknown potential {pc.name!r}; catalog: {sorted(_SCALAR_BUILDERS)}") from None
    return builder(pc.params)


def build_vector_field(pc: PotentialConfig, path: str = "field") -> F.VectorField:
    try:
        builder = _VECTOR_BUILDERS[pc.name]
    except KeyError:
        raise ConfigError(path, f"unknown vector field {pc.name!r}; catalog: {sorted(_VECTOR_BUILDERS)}") from None
    return builder(pc.params)


def build_psi(pc: PotentialConfig, path: str = "energy.psi") -> ScalarFn:
    if pc.name == "identity":
        return psi_identity()
    if pc.name == "square":
        return psi_square()
    if pc.name == "poly":
        coeffs = pc.params.get("coeffs")
        if not isinstance(coeffs, list) or not coeffs:
            raise ConfigError(f"{path}.params.coeffs", "poly needs a nonempty coefficient list")
        return psi_poly(coeffs)
    raise ConfigError(path, f"unknown psi {pc.name!r}; catalog: ['identity', 'square', 'poly']")


def build_energy_spec(ec: EnergyConfig) -> EnergySpec:
    if ec.family == "two-body":
        fam = TwoBody(build_scalar_field(ec.V, "energy.V"), build_scalar_field(ec.W, "energy.W"))
    elif ec.family == "polynomial":
        terms = []
        for i, t in enumerate(ec.terms):
            pot = build_scalar_field(t.potential, f"energy.terms[{i}].potential")
            if t.kind == "pair":
                terms.append(F.pair_interaction(pot))
            else:
                terms.append(F.product_interaction(pot, t.k))
        fam = Polynomial(build_scalar_field(ec.V, "energy.V"), tuple(terms))
    else:
        fam = Internal(build_psi(ec.psi), build_scalar_field(ec.W, "energy.W"))
    return EnergySpec(
        family=fam,
        declared_lambda=ec.declared_lambda,
        declared_d2m_bound=ec.declared_d2m_bound,
        declared_dm_lip=ec.declared_dm_lip,
    )


def build_kinetic_fields(kc: KineticConfig) -> KineticFields:
    return KineticFields(
        A=build_vector_field(kc.A, "kinetic.A"),
        lambda_B=kc.lambda_B,
        D=build_vector_field(kc.D, "kinetic.D"),
        lip_A=kc.lip_A,
        mono_A=kc.mono_A,
        lip_D=kc.lip_D,
    )


def interaction_gamma(cfg: ExperimentConfig) -> float:
    """The kinetic interaction size: declared drift Lipschitz plus operator norm."""
    if cfg.kinetic.gamma is not None:
        return cfg.kinetic.gamma
    return cfg.energy.declared_dm_lip + cfg.energy.declared_d2m_bound
