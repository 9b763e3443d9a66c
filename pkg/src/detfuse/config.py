"""Experiment configuration: a versioned TOML schema mapped onto model,
quantizer, and design objects.

Schema (version 1), by table:

``[scenario]``
    p0 (float), free (list of parameter names), and per-hypothesis
    tables ``[scenario.h0]`` / ``[scenario.h1]`` with ``copula``
    ("independence" or "clayton"), ``dependence`` (required for
    clayton), and ``marginals`` (list of [shape, scale] pairs, one per
    sensor).
``[grid]``
    y_min, y_max, delta; shared by every sensor.
``[init]``
    indicators: per sensor, a list of [a, b] pairs, one per bit (bit = 1
    iff a*y + b >= 0 at the cell midpoint); rule: "or", "and", or an
    explicit 0/1 list over outcomes.
``[costs]``
    c00, c01, c10, c11.
``[mle]``
    restarts, seed, xatol, fatol, maxiter (all optional).
``[trace]``
    stages, samples_per_stage (int or list), seed, warm_start_chain,
    design_restarts (optional, default 0: single-start redesigns).
``[rmse]``
    rho_values and theta_values (parallel lists), stages,
    samples_per_stage, replicates, base_seed, design_restarts
    (optional, default 0).
``[efficiency]``
    rho, theta, groups, samples_per_group, replicates, base_seed,
    thresholds1, thresholds2 (per-group scalar thresholds; sensor 1
    codes y >= t, sensor 2 codes y <= t), mle_restarts.
``[roc]``
    rho, theta, c01_values, budgets (list of [stages, samples] pairs),
    replicates, n_test_h0, n_test_h1, base_seed, design_restarts,
    design_seed.

Experiment sections are optional; each runner requires its own. All
seeds live in the file so a config plus the CLI seed override fully
determines every byte of the output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:
    import tomli as _toml

from .copulas import CopulaFamily, CopulaModel
from .design import CostCoefficients, FusionRule
from .estimation import MleOptions
from .models import HypothesisParams, ParamVector, Scenario
from .quantizers import QuantizerBank, SensorGrid

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Raised for missing, ill-typed, or inconsistent configuration."""


_REQUIRED = object()


def _get(table: dict, key: str, where: str, types, default=_REQUIRED):
    if key not in table:
        if default is _REQUIRED:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    val = table[key]
    if types is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, types) or isinstance(val, bool) and types is not bool:
        raise ConfigError(
            f"{where}.{key}: expected {getattr(types, '__name__', types)}, "
            f"got {type(val).__name__}"
        )
    return val


def _pairs(raw, where: str) -> tuple:
    out = []
    for k, item in enumerate(raw):
        if not (isinstance(item, list) and len(item) == 2):
            raise ConfigError(f"{where}[{k}]: expected a [a, b] pair")
        out.append((float(item[0]), float(item[1])))
    return tuple(out)


@dataclass
class TraceSection:
    stages: int
    samples_per_stage: list
    seed: int
    warm_start_chain: bool = True
    design_restarts: int = 0


@dataclass
class RmseSection:
    rho_values: list
    theta_values: list
    stages: int
    samples_per_stage: int
    replicates: int
    base_seed: int
    design_restarts: int = 0


@dataclass
class EfficiencySection:
    rho: float
    theta: float
    groups: int
    samples_per_group: int
    replicates: int
    base_seed: int
    thresholds1: list
    thresholds2: list
    mle_restarts: int


@dataclass
class RocSection:
    rho: float
    theta: float
    c01_values: list
    budgets: list
    replicates: int
    n_test_h0: int
    n_test_h1: int
    base_seed: int
    design_restarts: int
    design_seed: int


@dataclass
class ExperimentConfig:
    """Validated configuration plus factories for the objects it describes."""

    path: str
    sha256: str
    schema_version: int
    scenario: Scenario
    grid: SensorGrid
    init_indicators: list
    init_rule_spec: object
    costs: CostCoefficients
    mle: MleOptions
    trace: TraceSection | None = None
    rmse: RmseSection | None = None
    efficiency: EfficiencySection | None = None
    roc: RocSection | None = None

    def init_bank(self) -> QuantizerBank:
        grids = [self.grid] * self.scenario.n_sensors
        return QuantizerBank.from_indicators(grids, self.init_indicators)

    def init_rule(self) -> FusionRule:
        n = self.init_bank().n_outcomes
        spec = self.init_rule_spec
        if spec == "or":
            return FusionRule.or_rule(n)
        if spec == "and":
            return FusionRule.and_rule(n)
        return FusionRule(np.array(spec))

    def scenario_with_dependence(self, theta: float) -> Scenario:
        """Scenario with the H1 dependence truth replaced (rho sweeps)."""
        pv = self.scenario.params
        if pv.h1.dependence is None:
            raise ConfigError("scenario.h1 has no dependence parameter to sweep")
        table = dict(zip(pv.names(), pv.values()))
        table["h1_dep"] = float(theta)
        return Scenario(self.scenario.copula0, self.scenario.copula1, pv._from_table(table))


def _build_hypothesis(sec: dict, where: str):
    fam_name = _get(sec, "copula", where, str)
    try:
        fam = CopulaFamily(fam_name)
    except ValueError:
        raise ConfigError(
            f"{where}.copula: unknown family {fam_name!r} "
            f"(expected one of {[f.value for f in CopulaFamily]})"
        ) from None
    margs = _pairs(_get(sec, "marginals", where, list), f"{where}.marginals")
    dep = _get(sec, "dependence", where, float, default=None)
    if fam is CopulaFamily.INDEPENDENCE and dep is not None:
        raise ConfigError(f"{where}: independence copula takes no 'dependence'")
    if fam is CopulaFamily.CLAYTON and dep is None:
        raise ConfigError(f"{where}: clayton copula requires 'dependence'")
    cop = CopulaModel(fam, dim=len(margs))
    return cop, HypothesisParams(dep, margs)


def _build_scenario(tab: dict) -> Scenario:
    where = "scenario"
    p0 = _get(tab, "p0", where, float)
    free = _get(tab, "free", where, list, default=[])
    if "h0" not in tab or "h1" not in tab:
        raise ConfigError("scenario: requires [scenario.h0] and [scenario.h1] tables")
    cop0, h0 = _build_hypothesis(tab["h0"], "scenario.h0")
    cop1, h1 = _build_hypothesis(tab["h1"], "scenario.h1")
    try:
        pv = ParamVector(p0, h0, h1, free=tuple(free))
        return Scenario(cop0, cop1, pv)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None


def _build_trace(tab: dict, stages_key="stages") -> TraceSection:
    where = "trace"
    stages = _get(tab, "stages", where, int)
    sps = tab.get("samples_per_stage")
    if isinstance(sps, int):
        sizes = [sps] * stages
    elif isinstance(sps, list):
        sizes = [int(x) for x in sps]
        if len(sizes) != stages:
            raise ConfigError(
                f"{where}.samples_per_stage: {len(sizes)} entries for {stages} stages"
            )
    else:
        raise ConfigError(f"{where}.samples_per_stage: expected int or list")
    return TraceSection(
        stages=stages,
        samples_per_stage=sizes,
        seed=_get(tab, "seed", where, int),
        warm_start_chain=_get(tab, "warm_start_chain", where, bool, default=True),
        design_restarts=_get(tab, "design_restarts", where, int, default=0),
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment configuration."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = _toml.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, _toml.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: not valid TOML: {exc}") from None

    version = _get(raw, "schema_version", "config", int)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {version} unsupported (this build reads {SCHEMA_VERSION})"
        )
    for key in ("scenario", "grid", "init", "costs"):
        if key not in raw:
            raise ConfigError(f"config: missing required table [{key}]")

    scenario = _build_scenario(raw["scenario"])

    gtab = raw["grid"]
    try:
        grid = SensorGrid(
            _get(gtab, "y_min", "grid", float),
            _get(gtab, "y_max", "grid", float),
            _get(gtab, "delta", "grid", float),
        )
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None

    itab = raw["init"]
    indicators_raw = _get(itab, "indicators", "init", list)
    if len(indicators_raw) != scenario.n_sensors:
        raise ConfigError(
            f"init.indicators: {len(indicators_raw)} sensors configured, "
            f"scenario has {scenario.n_sensors}"
        )
    indicators = [
        _pairs(sensor, f"init.indicators[{i}]") for i, sensor in enumerate(indicators_raw)
    ]
    rule_spec = _get(itab, "rule", "init", (str, list))
    if isinstance(rule_spec, str) and rule_spec not in ("or", "and"):
        raise ConfigError(f"init.rule: expected 'or', 'and', or a 0/1 list, got {rule_spec!r}")

    ctab = raw["costs"]
    try:
        costs = CostCoefficients(
            _get(ctab, "c00", "costs", float),
            _get(ctab, "c01", "costs", float),
            _get(ctab, "c10", "costs", float),
            _get(ctab, "c11", "costs", float),
        )
    except ValueError as exc:
        raise ConfigError(f"costs: {exc}") from None

    mtab = raw.get("mle", {})
    mle = MleOptions(
        restarts=_get(mtab, "restarts", "mle", int, default=5),
        seed=_get(mtab, "seed", "mle", int, default=0),
        xatol=_get(mtab, "xatol", "mle", float, default=1e-6),
        fatol=_get(mtab, "fatol", "mle", float, default=1e-6),
        maxiter=_get(mtab, "maxiter", "mle", int, default=2000),
    )

    trace = _build_trace(raw["trace"]) if "trace" in raw else None

    rmse = None
    if "rmse" in raw:
        rtab = raw["rmse"]
        rhos = _get(rtab, "rho_values", "rmse", list)
        thetas = _get(rtab, "theta_values", "rmse", list)
        if len(rhos) != len(thetas):
            raise ConfigError("rmse: rho_values and theta_values must pair up")
        rmse = RmseSection(
            rho_values=[float(x) for x in rhos],
            theta_values=[float(x) for x in thetas],
            stages=_get(rtab, "stages", "rmse", int),
            samples_per_stage=_get(rtab, "samples_per_stage", "rmse", int),
            replicates=_get(rtab, "replicates", "rmse", int),
            base_seed=_get(rtab, "base_seed", "rmse", int),
            design_restarts=_get(rtab, "design_restarts", "rmse", int, default=0),
        )

    efficiency = None
    if "efficiency" in raw:
        etab = raw["efficiency"]
        efficiency = EfficiencySection(
            rho=_get(etab, "rho", "efficiency", float),
            theta=_get(etab, "theta", "efficiency", float),
            groups=_get(etab, "groups", "efficiency", int),
            samples_per_group=_get(etab, "samples_per_group", "efficiency", int),
            replicates=_get(etab, "replicates", "efficiency", int),
            base_seed=_get(etab, "base_seed", "efficiency", int),
            thresholds1=[float(x) for x in _get(etab, "thresholds1", "efficiency", list)],
            thresholds2=[float(x) for x in _get(etab, "thresholds2", "efficiency", list)],
            mle_restarts=_get(etab, "mle_restarts", "efficiency", int, default=4),
        )
        if len(efficiency.thresholds1) != efficiency.groups or len(
            efficiency.thresholds2
        ) != efficiency.groups:
            raise ConfigError("efficiency: need one threshold per group per sensor")

    roc = None
    if "roc" in raw:
        otab = raw["roc"]
        budgets_raw = _get(otab, "budgets", "roc", list)
        budgets = []
        for k, b in enumerate(budgets_raw):
            if not (isinstance(b, list) and len(b) == 2):
                raise ConfigError(f"roc.budgets[{k}]: expected [stages, samples] pair")
            budgets.append((int(b[0]), int(b[1])))
        roc = RocSection(
            rho=_get(otab, "rho", "roc", float),
            theta=_get(otab, "theta", "roc", float),
            c01_values=[float(x) for x in _get(otab, "c01_values", "roc", list)],
            budgets=budgets,
            replicates=_get(otab, "replicates", "roc", int),
            n_test_h0=_get(otab, "n_test_h0", "roc", int),
            n_test_h1=_get(otab, "n_test_h1", "roc", int),
            base_seed=_get(otab, "base_seed", "roc", int),
            design_restarts=_get(otab, "design_restarts", "roc", int, default=8),
            design_seed=_get(otab, "design_seed", "roc", int, default=0),
        )

    return ExperimentConfig(
        path=str(path),
        sha256=hashlib.sha256(blob).hexdigest(),
        schema_version=version,
        scenario=scenario,
        grid=grid,
        init_indicators=indicators,
        init_rule_spec=rule_spec,
        costs=costs,
        mle=mle,
        trace=trace,
        rmse=rmse,
        efficiency=efficiency,
        roc=roc,
    )
