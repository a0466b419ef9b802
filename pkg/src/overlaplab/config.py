"""Experiment configuration.

Configs are TOML (JSON also accepted for generated files) with three parts:
global knobs, a table of named sources, and a list of suites referencing
sources by name.  Parsing is strict: unknown suite kinds, undefined source
names, or malformed function specs raise ConfigError with the offending key
path, and the command line maps that to exit code 2.

Defaults (every numeric default in one place):

    epsilon        0.05    pattern tolerance and census coincidence width
    significance   3.0     |z| acceptance threshold
    bootstrap      200     bootstrap resamples per standard error
    exact_cap      4096    largest atom-tuple enumeration per estimator
    jobs           1       parallel suite workers
    budgets.realizations 200   measure draws per suite
    budgets.groups        64   replica groups per draw (sampling fallback)
    budgets.inner        256   inner Monte Carlo size (non-atomic sources)
    cascade K            512   atoms kept per weight-tree node
    dirac q_star         1.0
    sk/pspin beta        1.0   (sk) pair-interaction strength
    mc.sweeps            200   recorded sweeps per chain
    mc.burn_in           100
    mc.thinning           10
    suite gg n             2
    suite mixture n        2
    suite invariance t_grid [0.25, 0.5, 1.0, 2.0], h 0.25
    suite ultrametric triples 10000, tree_checks 4, tree_size 8
    suite extension n      2
    suite barycenter patterns 100
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from .core import ConstraintMatrix
from .functions import matrix_from_dict, scalar_from_dict
from .identities import Budget
from .invariance import MatrixWeightFunction, ThresholdPartition
from .measures import CascadeSource, DiracSource, MeasureSource
from .spin import (ChainSpinSource, EnumeratedSpinSource, MCParams,
                   MixedPSpinModel, PerturbationSpec)

SOURCE_KINDS = ("cascade", "sk", "pspin", "enumerated", "dirac")
SUITE_KINDS = ("gg", "mixture", "invariance", "theorem2", "ultrametric",
               "extension", "barycenter")

DEFAULTS = {
    "epsilon": 0.05,
    "significance": 3.0,
    "bootstrap": 200,
    "exact_cap": 4096,
    "jobs": 1,
    "budgets": {"realizations": 200, "groups": 64, "inner": 256},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the key path."""


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}: required key is missing")
    return table[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _table(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a table, got {value!r}")
    return value


def _array(value, path: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected an array, got {value!r}")
    return value


def _scalar_func(obj, path: str):
    try:
        return scalar_from_dict(_table(obj, path))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad scalar function spec ({exc})") from exc


def _matrix_func(obj, path: str):
    try:
        return matrix_from_dict(_table(obj, path))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad matrix function spec ({exc})") from exc


def _perturbation(obj, path: str) -> PerturbationSpec:
    table = _table(obj, path)
    terms = _array(_require(table, "terms", path), f"{path}.terms")
    seed = _integer(_require(table, "seed", path), f"{path}.seed")
    try:
        return PerturbationSpec(tuple((p, x) for p, x in terms), seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _mc_params(obj, path: str) -> MCParams:
    table = _table(obj, path)
    kwargs = {}
    for key in ("sweeps", "burn_in", "thinning"):
        if key in table:
            kwargs[key] = _integer(table[key], f"{path}.{key}")
    if "ladder" in table:
        kwargs["ladder"] = tuple(
            _number(x, f"{path}.ladder[{i}]")
            for i, x in enumerate(_array(table["ladder"], f"{path}.ladder")))
    try:
        return MCParams(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _spin_model(table: dict, path: str, *, need_terms: bool) -> MixedPSpinModel:
    n_spins = _integer(_require(table, "n_spins", path), f"{path}.n_spins")
    if need_terms:
        raw = _array(_require(table, "terms", path), f"{path}.terms")
        try:
            terms = tuple((int(p), float(x)) for p, x in raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.terms: expected [order, strength] pairs "
                              f"({exc})") from exc
    else:
        terms = ((2, _number(table.get("beta", 1.0), f"{path}.beta")),)
    perturbation = None
    if "perturbation" in table:
        perturbation = _perturbation(table["perturbation"], f"{path}.perturbation")
    try:
        return MixedPSpinModel(n_spins, terms, perturbation)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_source(table: dict, path: str) -> MeasureSource:
    kind = _require(table, "kind", path)
    if kind not in SOURCE_KINDS:
        raise ConfigError(f"{path}.kind: unknown source kind {kind!r}; "
                          f"expected one of {', '.join(SOURCE_KINDS)}")
    try:
        if kind == "dirac":
            return DiracSource(q_star=_number(table.get("q_star", 1.0),
                                              f"{path}.q_star"),
                               dimension=_integer(table.get("dimension", 1),
                                                  f"{path}.dimension"))
        if kind == "cascade":
            zetas = _array(_require(table, "zetas", path), f"{path}.zetas")
            overlaps = _array(_require(table, "overlaps", path), f"{path}.overlaps")
            return CascadeSource(
                zetas, overlaps,
                truncation=_integer(table.get("K", 512), f"{path}.K"),
                dimension=_integer(table.get("dimension", 0), f"{path}.dimension"))
        if kind == "enumerated":
            model = _spin_model(table, path, need_terms="terms" in table)
            return EnumeratedSpinSource(model)
        # chain-sampled spin models
        model = _spin_model(table, path, need_terms=(kind == "pspin"))
        mc = _mc_params(table.get("mc", {}), f"{path}.mc")
        return ChainSpinSource(model, mc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class SuiteSpec:
    """One parsed suite: kind, resolved source name, typed parameters."""

    index: int
    kind: str
    source_name: Optional[str]
    label: str
    budget: Budget
    significance: float
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    """Validated experiment: named sources plus an ordered suite list."""

    master_seed: Optional[int]
    epsilon: float
    significance: float
    bootstrap: int
    exact_cap: int
    jobs: int
    out_dir: Optional[str]
    budgets: Budget
    sources: dict
    suites: list
    raw: dict


def _budget(table: dict, path: str, base: Budget) -> Budget:
    table = _table(table, path)
    known = {"realizations", "groups", "inner"}
    for key in table:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown budget key")
    try:
        return Budget(
            realizations=_integer(table.get("realizations", base.realizations),
                                  f"{path}.realizations"),
            groups=_integer(table.get("groups", base.groups), f"{path}.groups"),
            inner=_integer(table.get("inner", base.inner), f"{path}.inner"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _partition(obj, path: str) -> ThresholdPartition:
    table = _table(obj, path)
    axes = _array(_require(table, "axes", path), f"{path}.axes")
    parsed = []
    for i, axis in enumerate(axes):
        axis = _array(axis, f"{path}.axes[{i}]")
        if len(axis) != 2:
            raise ConfigError(f"{path}.axes[{i}]: expected [replica_label, cuts]")
        label = _integer(axis[0], f"{path}.axes[{i}][0]")
        cuts = _array(axis[1], f"{path}.axes[{i}][1]")
        parsed.append((label, tuple(cuts)))
    try:
        return ThresholdPartition(tuple(parsed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _weight_function(obj, path: str) -> MatrixWeightFunction:
    table = _table(obj, path)
    matrix = _matrix_func(_require(table, "matrix", path), f"{path}.matrix")
    factors = []
    for i, pair in enumerate(_array(table.get("weight_factors", []),
                                    f"{path}.weight_factors")):
        pair = _array(pair, f"{path}.weight_factors[{i}]")
        if len(pair) != 2:
            raise ConfigError(f"{path}.weight_factors[{i}]: expected [cell, func]")
        cell = _integer(pair[0], f"{path}.weight_factors[{i}][0]")
        if cell < 0:
            raise ConfigError(f"{path}.weight_factors[{i}][0]: cell must be >= 0")
        factors.append((cell, _scalar_func(pair[1], f"{path}.weight_factors[{i}][1]")))
    return MatrixWeightFunction(matrix, tuple(factors))


def _constraint(table: dict, path: str, n: int, q_star: float,
                epsilon: float) -> ConstraintMatrix:
    if "entries" in table:
        rows = _array(table["entries"], f"{path}.entries")
        entries = np.asarray(rows, dtype=np.float64)
        if entries.shape != (n, n):
            raise ConfigError(f"{path}.entries: expected a {n}x{n} matrix")
        np.fill_diagonal(entries, q_star)
    else:
        fill = _number(_require(table, "fill", path), f"{path}.fill")
        entries = np.full((n, n), fill)
        np.fill_diagonal(entries, q_star)
    try:
        return ConstraintMatrix(entries, epsilon=epsilon)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_suite(table: dict, index: int, path: str, cfg_epsilon: float,
                 cfg_significance: float, base_budget: Budget,
                 sources: dict) -> SuiteSpec:
    table = _table(table, path)
    kind = _require(table, "kind", path)
    if kind not in SUITE_KINDS:
        raise ConfigError(f"{path}.kind: unknown suite kind {kind!r}; "
                          f"expected one of {', '.join(SUITE_KINDS)}")
    source_name = table.get("source")
    if kind == "barycenter":
        if source_name is not None and source_name not in sources:
            raise ConfigError(f"{path}.source: undefined source {source_name!r}")
    else:
        if source_name is None:
            raise ConfigError(f"{path}.source: required key is missing")
        if source_name not in sources:
            raise ConfigError(f"{path}.source: undefined source {source_name!r}; "
                              f"defined: {', '.join(sorted(sources)) or '(none)'}")
    budget = _budget(table.get("budget", {}), f"{path}.budget", base_budget)
    significance = _number(table.get("significance", cfg_significance),
                           f"{path}.significance")
    label = table.get("label", "")
    if not isinstance(label, str):
        raise ConfigError(f"{path}.label: expected a string")
    params: dict = {}
    if kind == "gg":
        params["n"] = _integer(table.get("n", 2), f"{path}.n")
        f_spec = table.get("f", {"kind": "constant", "value": 1.0})
        params["f"] = _matrix_func(f_spec, f"{path}.f")
        params["psi"] = _scalar_func(_require(table, "psi", path), f"{path}.psi")
    elif kind == "mixture":
        params["n"] = _integer(table.get("n", 2), f"{path}.n")
        if "bins" in table:
            params["bins"] = [
                _number(v, f"{path}.bins[{i}]")
                for i, v in enumerate(_array(table["bins"], f"{path}.bins"))]
        if "min_count" in table:
            params["min_count"] = _number(table["min_count"], f"{path}.min_count")
    elif kind == "invariance":
        fs = _array(_require(table, "fs", path), f"{path}.fs")
        params["funcs"] = [_scalar_func(f, f"{path}.fs[{i}]")
                           for i, f in enumerate(fs)]
        params["phi"] = _matrix_func(_require(table, "phi", path), f"{path}.phi")
        grid = table.get("t_grid", [0.25, 0.5, 1.0, 2.0])
        params["t_grid"] = tuple(
            _number(t, f"{path}.t_grid[{i}]")
            for i, t in enumerate(_array(grid, f"{path}.t_grid")))
        params["h"] = _number(table.get("h", 0.25), f"{path}.h")
    elif kind == "theorem2":
        fs = _array(_require(table, "fs", path), f"{path}.fs")
        params["funcs"] = [_scalar_func(f, f"{path}.fs[{i}]")
                           for i, f in enumerate(fs)]
        params["partition"] = _partition(_require(table, "partition", path),
                                         f"{path}.partition")
        params["phi"] = _weight_function(_require(table, "phi", path), f"{path}.phi")
    elif kind == "ultrametric":
        params["triples"] = _integer(table.get("triples", 10000), f"{path}.triples")
        params["epsilon"] = _number(table.get("epsilon", cfg_epsilon),
                                    f"{path}.epsilon")
        params["tree_checks"] = _integer(table.get("tree_checks", 4),
                                         f"{path}.tree_checks")
        params["tree_size"] = _integer(table.get("tree_size", 8),
                                       f"{path}.tree_size")
    elif kind == "extension":
        n = _integer(table.get("n", 2), f"{path}.n")
        params["n"] = n
        eps = _number(table.get("epsilon", cfg_epsilon), f"{path}.epsilon")
        q_star = sources[source_name].q_star
        params["constraint"] = _constraint(table, path, n, q_star, eps)
    elif kind == "barycenter":
        params["patterns"] = _integer(table.get("patterns", 100),
                                      f"{path}.patterns")
    return SuiteSpec(index=index, kind=kind, source_name=source_name,
                     label=label, budget=budget, significance=significance,
                     params=params)


def parse_config(data: dict, *, origin: str = "config") -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig."""
    data = _table(data, origin)
    master_seed = data.get("master_seed")
    if master_seed is not None:
        master_seed = _integer(master_seed, f"{origin}.master_seed")
    epsilon = _number(data.get("epsilon", DEFAULTS["epsilon"]),
                      f"{origin}.epsilon")
    if epsilon <= 0:
        raise ConfigError(f"{origin}.epsilon: must be positive")
    significance = _number(data.get("significance", DEFAULTS["significance"]),
                           f"{origin}.significance")
    bootstrap = _integer(data.get("bootstrap", DEFAULTS["bootstrap"]),
                         f"{origin}.bootstrap")
    if bootstrap < 2:
        raise ConfigError(f"{origin}.bootstrap: need at least 2 resamples")
    exact_cap = _integer(data.get("exact_cap", DEFAULTS["exact_cap"]),
                         f"{origin}.exact_cap")
    jobs = _integer(data.get("jobs", DEFAULTS["jobs"]), f"{origin}.jobs")
    if jobs < 1:
        raise ConfigError(f"{origin}.jobs: must be >= 1")
    out_dir = data.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError(f"{origin}.out_dir: expected a string path")
    budgets = _budget(data.get("budgets", {}), f"{origin}.budgets",
                      Budget(**DEFAULTS["budgets"]))
    sources = {}
    for name, table in _table(data.get("sources", {}), f"{origin}.sources").items():
        sources[name] = build_source(_table(table, f"{origin}.sources.{name}"),
                                     f"{origin}.sources.{name}")
    suites = []
    for i, table in enumerate(_array(data.get("suites", []), f"{origin}.suites")):
        suites.append(_parse_suite(table, i, f"{origin}.suites[{i}]",
                                   epsilon, significance, budgets, sources))
    return ExperimentConfig(
        master_seed=master_seed, epsilon=epsilon, significance=significance,
        bootstrap=bootstrap, exact_cap=exact_cap, jobs=jobs, out_dir=out_dir,
        budgets=budgets, sources=sources, suites=suites, raw=data)


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML (or JSON) experiment file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from exc
    else:
        try:
            data = _toml.loads(text.decode("utf-8"))
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return parse_config(data, origin=path.name)
