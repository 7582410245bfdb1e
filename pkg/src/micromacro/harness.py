"""Configuration-driven experiment runner and command line front end.

Configurations are flat ``key = value`` text with section prefixes, e.g.::

    model.name = three_atom
    model.epsilon = 1e-5
    sampler.name = mm_indirect
    sampler.N = 1000000

Unset (``none``) numerical parameters are derived from the model's defaults,
see :func:`resolve`. Every run owns the random substream
``(seed, run index, purpose)``, so results do not depend on the worker count
and a parameter sweep reuses the same streams at every parameter value.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import diagnostics as dg
from .kernels import CapabilityError, SamplerParams, rc_trace, run_mala, run_mm
from .models import AlanineModel, make_model, make_rc
from .streams import random_stream
from .tables import TableFormatError, build_tables, exact_tables, load_tables, save_tables

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "RunSummary",
    "RunReport",
    "parse_config",
    "load_config",
    "preset",
    "resolve",
    "obtain_tables",
    "cmd_precompute",
    "cmd_sample",
    "cmd_compare",
    "cmd_sweep",
    "main",
]

log = logging.getLogger(__name__)

SAMPLERS = ("mala", "mm_indirect", "mm_direct")
SWEEP_PARAMETERS = ("lambda", "epsilon", "K", "delta_t_macro")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """All settings of one experiment.

    Field ``section_key`` is written ``section.key`` in config files. ``None``
    means "derive from the model defaults".
    """

    model_name: str = "three_atom"
    model_epsilon: float = 1e-5
    model_h: float = 2.0
    rc_name: str | None = None
    sampler_name: str = "mm_indirect"
    sampler_beta: float | None = None
    sampler_lambda: float | None = None
    sampler_K: int | None = None
    sampler_dt_micro: float | None = None
    sampler_dt_macro: float | None = None
    sampler_N: int = 1_000_000
    sampler_n_runs: int = 1
    sampler_seed: int = 2024
    sampler_init: str | None = None
    baseline_dt: float | None = None
    grid_z_min: float | None = None
    grid_z_max: float | None = None
    grid_J: int | None = None
    grid_lambda: float | None = None
    grid_dt: float | None = None
    grid_N_per_node: int = 10_000
    grid_M_per_node: int = 100_000
    grid_burn_in: float = 0.2
    tables_source: str | None = None
    tables_path: str | None = None
    tables_off_grid: str = "clamp"
    tables_free_energy_method: str = "dynamics"
    output_dir: str = "out"
    output_thin: int = 100
    output_dump_chains: bool = False
    output_hist_bins: int = 100
    observables: str | None = None
    workers: int = 1

    # ------------------------------------------------------------------
    @staticmethod
    def key_of(name):
        section, sep, rest = name.partition("_")
        return f"{section}.{rest}" if sep and section in _SECTIONS else name

    @classmethod
    def field_of(cls, key):
        name = key.replace(".", "_", 1)
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        return name

    def set(self, key, value):
        """Set ``key`` from a string (or a value of the right type)."""
        name = self.field_of(key)
        setattr(self, name, _parse_value(_FIELD_TYPES[name], value, key))
        return self

    def get(self, key):
        return getattr(self, self.field_of(key))

    def with_values(self, **changes):
        """Copy with dotted-key changes, e.g. ``with_values(**{"sampler.N": 10})``."""
        new = dataclasses.replace(self)
        for key, value in changes.items():
            new.set(key, value)
        return new

    def items(self):
        for f in fields(self):
            yield self.key_of(f.name), getattr(self, f.name)

    def to_text(self):
        return "".join(f"{key} = {_format_value(value)}\n" for key, value in self.items())

    def sampler_params(self) -> SamplerParams:
        c = resolve(self)
        return SamplerParams(beta=c.sampler_beta, lam=c.sampler_lambda, K=c.sampler_K, dt_micro=c.sampler_dt_micro,
                             dt_macro=c.sampler_dt_macro, N=c.sampler_N, seed=c.sampler_seed)


_SECTIONS = ("model", "rc", "sampler", "baseline", "grid", "tables", "output")
_FIELD_TYPES = {}
for _f in fields(ExperimentConfig):
    _t = _f.type.split("|")[0].strip()
    _FIELD_TYPES[_f.name] = {"str": str, "float": float, "int": int, "bool": bool}[_t]


def _parse_value(kind, value, key):
    if value is None:
        return None
    if not isinstance(value, str):
        return kind(value)
    text = value.strip()
    if text.lower() in ("none", ""):
        return None
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            f = float(text)
            if f != int(f):
                raise ValueError(text)
            return int(f)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) on top of ``base``."""
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        try:
            cfg.set(key.strip(), value.strip())
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path, base=None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)


# --------------------------------------------------------------------------
# defaults

def preset(model_name="three_atom", **changes) -> ExperimentConfig:
    """Config for a benchmark with every derived value filled in.

    ``changes`` use dotted keys passed as a dict, e.g.
    ``preset("three_atom", **{"model.epsilon": 1e-6})``.
    """
    cfg = ExperimentConfig(model_name=model_name)
    for key, value in changes.items():
        cfg.set(key, value)
    return resolve(cfg)


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill unset values with the defaults of ``cfg.model_name``.

    Three-atom defaults scale with ``epsilon``: bias ``1/eps``, biased step
    ``eps``, five biased steps, macro step ``0.01``; node chains use bias
    ``100/eps`` and step ``1/bias`` on 200 nodes over ``[0, pi]``. Alanine uses
    ``beta = 1/100``, bias ``2.5e6``, eight biased steps of ``0.5/bias``, macro
    step ``0.001``, a MALA step ``1e-7`` and the exact torsion free energy.
    """
    c = dataclasses.replace(cfg)

    def default(name, value):
        if getattr(c, name) is None:
            setattr(c, name, value)

    name = c.model_name
    if name == "three_atom":
        eps = c.model_epsilon
        default("rc_name", "theta")
        default("sampler_beta", 1.0)
        default("sampler_lambda", 1.0 / eps)
        default("sampler_dt_micro", eps)
        default("sampler_K", 5)
        default("sampler_dt_macro", 0.01)
        default("baseline_dt", eps)
        default("grid_z_min", 0.0)
        default("grid_z_max", math.pi)
        default("grid_J", 200)
        default("grid_lambda", 100.0 / eps)
        default("grid_dt", 1.0 / c.grid_lambda)
        default("tables_source", "estimate")
        default("sampler_init", "right")
        default("observables", "mean:theta,variance:theta")
    elif name == "alanine":
        default("rc_name", "psi")
        default("sampler_beta", 0.01)
        default("sampler_lambda", 2.5e6)
        default("sampler_dt_micro", 0.5 / c.sampler_lambda)
        default("sampler_K", 8)
        default("sampler_dt_macro", 0.001)
        default("baseline_dt", 1e-7)
        default("grid_z_min", -math.pi)
        default("grid_z_max", math.pi)
        default("grid_J", 200)
        default("grid_lambda", c.sampler_lambda)
        default("grid_dt", 0.5 / c.grid_lambda)
        default("tables_source", "analytic")
        default("sampler_init", "equilibrium")
        default("observables", "mean:psi,variance:psi,mean:phi,variance:phi")
    elif name == "double_well_1d":
        default("rc_name", "identity")
        default("sampler_beta", 1.0)
        default("sampler_lambda", 1000.0)
        default("sampler_dt_micro", 1e-3)
        default("sampler_K", 5)
        default("sampler_dt_macro", 0.05)
        default("baseline_dt", 1e-3)
        default("grid_z_min", -2.5)
        default("grid_z_max", 2.5)
        default("grid_J", 201)
        default("grid_lambda", 1e4)
        default("grid_dt", 1e-4)
        default("tables_source", "analytic")
        default("sampler_init", "right")
        default("observables", "mean:x,variance:x")
    else:
        raise ConfigError(f"no defaults for model {name!r}")
    return c


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Resolve and check positivity and sampler/model compatibility."""
    c = resolve(cfg)
    if c.sampler_name not in SAMPLERS:
        raise ConfigError(f"sampler.name must be one of {SAMPLERS}, got {c.sampler_name!r}")
    try:
        c.sampler_params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key in ("model.epsilon", "baseline.dt", "grid.lambda", "grid.dt"):
        if not c.get(key) > 0:
            raise ConfigError(f"{key} must be positive")
    if c.sampler_n_runs < 1 or c.workers < 1:
        raise ConfigError("sampler.n_runs and workers must be at least 1")
    if not c.grid_z_min < c.grid_z_max or c.grid_J < 2:
        raise ConfigError("grid needs z_min < z_max and J >= 2")
    if c.tables_source not in ("estimate", "analytic"):
        raise ConfigError("tables.source must be 'estimate' or 'analytic'")
    if c.sampler_name == "mm_direct":
        model = make_model(c.model_name, c.model_epsilon, c.model_h)
        ok = model.supports_direct and (c.model_name, c.rc_name) in (("three_atom", "theta"),
                                                                    ("double_well_1d", "identity"))
        if not ok:
            raise CapabilityError(f"mm_direct needs a direct reconstruction; none for {c.model_name}/{c.rc_name}")
    for spec in c.observables.split(","):
        stat, sep, _ = spec.strip().partition(":")
        if not sep or stat not in ("mean", "variance"):
            raise ConfigError(f"observable {spec!r} must look like mean:<name> or variance:<name>")
    return c


def _objects(c):
    return make_model(c.model_name, c.model_epsilon, c.model_h), make_rc(c.rc_name)


# --------------------------------------------------------------------------
# tables

_TABLE_CACHE = {}
_RESCALED = {}


def _precompute_key(c):
    return (c.model_name, c.model_epsilon, c.model_h, c.rc_name, c.sampler_beta, c.grid_z_min, c.grid_z_max,
            c.grid_J, c.grid_lambda, c.grid_dt, c.grid_N_per_node, c.grid_burn_in, c.tables_free_energy_method,
            c.sampler_seed)


def _analytic_tables(c, model, lam):
    grid = (c.grid_z_min, c.grid_z_max, c.grid_J)
    if c.model_name == "three_atom":
        a, b = model.free_energy, model.drift
    elif c.model_name == "alanine":
        a, b = AlanineModel.psi_free_energy, AlanineModel.psi_drift
    else:
        a, b = model.free_energy, model.drift
    return exact_tables(a, b, grid, lam, c.sampler_beta, off_grid=c.tables_off_grid)


def obtain_tables(cfg: ExperimentConfig):
    """Tables for the sampler's bias strength: loaded, analytic or estimated.

    Estimated tables are cached per process. ``N_lambda`` is rebuilt when the
    stored one belongs to another bias strength.
    """
    c = validate(cfg)
    model, rc = _objects(c)
    lam = c.sampler_lambda
    if c.tables_path and os.path.exists(c.tables_path):
        tables = load_tables(c.tables_path, c.tables_off_grid)
    elif c.tables_source == "analytic":
        return _analytic_tables(c, model, lam)
    else:
        key = _precompute_key(c)
        if key not in _TABLE_CACHE:
            _TABLE_CACHE[key] = _estimate(c, model, rc)[0]
        tables = _TABLE_CACHE[key]
    if tables.lam != lam:
        key = (tables.free_energy.values.tobytes(), tables.z_min, tables.z_max, lam, c.grid_M_per_node,
               c.sampler_seed)
        if key not in _RESCALED:
            _RESCALED[key] = tables.with_n_lambda(lam, c.grid_M_per_node, random_stream(c.sampler_seed, "n_lambda"))
        tables = _RESCALED[key]
    return dataclasses.replace(tables, off_grid=c.tables_off_grid)


def _estimate(c, model, rc):
    rng = random_stream(c.sampler_seed, "precompute")
    return build_tables(model, rc, (c.grid_z_min, c.grid_z_max, c.grid_J), lam_precompute=c.grid_lambda,
                        dt_precompute=c.grid_dt, n_per_node=c.grid_N_per_node, lam=c.sampler_lambda,
                        m_per_node=c.grid_M_per_node, rng=rng, beta=c.sampler_beta, burn_in=c.grid_burn_in,
                        off_grid=c.tables_off_grid, free_energy_method=c.tables_free_energy_method)


def cmd_precompute(cfg: ExperimentConfig, path=None):
    """Estimate (or tabulate analytically) and write the tables file.

    Returns ``(path, tables, node_estimates)``; node estimates are ``None`` for
    analytic tables.
    """
    c = validate(cfg)
    model, rc = _objects(c)
    if c.tables_source == "analytic":
        tables, est = _analytic_tables(c, model, c.sampler_lambda), None
    else:
        tables, est = _estimate(c, model, rc)
        _TABLE_CACHE[_precompute_key(c)] = tables
        log.info("node drift stderr: median %.3g max %.3g (node %d); acceptance min %.3f",
                 np.median(est.drift_se), est.drift_se.max(), int(est.drift_se.argmax()), est.acceptance.min())
    path = path or c.tables_path or os.path.join(c.output_dir, "tables.txt")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_tables(tables, path)
    return path, tables, est


# --------------------------------------------------------------------------
# sampling

@dataclass
class RunSummary:
    """Estimates and bookkeeping of one chain."""

    index: int
    estimates: dict
    runtime: float
    counters: dict
    macro_acceptance: float
    micro_acceptance: float
    biased_acceptance: float
    residual_mean: float = math.nan
    residual_var: float = math.nan
    residual_stderr: float = math.nan
    histogram: dg.Histogram | None = None
    chain: object = None


@dataclass
class RunReport:
    """All runs of one configuration."""

    config: ExperimentConfig
    runs: list
    histogram: dg.Histogram | None = None
    out_of_range: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def method(self):
        return self.config.sampler_name

    def estimates(self, observable):
        return np.array([r.estimates[observable] for r in self.runs])

    def replicate_variance(self, observable):
        values = self.estimates(observable)
        return float(values.var(ddof=1)) if values.size > 1 else math.nan

    @property
    def mean_runtime(self):
        return float(np.mean([r.runtime for r in self.runs]))

    @property
    def macro_acceptance(self):
        return float(np.mean([r.macro_acceptance for r in self.runs]))

    @property
    def micro_acceptance(self):
        return float(np.mean([r.micro_acceptance for r in self.runs]))

    def rows(self):
        """Deterministic report rows (no wall-clock quantities)."""
        out = []
        m = self.method
        for r in self.runs:
            tag = f"run{r.index}"
            for obs, value in r.estimates.items():
                out.append((m, obs, f"{tag}:estimate", value))
            out.append((m, "chain", f"{tag}:macro_acceptance", r.macro_acceptance))
            out.append((m, "chain", f"{tag}:micro_acceptance", r.micro_acceptance))
            out.append((m, "chain", f"{tag}:biased_acceptance", r.biased_acceptance))
            out.append((m, "chain", f"{tag}:residual_mean", r.residual_mean))
            out.append((m, "chain", f"{tag}:residual_var", r.residual_var))
        for obs in self.runs[0].estimates:
            out.append((m, obs, "mean", float(self.estimates(obs).mean())))
            out.append((m, obs, "replicate_variance", self.replicate_variance(obs)))
        out.append((m, "chain", "out_of_range", float(self.out_of_range)))
        return out

    def timing_rows(self):
        return [(self.method, "chain", f"run{r.index}:runtime", r.runtime) for r in self.runs]


def _observables(c):
    return [s.strip() for s in c.observables.split(",") if s.strip()]


def _initial_config(c, model, rng):
    wells = model.wells
    if c.sampler_init == "random":
        names = sorted(wells)
        return wells[names[int(rng.integers(len(names)))]].copy()
    if c.sampler_init in wells:
        return wells[c.sampler_init].copy()
    try:
        return model.node_state(float(c.sampler_init))
    except ValueError:
        raise ConfigError(f"sampler.init must be 'random', a well name {sorted(wells)} or a number") from None


def _run_one(c, model, rc, tables, index, keep_chain):
    params = c.sampler_params()
    x0 = _initial_config(c, model, random_stream(c.sampler_seed, index, "init"))
    rng = random_stream(c.sampler_seed, index, "sample")
    if c.sampler_name == "mala":
        result = run_mala(model, x0, params.replace(dt_micro=c.sampler_dt_micro), rng, rc=rc)
    else:
        result = run_mm(model, rc, tables, params, x0, rng, method=c.sampler_name[3:])
    obs = model.observables(result.xs)
    estimates = {}
    for spec in _observables(c):
        stat, _, name = spec.partition(":")
        if name not in obs:
            raise ConfigError(f"model {c.model_name!r} has no observable {name!r}; available: {sorted(obs)}")
        values = obs[name]
        estimates[spec] = float(values.mean()) if stat == "mean" else float(values.var(ddof=1))
    summary = RunSummary(index, estimates, result.runtime, result.counters, result.macro_acceptance,
                         result.micro_acceptance, result.biased_acceptance)
    xi = rc_trace(rc, result.xs)
    if c.sampler_name != "mala" and result.zs.size > 3:
        # stationary half of the chain
        half = result.zs.size // 2
        st = dg.series_stats(result.zs[half:] - xi[half:])
        summary.residual_mean, summary.residual_var, summary.residual_stderr = st.mean, st.variance, st.stderr
    hist_source = obs.get(rc.name, xi)
    summary.histogram = dg.histogram(hist_source, c.grid_z_min, c.grid_z_max, c.output_hist_bins)
    if c.output_dump_chains:
        os.makedirs(c.output_dir, exist_ok=True)
        thin = max(1, c.output_thin)
        np.savetxt(os.path.join(c.output_dir, f"chain_{c.sampler_name}_run{index}.csv"),
                   np.column_stack([result.xs[::thin], result.zs[::thin]]), delimiter=",",
                   header=",".join([f"x{i}" for i in range(model.dim)] + ["z"]), comments="", fmt="%r")
    if keep_chain:
        summary.chain = result
    return summary


def cmd_sample(cfg: ExperimentConfig, workers=None, keep_chains=False, write=True) -> RunReport:
    """Run ``sampler.n_runs`` independent chains and collect a :class:`RunReport`.

    Runs execute on up to ``workers`` threads (the compiled loops release the
    GIL). With ``write`` the report, timing, histogram and config echo files
    go to ``output.dir``.
    """
    c = validate(cfg)
    model, rc = _objects(c)
    tables = obtain_tables(c) if c.sampler_name != "mala" else None
    workers = workers or c.workers
    # compile once before spreading runs over threads
    first = _run_one(c, model, rc, tables, 0, keep_chains)
    rest = range(1, c.sampler_n_runs)
    if workers > 1 and len(rest) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            others = list(pool.map(lambda i: _run_one(c, model, rc, tables, i, keep_chains), rest))
    else:
        others = [_run_one(c, model, rc, tables, i, keep_chains) for i in rest]
    runs = [first] + others
    hist = runs[0].histogram
    for r in runs[1:]:
        hist = hist + r.histogram
    report = RunReport(c, runs, hist, sum(r.counters["out_of_range"] for r in runs))
    if write:
        write_report(report)
    return report


def write_report(report: RunReport, prefix=None):
    c = report.config
    prefix = prefix or c.sampler_name
    os.makedirs(c.output_dir, exist_ok=True)
    dg.write_rows_csv(os.path.join(c.output_dir, f"{prefix}_report.csv"), report.rows())
    dg.write_rows_csv(os.path.join(c.output_dir, f"{prefix}_timing.csv"), report.timing_rows())
    dg.write_histogram_csv(os.path.join(c.output_dir, f"{prefix}_histogram.csv"), report.histogram)
    with open(os.path.join(c.output_dir, f"{prefix}_config.txt"), "w") as fh:
        fh.write(c.to_text())


def baseline_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """MALA counterpart of ``cfg``: same model, seed and budget, step ``baseline.dt``."""
    c = resolve(cfg)
    return dataclasses.replace(c, sampler_name="mala", sampler_dt_micro=c.baseline_dt)


def compare_reports(reference: RunReport, method: RunReport):
    """One :class:`EfficiencyReport` per shared observable."""
    out = []
    for obs in reference.runs[0].estimates:
        if obs not in method.runs[0].estimates:
            continue
        out.append(dg.EfficiencyReport(
            observable=obs,
            reference=reference.method,
            method=method.method,
            var_reference=reference.replicate_variance(obs),
            var_method=method.replicate_variance(obs),
            t_reference=reference.mean_runtime,
            t_method=method.mean_runtime,
            acceptance_reference=reference.macro_acceptance,
            macro_acceptance=method.macro_acceptance,
            micro_acceptance=method.micro_acceptance,
        ))
    if not out:
        raise ConfigError("the two runs share no observable")
    return out


def cmd_compare(config_a: ExperimentConfig, config_b: ExperimentConfig | None = None, workers=None,
                reference_report: RunReport | None = None):
    """Efficiency of ``config_b`` relative to ``config_a`` on every shared observable.

    With a single config, ``config_a`` is the sampler under test and the
    reference is its MALA baseline. Returns ``(reports, reference, method)``.
    """
    if config_b is None:
        config_a, config_b = baseline_config(config_a), config_a
    ref = reference_report or cmd_sample(config_a, workers)
    new = cmd_sample(config_b, workers)
    reports = compare_reports(ref, new)
    c = resolve(config_b)
    os.makedirs(c.output_dir, exist_ok=True)
    dg.write_rows_csv(os.path.join(c.output_dir, "compare.csv"), [row for r in reports for row in r.rows()])
    return reports, ref, new


def sweep_config(cfg: ExperimentConfig, parameter, value) -> ExperimentConfig:
    """Config for one sweep point.

    ``lambda`` keeps ``lambda * dt_micro`` fixed; ``epsilon`` rescales every
    explicitly set epsilon-dependent value, the others follow the defaults.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
    value = float(value)
    if parameter == "lambda":
        c = resolve(cfg)
        return dataclasses.replace(c, sampler_lambda=value, sampler_dt_micro=c.sampler_dt_micro * c.sampler_lambda / value)
    if parameter == "epsilon":
        r = value / cfg.model_epsilon
        c = dataclasses.replace(cfg, model_epsilon=value)
        for name, power in (("sampler_lambda", -1), ("sampler_dt_micro", 1), ("baseline_dt", 1),
                            ("grid_lambda", -1), ("grid_dt", 1)):
            if getattr(c, name) is not None:
                setattr(c, name, getattr(c, name) * r**power)
        return resolve(c)
    if parameter == "K":
        if value != int(value):
            raise ConfigError("K must be an integer")
        return dataclasses.replace(resolve(cfg), sampler_K=int(value))
    return dataclasses.replace(resolve(cfg), sampler_dt_macro=value)


def cmd_sweep(cfg: ExperimentConfig, parameter, values, workers=None):
    """Compare against MALA at every value of ``parameter``.

    The MALA baseline is rerun only when it depends on the swept parameter.
    Returns a list of ``(value, reports)`` and writes ``sweep.csv``.
    """
    out = []
    rows = []
    reference = None
    base_dir = resolve(cfg).output_dir
    for value in values:
        c = sweep_config(cfg, parameter, value)
        c.output_dir = os.path.join(base_dir, f"{parameter}={value!r}")
        if parameter == "epsilon" or reference is None:
            reference = cmd_sample(baseline_config(c), workers)
        reports, _, _ = cmd_compare(baseline_config(c), c, workers, reference_report=reference)
        out.append((value, reports))
        for r in reports:
            rows.append((repr(float(value)), r.observable, r.gain, r.variance_gain, r.runtime_gain,
                         r.macro_acceptance, r.micro_acceptance))
    os.makedirs(base_dir, exist_ok=True)
    dg.write_rows_csv(os.path.join(base_dir, "sweep.csv"), rows,
                      header=("value", "observable", "gain", "variance_gain", "runtime_gain", "macro_acceptance",
                              "micro_acceptance"))
    return out


# --------------------------------------------------------------------------
# command line

def _build_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg.set(key.strip(), value.strip())
    if args.out:
        cfg.output_dir = args.out
    if args.workers:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.sampler_seed = args.seed
    return cfg


def _parser():
    p = argparse.ArgumentParser(prog="micromacro", description="Micro-macro MCMC experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="concurrent runs")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("precompute", help="build and write the macroscopic tables"))
    common(sub.add_parser("sample", help="run chains and write reports"))
    cp = sub.add_parser("compare", help="efficiency gain of a sampler over a reference")
    common(cp)
    cp.add_argument("--reference", help="config of the reference sampler (default: MALA baseline)")
    sw = sub.add_parser("sweep", help="efficiency gain over a parameter range")
    common(sw)
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sw.add_argument("--values", required=True, help="comma-separated values")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _build_config(args)
        if args.command == "precompute":
            path, tables, _ = cmd_precompute(cfg)
            print(f"wrote {path} ({tables.J} nodes)")
        elif args.command == "sample":
            report = cmd_sample(cfg)
            for obs in report.runs[0].estimates:
                print(f"{obs}: mean {report.estimates(obs).mean():.6g} over {len(report.runs)} run(s)")
            print(f"macro acceptance {report.macro_acceptance:.4f}, micro acceptance {report.micro_acceptance:.4f}")
        elif args.command == "compare":
            ref = load_config(args.reference) if args.reference else None
            reports, _, _ = cmd_compare(ref, cfg) if ref else cmd_compare(cfg)
            for r in reports:
                print(f"{r.observable}: gain {r.gain:.4g} (variance {r.variance_gain:.4g}, runtime {r.runtime_gain:.4g})")
        else:
            values = [float(v) for v in args.values.split(",")]
            for value, reports in cmd_sweep(cfg, args.param, values):
                print(f"{args.param}={value:g}: " + ", ".join(f"{r.observable} gain {r.gain:.4g}" for r in reports))
    except (ConfigError, CapabilityError, TableFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
