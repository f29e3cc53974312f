"""Experiment configuration, end-point scenarios and the benchmark harness.

Configuration files are flat ``key = value`` text grouped under
``[section]`` headers; ``#`` starts a comment. Lists are comma separated and
matrices separate rows with ``;``. Example::

    [experiment]
    model = lotka-volterra
    x0 = 71, 79
    T = 1, 2
    m = 50

    [conditioning]
    levels = 5, 50, 95

    [bridges]
    kinds = MDB, LB, RB, RBminus, GPMDB
    lb_gamma = 0.001, 0.01, 0.1, 0.3

    [mcmc]
    iterations = 100000
    seed = 42
"""

import csv
import io
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bridges import BridgeContext, BridgeKind, Construct, GPMode
from .core import ObservationModel, TimeGrid, simulate_batch
from .errors import BadConfig, BridgeError
from .lna import DEFAULT_MAX_STEP, propagate_lna_cov
from .mcmc import MhConfig, run_chain
from .models import MODEL_NAMES, make_model

QUANTILE_LEVELS = (5, 50, 95)
DEFAULT_REPLICATES = 200_000
DEFAULT_FINE_STEP = {"birth-death": 0.005, "lotka-volterra": 0.005, "aphid": 0.0025}
DEFAULT_LB_GAMMA = (0.001, 0.01, 0.1, 0.3)
MIN_REPLICATES = 10_000


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    x0: tuple
    T: tuple
    theta: Optional[tuple] = None
    m: int = 50
    lna_max_step: float = DEFAULT_MAX_STEP
    regime: str = "exact"
    F: Optional[tuple] = None
    Sigma: Optional[tuple] = None
    sigma: Optional[tuple] = None
    value: Optional[tuple] = None
    levels: tuple = QUANTILE_LEVELS
    replicates: int = DEFAULT_REPLICATES
    fine_step: Optional[float] = None
    oracle_seed: Optional[int] = None
    bridges: tuple = ()
    lb_gamma: tuple = DEFAULT_LB_GAMMA
    gp_mode: Optional[str] = None
    iterations: int = 100_000
    burn_in: int = 0
    seed: int = 0
    stride: int = 10
    block_size: int = 2000
    out_dir: str = "out"

    @property
    def resolved_fine_step(self):
        return self.fine_step if self.fine_step is not None else DEFAULT_FINE_STEP.get(self.model, 0.005)

    @property
    def resolved_oracle_seed(self):
        return self.seed if self.oracle_seed is None else self.oracle_seed

    def bridge_kinds(self):
        """Expand the bridge list: a bare ``LB`` becomes one entry per gamma."""
        mode = GPMode(self.gp_mode) if self.gp_mode else None
        return [k for label in self.bridges for k in _expand(label, self.lb_gamma, mode)]

    def observation(self):
        d = len(self.x0)
        if self.regime == "exact":
            return [(None, ObservationModel.exact(d))]
        F = np.array(self.F if self.F is not None else np.eye(d), dtype=float)
        if self.sigma is not None:
            return [(s, ObservationModel.noisy(F, s * s * np.eye(F.shape[1]))) for s in self.sigma]
        return [(None, ObservationModel.noisy(F, np.array(self.Sigma, dtype=float)))]

    def scenarios(self):
        """``Scenario`` objects in output order (T, then sigma, then level)."""
        out = []
        for T in self.T:
            for sigma, obs in self.observation():
                for level in (self.levels if self.value is None else (None,)):
                    out.append(Scenario(T, sigma, level, obs))
        return out


@dataclass(frozen=True, eq=False)
class Scenario:
    T: float
    sigma: Optional[float]
    level: Optional[int]
    obs: ObservationModel

    @property
    def label(self):
        parts = [f"T{self.T:g}"]
        if self.sigma is not None:
            parts.append(f"sigma{self.sigma:g}")
        parts.append("value" if self.level is None else f"q{self.level}")
        return "_".join(parts)


def _expand(label, lb_gamma, mode):
    if re.fullmatch(r"\s*LB\s*", label, re.I):
        return [BridgeKind(Construct.LB, g) for g in lb_gamma]
    kind = BridgeKind.parse(label)
    if mode is not None and kind.gp_mode is None and kind.construct in (Construct.GP, Construct.GPMDB):
        kind = BridgeKind(kind.construct, None, mode)
    return [kind]


# ---------------------------------------------------------------------------
# parsing

_SCHEMA = {
    "experiment": {"model": "str", "theta": "floats", "x0": "floats", "T": "floats", "m": "int",
                   "lna_max_step": "float"},
    "observation": {"regime": "str", "F": "matrix", "Sigma": "matrix", "sigma": "floats"},
    "conditioning": {"value": "floats", "levels": "ints", "replicates": "int", "fine_step": "float",
                     "oracle_seed": "int"},
    "bridges": {"kinds": "strs", "lb_gamma": "floats", "gp_mode": "str"},
    "mcmc": {"iterations": "int", "burn_in": "int", "seed": "int", "stride": "int", "block_size": "int"},
    "output": {"dir": "str"},
}

_FIELD = {("bridges", "kinds"): "bridges", ("output", "dir"): "out_dir"}


def _convert(kind, text):
    if kind == "str":
        return text
    if kind == "strs":
        return tuple(s.strip() for s in text.split(",") if s.strip())
    if kind == "int":
        return int(text, 0)
    if kind == "ints":
        return tuple(int(s, 0) for s in text.split(","))
    if kind == "float":
        return float(text)
    if kind == "floats":
        return tuple(float(s) for s in text.split(","))
    if kind == "matrix":
        return tuple(tuple(float(s) for s in row.split(",")) for row in text.split(";"))
    raise AssertionError(kind)


def parse_config(text):
    """Parse and validate a configuration document.

    Raises
    ------
    BadConfig
        Listing every problem found, each prefixed with its line number.
    """
    errors = []
    values = {}
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", line)
        if head:
            section = head.group(1)
            if section not in _SCHEMA:
                errors.append(f"line {no}: unknown section [{section}]; valid: {', '.join(_SCHEMA)}")
            continue
        if "=" not in line:
            errors.append(f"line {no}: expected 'key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if section is None:
            errors.append(f"line {no}: key {key!r} outside any section")
            continue
        if section not in _SCHEMA:
            continue
        kind = _SCHEMA[section].get(key)
        if kind is None:
            errors.append(f"line {no}: unknown key {key!r} in [{section}]")
            continue
        name = _FIELD.get((section, key), key)
        if name in values:
            errors.append(f"line {no}: duplicate key {key!r}")
            continue
        try:
            values[name] = _convert(kind, val)
        except ValueError:
            errors.append(f"line {no}: cannot read {key!r} value {val!r}")
            continue
        lines[name] = no
    config = None
    required = [name for name in ("model", "x0", "T") if name not in values]
    for name in required:
        errors.append(f"line 0: missing required key {name!r} in [experiment]")
    if not required:
        config = ExperimentConfig(**values)
        errors.extend(_validate(config, lines))
    if errors:
        raise BadConfig(errors)
    return config


def _validate(cfg, lines):
    errors = []

    def bad(name, message):
        errors.append(f"line {lines.get(name, 0)}: {message}")

    d = None
    if cfg.model not in MODEL_NAMES:
        bad("model", f"unknown model {cfg.model!r}; valid: {', '.join(MODEL_NAMES)}")
    else:
        try:
            model = make_model(cfg.model, cfg.theta)
            d = model.d
        except BridgeError as exc:
            bad("theta", str(exc))
    if d is not None and len(cfg.x0) != d:
        bad("x0", f"x0 must have {d} entries")
    if any(not x > 0 for x in cfg.x0):
        bad("x0", "x0 must be admissible (strictly positive)")
    if not cfg.T or any(not t > 0 for t in cfg.T):
        bad("T", "T must be a list of positive end times")
    if cfg.m < 1:
        bad("m", "m must be positive")
    if not cfg.lna_max_step > 0:
        bad("lna_max_step", "lna_max_step must be positive")
    d_o = d
    if cfg.regime not in ("exact", "noisy"):
        bad("regime", "regime must be 'exact' or 'noisy'")
    elif cfg.regime == "exact":
        for name in ("F", "Sigma", "sigma"):
            if getattr(cfg, name) is not None:
                bad(name, f"{name} is only allowed in the noisy regime")
    else:
        if cfg.F is not None:
            rows = {len(r) for r in cfg.F}
            if len(rows) != 1 or (d is not None and len(cfg.F) != d):
                bad("F", f"F must have {d} rows of equal length")
            else:
                d_o = rows.pop()
        if (cfg.Sigma is None) == (cfg.sigma is None):
            bad("sigma", "noisy regime needs exactly one of 'sigma' or 'Sigma'")
        elif cfg.sigma is not None and any(not s > 0 for s in cfg.sigma):
            bad("sigma", "sigma values must be positive")
        elif cfg.Sigma is not None:
            S = np.array(cfg.Sigma, dtype=float)
            if S.shape != (d_o, d_o) or not np.array_equal(S, S.T) or np.any(np.linalg.eigvalsh(S) <= 0):
                bad("Sigma", f"Sigma must be a symmetric positive definite {d_o}x{d_o} matrix")
    if cfg.value is not None:
        if "levels" in lines:
            bad("value", "give either 'value' or 'levels', not both")
        expected = d if cfg.regime == "exact" else d_o
        if expected is not None and len(cfg.value) != expected:
            bad("value", f"value must have {expected} entries")
        if len(cfg.T) != 1:
            bad("value", "an explicit value needs a single T")
    if any(level not in QUANTILE_LEVELS for level in cfg.levels) or not cfg.levels:
        bad("levels", "levels must be drawn from 5, 50, 95")
    if cfg.replicates < MIN_REPLICATES:
        bad("replicates", f"replicates must be at least {MIN_REPLICATES}")
    if cfg.fine_step is not None and not (0 < cfg.fine_step <= min(cfg.T) / max(cfg.m, 1)):
        bad("fine_step", "fine_step must be positive and no larger than the bridge step")
    if not cfg.bridges:
        bad("bridges", "the bridge list is empty")
    for label in cfg.bridges:
        try:
            kinds = _expand(label, (1.0,), None)
        except BridgeError as exc:
            bad("bridges", str(exc))
            continue
        if kinds[0].construct is Construct.GPS and cfg.regime == "noisy":
            bad("bridges", "GPS is only available in the exact regime")
    if any(not g > 0 for g in cfg.lb_gamma):
        bad("lb_gamma", "gamma values must be positive")
    if cfg.gp_mode is not None and cfg.gp_mode not in [m.value for m in GPMode]:
        bad("gp_mode", "gp_mode must be 'once' or 'per-interval'")
    if cfg.iterations < 1:
        bad("iterations", "iterations must be positive")
    if not 0 <= cfg.burn_in < cfg.iterations:
        bad("burn_in", "burn_in must satisfy 0 <= burn_in < iterations")
    if cfg.stride < 1 or cfg.block_size < 1:
        bad("stride", "stride and block_size must be positive")
    return errors


def _fmt(value):
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_fmt(r) for r in value)
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialise(cfg):
    """Render ``cfg`` as a document that :func:`parse_config` reads back unchanged."""
    out = []
    for section, keys in _SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            name = _FIELD.get((section, key), key)
            value = getattr(cfg, name)
            if value is None or (name == "levels" and cfg.value is not None):
                continue
            out.append(f"{key} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# end-point oracle


def simulate_endpoints(model, x0, T, replicates, fine_step, seed):
    """Final states of ``replicates`` Euler-Maruyama paths with step <= ``fine_step``."""
    n_steps = max(1, math.ceil(T / fine_step - 1e-9))
    return simulate_batch(model, x0, TimeGrid(T, n_steps), replicates, seed, return_path=False)


def endpoint_quantiles(endpoints, obs, levels, seed):
    """Componentwise quantiles of ``X_T`` (exact) or ``F'X_T + eps`` (noisy)."""
    if obs.is_exact:
        sample = endpoints
    else:
        rng = np.random.default_rng(seed)
        L = np.linalg.cholesky(obs.Sigma)
        sample = endpoints @ obs.F + rng.standard_normal((endpoints.shape[0], obs.d_o)) @ L.T
    return {level: np.quantile(sample, level / 100.0, axis=0) for level in levels}


def generate_endpoint_quantiles(model, x0, T, level, replicates, fine_step, seed, obs=None):
    """The ``level`` percent quantile of the end-point value, by forward simulation.

    With a noisy ``obs`` the quantile is of ``F'X_T + eps``. ``level`` must be
    one of 5, 50, 95.
    """
    if level not in QUANTILE_LEVELS:
        raise BridgeError("level must be 5, 50 or 95")
    if replicates < MIN_REPLICATES:
        raise BridgeError(f"replicates must be at least {MIN_REPLICATES}")
    obs = obs or ObservationModel.exact(model.d)
    ends = simulate_endpoints(model, x0, T, replicates, fine_step, seed)
    return endpoint_quantiles(ends, obs, (level,), seed + 1)[level]


# ---------------------------------------------------------------------------
# benchmark

SUMMARY_COLUMNS = ("model", "bridge", "gamma", "T", "m", "sigma", "conditioning",
                   "acceptance_rate", "min_ess", "error")


@dataclass
class BenchmarkRow:
    model: str
    bridge: str
    gamma: Optional[float]
    T: float
    m: int
    sigma: Optional[float]
    conditioning: str
    acceptance_rate: float = float("nan")
    min_ess: float = float("nan")
    wallclock_seconds: float = float("nan")
    ess_per_second: float = float("nan")
    error: str = ""
    summary: object = field(default=None, repr=False, compare=False)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _safe(label):
    return re.sub(r"[^A-Za-z0-9.\-]+", "_", label).strip("_")


def resolve_values(cfg):
    """Conditioning value for every scenario, keyed by scenario label."""
    model = make_model(cfg.model, cfg.theta)
    out = {}
    cache = {}
    for sc in cfg.scenarios():
        if sc.level is None:
            out[sc.label] = np.array(cfg.value, dtype=float)
            continue
        if sc.T not in cache:
            cache[sc.T] = simulate_endpoints(model, cfg.x0, sc.T, cfg.replicates,
                                             cfg.resolved_fine_step, cfg.resolved_oracle_seed)
        noise_seed = cfg.resolved_oracle_seed + 1
        out[sc.label] = endpoint_quantiles(cache[sc.T], sc.obs, (sc.level,), noise_seed)[sc.level]
    return out


def run_benchmark(cfg, out_dir=None, threads=1, values=None):
    """Run every bridge on every scenario and write the CSV outputs.

    Returns the list of :class:`BenchmarkRow`. Row ``i`` uses chain seed
    ``cfg.seed ^ i`` so results do not depend on ``threads``. Failures are
    recorded in the row's ``error`` field and the run continues.
    """
    kinds = cfg.bridge_kinds()
    if not kinds:
        raise BadConfig(["line 0: the bridge list is empty"])
    model = make_model(cfg.model, cfg.theta)
    values = values if values is not None else resolve_values(cfg)
    # compile any LNA kernel now so it is not charged to the first timed chain
    propagate_lna_cov(model, np.asarray(cfg.x0, dtype=float)[None], 0.01, 1)
    jobs = []
    for sc in cfg.scenarios():
        grid = TimeGrid(sc.T, cfg.m)
        try:
            ctx = BridgeContext(model, sc.obs, grid, values[sc.label], cfg.x0, cfg.lna_max_step)
        except BridgeError as exc:
            ctx = exc
        for kind in kinds:
            jobs.append((sc, ctx, kind))

    def run(index):
        sc, ctx, kind = jobs[index]
        row = BenchmarkRow(cfg.model, kind.label, kind.gamma, sc.T, cfg.m, sc.sigma, sc.label)
        if isinstance(ctx, Exception):
            row.error = f"{type(ctx).__name__}: {ctx}"
            return row
        mh = MhConfig(cfg.iterations, cfg.burn_in, cfg.seed ^ index, kind, cfg.stride, True, cfg.block_size)
        try:
            s = run_chain(ctx, mh)
        except BridgeError as exc:
            row.error = f"{type(exc).__name__}: {exc}"
            return row
        row.acceptance_rate = s.acceptance_rate
        row.min_ess = s.min_ess
        row.wallclock_seconds = s.wallclock_seconds
        row.ess_per_second = s.min_ess / s.wallclock_seconds
        row.summary = s
        return row

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run, range(len(jobs))))
    else:
        rows = [run(i) for i in range(len(jobs))]
    if out_dir is not None:
        write_outputs(cfg, rows, values, Path(out_dir))
    return rows


def best_lb_gamma(rows):
    """``{scenario: (gamma, acceptance)}`` for the most accepting LB row per scenario."""
    best = {}
    for row in rows:
        if row.gamma is None or row.error:
            continue
        cur = best.get(row.conditioning)
        if cur is None or row.acceptance_rate > cur[1]:
            best[row.conditioning] = (row.gamma, row.acceptance_rate)
    return best


def summary_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in SUMMARY_COLUMNS])
    for scenario, (gamma, acc) in best_lb_gamma(rows).items():
        buf.write(f"# best_lb_gamma,{scenario},{_cell(gamma)},{_cell(acc)}\n")
    return buf.getvalue()


def band_csv(grid, summary):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("time", "component", "mean", "lower", "upper"))
    for k, t in enumerate(grid.times):
        for c in range(summary.path_mean.shape[1]):
            writer.writerow([_cell(float(t)), c, _cell(float(summary.path_mean[k, c])),
                             _cell(float(summary.path_lower[k, c])), _cell(float(summary.path_upper[k, c]))])
    return buf.getvalue()


def write_outputs(cfg, rows, values, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.csv").write_text(summary_csv(rows))
    for row in rows:
        if row.summary is not None:
            name = f"band_{_safe(row.bridge)}_{_safe(row.conditioning)}.csv"
            (out_dir / name).write_text(band_csv(TimeGrid(row.T, row.m), row.summary))
    resolved = serialise(cfg)
    resolved += "".join(f"# resolved {label} = {_fmt(tuple(float(v) for v in value))}\n"
                        for label, value in values.items())
    (out_dir / "resolved_config.cfg").write_text(resolved)
    timing = [{"bridge": r.bridge, "conditioning": r.conditioning,
               "wallclock_seconds": r.wallclock_seconds, "ess_per_second": r.ess_per_second}
              for r in rows]
    (out_dir / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
