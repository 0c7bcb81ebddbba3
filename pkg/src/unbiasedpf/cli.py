"""Command-line experiment driver.

Subcommands cover the whole workflow: `generate` simulates observation
records, `reference` computes exact (Kalman) or high-resolution filter
references, `run-unbiased` / `run-single-rand` run the randomized
estimators, `run-mlpf` runs the multilevel baseline, `sweep-variance`
measures how coupled increments decay with the level, and `compare` turns
matched-MSE cost curves into cost ratios. Every run is reproducible from
its config: flags can be loaded from a flat key = value file (--config),
with explicit flags taking precedence, and each artifact directory gets the
resolved configuration echoed into its metadata.

Exit codes: 1 for configuration problems, 2 for numerical failures, 3 for
I/O failures.
"""

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .cpf import batch_cpf_run
from .errors import (
    ConfigError,
    CostBudgetExceeded,
    DegenerateWeights,
    ExactUnavailable,
    InvalidLevel,
    InvalidRate,
    InvalidSimplex,
    ModelMismatch,
    NonOverlappingRange,
    NumericalOverflow,
    UnknownModel,
    UnsupportedDimension,
)
from .mlpf import allocate, mlpf_cost, mlpf_estimate
from .observation import (
    generate_data,
    kalman_reference,
    make_benchmark,
    read_dataset,
    write_dataset,
)
from .pf import BatchSchedule, batch_pf_run
from .randomization import (
    _parallel_for,
    default_base_size,
    expected_draw_cost,
    make_single_rand_plan,
    make_theory_plan,
    make_truncated_plan,
    single_randomized_estimate,
    unbiased_estimate,
)
from .rng import ROLE_MLPF, ROLE_REFERENCE, ROLE_SWEEP, RngStream
from .sde import Level

_CONFIG_ERRORS = (
    ConfigError,
    UnknownModel,
    InvalidRate,
    ExactUnavailable,
    ModelMismatch,
    ValueError,
)
_NUMERICAL_ERRORS = (
    NumericalOverflow,
    DegenerateWeights,
    CostBudgetExceeded,
    NonOverlappingRange,
    InvalidLevel,
    InvalidSimplex,
    UnsupportedDimension,
)

_INT_FIELDS = (
    "n", "seed", "threads", "lmax", "m", "n0", "cost_budget", "mse_points",
    "repeats", "particles", "level",
)
_FLOAT_FIELDS = ("beta", "rho", "c1")
_BOOL_FIELDS = ("desk", "strict", "unbounded", "refresh")
_LIST_FIELDS = ("levels",)


@dataclass
class ExperimentConfig:
    """Everything a run needs, with None meaning "use the mode's default"."""

    mode: str = None
    model: str = None
    n: int = None
    seed: int = None
    threads: int = None
    out: str = None
    desk: bool = None
    strict: bool = None
    scheme: str = None
    gen_level: str = None
    data: str = None
    lmax: int = None
    m: int = None
    n0: int = None
    beta: float = None
    rho: float = None
    unbounded: bool = None
    cost_budget: int = None
    reference: str = None
    mse_points: int = None
    levels: tuple = None
    repeats: int = None
    c1: float = None
    particles: int = None
    level: int = None
    refresh: bool = None
    unbiased: str = None
    mlpf: str = None

    def get(self, name, default=None):
        v = getattr(self, name)
        return default if v is None else v


def _coerce(name, raw):
    """Parse a raw config-file string into the field's type."""
    if raw is None:
        return None
    s = str(raw).strip()
    if s == "" or s.lower() == "none":
        return None
    if name in _INT_FIELDS:
        return int(s)
    if name in _FLOAT_FIELDS:
        return float(s)
    if name in _BOOL_FIELDS:
        low = s.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot read boolean config value {name} = {raw!r}")
    if name in _LIST_FIELDS:
        return tuple(int(tok) for tok in s.replace(",", " ").split())
    return s


def read_config(path):
    """Read a flat `key = value` config file into an ExperimentConfig."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
                key, raw = line.split("=", 1)
                key = key.strip().replace("-", "_")
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _coerce(key, raw)
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    return ExperimentConfig(**values)


def write_config(cfg, path):
    """Write the non-None fields of a config as sorted `key = value` lines.

    The thread count is left out on purpose: results are independent of it
    by construction, so it is not part of the experiment's identity and
    outputs stay byte-identical across --threads settings.
    """
    lines = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        if v is None or f.name == "threads":
            continue
        if f.name in _LIST_FIELDS:
            v = ",".join(str(x) for x in v)
        elif f.name in _BOOL_FIELDS:
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _merged(file_cfg, cli_cfg):
    out = ExperimentConfig()
    for f in fields(ExperimentConfig):
        v = getattr(cli_cfg, f.name)
        if v is None and file_cfg is not None:
            v = getattr(file_cfg, f.name)
        setattr(out, f.name, v)
    return out


@dataclass(frozen=True)
class CostReport:
    """Measured versus analytic cost of a randomized run."""

    total_cost: int
    mean_draw_cost: float
    expected_draw_cost: float
    draws: int

    def to_dict(self):
        exp = self.expected_draw_cost
        return {
            "total_cost": self.total_cost,
            "mean_draw_cost": self.mean_draw_cost,
            "expected_draw_cost": "inf" if math.isinf(exp) else exp,
            "draws": self.draws,
        }


def _ensure_out(cfg):
    out = cfg.get("out", "results")
    os.makedirs(out, exist_ok=True)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_meta(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _config_echo(cfg):
    """Config as a dict for meta files, minus the thread count (which never
    changes results and would break byte-identity across --threads runs)."""
    return {
        f.name: getattr(cfg, f.name)
        for f in fields(cfg)
        if getattr(cfg, f.name) is not None and f.name != "threads"
    }


def _load_data(cfg):
    if not cfg.data:
        raise ConfigError(f"mode {cfg.mode!r} needs --data pointing at a dataset CSV")
    data = read_dataset(cfg.data)
    if cfg.model and data.model and cfg.model.lower() != data.model.lower():
        raise ConfigError(
            f"--model {cfg.model!r} does not match the dataset's model {data.model!r}"
        )
    return data


def _benchmark_for(cfg, data=None):
    name = cfg.model or (data.model if data is not None and data.model else None)
    if not name:
        raise ConfigError("no model given (--model) and the dataset does not name one")
    return make_benchmark(name)


def _read_reference_means(path, n):
    means = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            means.append(float(row["mean"]))
    if len(means) < n:
        raise ConfigError(
            f"reference file {path} has {len(means)} rows, need {n}"
        )
    return np.asarray(means[:n])


def run_generate(cfg):
    if cfg.n is None:
        raise ConfigError("generate needs --n (number of observations)")
    bm = _benchmark_for(cfg)
    gl = cfg.gen_level
    if gl is None:
        gl = "exact" if bm.name in ("OU", "GBM") else "9"
    level = "exact" if str(gl) == "exact" else int(gl)
    data = generate_data(bm, cfg.n, level, cfg.get("seed", 1))
    out = _ensure_out(cfg)
    path = os.path.join(out, "data.csv")
    write_dataset(data, path)
    return {"data": path}


def run_reference(cfg):
    data = _load_data(cfg)
    bm = _benchmark_for(cfg, data)
    out = _ensure_out(cfg)
    csv_path = os.path.join(out, "reference.csv")
    meta_path = os.path.join(out, "reference.meta.json")
    desk = bool(cfg.get("desk", False))
    exact = (
        bm.name == "OU"
        and bm.observation.family == "gaussian"
        and bm.observation.link == "identity"
    )
    params = {
        "model": bm.name,
        "n": data.n,
        "kind": "kalman" if exact else "pf",
        "seed": cfg.get("seed", 1),
    }
    if not exact:
        params["level"] = cfg.get("level", 8 if desk else 10)
        params["particles"] = cfg.get("particles", 4000 if desk else 20000)
        params["repeats"] = cfg.get("repeats", 8 if desk else 20)

    if not cfg.get("refresh", False) and os.path.exists(csv_path) and os.path.exists(meta_path):
        with open(meta_path) as fh:
            old = json.load(fh)
        if old.get("params") == params:
            return {"reference": csv_path, "cached": "yes"}

    if exact:
        moments = kalman_reference(bm, data)
        rows = [
            (k + 1, float(mv[0]), float(mv[1]), 0.0)
            for k, mv in enumerate(moments)
        ]
    else:
        level = Level(params["level"])
        particles = params["particles"]
        repeats = params["repeats"]
        sched = BatchSchedule(particles)
        vals = np.empty((repeats, data.n))

        for r in range(repeats):
            stream = RngStream(params["seed"], (r, ROLE_REFERENCE))
            ests = batch_pf_run(bm, data, sched, 0, level, stream)
            vals[r] = [e.combined(0) for e in ests]
        means = vals.mean(axis=0)
        var = vals.var(axis=0, ddof=1) if repeats > 1 else np.zeros(data.n)
        stderr = np.sqrt(var / max(repeats, 1))
        rows = [
            (k + 1, float(means[k]), float(var[k]), float(stderr[k]))
            for k in range(data.n)
        ]
    _write_csv(csv_path, ["k", "mean", "var", "stderr"], rows)
    _write_meta(meta_path, {"params": params, "config": _config_echo(cfg)})
    return {"reference": csv_path}


def _build_plan(cfg, bm, single):
    n0 = cfg.get("n0", default_base_size(bm.diffusion))
    if single:
        lmax = None if cfg.get("unbounded", False) else cfg.get("lmax", 4)
        return make_single_rand_plan(lmax, n0)
    if cfg.get("unbounded", False):
        beta = cfg.get("beta", 1.0 if bm.diffusion.constant_diffusion else 0.5)
        return make_theory_plan(beta, cfg.get("rho", 0.9), n0)
    return make_truncated_plan(cfg.get("lmax", 4), n0)


def _mse_vs_cost(est, ref_final, points):
    """Partition the draw pool into disjoint groups per target M and
    return (M, groups, mse, cost) rows."""
    w = est.draws["weight"]
    x = est.draws["xi"]
    wx = w * x
    mean_cost = est.total_cost / est.m
    rows = []
    size = est.m // 2
    for _ in range(points):
        if size < 2:
            break
        groups = min(100, est.m // size)
        vals = np.array(
            [np.mean(wx[g * size : (g + 1) * size]) for g in range(groups)]
        )
        mse = float(np.mean((vals - ref_final) ** 2))
        rows.append((size, groups, mse, float(mean_cost * size)))
        size //= 2
    return rows


def run_randomized(cfg, single=False):
    data = _load_data(cfg)
    bm = _benchmark_for(cfg, data)
    plan = _build_plan(cfg, bm, single)
    m = cfg.get("m", 500 if cfg.get("desk", False) else 2000)
    mode = "strict" if cfg.get("strict", True) else "permissive"
    runner = single_randomized_estimate if single else unbiased_estimate
    est = runner(
        plan,
        bm,
        data,
        m,
        cfg.get("seed", 1),
        threads=cfg.get("threads", 1),
        scheme=cfg.get("scheme", "wasserstein"),
        mode=mode,
        cost_budget=cfg.cost_budget,
    )
    out = _ensure_out(cfg)
    prefix = "single_rand" if single else "unbiased"

    draws_path = os.path.join(out, f"{prefix}_draws.csv")
    d = est.draws
    _write_csv(
        draws_path,
        ["replicate", "l", "p", "xi", "weight", "cost"],
        [
            (i + 1, int(d["l"][i]), int(d["p"][i]), float(d["xi"][i]),
             float(d["weight"][i]), int(d["cost"][i]))
            for i in range(est.m)
        ],
    )

    summary_path = os.path.join(out, f"{prefix}_summary.csv")
    _write_csv(
        summary_path,
        ["n", "estimate", "stderr", "M", "total_cost"],
        [(k, v, s, est.m, est.total_cost) for k, v, s in est.summary_rows()],
    )

    report = CostReport(
        total_cost=est.total_cost,
        mean_draw_cost=est.total_cost / est.m,
        expected_draw_cost=expected_draw_cost(plan, data.n),
        draws=est.m,
    )
    meta_path = os.path.join(out, f"{prefix}_meta.json")
    _write_meta(
        meta_path,
        {
            "estimator": est.label,
            "estimate": est.value,
            "stderr": est.stderr,
            "retries": est.retries,
            "cost": report.to_dict(),
            "config": _config_echo(cfg),
        },
    )
    artifacts = {"draws": draws_path, "summary": summary_path, "meta": meta_path}

    if cfg.reference:
        ref = _read_reference_means(cfg.reference, data.n)
        rows = _mse_vs_cost(est, float(ref[-1]), cfg.get("mse_points", 8))
        mse_path = os.path.join(out, f"{prefix}_mse_vs_cost.csv")
        _write_csv(mse_path, ["M", "groups", "mse", "cost"], rows)
        artifacts["mse_vs_cost"] = mse_path

    _emit_plot_script(out)
    artifacts["plot"] = os.path.join(out, "plot_results.py")
    return artifacts


def run_mlpf(cfg):
    data = _load_data(cfg)
    bm = _benchmark_for(cfg, data)
    regime = "constant" if bm.diffusion.constant_diffusion else "nonconstant"
    levels = cfg.get("levels", (1, 2, 3, 4))
    repeats = cfg.get("repeats", 50 if cfg.get("desk", False) else 100)
    c1 = cfg.get("c1", 1.0)
    seed = cfg.get("seed", 1)
    threads = cfg.get("threads", 1)
    scheme = cfg.get("scheme", "wasserstein")
    out = _ensure_out(cfg)

    ref = None
    if cfg.reference:
        ref = _read_reference_means(cfg.reference, data.n)

    run_rows = []
    mse_rows = []
    for big_l in levels:
        alloc = allocate(int(big_l), regime, c1)
        finals = np.empty(repeats)
        comps = np.empty((repeats, big_l + 1))

        def work(r, alloc=alloc, finals=finals, comps=comps):
            res = mlpf_estimate(
                bm, data, alloc,
                scheme=scheme, threads=1,
                stream=RngStream(seed, (r, ROLE_MLPF)),
            )
            finals[r] = res.value
            comps[r] = res.level_values()

        _parallel_for(work, repeats, threads)
        cost = mlpf_cost(alloc, data.n)
        for l in range(big_l + 1):
            cost_l = data.n * int(alloc.sizes[l])
            if l >= 1:
                cost_l *= (1 << l) + (1 << (l - 1))
            run_rows.append(
                (big_l, l, int(alloc.sizes[l]), float(comps[:, l].mean()), cost_l)
            )
        run_rows.append((big_l, "total", int(alloc.sizes.sum()), float(finals.mean()), cost))
        if ref is not None:
            mse = float(np.mean((finals - ref[-1]) ** 2))
            mse_rows.append((big_l, mse, cost, repeats))

    runs_path = os.path.join(out, "mlpf_runs.csv")
    _write_csv(runs_path, ["L", "l", "M_l", "estimate_l", "cost_l"], run_rows)
    artifacts = {"runs": runs_path}
    if mse_rows:
        mse_path = os.path.join(out, "mlpf_mse_cost.csv")
        _write_csv(mse_path, ["L", "mse", "cost", "repeats"], mse_rows)
        artifacts["mse_cost"] = mse_path
    _write_meta(
        os.path.join(out, "mlpf_meta.json"),
        {"regime": regime, "config": _config_echo(cfg)},
    )
    artifacts["meta"] = os.path.join(out, "mlpf_meta.json")
    _emit_plot_script(out)
    artifacts["plot"] = os.path.join(out, "plot_results.py")
    return artifacts


def run_sweep(cfg):
    data = _load_data(cfg)
    bm = _benchmark_for(cfg, data)
    levels = cfg.get("levels", (2, 3, 4, 5, 6))
    particles = cfg.get("particles", 500 if cfg.get("desk", False) else 1000)
    repeats = cfg.get("repeats", 100)
    seed = cfg.get("seed", 1)
    scheme = cfg.get("scheme", "wasserstein")
    threads = cfg.get("threads", 1)
    out = _ensure_out(cfg)
    sched = BatchSchedule(particles)

    rows = []
    for l in levels:
        if l < 1:
            raise InvalidLevel("variance sweeps need coupled levels l >= 1")
        vals = np.empty(repeats)

        def work(r, l=l, vals=vals):
            stream = RngStream(seed, (r, ROLE_SWEEP, l))
            ests = batch_cpf_run(bm, data, sched, 0, Level(l), stream, scheme)
            vals[r] = ests[-1].increment(0)

        _parallel_for(work, repeats, threads)
        rows.append(
            (int(l), float(vals.var(ddof=1)), float(vals.mean()), repeats, particles)
        )

    path = os.path.join(out, "variance_vs_level.csv")
    _write_csv(path, ["l", "variance", "mean", "repeats", "particles"], rows)

    ls = np.array([r[0] for r in rows], dtype=float)
    lv = np.log2(np.array([r[1] for r in rows]))
    slope = float(np.polyfit(ls, lv, 1)[0]) if len(rows) > 1 else math.nan
    _write_meta(
        os.path.join(out, "variance_meta.json"),
        {"log2_variance_slope": slope, "scheme": scheme, "config": _config_echo(cfg)},
    )
    return {"variance": path, "meta": os.path.join(out, "variance_meta.json")}


def _read_mse_cost(path, mse_col="mse", cost_col="cost"):
    pts = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pts.append((row.get("L") or row.get("M"),
                        float(row[mse_col]), float(row[cost_col])))
    if not pts:
        raise ConfigError(f"curve file {path} is empty")
    return pts


def compare_cost_ratio(unbiased_points, mlpf_points, max_levels=4):
    """Cost ratio of the randomized estimator to the multilevel baseline.

    For each baseline point (label, mse, cost), the randomized curve's cost
    at the same MSE is found by linear interpolation in log-log space; the
    ratio is interp_cost / baseline_cost. Points whose MSE lies outside the
    randomized curve's range are dropped; if none remain a
    NonOverlappingRange is raised. Returns (rows, average) with rows
    (label, mse, baseline_cost, interpolated_cost, ratio), averaged over at
    most the last `max_levels` rows.
    """
    u = sorted(
        ((mse, cost) for _, mse, cost in unbiased_points if mse > 0 and cost > 0),
        key=lambda t: t[0],
    )
    if len(u) < 2:
        raise NonOverlappingRange("the randomized curve needs at least two points")
    log_mse = np.log(np.array([t[0] for t in u]))
    log_cost = np.log(np.array([t[1] for t in u]))

    rows = []
    for label, mse, cost in mlpf_points:
        if mse <= 0 or cost <= 0:
            continue
        lm = math.log(mse)
        if lm < log_mse[0] or lm > log_mse[-1]:
            continue
        interp = math.exp(float(np.interp(lm, log_mse, log_cost)))
        rows.append((label, mse, cost, interp, interp / cost))
    if not rows:
        raise NonOverlappingRange(
            "no baseline MSE falls inside the randomized curve's MSE range"
        )
    rows = rows[-max_levels:]
    avg = float(np.mean([r[4] for r in rows]))
    return rows, avg


def run_compare(cfg):
    if not cfg.unbiased or not cfg.mlpf:
        raise ConfigError("compare needs --unbiased and --mlpf curve files")
    u_pts = _read_mse_cost(cfg.unbiased)
    m_pts = _read_mse_cost(cfg.mlpf)
    rows, avg = compare_cost_ratio(u_pts, m_pts)
    out = _ensure_out(cfg)
    path = os.path.join(out, "cost_ratio.csv")
    all_rows = [
        (label, mse, mlpf_cost, unb_cost, ratio)
        for label, mse, mlpf_cost, unb_cost, ratio in rows
    ]
    all_rows.append(("average", "", "", "", avg))
    _write_csv(
        path,
        ["L", "mse", "mlpf_cost", "randomized_cost", "ratio"],
        all_rows,
    )
    _emit_plot_script(out)
    return {"cost_ratio": path, "average_ratio": f"{avg:.4g}"}


_PLOT_SCRIPT = '''"""Plot whatever result CSVs sit next to this script.

Needs matplotlib; run `python3 plot_results.py` inside the results
directory. Each available CSV becomes one figure saved as PNG.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read(name):
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        return None
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def numeric(rows, col):
    out = []
    for r in rows:
        try:
            out.append(float(r[col]))
        except (KeyError, TypeError, ValueError):
            out.append(None)
    return out


for prefix in ("unbiased", "single_rand"):
    rows = read(prefix + "_mse_vs_cost.csv")
    if rows:
        cost = numeric(rows, "cost")
        mse = numeric(rows, "mse")
        plt.figure()
        plt.loglog(cost, mse, "o-")
        plt.xlabel("cost (Euler steps)")
        plt.ylabel("MSE")
        plt.title(prefix.replace("_", " ") + " estimator")
        plt.grid(True, which="both", alpha=0.3)
        plt.savefig(os.path.join(HERE, prefix + "_mse_vs_cost.png"), dpi=150)

rows = read("mlpf_mse_cost.csv")
if rows:
    cost = numeric(rows, "cost")
    mse = numeric(rows, "mse")
    plt.figure()
    plt.loglog(cost, mse, "s-")
    plt.xlabel("cost (Euler steps)")
    plt.ylabel("MSE")
    plt.title("multilevel particle filter")
    plt.grid(True, which="both", alpha=0.3)
    plt.savefig(os.path.join(HERE, "mlpf_mse_cost.png"), dpi=150)

rows = read("variance_vs_level.csv")
if rows:
    ls = numeric(rows, "l")
    var = numeric(rows, "variance")
    plt.figure()
    plt.semilogy(ls, var, "o-")
    plt.xlabel("level l")
    plt.ylabel("increment variance")
    plt.title("coupled increment variance by level")
    plt.grid(True, which="both", alpha=0.3)
    plt.savefig(os.path.join(HERE, "variance_vs_level.png"), dpi=150)

rows = read("cost_ratio.csv")
if rows:
    body = [r for r in rows if r["L"] != "average"]
    ls = [r["L"] for r in body]
    ratio = numeric(body, "ratio")
    plt.figure()
    plt.plot(range(len(ls)), ratio, "o-")
    plt.xticks(range(len(ls)), ls)
    plt.xlabel("baseline point")
    plt.ylabel("cost ratio")
    plt.title("randomized / multilevel cost at matched MSE")
    plt.grid(True, alpha=0.3)
    plt.savefig(os.path.join(HERE, "cost_ratio.png"), dpi=150)

print("wrote figures next to the CSVs in", HERE)
'''


def _emit_plot_script(out):
    path = os.path.join(out, "plot_results.py")
    with open(path, "w") as fh:
        fh.write(_PLOT_SCRIPT)
    return path


def run_experiment(cfg):
    """Dispatch a resolved config to its mode runner; returns artifact paths."""
    mode = cfg.mode
    if mode == "generate":
        result = run_generate(cfg)
    elif mode == "reference":
        result = run_reference(cfg)
    elif mode == "run-unbiased":
        result = run_randomized(cfg, single=False)
    elif mode == "run-single-rand":
        result = run_randomized(cfg, single=True)
    elif mode == "run-mlpf":
        result = run_mlpf(cfg)
    elif mode == "sweep-variance":
        result = run_sweep(cfg)
    elif mode == "compare":
        result = run_compare(cfg)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    out = cfg.get("out", "results")
    if os.path.isdir(out):
        write_config(cfg, os.path.join(out, "run_config.txt"))
    return result


def _add_common(sp):
    sp.add_argument("--config", help="flat key = value config file; flags override it")
    sp.add_argument("--model", help="OU, Langevin, GBM or NLD")
    sp.add_argument("--n", type=int, help="number of observations")
    sp.add_argument("--seed", type=int, help="base seed (default 1)")
    sp.add_argument("--threads", type=int, help="worker threads (default 1)")
    sp.add_argument("--out", help="output directory (default results)")
    sp.add_argument("--desk", action="store_true", default=None,
                    help="small-scale defaults for quick runs")
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--strict", dest="strict", action="store_true", default=None,
                       help="abort on the first failed draw (default)")
    group.add_argument("--permissive", dest="strict", action="store_false", default=None,
                       help="retry failed draws on fresh sub-streams")
    sp.add_argument("--scheme", choices=("wasserstein", "maximal"),
                    help="coupled resampling scheme (default wasserstein)")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="unbiasedpf",
        description="Randomized multilevel particle filter experiments.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)

    sp = sub.add_parser("generate", help="simulate an observation record")
    _add_common(sp)
    sp.add_argument("--gen-level", dest="gen_level",
                    help='generation level, an integer or "exact"')

    for name in ("run-unbiased", "run-single-rand"):
        sp = sub.add_parser(name, help=f"{name.replace('-', ' ')} estimator")
        _add_common(sp)
        sp.add_argument("--data", help="dataset CSV from `generate`")
        sp.add_argument("--lmax", type=int, help="truncation level (default 4)")
        sp.add_argument("--m", type=int, help="number of randomized draws")
        sp.add_argument("--n0", type=int, help="base sample size N_0")
        sp.add_argument("--beta", type=float, help="variance decay rate override")
        sp.add_argument("--rho", type=float, help="geometric level pmf exponent factor")
        sp.add_argument("--unbounded", action="store_true", default=None,
                        help="use the unbounded (truly unbiased) plan")
        sp.add_argument("--cost-budget", dest="cost_budget", type=int,
                        help="abort if any draw would exceed this Euler-step cost")
        sp.add_argument("--reference", help="reference CSV for MSE-vs-cost output")
        sp.add_argument("--mse-points", dest="mse_points", type=int,
                        help="points on the MSE-vs-cost curve (default 8)")

    sp = sub.add_parser("run-mlpf", help="multilevel particle filter baseline")
    _add_common(sp)
    sp.add_argument("--data", help="dataset CSV from `generate`")
    sp.add_argument("--levels", type=_int_list, help="maximum levels L, e.g. 1,2,3,4")
    sp.add_argument("--repeats", type=int, help="independent runs per L")
    sp.add_argument("--c1", type=float, help="allocation constant (default 1.0)")
    sp.add_argument("--reference", help="reference CSV for MSE output")

    sp = sub.add_parser("sweep-variance", help="coupled increment variance by level")
    _add_common(sp)
    sp.add_argument("--data", help="dataset CSV from `generate`")
    sp.add_argument("--levels", type=_int_list, help="coupled levels, e.g. 2,3,4,5")
    sp.add_argument("--particles", type=int, help="pairs per run (default 1000)")
    sp.add_argument("--repeats", type=int, help="runs per level (default 100)")

    sp = sub.add_parser("reference", help="exact or high-resolution reference filter")
    _add_common(sp)
    sp.add_argument("--data", help="dataset CSV from `generate`")
    sp.add_argument("--level", type=int, help="PF reference level (non-OU models)")
    sp.add_argument("--particles", type=int, help="PF reference particle count")
    sp.add_argument("--repeats", type=int, help="PF reference repeats")
    sp.add_argument("--refresh", action="store_true", default=None,
                    help="recompute even if a matching cached reference exists")

    sp = sub.add_parser("compare", help="cost ratio at matched MSE")
    _add_common(sp)
    sp.add_argument("--unbiased", help="randomized MSE-vs-cost CSV")
    sp.add_argument("--mlpf", help="multilevel MSE-vs-cost CSV")

    return parser


def _int_list(text):
    try:
        return tuple(int(tok) for tok in str(text).replace(",", " ").split())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from err


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse reserves status 2 for usage errors; here 2 means a
        # numerical failure, so usage problems are remapped to 1.
        if err.code not in (0, None):
            return 1
        return 0

    ns = vars(args)
    config_path = ns.pop("config", None)
    file_cfg = read_config(config_path) if config_path else None
    known = {f.name for f in fields(ExperimentConfig)}
    cli_cfg = ExperimentConfig(**{k: v for k, v in ns.items() if k in known})
    cfg = _merged(file_cfg, cli_cfg)
    cfg.mode = args.mode

    try:
        artifacts = run_experiment(cfg)
    except _NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except _CONFIG_ERRORS as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 3

    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
