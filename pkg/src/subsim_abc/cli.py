"""Command-line front end.

``subsim-abc {simulate,synth,infer,evidence,compare,plot} --config FILE
[--seed N] [--threads N] [--out DIR]``

Commands communicate through files in the output directory, so inference is
run once and evidence curves, comparisons and plots are cheap post-processing.
Exit status: 0 success, 2 usage or configuration error, 3 numerical or
runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import re
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .dynamics import GroundMotion, simulate_bilinear, simulate_masing
from .evidence import ModelComparisonReport, default_eps_grid, log_ball_volume, log_prob_at, prob_curve
from .io import (
    load_dataset,
    load_ground_motion,
    load_run,
    read_table,
    save_dataset,
    save_run,
    surrogate_motion,
    synth_dataset,
    write_manifest,
    write_samples,
    write_table,
)
from .model import (
    Composite,
    Dataset,
    LogNormalProduct,
    NormalProduct,
    SimulationDivergence,
    UniformBox,
)
from .models import (
    BILINEAR_CLASSES,
    BILINEAR_TRUE,
    MASING_CLASSES,
    MASING_TRUE,
    bilinear_model,
    masing_model,
    toy_model,
)
from .sampler import SubSimConfig, TrialBudgetExceeded, run_abc_subsim

log = logging.getLogger("subsim_abc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

RUN_FILE = "run.bin"
SAMPLES_FILE = "samples.tsv"
SUMMARY_FILE = "summary.txt"
EVIDENCE_FILE = "evidence.tsv"
COMPARE_FILE = "compare.tsv"
COMPARE_CURVE_FILE = "compare_curve.tsv"
MANIFEST_FILE = "manifest.txt"
DATASET_FILE = "dataset.tsv"
RESPONSE_FILE = "response.tsv"
HYSTERESIS_FILE = "hysteresis.tsv"
ENERGY_FILE = "energy.tsv"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_PRIOR_ENTRY = {
    "type": "object",
    "additionalProperties": False,
    "minProperties": 1,
    "maxProperties": 1,
    "properties": {"uniform": _PAIR, "lognormal": _PAIR, "normal": _PAIR},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["toy", "bilinear", "masing"]},
                "class": {"type": "string"},
                "label": {"type": "string", "minLength": 1},
                "free": {
                    "type": "array",
                    "items": {"enum": ["k1", "k2", "c", "z_y"]},
                    "uniqueItems": True,
                    "minItems": 1,
                },
                "fixed": {"type": "object", "additionalProperties": _NUM},
                "prior": {"type": "object", "additionalProperties": _PRIOR_ENTRY},
                "theta": {"type": "object", "additionalProperties": _NUM},
                "n_sub": {"type": "integer", "minimum": 1},
                "out_dt": _POS,
                "prior_mean": _NUM,
                "prior_sd": _POS,
                "noise_sd": _POS,
                "n": {"type": "integer", "minimum": 1},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "motion": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "file": {"type": "string"},
                        "surrogate": {"enum": ["elcentro", "sylmar"]},
                        "scale": _POS,
                    },
                    "oneOf": [{"required": ["file"]}, {"required": ["surrogate"]}],
                },
                "observed": {"type": "string"},
                "values": {"type": "array", "items": _NUM, "minItems": 1},
                "synth": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "noise_ratio": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_per_level": {"type": "integer", "minimum": 1},
                "p0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "target_accept": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "adapt_prob": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_levels": {"type": "integer", "minimum": 1},
                "eps_target": {"anyOf": [_POS, {"type": "null"}]},
                "master_seed": {"type": "integer", "minimum": 0},
                "norm": {"enum": ["L2", "Linf"]},
                "proposal_spread": {"enum": ["prior", "seeds"]},
            },
        },
        "evidence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "run": {"type": "string"},
                "eps": {"type": "array", "items": _POS, "minItems": 1},
                "grid": {"type": "integer", "minimum": 1},
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "runs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "priors": {"type": "array", "items": _POS, "minItems": 1},
                "eps": {"type": "array", "items": _POS, "minItems": 1},
                "grid": {"type": "integer", "minimum": 1},
            },
        },
        "plot": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tables": {"type": "array", "items": {"type": "string"}, "minItems": 1}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "export_samples": {"type": "boolean"},
                "plots": {"type": "boolean"},
            },
        },
    },
}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` (no decimal point) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def validate_config(cfg) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = yaml.load(fh, Loader=_Loader)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if cfg is None:
        cfg = {}
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# config -> objects
# ---------------------------------------------------------------------------


class _Context:
    def __init__(self, cfg, base: Path, out: Path, seed, threads):
        self.cfg = cfg
        self.base = base
        self.out = out
        self.seed = seed
        self.threads = threads

    def path(self, p) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    def section(self, name) -> dict:
        return self.cfg.get(name) or {}


def _one_prior(name, entry):
    (kind, (a, b)), = entry.items()
    if kind == "uniform":
        if not a < b:
            raise ConfigError(f"prior for {name}: uniform bounds must satisfy lower < upper")
        return UniformBox([a], [b])
    if not b > 0:
        raise ConfigError(f"prior for {name}: standard deviation must be > 0")
    return LogNormalProduct([a], [b]) if kind == "lognormal" else NormalProduct([a], [b])


def _override_prior(model, spec: dict):
    names = list(model.param_names)
    if set(spec) != set(names):
        raise ConfigError(
            f"model.prior must give one entry per free parameter {names}, got {sorted(spec)}"
        )
    parts = tuple(_one_prior(n, spec[n]) for n in names)
    prior = parts[0] if len(parts) == 1 else Composite(parts)
    return dataclasses.replace(model, prior=prior)


def build_model(cfg: dict):
    """Model class described by the ``model`` section."""
    m = cfg["model"]
    kind = m["name"]
    allowed = {
        "toy": {"prior_mean", "prior_sd", "noise_sd", "n"},
        "bilinear": {"class", "free", "fixed", "n_sub", "out_dt"},
        "masing": {"class", "n_sub", "out_dt"},
    }[kind] | {"name", "label", "prior", "theta"}
    extra = set(m) - allowed
    if extra:
        raise ConfigError(f"model keys {sorted(extra)} do not apply to model '{kind}'")
    label = m.get("label")
    if kind == "toy":
        model = toy_model(
            m.get("prior_mean", 0.0), m.get("prior_sd", 1.0), m.get("noise_sd", 1.0),
            n=m.get("n", 1), name=label or "toy",
        )
    elif kind == "bilinear":
        cls = m.get("class")
        if "free" in m:
            free = tuple(m["free"])
        elif cls in BILINEAR_CLASSES:
            free = BILINEAR_CLASSES[cls]
        else:
            raise ConfigError(f"bilinear model needs 'free' or a class in {sorted(BILINEAR_CLASSES)}")
        fixed = dict(m.get("fixed", {"m": 1.0}))
        bad = set(fixed) - {"k1", "k2", "c", "z_y", "m"}
        if bad or set(fixed) & set(free):
            raise ConfigError("model.fixed must name non-free bilinear parameters (k1, k2, c, z_y, m)")
        upper = None
        model = bilinear_model(label or cls or "bilinear", free, fixed, upper, m.get("n_sub", 20))
        if "out_dt" in m:
            model = dataclasses.replace(
                model, forward=dataclasses.replace(model.forward, out_dt=m["out_dt"])
            )
    else:
        cls = m.get("class")
        if cls not in MASING_CLASSES:
            raise ConfigError(f"masing model needs a class in {sorted(MASING_CLASSES)}")
        a, d = MASING_CLASSES[cls]
        model = masing_model(label or cls, a, d, m.get("n_sub", 20))
        if "out_dt" in m:
            model = dataclasses.replace(
                model, forward=dataclasses.replace(model.forward, out_dt=m["out_dt"])
            )
    if "prior" in m:
        model = _override_prior(model, m["prior"])
    return model


def _default_theta(kind, model):
    if kind == "bilinear":
        return {n: BILINEAR_TRUE[n] for n in model.param_names}
    if kind == "masing":
        out = {}
        for n in model.param_names:
            base = n.rstrip("0123456789")
            out[n] = MASING_TRUE[base]
        return out
    return None


def model_theta(cfg: dict, model) -> np.ndarray:
    """Parameter vector from ``model.theta`` (reference values by default)."""
    m = cfg["model"]
    given = m.get("theta") or _default_theta(m["name"], model)
    if given is None:
        raise ConfigError("model.theta is required for the toy model")
    names = list(model.param_names)
    if set(given) != set(names):
        raise ConfigError(f"model.theta must set exactly {names}")
    return np.array([float(given[n]) for n in names])


def build_motion(ctx: _Context):
    sec = ctx.section("data").get("motion")
    if sec is None:
        return None
    scale = sec.get("scale", 1.0)
    try:
        if "file" in sec:
            return load_ground_motion(ctx.path(sec["file"]), scale)
        return surrogate_motion(sec["surrogate"], scale)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"ground motion: {exc}") from None


def _n_channels(model) -> int:
    return len(model.forward.masses) if hasattr(model.forward, "masses") else 1


def build_dataset(ctx: _Context, model, motion):
    """Observations from ``data.observed``, ``data.values`` or ``data.synth``.

    Returns ``(dataset, sigma)`` where ``sigma`` is the synthetic noise level
    or ``None`` for measured data.
    """
    data = ctx.section("data")
    kind = ctx.cfg["model"]["name"]
    sources = [k for k in ("observed", "values", "synth") if k in data]
    if len(sources) != 1:
        raise ConfigError("data must define exactly one of 'observed', 'values' or 'synth'")
    if kind != "toy" and motion is None:
        raise ConfigError(f"model '{kind}' needs data.motion")
    if "observed" in data:
        try:
            ds = load_dataset(ctx.path(data["observed"]), motion)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"dataset: {exc}") from None
        return ds, None
    if "values" in data:
        return Dataset(np.asarray(data["values"], dtype=float), 1, motion), None
    syn = data["synth"]
    theta = model_theta(ctx.cfg, model)
    n_steps = len(model.forward.h) if kind == "toy" else None
    try:
        return synth_dataset(
            model, theta, None if kind == "toy" else motion,
            syn.get("noise_ratio", 0.05), syn.get("seed", 0), _n_channels(model),
            getattr(model.forward, "out_dt", None), n_steps,
        )
    except ValueError as exc:
        raise ConfigError(f"synthetic data: {exc}") from None


def build_sampler_config(ctx: _Context) -> SubSimConfig:
    s = dict(ctx.section("sampler"))
    if ctx.seed is not None:
        s["master_seed"] = ctx.seed
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return SubSimConfig(**s)
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from None


def effective_config(ctx: _Context) -> dict:
    cfg = json.loads(json.dumps(ctx.cfg))
    if ctx.seed is not None:
        cfg.setdefault("sampler", {})["master_seed"] = ctx.seed
    return cfg


def _manifest(ctx: _Context, command: str, **extra) -> dict:
    cfg = effective_config(ctx)
    entries = {
        "command": command,
        "code_version": __version__,
        "config": cfg,
        "master_seed": cfg.get("sampler", {}).get("master_seed", 0),
    }
    entries.update(extra)
    entries["created_utc"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return entries


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(ctx: _Context) -> int:
    model = build_model(ctx.cfg)
    kind = ctx.cfg["model"]["name"]
    if kind == "toy":
        raise ConfigError("simulate applies to the bilinear and masing models")
    motion = build_motion(ctx)
    if motion is None:
        raise ConfigError("simulate needs data.motion")
    theta = model_theta(ctx.cfg, model)
    fwd = model.forward
    try:
        params = fwd.params(theta)
    except (ValueError, FloatingPointError) as exc:
        raise ConfigError(f"model parameters: {exc}") from None
    sim = simulate_bilinear if kind == "bilinear" else simulate_masing
    x, r, e = sim(params, motion, fwd.out_dt, fwd.n_sub, return_force=True, return_energy=True)
    x = x.reshape(x.shape[0], -1)
    r = r.reshape(r.shape[0], -1)
    n_ch = x.shape[1]
    every = motion.steps_per_output(fwd.out_dt)
    t = np.arange(1, x.shape[0] + 1) * motion.dt * every
    step = np.arange(1, x.shape[0] + 1)
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_table(
        ctx.out / RESPONSE_FILE,
        ["step", "time"] + [f"ch{k + 1}" for k in range(n_ch)],
        _rows(step, t, x),
    )
    hyst_head = []
    for k in range(n_ch):
        hyst_head += [f"deflection{k + 1}", f"force{k + 1}"]
    hyst = np.empty((x.shape[0], 2 * n_ch))
    hyst[:, 0::2] = x
    hyst[:, 1::2] = r
    write_table(ctx.out / HYSTERESIS_FILE, hyst_head, hyst)
    e_head = ["input", "kinetic", "viscous"] + (
        ["elastic", "dissipated"] if kind == "bilinear" else ["hysteretic"]
    )
    write_table(ctx.out / ENERGY_FILE, ["time"] + e_head, np.column_stack([t, e]))
    write_manifest(ctx.out / MANIFEST_FILE, _manifest(ctx, "simulate", model=model.name))
    print(f"peak |response| per channel: {np.abs(x).max(axis=0).tolist()}")
    return EXIT_OK


def _rows(step, t, x):
    return [[int(s), float(ti), *map(float, xi)] for s, ti, xi in zip(step, t, x)]


def cmd_synth(ctx: _Context) -> int:
    model = build_model(ctx.cfg)
    motion = build_motion(ctx)
    if "synth" not in ctx.section("data"):
        raise ConfigError("synth needs a data.synth section")
    ds, sigma = build_dataset(ctx, model, motion)
    ctx.out.mkdir(parents=True, exist_ok=True)
    save_dataset(ctx.out / DATASET_FILE, ds)
    write_manifest(
        ctx.out / MANIFEST_FILE,
        _manifest(ctx, "synth", model=model.name, dataset_digest=ds.digest(), noise_sd=sigma),
    )
    print(f"wrote {ds.n_steps} steps x {ds.n_channels} channels, noise sd {sigma:.6g}")
    return EXIT_OK


def _f(v) -> str:
    return repr(float(v))


def _lognormal_map(x):
    if np.all(x > 0) and x.size > 1:
        lx = np.log(x)
        return float(np.exp(lx.mean() - lx.var(ddof=1)))
    return float("nan")


def write_summary(path, run, model_kind=None) -> None:
    theta, disc, s2 = run.posterior()
    eps = run.final_tolerance
    lines = [
        f"model\t{run.model}",
        f"stop_reason\t{run.stop_reason}",
        f"levels\t{run.n_levels}",
        f"final_tolerance\t{_f(eps)}",
        f"final_tolerance_rms\t{_f(eps / np.sqrt(run.data_size))}",
        f"n_posterior\t{theta.shape[0]}",
        f"n_simulations\t{run.n_simulations}",
        "",
        "parameter\tmean\tsd\tlognormal_map",
    ]
    sd = theta.std(axis=0, ddof=1) if theta.shape[0] > 1 else np.full(theta.shape[1], np.nan)
    for k, name in enumerate(run.param_names):
        lines.append(f"{name}\t{_f(theta[:, k].mean())}\t{_f(sd[k])}\t{_f(_lognormal_map(theta[:, k]))}")
    sv = np.sqrt(s2)
    lines.append(f"sigma_v\t{_f(sv.mean())}\t{_f(sv.std(ddof=1) if sv.size > 1 else np.nan)}\tnan")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _evidence_rows(run, eps_list):
    rows, ok = [], 0
    dim = run.data_size
    for e in eps_list:
        try:
            lp = log_prob_at(run, e)
        except ValueError as exc:
            warnings.warn(f"epsilon={e:g} skipped: {exc}")
            continue
        ok += 1
        rows.append([e, float(np.exp(lp)), lp - log_ball_volume(e, dim, run.norm)])
    return rows


def _write_curve(path, run):
    c = prob_curve(run)
    write_table(path, ["epsilon", "prob", "log_evidence"], c.rows())


def cmd_infer(ctx: _Context) -> int:
    model = build_model(ctx.cfg)
    motion = build_motion(ctx)
    data, sigma = build_dataset(ctx, model, motion)
    config = build_sampler_config(ctx)
    out_sec = ctx.section("output")
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_manifest(
        ctx.out / MANIFEST_FILE,
        _manifest(ctx, "infer", model=model.name, dataset_digest=data.digest(), noise_sd=sigma),
    )

    def flush(run):
        save_run(run, ctx.out / RUN_FILE)

    try:
        run = run_abc_subsim(model, data, config, ctx.threads, callback=flush)
    except (SimulationDivergence, TrialBudgetExceeded, FloatingPointError, RuntimeError) as exc:
        log.error("sampler failed: %s (completed levels kept in %s)", exc, RUN_FILE)
        return EXIT_RUNTIME
    flush(run)
    if out_sec.get("export_samples", True):
        write_samples(ctx.out / SAMPLES_FILE, run)
    write_summary(ctx.out / SUMMARY_FILE, run)
    _write_curve(ctx.out / EVIDENCE_FILE, run)
    if out_sec.get("plots", False):
        plot_table(ctx.out / EVIDENCE_FILE, ctx.out / "evidence.svg")
    print(
        f"{run.model}: {run.n_levels} levels, final tolerance {run.final_tolerance:.6g}, "
        f"stop: {run.stop_reason}"
    )
    return EXIT_OK


def _load_run(path):
    try:
        return load_run(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"run file: {exc}") from None


def cmd_evidence(ctx: _Context) -> int:
    sec = ctx.section("evidence")
    run = _load_run(ctx.path(sec["run"]) if "run" in sec else ctx.out / RUN_FILE)
    ctx.out.mkdir(parents=True, exist_ok=True)
    if "eps" not in sec and "grid" not in sec:
        _write_curve(ctx.out / EVIDENCE_FILE, run)
        return EXIT_OK
    if "eps" in sec:
        eps = np.array(sec["eps"], dtype=float)
    else:
        eps = default_eps_grid([run], sec["grid"])
    rows = _evidence_rows(run, eps)
    if not rows:
        log.error("no evidence point inside the range covered by the run")
        return EXIT_CONFIG
    write_table(ctx.out / EVIDENCE_FILE, ["epsilon", "prob", "log_evidence"], rows)
    return EXIT_OK


def cmd_compare(ctx: _Context) -> int:
    sec = ctx.section("compare")
    if "runs" not in sec:
        raise ConfigError("compare needs compare.runs")
    runs = [_load_run(ctx.path(p)) for p in sec["runs"]]
    digests = {r.data_digest for r in runs}
    if len(digests) > 1:
        raise ConfigError("runs were fitted to different datasets; refusing to compare")
    names = [r.model for r in runs]
    if len(set(names)) != len(names):
        names = [f"{n}#{i + 1}" for i, n in enumerate(names)]
    log_priors = None
    if "priors" in sec:
        if len(sec["priors"]) != len(runs):
            raise ConfigError("compare.priors must have one entry per run")
        log_priors = np.log(np.asarray(sec["priors"], dtype=float))
    if "eps" in sec:
        grid = np.array(sec["eps"], dtype=float)
    else:
        grid = default_eps_grid(runs, sec.get("grid", 20))
    try:
        rep = ModelComparisonReport.from_runs(runs, log_priors, grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ctx.out.mkdir(parents=True, exist_ok=True)
    with open(ctx.out / COMPARE_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model\tfinal_tolerance\tlevels\tlog_evidence\tposterior\n")
        for k, n in enumerate(names):
            fh.write(
                f"{n}\t{_f(rep.final_tolerance[k])}\t{int(rep.n_levels[k])}\t"
                f"{_f(rep.log_evidence[k])}\t{_f(rep.posterior[k])}\n"
            )
    write_table(
        ctx.out / COMPARE_CURVE_FILE,
        ["epsilon", *names],
        np.column_stack([rep.eps_grid, rep.curve]) if rep.eps_grid.size else [],
    )
    print(f"winner: {names[int(np.argmax(rep.posterior))]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plotting
# ---------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_text(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(header, arr, width=640, height=420) -> str:
    """Line plot of columns 2.. against column 1 on a log-scale x axis."""
    if arr.shape[0] == 0 or arr.shape[1] < 2:
        raise ValueError("table has no data to plot")
    x = arr[:, 0]
    ys = arr[:, 1:]
    if np.any(x <= 0):
        raise ValueError("x column must be positive for a log-scale axis")
    fin = ys[np.isfinite(ys)]
    if fin.size == 0:
        raise ValueError("no finite values to plot")
    log_y = bool(np.all(fin > 0) and fin.max() / fin.min() > 100)
    ty = np.log10(np.where(ys > 0, ys, np.nan)) if log_y else ys
    lx = np.log10(x)
    x0, x1 = lx.min(), lx.max()
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    tf = ty[np.isfinite(ty)]
    y0, y1 = tf.min(), tf.max()
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 70, 20, 20, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for d in range(int(np.ceil(x0)), int(np.floor(x1)) + 1):
        X = px(d)
        out.append(f'<line x1="{X:.2f}" y1="{mt + ph}" x2="{X:.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{mt + ph + 18}" font-size="11" text-anchor="middle">1e{d}</text>')
    for v in np.linspace(y0, y1, 5):
        Y = py(v)
        lab = f"1e{v:.1f}" if log_y else f"{v:.3g}"
        out.append(f'<text x="{ml - 6}" y="{Y + 4:.2f}" font-size="11" text-anchor="end">{lab}</text>')
    out.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" font-size="12" text-anchor="middle">'
        f"{_svg_text(header[0])} (log scale)</text>"
    )
    for k in range(ty.shape[1]):
        ok = np.isfinite(ty[:, k])
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(lx[ok], ty[ok, k]))
        color = _COLORS[k % len(_COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                   f"<title>{_svg_text(header[k + 1])}</title></polyline>")
        out.append(
            f'<text x="{ml + pw - 6}" y="{mt + 16 + 14 * k}" font-size="11" fill="{color}" '
            f'text-anchor="end">{_svg_text(header[k + 1])}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_table(table, svg_path) -> None:
    header, arr = read_table(table)
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(header, arr))


def cmd_plot(ctx: _Context) -> int:
    tables = ctx.section("plot").get("tables")
    if tables:
        paths = [ctx.path(t) for t in tables]
    else:
        paths = [ctx.out / n for n in (EVIDENCE_FILE, COMPARE_CURVE_FILE) if (ctx.out / n).exists()]
    if not paths:
        raise ConfigError("no tables to plot; set plot.tables")
    ctx.out.mkdir(parents=True, exist_ok=True)
    for p in paths:
        try:
            plot_table(p, ctx.out / (Path(p).stem + ".svg"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{p}: {exc}") from None
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "synth": cmd_synth,
    "infer": cmd_infer,
    "evidence": cmd_evidence,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subsim-abc", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override sampler.master_seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--out", help="output directory (default: output.dir or the current directory)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        base = Path(args.config).resolve().parent
        out = Path(args.out) if args.out else base / (cfg.get("output") or {}).get("dir", ".")
        ctx = _Context(cfg, base, out, args.seed, args.threads)
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationDivergence, FloatingPointError) as exc:
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
