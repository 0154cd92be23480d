"""Ground-motion files, synthetic datasets, surrogate records and run persistence."""
from __future__ import annotations

import hashlib
import io as _io
import json
import re
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal

from .dynamics import GroundMotion
from .model import Dataset, ModelClassSpec
from .sampler import LevelRecord, SubSimConfig, SubSimRun

__all__ = [
    "RunFileError",
    "load_ground_motion",
    "save_ground_motion",
    "rms_noise_sigma",
    "synth_dataset",
    "surrogate_motion",
    "make_surrogate",
    "save_run",
    "load_run",
    "write_samples",
    "write_table",
    "read_table",
    "write_manifest",
    "read_manifest",
    "save_dataset",
    "load_dataset",
]

_SPLIT = re.compile(r"[,\s]+")


class RunFileError(ValueError):
    """Unreadable, truncated, corrupted or version-mismatched run file."""


# ---------------------------------------------------------------------------
# ground motion
# ---------------------------------------------------------------------------


def load_ground_motion(path, scale: float = 1.0, rtol: float = 1e-6) -> GroundMotion:
    """Read a two-column ``time, acceleration`` text record.

    Columns may be separated by commas or whitespace; blank lines and lines
    starting with ``#`` are skipped. The time step must be uniform to within
    ``rtol`` relative deviation. Acceleration (m/s^2) is multiplied by ``scale``.
    """
    t, a = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = [p for p in _SPLIT.split(s) if p]
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, found {len(parts)}")
            try:
                ti, ai = float(parts[0]), float(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {s!r}") from None
            if not (np.isfinite(ti) and np.isfinite(ai)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            t.append(ti)
            a.append(ai)
    if len(t) < 2:
        raise ValueError(f"{path}: need at least two samples")
    t = np.asarray(t)
    steps = np.diff(t)
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not dt > 0:
        raise ValueError(f"{path}: time column must increase")
    dev = np.abs(steps - dt) / dt
    if dev.max() > rtol:
        bad = int(np.argmax(dev))
        raise ValueError(
            f"{path}: non-uniform sampling (step {bad + 1} deviates {dev[bad]:.2e} relative)"
        )
    return GroundMotion(dt, np.asarray(a) * scale, scale)


def save_ground_motion(path, motion: GroundMotion, header: str = "") -> None:
    t = np.arange(motion.n_samples) * motion.dt
    with open(path, "w", encoding="utf-8") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        fh.write("# time_s, accel_m_s2\n")
        for ti, ai in zip(t, motion.accel):
            fh.write(f"{ti:.10g}, {ai:.17g}\n")


# surrogate records: Kanai-Tajimi filtered white noise under a trapezoid-exponential envelope
SURROGATES = {
    # name: (file, duration s, sampling Hz, seed, ground frequency rad/s, ground damping)
    "elcentro": ("surrogate_elcentro_60hz.txt", 40.0, 60.0, 1940, 15.0, 0.6),
    "sylmar": ("surrogate_sylmar_50hz.txt", 10.0, 50.0, 1994, 12.0, 0.4),
}


def make_surrogate(duration, fs, seed, omega_g=15.0, zeta_g=0.6, rise=2.0, decay=0.25):
    """Seeded filtered white noise with a build-up, strong phase and decay.

    Returns the unit-RMS-over-strong-phase acceleration at ``fs`` Hz,
    ``round(duration * fs) + 1`` samples starting at ``t = 0``.
    """
    n = int(round(duration * fs)) + 1
    dt = 1.0 / fs
    t = np.arange(n) * dt
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n) / np.sqrt(dt)
    sys_ = signal.lti([2 * zeta_g * omega_g, omega_g**2], [1.0, 2 * zeta_g * omega_g, omega_g**2])
    _, a, _ = signal.lsim(sys_, w, t)
    strong = 0.35 * duration
    env = np.where(t < rise, (t / rise) ** 2, 1.0)
    env = np.where(t > rise + strong, np.exp(-decay * (t - rise - strong)), env)
    a = a * env
    a -= np.linspace(a[0], a[-1], n)
    core = a[(t >= rise) & (t <= rise + strong)]
    return a / np.sqrt(np.mean(core**2))


def surrogate_motion(name: str = "elcentro", scale: float = 1.0) -> GroundMotion:
    """Bundled surrogate record scaled by ``scale``.

    The stored full-scale amplitudes are calibrated so that the reference
    structures respond in the same regime as under the historical records.
    """
    if name not in SURROGATES:
        raise ValueError(f"unknown surrogate {name!r}; choose from {sorted(SURROGATES)}")
    ref = resources.files("subsim_abc") / "data" / SURROGATES[name][0]
    with resources.as_file(ref) as p:
        return load_ground_motion(p, scale)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def rms_noise_sigma(signal_values, ratio: float) -> float:
    """Noise standard deviation giving the RMS noise-to-signal ``ratio``."""
    x = np.asarray(signal_values, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("signal is empty")
    if not ratio > 0:
        raise ValueError("ratio must be > 0")
    rms = float(np.sqrt(np.mean(x * x)))
    if rms == 0:
        raise ValueError("signal is identically zero; RMS noise level undefined")
    return ratio * rms


def synth_dataset(
    model: ModelClassSpec,
    theta_true,
    motion: Optional[GroundMotion],
    ratio: float,
    seed: int,
    n_channels: int = 1,
    out_dt: Optional[float] = None,
    n_steps: Optional[int] = None,
):
    """Noisy synthetic observations of ``model`` at ``theta_true``.

    Returns ``(dataset, sigma)``. ``ratio = 0`` yields the noise-free response.
    Models without an input (``motion=None``) need ``n_steps``.
    """
    theta = np.asarray(theta_true, dtype=float)
    if theta.shape != (model.n_params,):
        raise ValueError(f"theta_true must have {model.n_params} entries")
    if not np.isfinite(model.prior.logpdf(theta)):
        raise ValueError("theta_true lies outside the prior support")
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    if motion is None:
        if n_steps is None:
            raise ValueError("n_steps is required without a ground motion")
        n_out = int(n_steps)
    else:
        n_out = motion.n_outputs(out_dt)
    probe = Dataset(np.zeros(n_out * n_channels), n_channels, motion)
    g = model.deterministic(theta, probe)
    sigma = 0.0 if ratio == 0 else rms_noise_sigma(g, ratio)
    rng = np.random.default_rng(seed)
    z = g + sigma * rng.standard_normal(g.size)
    return Dataset(z, n_channels, motion), sigma


def save_dataset(path, data: Dataset) -> None:
    """Observed outputs as text, one row per time step, one column per channel."""
    rows = data.observed.reshape(data.n_steps, data.n_channels)
    header = ["step"] + [f"ch{k + 1}" for k in range(data.n_channels)]
    write_table(path, header, np.column_stack([np.arange(1, data.n_steps + 1), rows]))


def load_dataset(path, motion: Optional[GroundMotion] = None) -> Dataset:
    header, arr = read_table(path)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError(f"{path}: expected a step column and at least one channel")
    z = arr[:, 1:]
    return Dataset(z.reshape(-1), z.shape[1], motion)


# ---------------------------------------------------------------------------
# tables and manifests
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_table(path, header, rows, comments=()) -> None:
    """Tab-separated table with a header line; floats written round-trip exact."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(v) for v in r) + "\n")


def read_table(path):
    """Read a table written by :func:`write_table`; returns ``(header, array)``."""
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.rstrip("\n")
            if not s.strip() or s.startswith("#"):
                continue
            parts = s.split("\t")
            if header is None:
                header = parts
                continue
            if len(parts) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    if header is None:
        raise ValueError(f"{path}: empty table")
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_samples(path, run: SubSimRun) -> None:
    """All level samples: level, chain, parameters, discrepancy, error SD."""
    header = ["level", "chain", *run.param_names, "discrepancy", "sigma_v"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for lv in run.levels:
            sv = np.sqrt(lv.sigma2)
            for i in range(lv.n_samples):
                vals = [str(lv.index), str(int(lv.chain[i]))]
                vals += [repr(float(v)) for v in lv.theta[i]]
                vals += [repr(float(lv.discrepancy[i])), repr(float(sv[i]))]
                fh.write("\t".join(vals) + "\n")


def write_manifest(path, entries: dict) -> None:
    """``key = value`` lines; non-string values are JSON encoded."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in entries.items():
            if "=" in k or "\n" in k:
                raise ValueError(f"invalid manifest key {k!r}")
            val = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
            if "\n" in val:
                raise ValueError(f"manifest value for {k!r} spans lines")
            fh.write(f"{k} = {val}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.rstrip("\n")
            if not s.strip() or s.startswith("#"):
                continue
            if " = " not in s:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            k, v = s.split(" = ", 1)
            try:
                out[k] = json.loads(v)
            except json.JSONDecodeError:
                out[k] = v
    return out


# ---------------------------------------------------------------------------
# run container
# ---------------------------------------------------------------------------

MAGIC = b"SUBSIMRUN\x00"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<10sI32sQ")

_LEVEL_ARRAYS = ("theta", "discrepancy", "sigma2", "chain", "step", "proposal_scales")
_LEVEL_SCALARS = ("index", "tolerance", "conditioning", "mean_accept", "n_simulations")


def _run_payload(run: SubSimRun) -> bytes:
    meta = {
        "model": run.model,
        "config": run.config.to_dict(),
        "stop_reason": run.stop_reason,
        "param_names": list(run.param_names),
        "data_digest": run.data_digest,
        "data_size": int(run.data_size),
        "n_levels": len(run.levels),
        "has_latent": [lv.latent is not None for lv in run.levels],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for j, lv in enumerate(run.levels):
        for name in _LEVEL_ARRAYS:
            arrays[f"L{j}_{name}"] = np.asarray(getattr(lv, name))
        arrays[f"L{j}_scalars"] = np.array(
            [float(getattr(lv, name)) for name in _LEVEL_SCALARS], dtype=np.float64
        )
        if lv.latent is not None:
            arrays[f"L{j}_latent"] = lv.latent
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def save_run(run: SubSimRun, path) -> None:
    """Write ``run`` to a versioned, checksummed binary container."""
    payload = _run_payload(run)
    digest = hashlib.sha256(payload).digest()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, digest, len(payload)))
        fh.write(payload)
    tmp.replace(path)


def load_run(path) -> SubSimRun:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size:
        raise RunFileError(f"{path}: truncated header")
    magic, version, digest, length = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise RunFileError(f"{path}: not a run file")
    if version != FORMAT_VERSION:
        raise RunFileError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = blob[_HEAD.size :]
    if len(payload) != length:
        raise RunFileError(f"{path}: truncated payload ({len(payload)} of {length} bytes)")
    if hashlib.sha256(payload).digest() != digest:
        raise RunFileError(f"{path}: checksum mismatch")
    with np.load(_io.BytesIO(payload), allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        levels = []
        for j in range(meta["n_levels"]):
            sc = z[f"L{j}_scalars"]
            kw = dict(zip(_LEVEL_SCALARS, sc.tolist()))
            kw["index"] = int(kw["index"])
            kw["n_simulations"] = int(kw["n_simulations"])
            for name in _LEVEL_ARRAYS:
                kw[name] = z[f"L{j}_{name}"]
            kw["latent"] = z[f"L{j}_latent"] if meta["has_latent"][j] else None
            levels.append(LevelRecord(**kw))
    return SubSimRun(
        model=meta["model"],
        config=SubSimConfig(**meta["config"]),
        levels=levels,
        stop_reason=meta["stop_reason"],
        param_names=tuple(meta["param_names"]),
        data_digest=meta["data_digest"],
        data_size=meta["data_size"],
    )
