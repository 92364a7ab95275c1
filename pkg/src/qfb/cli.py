"""Command-line front end: flat-file configs, simulation modes, CSV/JSON outputs.

Configs are flat ``key=value`` text files (``#`` starts a comment);
command-line flags override file keys.  Angles accept plain radians or a
``0.3pi`` suffix; times are in us, rates in rad/us; ``inf`` is a valid
T1/T2.  Outputs are deterministic byte-for-byte for a fixed config and
seed: floats are printed with 9 significant digits and JSON keys are
sorted.

Modes
-----
trajectory    one stochastic trajectory          -> mean.csv
ensemble      ensemble mean curve                -> mean.csv
design-table  controller constants vs angle      -> design.csv
histogram     steady-state histogram + peaks     -> hist.csv, peaks.json
sweep-angle   peak/mean vs target angle          -> design.csv, peaks.json
sweep-filter  degradation vs filter constant     -> peaks.json
sweep-delay   degradation vs feedback delay      -> peaks.json

Every mode also writes run_meta.json with the fully resolved config,
package version, and renormalization count.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .chain import FeedbackLaw
from .design import design_ideal, design_nonideal
from .engine import SteadySampling, TrajectoryConfig, run_ensemble, run_trajectory
from .model import BlochState, ModelParams
from .stats import DEFAULT_BINS, summarize, sweep_chain, sweep_targets

__all__ = ["RunConfig", "parse_config", "serialize_config", "execute", "main"]

MODES = (
    "trajectory",
    "ensemble",
    "design-table",
    "histogram",
    "sweep-angle",
    "sweep-filter",
    "sweep-delay",
)


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration key."""


@dataclass
class RunConfig:
    """Fully resolved run configuration (defaults: the lossy-qubit reference set)."""

    mode: str = "ensemble"
    tau_m: float = 0.2
    dt: float = 0.0005
    t1: float = 60.0
    t2: float = 40.0
    eta: float = 0.41
    theta_target: float | None = None
    delta0: float | None = None
    delta1: float | None = None
    ts: float = 0.0
    td: float = 0.0
    theta_init: float = 0.1 * math.pi
    r_init: float = 1.0
    total_time: float = 2.0
    record_stride: int = 40
    n_traj: int = 10000
    seed: int = 1
    burn_in: float | None = None
    sample_every: float | None = None
    n_bins: int = DEFAULT_BINS
    sweep_values: str = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
    theta_list: str = "0.1pi,0.2pi,0.3pi,0.4pi,0.5pi,0.6pi,0.7pi,0.8pi,0.9pi"
    threads: int = 0
    out: str = "."

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode: unknown mode {self.mode!r}; choose from {MODES}")
        explicit = self.delta0 is not None or self.delta1 is not None
        if explicit and (self.delta0 is None or self.delta1 is None):
            raise ConfigError("delta0/delta1: both must be given when either is")
        if explicit and self.theta_target is not None:
            raise ConfigError(
                "theta_target: give either explicit delta0/delta1 or a target "
                "angle with auto-design, not both"
            )
        if not explicit and self.theta_target is None and self.mode in (
            "trajectory", "ensemble", "histogram",
        ):
            raise ConfigError(f"theta_target: required for mode {self.mode}")
        try:
            self.model_params()
        except ValueError as exc:
            raise ConfigError(f"tau_m/dt/t1/t2/eta: {exc}") from exc
        if self.n_traj < 1:
            raise ConfigError(f"n_traj: must be >= 1, got {self.n_traj}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed: must fit in an unsigned 64-bit integer")
        if self.n_bins < 2:
            raise ConfigError(f"n_bins: must be >= 2, got {self.n_bins}")
        if self.ts < 0 or self.td < 0:
            raise ConfigError("ts/td: must be non-negative")
        if self.r_init <= 0 or self.r_init > 1:
            raise ConfigError(f"r_init: must lie in (0, 1], got {self.r_init}")
        return self

    def model_params(self) -> ModelParams:
        return ModelParams(
            tau_m=self.tau_m, dt=self.dt, T1=self.t1, T2=self.t2, eta=self.eta
        )

    def feedback_law(self) -> tuple[FeedbackLaw, float | None]:
        """Resolved law plus the designed target radius (None when explicit)."""
        if self.delta0 is not None:
            return FeedbackLaw(self.delta0, self.delta1, Ts=self.ts, Td=self.td), None
        params = self.model_params()
        if math.isinf(self.t1) and math.isinf(self.t2) and self.eta == 1.0:
            return design_ideal(self.theta_target, self.tau_m, Ts=self.ts, Td=self.td), 1.0
        law, r_s = design_nonideal(self.theta_target, params, Ts=self.ts, Td=self.td)
        return law, r_s

    def sampling(self) -> SteadySampling:
        burn = 10.0 * self.tau_m if self.burn_in is None else self.burn_in
        stride = self.tau_m if self.sample_every is None else self.sample_every
        return SteadySampling(burn_in=burn, stride=stride)

    def initial_state(self) -> BlochState:
        return BlochState.from_polar(self.theta_init, self.r_init)

    def resolved_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("QFB_THREADS", "")
        if env.strip():
            try:
                n = int(env)
            except ValueError as exc:
                raise ConfigError(f"QFB_THREADS: not an integer: {env!r}") from exc
            if n > 0:
                return n
        return 1


_FLOAT_KEYS = {
    "tau_m", "dt", "t1", "t2", "eta", "delta0", "delta1", "ts", "td",
    "theta_target", "theta_init", "r_init", "total_time", "burn_in",
    "sample_every",
}
_INT_KEYS = {"record_stride", "n_traj", "seed", "n_bins", "threads"}
_STR_KEYS = {"mode", "sweep_values", "theta_list", "out"}
_ANGLE_KEYS = {"theta_target", "theta_init"}
_OPTIONAL_KEYS = {"theta_target", "delta0", "delta1", "burn_in", "sample_every"}


def parse_angle(text: str) -> float:
    """Radians, with an optional 'pi' suffix: '0.3pi' -> 0.3*pi."""
    text = text.strip().lower()
    if text.endswith("pi"):
        return float(text[:-2] or "1") * math.pi
    return float(text)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _ANGLE_KEYS:
        return parse_angle(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _INT_KEYS:
        value = int(raw)
        return value
    return raw


def parse_config(
    path: str | Path | None = None, overrides: dict | None = None
) -> RunConfig:
    """Build a validated RunConfig from a key=value file plus overrides.

    Unknown keys, malformed values, and range violations raise
    ConfigError naming the offending key.
    """
    known = {f.name for f in fields(RunConfig)}
    cfg = RunConfig()
    merged: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            merged[key.strip()] = raw.strip()
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    for key, raw in merged.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key")
        if isinstance(raw, str) and raw.lower() in ("none", "") and key in _OPTIONAL_KEYS:
            setattr(cfg, key, None)
            continue
        try:
            value = _parse_value(key, raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse value {raw!r}: {exc}") from exc
        setattr(cfg, key, value)
    return cfg.validate()


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Flat key=value text that parses back to an identical config.

    Floats are written with repr (exact round-trip); the 9-significant-
    digit convention applies to result files, not to configs.
    """
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        lines.append(f"{f.name}={value!r}" if isinstance(value, float) else f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def _json_ready(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(_json_ready(payload), sort_keys=True, indent=2) + "\n"
    )


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _peak_payload(row) -> dict:
    return {
        "value": row.value,
        "theta_s": row.theta_s,
        "r_target": row.r_target,
        "delta0": row.delta0,
        "delta1": row.delta1,
        "theta_p": row.theta_p,
        "r_p": row.r_p,
        "r_e": row.r_e,
        "sigma": row.sigma,
        "n_lobes": row.n_lobes,
    }


def _sweep_values_us(cfg: RunConfig) -> list[float]:
    try:
        return [float(v) * cfg.tau_m for v in cfg.sweep_values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"sweep_values: {exc}") from exc


def _theta_list(cfg: RunConfig) -> list[float]:
    """Comma list of angles, or a range 'A..B/N' (N evenly spaced, inclusive)."""
    text = cfg.theta_list
    try:
        if ".." in text:
            span, _, count = text.partition("/")
            lo, _, hi = span.partition("..")
            n = int(count)
            if n < 2:
                raise ValueError("range needs at least 2 points")
            a, b = parse_angle(lo), parse_angle(hi)
            return [a + (b - a) * k / (n - 1) for k in range(n)]
        return [parse_angle(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"theta_list: {exc}") from exc


def execute(cfg: RunConfig) -> list[Path]:
    """Run one mode and write its outputs; returns the written paths.

    Raises on any failure after removing partially written files.
    """
    cfg.validate()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        written.extend(_execute_inner(cfg, out_dir))
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


def _execute_inner(cfg: RunConfig, out_dir: Path) -> list[Path]:
    params = cfg.model_params()
    threads = cfg.resolved_threads()
    written: list[Path] = []
    meta: dict = {
        "config": {
            f.name: getattr(cfg, f.name)
            for f in fields(RunConfig)
            if getattr(cfg, f.name) is not None
        },
        "version": __version__,
        "renorm_count": 0,
    }

    def mean_csv(times, xyz) -> None:
        path = out_dir / "mean.csv"
        rows = (
            (t, row[0], row[1], row[2]) for t, row in zip(times, xyz)
        )
        _write_csv(path, ["t", "x", "y", "z"], rows)
        written.append(path)

    if cfg.mode == "design-table":
        rows = []
        ideal = math.isinf(cfg.t1) and math.isinf(cfg.t2) and cfg.eta == 1.0
        for theta in _theta_list(cfg):
            if ideal:
                law = design_ideal(theta, cfg.tau_m)
                r_s = 1.0
            else:
                law, r_s = design_nonideal(theta, params)
            rows.append((theta, law.delta0, law.delta1, r_s))
        path = out_dir / "design.csv"
        _write_csv(path, ["theta", "delta0", "delta1", "r_max"], rows)
        written.append(path)

    elif cfg.mode in ("trajectory", "ensemble"):
        law, r_target = cfg.feedback_law()
        run_cfg = TrajectoryConfig(
            initial=cfg.initial_state(),
            total_time=cfg.total_time,
            record_stride=cfg.record_stride,
            seed=cfg.seed,
        )
        if cfg.mode == "trajectory":
            record = run_trajectory(run_cfg, params, law)
            mean_csv(record.times, record.xyz)
            meta["renorm_count"] = record.renorm_count
        else:
            result = run_ensemble(cfg.n_traj, run_cfg, params, law, threads=threads)
            mean_csv(result.times, result.mean_xyz)
            meta["renorm_count"] = result.renorm_count
        meta["law"] = {
            "delta0": law.delta0, "delta1": law.delta1, "Ts": law.Ts, "Td": law.Td,
            "r_target": r_target,
        }

    elif cfg.mode == "histogram":
        law, r_target = cfg.feedback_law()
        sampling = cfg.sampling()
        run_cfg = TrajectoryConfig(
            initial=cfg.initial_state(),
            total_time=cfg.total_time,
            record_stride=cfg.record_stride,
            seed=cfg.seed,
        )
        result = run_ensemble(
            cfg.n_traj, run_cfg, params, law, threads=threads, steady=sampling
        )
        summary = summarize(result, n_bins=cfg.n_bins)
        grid = summary.histogram
        path = out_dir / "hist.csv"
        iy, iz = np.nonzero(grid.counts)
        rows = (
            (grid.y_centers[i], grid.z_centers[j], int(grid.counts[i, j]))
            for i, j in zip(iy, iz)
        )
        _write_csv(path, ["y_bin", "z_bin", "count"], rows)
        written.append(path)
        peak = summary.peak
        payload = {
            "theta_p": peak.theta_p,
            "r_p": peak.r_p,
            "sigma": peak.sigma,
            "sigma_rms": peak.sigma_rms,
            "r_e": summary.r_mean,
            "n_samples": summary.n_steady_samples,
            "lobes": [
                {"y": l.y, "z": l.z, "mass_fraction": l.mass_fraction}
                for l in peak.lobes
            ],
            "tie_bins": [list(b) for b in peak.tie_bins],
            "law": {
                "delta0": law.delta0, "delta1": law.delta1,
                "Ts": law.Ts, "Td": law.Td, "r_target": r_target,
            },
        }
        path = out_dir / "peaks.json"
        _write_json(path, payload)
        written.append(path)
        meta["renorm_count"] = result.renorm_count

    elif cfg.mode == "sweep-angle":
        thetas = _theta_list(cfg)
        rows = sweep_targets(
            thetas, params,
            n_traj=cfg.n_traj, total_time=cfg.total_time,
            seed=cfg.seed, threads=threads, n_bins=cfg.n_bins,
        )
        path = out_dir / "design.csv"
        _write_csv(
            path,
            ["theta", "delta0", "delta1", "r_max"],
            ((r.theta_s, r.delta0, r.delta1, r.r_target) for r in rows),
        )
        written.append(path)
        path = out_dir / "peaks.json"
        _write_json(path, {"sweep": "theta_s", "rows": [_peak_payload(r) for r in rows]})
        written.append(path)

    elif cfg.mode in ("sweep-filter", "sweep-delay"):
        which = "Ts" if cfg.mode == "sweep-filter" else "Td"
        if cfg.theta_target is None:
            raise ConfigError(f"theta_target: required for mode {cfg.mode}")
        rows = sweep_chain(
            cfg.theta_target, _sweep_values_us(cfg), which, params,
            n_traj=cfg.n_traj, total_time=cfg.total_time,
            seed=cfg.seed, threads=threads, n_bins=cfg.n_bins,
        )
        path = out_dir / "peaks.json"
        _write_json(path, {"sweep": which, "rows": [_peak_payload(r) for r in rows]})
        written.append(path)

    meta_path = out_dir / "run_meta.json"
    _write_json(meta_path, meta)
    written.append(meta_path)
    return written


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qfb",
        description=(
            "Simulate and design linear measurement feedback for a "
            "dispersively monitored qubit (times in us, rates in rad/us)."
        ),
    )
    p.add_argument("--config", type=str, default=None, help="key=value config file")
    p.add_argument("--mode", type=str, choices=MODES, default=None)
    p.add_argument("--theta-target", type=str, default=None,
                   help="target polar angle, radians or e.g. 0.3pi")
    p.add_argument("--theta-init", type=str, default=None)
    p.add_argument("--r-init", type=float, default=None)
    p.add_argument("--tau-m", type=float, default=None, help="collapse time (us)")
    p.add_argument("--dt", type=float, default=None, help="time step (us)")
    p.add_argument("--t1", type=str, default=None, help="relaxation time (us) or inf")
    p.add_argument("--t2", type=str, default=None, help="dephasing time (us) or inf")
    p.add_argument("--eta", type=float, default=None, help="quantum efficiency")
    p.add_argument("--delta0", type=float, default=None, help="constant drive (rad/us)")
    p.add_argument("--delta1", type=float, default=None, help="feedback gain (rad/us)")
    p.add_argument("--ts", type=float, default=None, help="filter constant (us)")
    p.add_argument("--td", type=float, default=None, help="feedback delay (us)")
    p.add_argument("--total-time", type=float, default=None)
    p.add_argument("--record-stride", type=int, default=None)
    p.add_argument("--n-traj", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--burn-in", type=float, default=None)
    p.add_argument("--sample-every", type=float, default=None)
    p.add_argument("--n-bins", type=int, default=None)
    p.add_argument("--sweep-values", type=str, default=None,
                   help="comma list in units of tau_m (chain sweeps)")
    p.add_argument("--theta-list", type=str, default=None,
                   help="comma list of angles (design table / angle sweep)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap; results do not depend on it (env: QFB_THREADS)")
    p.add_argument("--out", type=str, default=None, help="output directory")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        "mode": args.mode,
        "theta_target": args.theta_target,
        "theta_init": args.theta_init,
        "r_init": args.r_init,
        "tau_m": args.tau_m,
        "dt": args.dt,
        "t1": args.t1,
        "t2": args.t2,
        "eta": args.eta,
        "delta0": args.delta0,
        "delta1": args.delta1,
        "ts": args.ts,
        "td": args.td,
        "total_time": args.total_time,
        "record_stride": args.record_stride,
        "n_traj": args.n_traj,
        "seed": args.seed,
        "burn_in": args.burn_in,
        "sample_every": args.sample_every,
        "n_bins": args.n_bins,
        "sweep_values": args.sweep_values,
        "theta_list": args.theta_list,
        "threads": args.threads,
        "out": args.out,
    }
    try:
        cfg = parse_config(args.config, overrides)
        written = execute(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
