"""Experiment runner.

    python -m qsdchaos --config fig1b_qsd --output out/ [--jobs N] [--seed S]

``--config`` takes a JSON file or the name of a bundled configuration (see
``--list``). Each run writes ``<name>.csv`` followed by
``<name>.manifest.json``; a CSV without a manifest is an incomplete run.
The exit status is 0 iff every validity flag passes, 1 if a flag fails and
2 on errors, which are reported on stderr as a JSON object with an
``error_class`` field.

Ensemble runs with ``checkpoint_times`` also write ``<name>.rho_<k>.bin``:
a little-endian uint64 dimension ``d`` followed by the ``d*d`` entries of
the mean density matrix in row-major order, each as two little-endian
float64 values (real, imaginary).
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import struct
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .classical import integrate_classical, largest_lyapunov, reference_state
from .errors import ConfigError, QSDChaosError
from .fock import embed, initial_state, build_hamiltonian, position_op
from .observables import ModeMoments, classicalized_energy, divergence, g2
from .oracle import MAX_ORACLE_DIM, integrate_lindblad, pure_density
from .params import SystemParams
from .qsd import (
    LEAKAGE_THRESHOLD,
    MAX_DENSITY_DIM,
    SCHEMES,
    active_lindblads,
    default_dt,
    default_stride,
    run_ensemble,
    run_trajectory,
)

OUTPUT_ENV = "QSDCHAOS_OUTPUT_DIR"
DEFAULT_OUTPUT = "qsdchaos-output"
MODES = ("classical", "qsd", "ensemble", "oracle", "compare", "lyapunov")
CROSSING_THRESHOLDS = (0.05, 0.1, 0.2)

CLASSICAL_COLUMNS = ["t", "q1", "p1", "q2", "p2", "q3", "p3", "energy"]
QUANTUM_COLUMNS = (
    ["t"]
    + [f"{name}{i}" for i in (1, 2, 3) for name in ("q", "p", "dq", "dp", "n", "g2_")]
    + ["energy", "norm", "leakage"]
)
ENSEMBLE_COLUMNS = ["traj"] + QUANTUM_COLUMNS
COMPARE_COLUMNS = ["t", "rms_error"] + [f"first_crossing_{th:g}" for th in CROSSING_THRESHOLDS]
LYAPUNOV_COLUMNS = ["t", "lambda"]

_KEYS = {
    "mode", "name", "beta", "kappa", "n_max", "dt", "t_end", "output_stride", "seed",
    "measured_modes", "n_traj", "checkpoint_times", "classical_dt", "renorm_interval",
    "scheme", "output",
}


@dataclass(frozen=True)
class RunConfig:
    mode: str
    params: SystemParams
    name: str = ""
    measured_modes: tuple = (1, 2, 3)
    n_traj: int = 1
    checkpoint_times: tuple = ()
    classical_dt: float = 1e-3
    renorm_interval: float = 1.0
    scheme: str = "rk4"
    output: str = ""

    def to_dict(self):
        p = self.params
        return {
            "mode": self.mode,
            "name": self.name,
            "beta": p.beta,
            "kappa": list(p.kappa),
            "n_max": p.n_max,
            "dt": p.dt,
            "t_end": p.t_end,
            "output_stride": p.output_stride,
            "seed": p.seed,
            "measured_modes": list(self.measured_modes),
            "n_traj": self.n_traj,
            "checkpoint_times": list(self.checkpoint_times),
            "classical_dt": self.classical_dt,
            "renorm_interval": self.renorm_interval,
            "scheme": self.scheme,
            "output": self.output,
        }


def serialize(config: RunConfig):
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)


def parse_config(text):
    """Validate a JSON run configuration and apply defaults.

    Defaults: beta 0.25 (1.0 for classical and lyapunov runs), kappa 0.1 on
    every mode, n_max 24, dt from the step-size rule, t_end 20 (2000 for
    lyapunov), classical_dt 1e-3 (0.05 for lyapunov).
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {MODES}, got {mode!r}")
    classical_like = mode in ("classical", "lyapunov")

    kappa = raw.get("kappa", 0.1)
    if isinstance(kappa, (int, float)):
        kappa = [kappa] * 3
    if not isinstance(kappa, list) or len(kappa) != 3:
        raise ConfigError("kappa: expected a number or a list of three numbers")

    try:
        params = SystemParams(
            beta=float(raw.get("beta", 1.0 if classical_like else 0.25)),
            kappa=tuple(float(k) for k in kappa),
            n_max=raw.get("n_max", 24),
            dt=None if raw.get("dt") is None else float(raw["dt"]),
            t_end=float(raw.get("t_end", 2000.0 if mode == "lyapunov" else 20.0)),
            output_stride=raw.get("output_stride"),
            seed=int(raw.get("seed", 0)),
        )
    except (QSDChaosError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid system parameters: {exc}") from None

    modes = raw.get("measured_modes", [1, 2, 3])
    if not isinstance(modes, list) or not modes or any(m not in (1, 2, 3) for m in modes):
        raise ConfigError("measured_modes: expected a non-empty list drawn from 1, 2, 3")
    if len(set(modes)) != len(modes):
        raise ConfigError("measured_modes: duplicate entries")

    if mode == "ensemble" and "n_traj" not in raw:
        raise ConfigError("n_traj: required for ensemble mode")
    n_traj = raw.get("n_traj", 1)
    if not isinstance(n_traj, int) or n_traj < 1:
        raise ConfigError("n_traj: expected a positive integer")

    checkpoints = raw.get("checkpoint_times", [])
    if checkpoints and mode not in ("ensemble", "oracle"):
        raise ConfigError("checkpoint_times: only valid for ensemble and oracle modes")
    if mode == "ensemble" and checkpoints and params.dim > MAX_DENSITY_DIM:
        raise ConfigError(
            f"checkpoint_times: density accumulation needs n_max**3 <= {MAX_DENSITY_DIM}"
        )
    if mode == "oracle" and params.dim > MAX_ORACLE_DIM:
        raise ConfigError(f"n_max: oracle mode needs n_max**3 <= {MAX_ORACLE_DIM}")
    if any(not 0 <= t <= params.t_end for t in checkpoints):
        raise ConfigError("checkpoint_times: every entry must lie in [0, t_end]")

    scheme = raw.get("scheme", "rk4")
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme: expected one of {SCHEMES}")
    classical_dt = float(raw.get("classical_dt", 0.05 if mode == "lyapunov" else 1e-3))
    renorm = float(raw.get("renorm_interval", 1.0))
    if classical_dt <= 0 or renorm <= 0:
        raise ConfigError("classical_dt and renorm_interval must be positive")

    return RunConfig(
        mode=mode,
        params=params,
        name=str(raw.get("name") or mode),
        measured_modes=tuple(modes),
        n_traj=n_traj,
        checkpoint_times=tuple(float(t) for t in checkpoints),
        classical_dt=classical_dt,
        renorm_interval=renorm,
        scheme=scheme,
        output=str(raw.get("output", "")),
    )


def bundled_configs():
    root = resources.files("qsdchaos") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref):
    """Parse a config file path or the name of a bundled config."""
    path = Path(ref)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"))
    name = ref[:-5] if ref.endswith(".json") else ref
    if name in bundled_configs():
        text = (resources.files("qsdchaos") / "configs" / f"{name}.json").read_text(encoding="utf-8")
        return parse_config(text)
    raise ConfigError(f"no config file or bundled config named {ref!r}")


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return header, data


def write_checkpoint(path, rho):
    rho = np.ascontiguousarray(rho, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", rho.shape[0]))
        fh.write(rho.tobytes(order="C"))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        (dim,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<c16")
    return data.reshape(dim, dim)


def quantum_rows(record):
    for k, t in enumerate(record.times):
        row = [t]
        for i in range(3):
            row += [record.q[k, i], record.p[k, i], record.dq[k, i], record.dp[k, i],
                    record.n[k, i], record.g2[k, i]]
        row += [record.energy[k], record.norm[k], record.leakage[k].max()]
        yield row


def _run_classical(config):
    p = config.params
    traj = integrate_classical(
        reference_state(p.beta), p.beta, p.t_end, config.classical_dt,
        stride=p.output_stride or default_stride(config.classical_dt),
    )
    rows = (np.r_[t, s[[0, 3, 1, 4, 2, 5]], e] for t, s, e in zip(traj.times, traj.states, traj.energies))
    summary = {"relative_energy_drift": traj.relative_energy_drift, "n_rows": len(traj.times)}
    return CLASSICAL_COLUMNS, rows, {}, summary, {}


def _record_flags(records):
    return {
        "norm_valid": all(r.norm_valid for r in records),
        "truncation_suspect": any(r.truncation_suspect for r in records),
    }


def _run_qsd(config):
    rec = run_trajectory(config.params, config.measured_modes, scheme=config.scheme)
    summary = {
        "dt": rec.dt,
        "max_norm_deviation": rec.max_norm_deviation,
        "max_leakage": float(rec.leakage.max()),
        "closed_system": rec.closed_system,
        "n_rows": len(rec.times),
    }
    return QUANTUM_COLUMNS, quantum_rows(rec), _record_flags([rec]), summary, {}


def _run_ensemble(config, jobs):
    res = run_ensemble(
        config.params, config.measured_modes, config.n_traj,
        checkpoint_times=config.checkpoint_times, jobs=jobs, scheme=config.scheme,
    )
    rows = ([k] + row for k, rec in enumerate(res.records) for row in quantum_rows(rec))
    blobs = {f"rho_{k}.bin": rho for k, rho in enumerate(res.mean_density)}
    summary = {
        "dt": res.records[0].dt,
        "n_traj": config.n_traj,
        "checkpoint_times": list(res.checkpoint_times),
        "checkpoint_purity": [res.purity(k) for k in range(len(res.mean_density))],
        "mean_q_final": np.mean([r.q[-1] for r in res.records], axis=0).tolist(),
    }
    return ENSEMBLE_COLUMNS, rows, _record_flags(res.records), summary, blobs


def _partial_trace(rho, mode, n_max):
    t = rho.reshape((n_max,) * 6)
    axes = [i for i in range(3) if i != mode - 1]
    for ax in sorted(axes, reverse=True):
        t = np.trace(t, axis1=ax, axis2=ax + t.ndim // 2)
    return t


def _run_oracle(config):
    p = config.params
    h = build_hamiltonian(p)
    lindblads = active_lindblads(p, config.measured_modes)
    dt = p.dt or default_dt(p, h, config.measured_modes, config.scheme)
    stride = p.output_stride or default_stride(dt)
    n_steps = int(round(p.t_end / dt))
    oracle_dt = dt / 10
    grid = [k * dt for k in range(0, n_steps + 1, stride)]
    times, rhos = integrate_lindblad(pure_density(initial_state(p)), h, lindblads, oracle_dt, p.t_end, grid)
    moments = ModeMoments(p.n_max)
    rows = []
    max_leak = 0.0
    for t, rho in zip(times, rhos):
        obs = np.array([moments.from_reduced(_partial_trace(rho, m, p.n_max)) for m in (1, 2, 3)])
        q, pm, q2, p2, n, n2, leak = obs.T
        gg = g2(n, n2)
        row = [t]
        for i in range(3):
            row += [q[i], pm[i], math.sqrt(max(q2[i] - q[i] ** 2, 0)), math.sqrt(max(p2[i] - pm[i] ** 2, 0)), n[i], gg[i]]
        row += [classicalized_energy(q, pm, p.beta), float(np.trace(rho).real), leak.max()]
        max_leak = max(max_leak, leak.max())
        rows.append(row)
    flags = {"truncation_suspect": bool(max_leak >= LEAKAGE_THRESHOLD)}
    summary = {"dt": oracle_dt, "max_leakage": float(max_leak), "n_rows": len(rows)}
    return QUANTUM_COLUMNS, rows, flags, summary, {}


def _run_compare(config):
    p = config.params
    rec = run_trajectory(p, config.measured_modes, scheme=config.scheme)
    traj = integrate_classical(reference_state(1.0), 1.0, p.t_end, config.classical_dt,
                               stride=max(1, int(round(rec.dt / config.classical_dt))))
    report = divergence(traj, rec, p.beta)
    crossings = [report.first_crossing_time(th) for th in CROSSING_THRESHOLDS]
    rows = ([t, e] + crossings for t, e in zip(report.times, report.rms_error))
    summary = {
        "first_crossing": dict(zip(map(str, CROSSING_THRESHOLDS), crossings)),
        "max_rms_error": float(report.rms_error.max()),
        "log_time_scale": report.log_time_scale,
        "log10_time_scale": report.log10_time_scale,
        "dt": rec.dt,
    }
    return COMPARE_COLUMNS, rows, _record_flags([rec]), summary, {}


def _run_lyapunov(config):
    p = config.params
    res = largest_lyapunov(reference_state(p.beta), p.beta, p.t_end, config.classical_dt, config.renorm_interval)
    rows = zip(res.times, res.running)
    summary = {"lyapunov_exponent": res.exponent, "positive": res.exponent > 0}
    return LYAPUNOV_COLUMNS, rows, {}, summary, {}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def flags_pass(flags):
    return flags.get("norm_valid", True) and not flags.get("truncation_suspect", False)


def run(config: RunConfig, output_dir=None, jobs=1):
    """Execute a run, write its CSV, checkpoints and manifest; return the exit status."""
    out = Path(output_dir or config.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    runners = {
        "classical": _run_classical,
        "qsd": _run_qsd,
        "ensemble": lambda c: _run_ensemble(c, jobs),
        "oracle": _run_oracle,
        "compare": _run_compare,
        "lyapunov": _run_lyapunov,
    }
    header, rows, flags, summary, blobs = runners[config.mode](config)
    csv_path = out / f"{config.name}.csv"
    write_csv(csv_path, header, rows)
    outputs = [csv_path.name]
    for suffix, rho in blobs.items():
        path = out / f"{config.name}.{suffix}"
        write_checkpoint(path, rho)
        outputs.append(path.name)
    manifest = {
        "config": config.to_dict(),
        "code_version": __version__,
        "seed": config.params.seed,
        "wall_time_s": time.perf_counter() - start,
        "flags": flags,
        "summary": summary,
        "outputs": outputs,
        "columns": header,
    }
    manifest_path = out / f"{config.name}.manifest.json"
    manifest_path.write_text(json.dumps(_json_safe(manifest), indent=2), encoding="utf-8")
    return 0 if flags_pass(flags) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="qsdchaos", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="JSON config file or bundled config name")
    parser.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for ensemble runs")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--list", action="store_true", help="list bundled configs and exit")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.list:
        print("\n".join(bundled_configs()))
        return 0
    try:
        if not args.config:
            raise ConfigError("--config is required")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        config = load_config(args.config)
        if args.seed is not None:
            try:
                config = dataclasses.replace(config, params=dataclasses.replace(config.params, seed=args.seed))
            except QSDChaosError as exc:
                raise ConfigError(f"seed: {exc}") from None
        return run(config, args.output, args.jobs)
    except QSDChaosError as exc:
        print(json.dumps({"error_class": exc.error_class, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
