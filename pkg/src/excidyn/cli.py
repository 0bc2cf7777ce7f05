"""Batch front door: one JSON config per run, dispatched by subcommand.

Every run reads a single config document, writes its artifacts atomically
into an output directory, and emits a run manifest (config hash, seed,
versions, input digests, wall-clock duration).  Artifacts are byte-identical
for identical (config, seed) at any worker count; the manifest records wall
time and is therefore the one file excluded from that guarantee.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ExcidynError, InvalidInputError
from .model import DensityMatrix, SiteSystem, ThermalParams, mean_hamiltonian
from . import analysis, hsr, noise, propagator, qjc, spectra

OUTPUT_DIR_ENV = "EXCIDYN_OUTPUT_DIR"

COMMANDS = ("simulate", "noise", "spectrum", "analyze", "compare")


class ConfigError(InvalidInputError):
    """Validation failure that knows which config field is at fault."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# ---------------------------------------------------------------------------
# Config access helpers
# ---------------------------------------------------------------------------

def _need(cfg: dict, field: str, kind=None):
    if field not in cfg or cfg[field] is None:
        raise ConfigError(field, "required field is missing")
    value = cfg[field]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(field, f"expected {getattr(kind, '__name__', kind)}")
    return value


def _site_index(value, n_sites: int, field: str) -> int:
    if not isinstance(value, int) or not 1 <= value <= n_sites:
        raise ConfigError(field, f"site indices are 1-based integers in [1, {n_sites}]")
    return value - 1


def _load_system(cfg: dict, inputs: dict) -> SiteSystem:
    if "system_file" in cfg and cfg["system_file"]:
        path = Path(cfg["system_file"])
        _digest_input(path, inputs)
        try:
            return SiteSystem.from_file(path)
        except OSError as exc:
            raise ConfigError("system_file", str(exc)) from exc
    if "system" in cfg and cfg["system"]:
        return SiteSystem.from_dict(_need(cfg, "system", dict))
    raise ConfigError("system", "provide 'system' inline or a 'system_file' path")


def _load_trajectory(cfg: dict, field: str, inputs: dict):
    path = Path(_need(cfg, field, str))
    _digest_input(path, inputs)
    try:
        return noise.load_trajectory_csv(path)
    except OSError as exc:
        raise ConfigError(field, str(exc)) from exc


def _fluctuations(cfg: dict, dt: float, inputs: dict):
    doc = cfg.get("fluctuations") or {"kind": "none"}
    kind = doc.get("kind", "none")
    if kind == "none":
        return noise.NoFluctuations()
    if kind == "static":
        return noise.StaticDisorder(sigma_cm1=_need(doc, "sigma_cm1"))
    if kind == "ar1":
        return noise.AR1Fluctuations(
            sigma_cm1=_need(doc, "sigma_cm1"),
            tau_fs=_need(doc, "tau_fs"),
            dt_fs=float(doc.get("dt_fs", dt)),
        )
    if kind == "recorded":
        traj = _load_trajectory(doc, "trajectory_file", inputs)
        return noise.RecordedFluctuations(
            trajectory=traj, window_fs=float(_need(doc, "window_fs"))
        )
    raise ConfigError("fluctuations.kind", f"unknown kind {kind!r}")


def _spectral_density(cfg: dict, inputs: dict):
    doc = cfg.get("spectral_density")
    if not doc:
        raise ConfigError("spectral_density", "required for the QJC method")
    kind = doc.get("kind", "drude_lorentz")
    if kind == "drude_lorentz":
        if "cutoff_time_fs" in doc:
            gamma = 1.0 / float(doc["cutoff_time_fs"])
        else:
            gamma = float(doc.get("gamma_cutoff_fs", 0.02))
        return noise.DrudeLorentzDensity(
            reorg_cm1=float(doc.get("reorg_cm1", 35.0)), gamma_cutoff_fs=gamma
        )
    if kind == "tabulated":
        path = Path(_need(doc, "file", str))
        _digest_input(path, inputs)
        return noise.load_spectral_density_csv(path)
    raise ConfigError("spectral_density.kind", f"unknown kind {kind!r}")


def _initial_state(cfg: dict, n_sites: int):
    doc = cfg.get("initial_state") or {"site": 1}
    if "site" in doc:
        return _site_index(doc["site"], n_sites, "initial_state.site")
    if "diagonal" in doc:
        diag = np.asarray(doc["diagonal"], dtype=float)
        if diag.shape != (n_sites,):
            raise ConfigError("initial_state.diagonal", f"expected {n_sites} entries")
        return DensityMatrix(np.diag(diag).astype(complex))
    if "matrix_re" in doc:
        re = np.asarray(doc["matrix_re"], dtype=float)
        im = np.asarray(doc.get("matrix_im", np.zeros_like(re)), dtype=float)
        return DensityMatrix(re + 1j * im)
    raise ConfigError("initial_state", "provide 'site', 'diagonal', or 'matrix_re'")


def _coherence_pairs(cfg: dict, n_sites: int):
    pairs = []
    for i, pair in enumerate(cfg.get("coherence_pairs", [])):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"coherence_pairs[{i}]", "expected a [m, n] pair")
        m = _site_index(pair[0], n_sites, f"coherence_pairs[{i}]")
        n = _site_index(pair[1], n_sites, f"coherence_pairs[{i}]")
        pairs.append((m, n))
    return pairs


def _omega_grid(cfg: dict, field: str = "grid"):
    doc = cfg.get(field)
    if doc is None:
        return None
    if isinstance(doc, list):
        return np.asarray(doc, dtype=float)
    try:
        lo, hi = float(doc["omega_min_cm1"]), float(doc["omega_max_cm1"])
        step = float(doc["omega_step_cm1"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(field, "expected omega_min_cm1/omega_max_cm1/omega_step_cm1") from exc
    if not (hi > lo and step > 0):
        raise ConfigError(field, "grid bounds must satisfy max > min and step > 0")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _digest_input(path: Path, inputs: dict) -> None:
    try:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read input file: {exc}") from exc
    inputs[str(path)] = digest


# ---------------------------------------------------------------------------
# Artifact emission
# ---------------------------------------------------------------------------

class RunWriter:
    """Collects artifacts for one run and writes each atomically."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.artifacts: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def emit(self, name: str, write_fn) -> Path:
        final = self.out_dir / name
        tmp = self.out_dir / (name + ".tmp")
        write_fn(tmp)
        os.replace(tmp, final)
        self.artifacts.append(name)
        return final

    def emit_json(self, name: str, payload) -> Path:
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        return self.emit(name, lambda p: Path(p).write_text(text, encoding="utf-8"))


def _write_manifest(writer: RunWriter, command, resolved_cfg, seed, inputs, started) -> None:
    canonical = json.dumps(resolved_cfg, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "excidyn": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "input_digests": inputs,
        "artifacts": list(writer.artifacts),
        "duration_s": time.time() - started,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    tmp = writer.out_dir / "run_manifest.json.tmp"
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, writer.out_dir / "run_manifest.json")


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, writer: RunWriter, inputs: dict):
    system = _load_system(cfg, inputs)
    method = cfg.get("method", "MD")
    if method not in propagator.METHODS:
        raise ConfigError("method", f"must be one of {propagator.METHODS}")
    dt = float(cfg.get("dt_fs", 1.0))
    t_total = float(_need(cfg, "t_total_fs"))
    temperature = cfg.get("temperature_K")
    pairs = _coherence_pairs(cfg, system.n_sites)
    initial = _initial_state(cfg, system.n_sites)

    if method == "HSR":
        rates = _hsr_rates(cfg, system, inputs, temperature)
        if isinstance(initial, int):
            initial = DensityMatrix.from_site(system.n_sites, initial)
        n_steps = int(round(t_total / dt))
        t_grid = np.arange(n_steps + 1) * dt
        trace = hsr.hsr_propagate(initial, mean_hamiltonian(system), rates, t_grid)
        record = None
    else:
        config = propagator.SimConfig(
            dt=dt,
            t_total=t_total,
            n_traj=int(_need(cfg, "n_traj")),
            seed=int(_need(cfg, "seed")),
            method=method,
            initial_state=initial,
            record_propagator=bool(cfg.get("record_propagator", False)),
            workers=cfg.get("workers"),
        )
        fluct = _fluctuations(cfg, dt, inputs)
        if method == "QJC":
            sd = _spectral_density(cfg, inputs)
            trace = qjc.run_ensemble_qjc(system, fluct, sd, config)
            record = None
        else:
            result = propagator.run_ensemble(system, fluct, config)
            trace, record = result.trace, result.propagator

    writer.emit("trace.csv", lambda p: propagator.write_density_trace_csv(trace, p, pairs))
    if record is not None:
        writer.emit("propagator.csv", lambda p: propagator.write_propagator_csv(record, p))
    return cfg.get("seed")


def _hsr_rates(cfg: dict, system: SiteSystem, inputs: dict, temperature) -> hsr.DephasingRates:
    doc = cfg.get("hsr") or {}
    if "rates_fs" in doc:
        rates = np.asarray(doc["rates_fs"], dtype=float)
        if rates.shape != (system.n_sites,):
            raise ConfigError("hsr.rates_fs", f"expected {system.n_sites} per-site rates")
        return hsr.DephasingRates(rates_fs=rates, temperature_K=temperature)
    if "sigma_cm1" in doc:
        sigma = np.broadcast_to(
            np.asarray(doc["sigma_cm1"], dtype=float), (system.n_sites,)
        )
        return hsr.DephasingRates.from_statistics(
            sigma, _need(doc, "tau_fs"), temperature_K=temperature
        )
    if "trajectory_file" in doc:
        traj = _load_trajectory(doc, "trajectory_file", inputs)
        return hsr.rates_from_trajectory(traj, doc.get("tau_fs"), temperature_K=temperature)
    raise ConfigError("hsr", "provide rates_fs, sigma_cm1 + tau_fs, or trajectory_file")


def cmd_noise(cfg: dict, writer: RunWriter, inputs: dict):
    mode = cfg.get("mode", "generate")
    if mode == "generate":
        n_sites = int(_need(cfg, "n_sites"))
        dt = float(_need(cfg, "dt_fs"))
        if "n_steps" in cfg:
            n_steps = int(cfg["n_steps"])
        else:
            n_steps = int(round(float(_need(cfg, "duration_fs")) / dt)) + 1
        seed = int(_need(cfg, "seed"))
        sigma = np.broadcast_to(np.asarray(_need(cfg, "sigma_cm1"), dtype=float), (n_sites,))
        tau = np.broadcast_to(np.asarray(_need(cfg, "tau_fs"), dtype=float), (n_sites,))
        mean = np.broadcast_to(np.asarray(cfg.get("mean_cm1", 0.0), dtype=float), (n_sites,))
        frames = np.empty((n_steps, n_sites))
        for m in range(n_sites):
            series = noise.ar1_generate(float(sigma[m]), float(tau[m]), dt, n_steps, seed + m)
            frames[:, m] = mean[m] + series
        traj = noise.EnergyTrajectory(dt_frame=dt, frames=frames, label=f"ar1 seed={seed}")
        writer.emit("trajectory.csv", lambda p: noise.write_trajectory_csv(traj, p))
        return seed
    if mode == "decorrelate":
        traj = _load_trajectory(cfg, "trajectory_file", inputs)
        seed = int(_need(cfg, "seed"))
        shuffled = noise.decorrelate(traj, seed)
        writer.emit("trajectory_decorrelated.csv", lambda p: noise.write_trajectory_csv(shuffled, p))
        return seed
    if mode == "correlation":
        traj = _load_trajectory(cfg, "trajectory_file", inputs)
        m = _site_index(_need(cfg, "site_m"), traj.n_sites, "site_m")
        n = _site_index(cfg.get("site_n", cfg.get("site_m")), traj.n_sites, "site_n")
        corr = noise.correlation(traj, m, n, float(_need(cfg, "max_lag_fs")))

        def write(p):
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write("lag_fs,C_cm2\n")
                for lag, value in zip(corr.lags_fs, corr.values):
                    fh.write(f"{float(lag)!r},{float(value)!r}\n")

        writer.emit("correlation.csv", write)
        return None
    if mode == "spectral_density":
        traj = _load_trajectory(cfg, "trajectory_file", inputs)
        m = _site_index(_need(cfg, "site_m"), traj.n_sites, "site_m")
        corr = noise.correlation(traj, m, m, float(_need(cfg, "max_lag_fs")))
        thermal = ThermalParams(float(_need(cfg, "temperature_K")))
        grid = _omega_grid(cfg)
        if grid is None:
            raise ConfigError("grid", "required field is missing")
        window = cfg.get("window_fs")
        sd = noise.spectral_density(corr, thermal, grid, window)
        writer.emit("spectral_density.csv", lambda p: noise.write_spectral_density_csv(sd, p))
        if cfg.get("include_raw", False):
            # unweighted transform for comparing against the tanh-reweighted J
            raw = (2.0 / (np.pi * noise.HBAR_CM_FS)) * noise.cosine_transform(corr, grid, window)

            def write(p):
                with open(p, "w", encoding="utf-8", newline="") as fh:
                    fh.write("omega_cm1,J_cm1\n")
                    for w, j in zip(grid, raw):
                        fh.write(f"{float(w)!r},{float(j)!r}\n")

            writer.emit("spectral_density_raw.csv", write)
        return None
    raise ConfigError("mode", f"unknown noise mode {mode!r}")


def cmd_spectrum(cfg: dict, writer: RunWriter, inputs: dict):
    system = _load_system(cfg, inputs)
    path = Path(_need(cfg, "propagator_file", str))
    _digest_input(path, inputs)
    record = propagator.load_propagator_csv(path)
    kind = _need(cfg, "kind", str)
    window = float(cfg.get("window_fs", spectra.DEFAULT_WINDOW_FS))
    grid = _omega_grid(cfg)
    spec = spectra.compute_spectrum(record, system, kind, window_fs=window, omega_grid=grid)
    shift = float(cfg.get("shift_cm1", 0.0))
    if shift:
        spec = spectra.overlay_shift(spec, shift)
    overlay = None
    if cfg.get("overlay_file"):
        overlay_path = Path(cfg["overlay_file"])
        _digest_input(overlay_path, inputs)
        overlay = spectra.load_xy_csv(overlay_path)
    writer.emit("spectrum.csv", lambda p: spectra.write_spectrum_csv(spec, p, overlay))
    if spec.warning:
        writer.emit_json("spectrum_warnings.json", {"warning": spec.warning})
    return None


def cmd_analyze(cfg: dict, writer: RunWriter, inputs: dict):
    what = cfg.get("analysis", "lifetime")
    if what == "lifetime":
        path = Path(_need(cfg, "trace_file", str))
        _digest_input(path, inputs)
        trace = propagator.load_trace_csv(path)
        pair = _need(cfg, "pair", list)
        m = _site_index(pair[0], trace.n_sites, "pair")
        n = _site_index(pair[1], trace.n_sites, "pair")
        threshold = float(cfg.get("threshold", analysis.DEFAULT_LIFETIME_THRESHOLD))
        estimate = analysis.coherence_lifetime(trace, m, n, threshold)
        writer.emit_json(
            "analysis.json",
            {
                "analysis": "lifetime",
                "pair": [m + 1, n + 1],
                "threshold": threshold,
                "found": estimate.found,
                "lifetime_fs": estimate.lifetime_fs,
                "detail": estimate.detail,
            },
        )
        return None
    if what == "slope":
        temps = _need(cfg, "temperatures_K", list)
        rates = _need(cfg, "rates_cm1", list)
        slope = analysis.dephasing_slope(temps, rates)
        writer.emit_json(
            "analysis.json",
            {"analysis": "slope", "slope_cm1_per_K": slope, "n_points": len(temps)},
        )
        return None
    raise ConfigError("analysis", f"unknown analysis {what!r}")


def cmd_compare(cfg: dict, writer: RunWriter, inputs: dict):
    path_a = Path(_need(cfg, "trace_a", str))
    path_b = Path(_need(cfg, "trace_b", str))
    _digest_input(path_a, inputs)
    _digest_input(path_b, inputs)
    a = propagator.load_trace_csv(path_a)
    b = propagator.load_trace_csv(path_b)
    doc = _need(cfg, "observable", dict)
    if "population" in doc:
        observable = ("population", _site_index(doc["population"], a.n_sites, "observable"))
    elif "coherence" in doc:
        m = _site_index(doc["coherence"][0], a.n_sites, "observable")
        n = _site_index(doc["coherence"][1], a.n_sites, "observable")
        observable = ("coherence", m, n)
    else:
        raise ConfigError("observable", "provide {'population': m} or {'coherence': [m, n]}")
    comparison = analysis.compare_traces(a, b, observable)
    writer.emit_json(
        "comparison.json",
        {
            "observable": doc,
            "rmsd": comparison.rmsd,
            "max_abs_dev": comparison.max_abs_dev,
            "time_of_max_dev_fs": comparison.time_of_max_dev_fs,
        },
    )
    return None


HANDLERS = {
    "simulate": cmd_simulate,
    "noise": cmd_noise,
    "spectrum": cmd_spectrum,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError("--set", f"expected KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(key, "cannot override inside a non-object field")
    target[parts[-1]] = value


def _resolve_output_dir(args, cfg: dict) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return Path.cwd()


def _error_json(kind: str, message: str, field: str | None = None) -> str:
    return json.dumps({"error": {"type": kind, "message": message, "field": field}})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="excidyn",
        description="Stochastic-Hamiltonian exciton dynamics and derived observables",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline from a JSON config")
        p.add_argument("--config", required=True, help="path to the JSON config document")
        p.add_argument("--output-dir", default=None, help="artifact directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="override worker count")
        p.add_argument("--n-traj", type=int, default=None, help="override trajectory count")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config field (dotted keys, JSON values)",
        )
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from exc
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"config does not parse as JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("--config", "config must be a JSON object")
        declared = cfg.get("command")
        if declared is not None and declared != args.command:
            raise ConfigError("command", f"config declares {declared!r}, invoked as {args.command!r}")
        cfg["command"] = args.command
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers is not None:
            cfg["workers"] = args.workers
        if args.n_traj is not None:
            cfg["n_traj"] = args.n_traj
        for assignment in args.set:
            _apply_override(cfg, assignment)

        out_dir = _resolve_output_dir(args, cfg)
        writer = RunWriter(out_dir)
        inputs: dict[str, str] = {}
        seed = HANDLERS[args.command](cfg, writer, inputs)
        _write_manifest(writer, args.command, cfg, seed, inputs, started)
        return 0
    except InvalidInputError as exc:
        field = getattr(exc, "field", None)
        sys.stderr.write(_error_json("validation", str(exc), field) + "\n")
        return 2
    except (ExcidynError, OSError) as exc:
        sys.stderr.write(_error_json("runtime", str(exc)) + "\n")
        return 1


def main() -> None:
    sys.exit(run())
