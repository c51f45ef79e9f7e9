"""Experiment runner: presets, flat key=value configs, CSV/SVG emission.

A run is described by a RunConfig resolved with precedence
command-line flags > config file > preset defaults. Each run solves the
coefficient tables once per memory rate, executes the requested ensembles
(or single trajectories for the localization preset), and writes one CSV
per curve plus a manifest that pins every parameter needed to reproduce
the outputs byte for byte. Exit codes: 0 success, 1 configuration error,
2 numerical blowup, 3 I/O error.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .algebra import ModelParams, basis_state
from .ensemble import (
    EnsembleConfig,
    EnsembleError,
    run_ensemble,
    write_ensemble_csv,
)
from .fields import FieldBlowupError, solve_fields
from .noise import OUKernel, RngStream, sample_ou_path
from .trajectory import (
    TrajectoryBlowupError,
    TrajectoryConfig,
    run_trajectory,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunManifest",
    "load_config",
    "run_preset",
    "execute_run",
    "main",
    "PRESETS",
]


class ConfigError(ValueError):
    """Invalid configuration input; message names the offending field."""


_STATE_TAGS = {
    "11": "11",
    "10": "10",
    "01": "01",
    "00": "00",
    "(10+01)": "10p01",
    "(10-01)": "10m01",
    "(11+00)": "11p00",
    "(11-00)": "11m00",
}

_MODES = ("linear", "nonlinear", "approx")

_BASE = {
    "preset": "custom",
    "omega_a": 0.5,
    "omega_b": 0.5,
    "j_xy": 0.0,
    "j_z": 0.0,
    "kappa_a": 1.0,
    "kappa_b": 1.0,
    "gamma": (1.0,),
    "psi0": ("11",),
    "coeff_dt": 0.02,
    "dt": 0.01,
    "horizon": 30.0,
    "n_traj": 1000,
    "seed": 1234,
    "mode": "nonlinear",
    "workers": 1,
    "out_dir": "runs",
    "emit_svg": False,
    "stride": 10,
}

# Figure presets. Captions leave some knobs open (the gamma sweeps of the
# first two, the exchange coupling of the first, the initial state of the
# fourth); those defaults are recorded in the manifest and all overridable.
PRESETS = {
    "fig1": {
        "psi0": ("11",),
        "j_xy": 0.5,
        "j_z": 0.0,
        "gamma": (0.1, 0.3, 0.5, 1.0, 2.0, 5.0),
    },
    "fig2": {
        "psi0": ("11",),
        "j_xy": 0.0,
        "j_z": 0.0,
        "gamma": tuple(float(g) for g in np.geomspace(0.1, 5.0, 6)),
    },
    "fig3": {
        "psi0": ("10",),
        "j_xy": 0.5,
        "j_z": 0.1,
        "gamma": (0.5, 1.0, 2.0),
    },
    "fig4": {
        "psi0": ("10",),
        "j_xy": 0.5,
        "j_z": 0.0,
        "gamma": (1.0,),
        "horizon": 60.0,
        "n_traj": 8,
    },
    "fig5": {
        "psi0": ("(11+00)", "(10+01)", "10", "11"),
        "j_xy": 0.7,
        "j_z": 0.3,
        "gamma": (1.0,),
    },
    "fig6": {
        "psi0": ("(11+00)", "(10+01)", "10", "11"),
        "j_xy": 0.5,
        "j_z": 0.0,
        "gamma": (0.3,),
    },
}


@dataclass(frozen=True)
class RunConfig:
    preset: str
    params: ModelParams
    gammas: tuple
    psi0_labels: tuple
    coeff_dt: float
    dt: float
    horizon: float
    n_traj: int
    seed: int
    mode: str
    workers: int
    out_dir: str
    emit_svg: bool
    stride: int

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ConfigError(f"mode: must be one of {', '.join(_MODES)}")
        for name in ("coeff_dt", "dt", "horizon"):
            v = getattr(self, name)
            try:
                v = float(v)
            except (TypeError, ValueError):
                raise ConfigError(f"{name}: must be a number") from None
            object.__setattr__(self, name, v)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name}: must be a positive finite number")
        for name, v in (("n_traj", self.n_traj), ("workers", self.workers),
                        ("stride", self.stride)):
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"{name}: must be an integer >= 1")
        if self.seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        for name, dd in (("dt", self.dt), ("coeff_dt", self.coeff_dt)):
            n = round(self.horizon / dd)
            if n < 1 or abs(n * dd - self.horizon) > 1e-9 * self.horizon:
                raise ConfigError(f"{name}: must divide horizon {self.horizon!r}")
        if round(self.horizon / self.dt) % self.stride != 0:
            raise ConfigError("stride: must divide the step count")
        for g in self.gammas:
            if not (g > 0 and np.isfinite(g)):
                raise ConfigError(f"gamma: rate {g!r} must be positive and finite")
        for label in self.psi0_labels:
            if label not in _STATE_TAGS:
                known = ", ".join(_STATE_TAGS)
                raise ConfigError(f"psi0: unknown state label {label!r} (known: {known})")

    def method(self) -> tuple:
        """(integration method, drop_noise_operator) encoded by mode."""
        if self.mode == "linear":
            return "linear", False
        if self.mode == "approx":
            return "nonlinear", True
        return "nonlinear", False


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run, plus what it produced."""

    config: RunConfig
    outputs: tuple
    wallclock_s: float

    def to_text(self) -> str:
        c = self.config
        p = c.params
        entries = {
            "artifact_version": __version__,
            "coeff_dt": repr(c.coeff_dt),
            "coeff_rows": str(int(round(c.horizon / c.coeff_dt)) + 1),
            "dt": repr(c.dt),
            "emit_svg": str(c.emit_svg).lower(),
            "gamma": ",".join(repr(g) for g in c.gammas),
            "horizon": repr(c.horizon),
            "j_xy": repr(p.j_xy),
            "j_z": repr(p.j_z),
            "kappa_a": repr(p.kappa_a),
            "kappa_b": repr(p.kappa_b),
            "kernel": "ou",
            "mode": c.mode,
            "n_steps": str(int(round(c.horizon / c.dt))),
            "n_traj": str(c.n_traj),
            "omega_a": repr(p.omega_a),
            "omega_b": repr(p.omega_b),
            "out_dir": c.out_dir,
            "outputs": ",".join(self.outputs),
            "preset": c.preset,
            "psi0": ",".join(c.psi0_labels),
            "seed": str(c.seed),
            "stride": str(c.stride),
            "wallclock_s": f"{self.wallclock_s:.3f}",
            "workers": str(c.workers),
        }
        return "".join(f"{k} = {entries[k]}\n" for k in sorted(entries))


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in ("omega_a", "omega_b", "j_xy", "j_z", "kappa_a", "kappa_b",
                   "coeff_dt", "dt", "horizon"):
            return float(raw)
        if key in ("n_traj", "seed", "workers", "stride"):
            return int(raw)
        if key == "gamma":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        if key == "psi0":
            return tuple(tok.strip() for tok in raw.split(",") if tok.strip())
        if key == "emit_svg":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError("expected true/false")
        if key in ("preset", "mode", "out_dir"):
            return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    raise ConfigError(f"unknown config key {key!r}")


def _parse_config_file(path: str) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path!r}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config: line {lineno}: expected key = value")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in _BASE:
            raise ConfigError(f"config: line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def _resolve(settings: dict) -> RunConfig:
    model_keys = ("omega_a", "omega_b", "j_xy", "j_z", "kappa_a", "kappa_b")
    try:
        params = ModelParams(**{k: settings[k] for k in model_keys})
    except ValueError as exc:
        raise ConfigError(f"model parameters: {exc}") from None
    return RunConfig(
        preset=settings["preset"],
        params=params,
        gammas=tuple(settings["gamma"]),
        psi0_labels=tuple(settings["psi0"]),
        coeff_dt=float(settings["coeff_dt"]),
        dt=float(settings["dt"]),
        horizon=float(settings["horizon"]),
        n_traj=settings["n_traj"],
        seed=settings["seed"],
        mode=settings["mode"],
        workers=settings["workers"],
        out_dir=settings["out_dir"],
        emit_svg=bool(settings["emit_svg"]),
        stride=settings["stride"],
    )


def load_config(file_path: str | None = None, flags: dict | None = None) -> RunConfig:
    """Merge preset defaults, a config file, and flag overrides.

    flags is a plain dict of config keys (already typed); precedence is
    flags > file > preset > built-in defaults. The preset name itself may
    come from either source, flags winning.
    """
    flags = dict(flags or {})
    file_settings = _parse_config_file(file_path) if file_path else {}
    preset_name = flags.get("preset", file_settings.get("preset", "custom"))
    if preset_name != "custom" and preset_name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"preset: unknown name {preset_name!r} (known: {known})")
    settings = dict(_BASE)
    if preset_name != "custom":
        settings.update(PRESETS[preset_name])
    settings["preset"] = preset_name
    for key, val in file_settings.items():
        if key != "preset":
            settings[key] = val
    for key, val in flags.items():
        if key != "preset" and val is not None:
            settings[key] = val
    return _resolve(settings)


def _csv_name(gamma: float, label: str, suffix: str = "") -> str:
    return f"gamma{gamma:g}_psi{_STATE_TAGS[label]}{suffix}.csv"


def _run_metadata(cfg: RunConfig, gamma: float, label: str, method: str,
                  drop: bool) -> dict:
    p = cfg.params
    return {
        "coeff_dt": repr(cfg.coeff_dt),
        "drop_noise_operator": str(drop).lower(),
        "dt": repr(cfg.dt),
        "gamma": repr(gamma),
        "horizon": repr(cfg.horizon),
        "j_xy": repr(p.j_xy),
        "j_z": repr(p.j_z),
        "kappa_a": repr(p.kappa_a),
        "kappa_b": repr(p.kappa_b),
        "method": method,
        "n_traj": str(cfg.n_traj),
        "omega_a": repr(p.omega_a),
        "omega_b": repr(p.omega_b),
        "psi0": label,
        "seed": str(cfg.seed),
        "stride": str(cfg.stride),
    }


def _write_text(path: str, body: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(body)


def _ensemble_curve(cfg: RunConfig, tables, gamma: float, label: str,
                    method: str, drop: bool):
    tcfg = TrajectoryConfig(
        psi0=basis_state(label),
        t_final=cfg.horizon,
        dt=cfg.dt,
        method=method,
        drop_noise_operator=drop,
        record="observables",
        stride=cfg.stride,
    )
    ecfg = EnsembleConfig(traj=tcfg, n_traj=cfg.n_traj, master_seed=cfg.seed)
    dens, obs = run_ensemble(ecfg, tables, workers=cfg.workers)
    buf = io.StringIO()
    write_ensemble_csv(buf, dens, obs, _run_metadata(cfg, gamma, label, method, drop))
    return obs, buf.getvalue()


def _trajectory_curves(cfg: RunConfig, tables, gamma: float, label: str,
                       method: str, drop: bool):
    """Per-trajectory fluctuation and localization series (one CSV each)."""
    outs = []
    for idx in range(cfg.n_traj):
        noise = sample_ou_path(
            tables.kernel, cfg.horizon, 0.5 * cfg.dt, RngStream(cfg.seed, idx)
        )
        tcfg = TrajectoryConfig(
            psi0=basis_state(label),
            t_final=cfg.horizon,
            dt=cfg.dt,
            method=method,
            drop_noise_operator=drop,
            record="observables",
            stride=cfg.stride,
        )
        traj = run_trajectory(tcfg, tables, noise)
        c_norm = traj.c / traj.norm[:, None]
        loc = np.abs(c_norm[:, 2]) ** 2 + np.abs(c_norm[:, 3]) ** 2
        buf = io.StringIO()
        meta = _run_metadata(cfg, gamma, label, method, drop)
        meta["stream_index"] = str(idx)
        for key in sorted(meta):
            buf.write(f"# {key} = {meta[key]}\n")
        buf.write("t,fluct_l,loc,norm\n")
        for i, t in enumerate(traj.times):
            buf.write(
                f"{float(t)!r},{float(traj.fluct_l[i])!r},"
                f"{float(loc[i])!r},{float(traj.norm[i])!r}\n"
            )
        outs.append((idx, buf.getvalue(), traj.times, traj.fluct_l, loc))
    return outs


def _plot_lines(path: str, series: list, ylabel: str, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for name, times, values, style in series:
        ax.plot(times, values, style, label=name, linewidth=1.2)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_heatmap(path: str, gammas, times, grid: np.ndarray, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    img = ax.pcolormesh(times, np.asarray(gammas), grid, shading="nearest")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("memory rate")
    ax.set_title(title)
    fig.colorbar(img, ax=ax, label="concurrence")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def execute_run(cfg: RunConfig) -> RunManifest:
    """Solve, simulate, and emit all artifacts for one RunConfig."""
    started = time.perf_counter()
    os.makedirs(cfg.out_dir, exist_ok=True)
    outputs = []
    combos = [(g, label) for g in cfg.gammas for label in cfg.psi0_labels]
    method, drop = cfg.method()
    svg_series = []
    fig2_grid = []

    for gamma in cfg.gammas:
        kernel = OUKernel(gamma=gamma)
        tables = solve_fields(cfg.params, kernel, cfg.horizon, cfg.coeff_dt)
        for label in cfg.psi0_labels:
            if cfg.preset == "fig4":
                for idx, text, times, fluct, loc in _trajectory_curves(
                    cfg, tables, gamma, label, method, drop
                ):
                    name = f"trajectory_{idx}.csv"
                    _write_text(os.path.join(cfg.out_dir, name), text)
                    outputs.append(name)
                    svg_series.append((f"traj {idx}", times, fluct, "-"))
            elif cfg.preset == "fig6":
                for suffix, use_drop in (("_exact", False), ("_approx", True)):
                    obs, text = _ensemble_curve(
                        cfg, tables, gamma, label, method, use_drop
                    )
                    name = _csv_name(gamma, label, suffix)
                    _write_text(os.path.join(cfg.out_dir, name), text)
                    outputs.append(name)
                    style = "-" if suffix == "_exact" else "--"
                    svg_series.append(
                        (f"{label}{suffix}", obs.times, obs.concurrence, style)
                    )
            else:
                obs, text = _ensemble_curve(cfg, tables, gamma, label, method, drop)
                name = _csv_name(gamma, label)
                _write_text(os.path.join(cfg.out_dir, name), text)
                outputs.append(name)
                values = obs.purity if cfg.preset == "fig5" else obs.concurrence
                tag = label if len(cfg.psi0_labels) > 1 else f"rate {gamma:g}"
                svg_series.append((tag, obs.times, values, "-"))
                if cfg.preset == "fig2":
                    fig2_grid.append(obs.concurrence)

    if cfg.emit_svg and combos:
        svg_name = f"{cfg.preset}.svg"
        svg_path = os.path.join(cfg.out_dir, svg_name)
        if cfg.preset == "fig2":
            times = svg_series[0][1]
            _plot_heatmap(
                svg_path, cfg.gammas, times, np.array(fig2_grid),
                "entanglement from bath memory alone",
            )
        else:
            ylabel = {
                "fig4": "Lindblad operator fluctuation",
                "fig5": "purity",
            }.get(cfg.preset, "concurrence")
            _plot_lines(svg_path, svg_series, ylabel, f"{cfg.preset} observables")
        outputs.append(svg_name)

    manifest = RunManifest(
        config=cfg,
        outputs=tuple(outputs),
        wallclock_s=time.perf_counter() - started,
    )
    _write_text(os.path.join(cfg.out_dir, "manifest.txt"), manifest.to_text())
    return manifest


def run_preset(name: str, overrides: dict | None = None) -> RunManifest:
    """Resolve a named preset (with optional overrides) and run it."""
    flags = dict(overrides or {})
    flags["preset"] = name
    return execute_run(load_config(flags=flags))


def _build_parser() -> argparse.ArgumentParser:
    class Parser(argparse.ArgumentParser):
        def error(self, message):
            raise ConfigError(message)

    par = Parser(
        prog="qsdsim",
        description=(
            "Two-qubit dissipative-bath trajectory simulator. Presets "
            "fig1..fig6 reproduce the standard experiment set; a flat "
            "key=value config file or flags override any parameter."
        ),
    )
    par.add_argument("--preset", help="named experiment (fig1..fig6)")
    par.add_argument("--config", help="key=value config file")
    par.add_argument("--seed", type=int, help="master seed for noise streams")
    par.add_argument("--trajectories", type=int, dest="n_traj",
                     help="ensemble size")
    par.add_argument("--dt", type=float, help="trajectory step")
    par.add_argument("--coeff-dt", type=float, dest="coeff_dt",
                     help="coefficient-field grid step")
    par.add_argument("--horizon", type=float, help="final time")
    par.add_argument("--gamma", help="memory rate, or comma list")
    par.add_argument("--workers", type=int, help="worker processes")
    par.add_argument("--out", dest="out_dir", help="output directory")
    par.add_argument("--svg", action="store_true", default=None,
                     help="emit SVG plots alongside CSV")
    par.add_argument("--mode", choices=_MODES,
                     help="equation variant (approx drops the noise-integral term)")
    return par


def main(argv=None) -> int:
    try:
        ns = _build_parser().parse_args(argv)
        flags = {}
        for key in ("preset", "seed", "n_traj", "dt", "coeff_dt", "horizon",
                    "workers", "out_dir", "mode"):
            val = getattr(ns, key)
            if val is not None:
                flags[key] = val
        if ns.gamma is not None:
            flags["gamma"] = _parse_value("gamma", ns.gamma)
        if ns.svg:
            flags["emit_svg"] = True
        cfg = load_config(ns.config, flags)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    try:
        manifest = execute_run(cfg)
    except (FieldBlowupError, TrajectoryBlowupError, EnsembleError) as exc:
        print(f"numerical blowup: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3

    print(f"wrote {len(manifest.outputs)} files to {cfg.out_dir}")
    if not manifest.outputs:
        print("no curves requested; manifest only", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
