"""Experiment driver: executes a RunConfig, persists artifacts, summarizes runs.

Trajectory ensembles fan out over a fork-based process pool; every
trajectory draws its own counter-based random stream from
``(master_seed, trajectory_index)``, and results are aggregated by index, so
outputs are bitwise independent of the worker count.
"""

from __future__ import annotations

import concurrent.futures
import datetime as _dt
import multiprocessing
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import ConfigError, RunConfig, config_to_dict
from .dps import DPSContext, build_dps_context, run_dps_trajectory
from .ensemble import ensemble_average, survival_curve
from .liouvillian import (
    build_liouvillian,
    integrate_master_equation,
    pure_density,
    spectrum,
)
from .models import build_gauss_charges, prepare_meson_state
from .qjump import JumpConfig, JumpEngine, run_jump_trajectory

_SHARED: dict = {}


def _dps_task(index: int):
    cfg: RunConfig = _SHARED["config"]
    return run_dps_trajectory(
        cfg.model,
        cfg.schedule,
        cfg.noise,
        (cfg.master_seed, index),
        detail=cfg.output.detail,
        stop_on_violation=cfg.stop_on_violation,
        context=_SHARED["context"],
    )


def _jump_task(index: int):
    cfg: RunConfig = _SHARED["config"]
    return run_jump_trajectory(
        _SHARED["jump_config"],
        (cfg.master_seed, index),
        detail=cfg.output.detail,
        engine=_SHARED["engine"],
    )


def run_trajectory_ensemble(task_fn, n: int, workers: int) -> list:
    """Map indices 0..n-1 over a fork pool; results ordered by index."""
    if workers <= 1 or n == 1:
        return [task_fn(i) for i in range(n)]
    ctx = multiprocessing.get_context("fork")
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=workers, mp_context=ctx
    ) as pool:
        chunk = max(1, n // (workers * 8))
        return list(pool.map(task_fn, range(n), chunksize=chunk))


@dataclass
class RunSummary:
    protocol: str
    output_dir: str
    n_trajectories: int
    surviving_fraction: float | None
    final_gauge_violation: float | None
    final_e_field: float | None
    wall_time_s: float
    files: list[str]


def run(config: RunConfig) -> RunSummary:
    t_start = time.time()
    outdir = Path(config.output.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    surviving_fraction = None
    final_dg = None
    final_ef = None
    n_traj = config.n_trajectories

    if config.protocol in ("dps", "dps_corrected", "continuous"):
        _SHARED["config"] = config
        if config.protocol == "continuous":
            jc = JumpConfig(
                spec=config.model,
                gamma=config.gamma,
                dt_int=config.dt_int,
                t_final=config.t_final,
                n_output=config.n_output,
            )
            _SHARED["jump_config"] = jc
            _SHARED["engine"] = JumpEngine(jc)
            results = run_trajectory_ensemble(
                _jump_task, config.n_trajectories, config.workers
            )
        else:
            _SHARED["context"] = build_dps_context(config.model, config.schedule.dt)
            results = run_trajectory_ensemble(
                _dps_task, config.n_trajectories, config.workers
            )

        if config.output.detail != "none":
            usable = [
                i for i, r in enumerate(results) if not np.isnan(r.e_field).any()
            ]
            if usable:
                ef = ensemble_average(results, "e_field", subset=usable)
                dg = ensemble_average(results, "gauge_violation", subset=usable)
                io.write_stats_csv(outdir / "stats.csv", ef, dg)
                files.append("stats.csv")
                final_dg = float(dg.mean[-1])
                final_ef = float(ef.mean[-1])
            if config.output.save_trajectories:
                io.write_trajectories_csv(
                    outdir / "trajectories.csv",
                    [results[i] for i in usable],
                )
                files.append("trajectories.csv")
            if config.output.save_excitations and config.output.detail == "full":
                exc = np.mean(
                    [results[i].excitations for i in usable], axis=0
                )
                io.write_excitations_csv(
                    outdir / "excitations.csv", results[0].times, exc
                )
                files.append("excitations.csv")
        io.write_trajectory_meta_csv(outdir / "trajectory_meta.csv", results)
        files.append("trajectory_meta.csv")
        if config.protocol in ("dps", "dps_corrected"):
            curve = survival_curve(results)
            io.write_survival_csv(outdir / "survival.csv", curve)
            files.append("survival.csv")
            surviving_fraction = float(curve.p_s[-1])

    elif config.protocol == "liouvillian":
        charges = build_gauss_charges(config.model)
        spectra = []
        for g in config.gamma_grid:
            superop = build_liouvillian(
                config.model, g, config.fidelity, charges=charges
            )
            spectra.append(spectrum(superop))
        io.write_spectrum_csv(outdir / "spectrum.csv", spectra)
        files.append("spectrum.csv")
        n_traj = 0

    elif config.protocol == "master_eq":
        charges = build_gauss_charges(config.model)
        psi0, target = prepare_meson_state(config.model, charges)
        grid = np.linspace(0.0, config.t_final, config.n_output + 1)
        series = integrate_master_equation(
            config.model,
            config.gamma,
            config.fidelity,
            pure_density(psi0),
            grid,
            charges=charges,
            target=target,
        )
        rows_ef = _series_stats(series.times, series.e_field)
        rows_dg = _series_stats(series.times, series.gauge_violation)
        io.write_stats_csv(outdir / "stats.csv", rows_ef, rows_dg)
        files.append("stats.csv")
        final_dg = float(series.gauge_violation[-1])
        final_ef = float(series.e_field[-1])
        n_traj = 0
    else:  # pragma: no cover - validated earlier
        raise ConfigError("protocol", f"unhandled protocol {config.protocol}")

    wall = time.time() - t_start
    manifest = {
        "schema_version": config.schema_version,
        "package_version": __version__,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_time_s": wall,
        "protocol": config.protocol,
        "master_seed": config.master_seed,
        "workers": config.workers,
        "config": config_to_dict(config),
        "summary": {
            "n_trajectories": n_traj,
            "surviving_fraction": surviving_fraction,
            "final_gauge_violation_mean": final_dg,
            "final_e_field_mean": final_ef,
        },
        "outputs": files,
    }
    io.write_manifest(outdir / "manifest.json", manifest)
    return RunSummary(
        protocol=config.protocol,
        output_dir=str(outdir),
        n_trajectories=n_traj,
        surviving_fraction=surviving_fraction,
        final_gauge_violation=final_dg,
        final_e_field=final_ef,
        wall_time_s=wall,
        files=files + ["manifest.json"],
    )


def _series_stats(times, values):
    from .ensemble import EnsembleStats

    n = len(times)
    return EnsembleStats(
        observable="series",
        times=np.asarray(times),
        mean=np.asarray(values),
        std=np.zeros(n),
        n_total=1,
        n_subset=1,
        n_surviving=np.ones(n, dtype=int),
    )


def summarize(output_dir) -> str:
    """Plain-text table over every run manifest found under ``output_dir``."""
    root = Path(output_dir)
    manifests = []
    candidates = sorted(root.glob("**/manifest.json"))
    for path in candidates:
        try:
            m = io.read_manifest(path)
            m["_dir"] = str(path.parent)
            manifests.append(m)
        except Exception as exc:  # corrupt manifest: report, do not crash
            manifests.append({"_dir": str(path.parent), "_error": str(exc)})
    if not manifests:
        return "no runs found"
    manifests.sort(key=lambda m: m.get("created_utc", ""))
    header = (
        f"{'run':<28} {'protocol':<14} {'model':<16} {'n_traj':>7} "
        f"{'surv_frac':>10} {'final_dg':>10} {'wall_s':>8}"
    )
    lines = [header, "-" * len(header)]
    for m in manifests:
        name = Path(m["_dir"]).name[:28]
        if "_error" in m:
            lines.append(f"{name:<28} corrupt manifest: {m['_error']}")
            continue
        cfg = m.get("config", {})
        model = cfg.get("model", {})
        model_txt = f"{model.get('group', '?')} N={model.get('n_matter', '?')}"
        summ = m.get("summary", {})
        sf = summ.get("surviving_fraction")
        dg = summ.get("final_gauge_violation_mean")
        lines.append(
            f"{name:<28} {m.get('protocol', '?'):<14} {model_txt:<16} "
            f"{summ.get('n_trajectories', 0):>7} "
            f"{(f'{sf:.4f}' if sf is not None else '-'):>10} "
            f"{(f'{dg:.4f}' if dg is not None else '-'):>10} "
            f"{m.get('wall_time_s', 0.0):>8.1f}"
        )
    return "\n".join(lines)
