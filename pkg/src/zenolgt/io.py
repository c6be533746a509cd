"""CSV and manifest serialization.

All CSVs are comma-delimited with a mandatory header row; floats are written
in full double precision scientific notation so reruns are byte-comparable.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dps import TrajectoryResult
from .ensemble import EnsembleStats, FilterResult, Histogram, SurvivalCurve
from .liouvillian import SpectrumResult


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return f"{float(x):.17e}"


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def write_stats_csv(
    path,
    e_field: EnsembleStats,
    gauge: EnsembleStats,
) -> None:
    rows = [
        (
            e_field.times[i],
            e_field.mean[i],
            e_field.std[i],
            gauge.mean[i],
            gauge.std[i],
            int(e_field.n_surviving[i]),
            e_field.n_total,
        )
        for i in range(len(e_field.times))
    ]
    _write_rows(
        Path(path),
        [
            "time",
            "e_field_mean",
            "e_field_std",
            "gauge_violation_mean",
            "gauge_violation_std",
            "n_surviving",
            "n_total",
        ],
        rows,
    )


def write_survival_csv(path, curve: SurvivalCurve) -> None:
    rows = [
        (
            curve.times[i],
            curve.p_s[i],
            curve.lower[i],
            curve.upper[i],
            int(round(curve.p_s[i] * curve.n_total)),
            curve.n_total,
        )
        for i in range(len(curve.times))
    ]
    _write_rows(
        Path(path),
        ["time", "p_s", "wilson_low", "wilson_high", "n_surviving", "n_total"],
        rows,
    )


def write_spectrum_csv(path, spectra: list[SpectrumResult]) -> None:
    rows = []
    for s in sorted(spectra, key=lambda s: s.gamma):
        for ev in s.eigenvalues:
            rows.append((s.gamma, ev.real, ev.imag))
    _write_rows(Path(path), ["gamma", "re_eigenvalue", "im_eigenvalue"], rows)


def write_trajectories_csv(path, results: list[TrajectoryResult]) -> None:
    rows = []
    for i, r in enumerate(results):
        for t_idx in range(len(r.times)):
            rows.append(
                (
                    i,
                    r.times[t_idx],
                    r.e_field[t_idx],
                    r.gauge_violation[t_idx],
                )
            )
    _write_rows(
        Path(path), ["trajectory", "time", "e_field", "gauge_violation"], rows
    )


def write_trajectory_meta_csv(path, results: list[TrajectoryResult]) -> None:
    rows = []
    for i, r in enumerate(results):
        rows.append(
            (
                i,
                int(r.seed[0]),
                int(r.seed[1]),
                int(r.survived),
                r.record.violation_step if r.record.violation_step is not None else "",
                int(r.corrected_ok),
                int(r.discarded_ambiguous),
                int(r.mis_corrected),
                len(r.flips_injected),
                int(r.jump_count),
            )
        )
    _write_rows(
        Path(path),
        [
            "trajectory",
            "seed_key",
            "seed_index",
            "survived",
            "violation_step",
            "corrected_ok",
            "discarded_ambiguous",
            "mis_corrected",
            "n_flips",
            "jump_count",
        ],
        rows,
    )


def write_excitations_csv(path, times, excitations) -> None:
    """Mean site-excitation heat map data: one row per (time, site)."""
    excitations = np.asarray(excitations)
    rows = []
    for i, t in enumerate(times):
        for site in range(excitations.shape[1]):
            rows.append((t, site, excitations[i, site]))
    _write_rows(Path(path), ["time", "site", "excitation"], rows)


def write_histogram_csv(path, hist: Histogram) -> None:
    rows = [
        (hist.bin_edges[i], hist.bin_edges[i + 1], hist.density[i])
        for i in range(len(hist.density))
    ]
    _write_rows(Path(path), ["bin_left", "bin_right", "density"], rows)


def write_filter_csv(path, result: FilterResult) -> None:
    rows = [
        (
            i,
            it.threshold if i > 0 else "",
            it.n_kept,
            it.mean_at_eval,
            it.std_at_eval,
        )
        for i, it in enumerate(result.iterations)
    ]
    _write_rows(
        Path(path),
        ["iteration", "threshold", "n_kept", "mean_at_eval", "std_at_eval"],
        rows,
    )


def write_manifest(path, manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
