"""Ensemble statistics over trajectory collections.

Means/stds over subsets, survival curves with Wilson intervals, error
histograms with a unimodality-deviation (dip) statistic, the iterative
outlier filter used to salvage corrected ensembles, and the closed-form
correction-failure arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dps import TrajectoryResult


class EmptyEnsembleError(RuntimeError):
    """A requested subset contains no trajectories."""


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2))
    return max(0.0, center - half), min(1.0, center + half)


def _observable_matrix(results: list[TrajectoryResult], observable: str) -> np.ndarray:
    rows = []
    for r in results:
        arr = getattr(r, observable)
        if arr is None:
            raise ValueError(f"trajectory has no recorded {observable!r}")
        rows.append(arr)
    return np.stack(rows)


def _resolve_subset(results, subset) -> list[int]:
    if subset is None:
        idx = list(range(len(results)))
    elif isinstance(subset, np.ndarray) and subset.dtype == bool:
        idx = [i for i in range(len(results)) if subset[i]]
    else:
        idx = [int(i) for i in subset]
    if not idx:
        raise EmptyEnsembleError("subset selects no trajectories")
    return idx


@dataclass
class EnsembleStats:
    """Pointwise mean/std of one observable over a trajectory subset."""

    observable: str
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_total: int
    n_subset: int
    n_surviving: np.ndarray


def surviving_counts(results: list[TrajectoryResult]) -> np.ndarray:
    """Number of trajectories with no measured violation up to each snapshot."""
    times = results[0].times
    dt_steps = np.arange(len(times))
    counts = np.zeros(len(times), dtype=int)
    for r in results:
        v = r.record.violation_step
        alive = np.ones(len(times), dtype=bool) if v is None else dt_steps < v
        counts += alive
    return counts


def ensemble_average(
    results: list[TrajectoryResult],
    observable: str = "e_field",
    subset=None,
) -> EnsembleStats:
    """Pointwise mean and population std over the chosen subset."""
    idx = _resolve_subset(results, subset)
    sel = [results[i] for i in idx]
    data = _observable_matrix(sel, observable)
    return EnsembleStats(
        observable=observable,
        times=sel[0].times,
        mean=data.mean(axis=0),
        std=data.std(axis=0),
        n_total=len(results),
        n_subset=len(sel),
        n_surviving=surviving_counts(results),
    )


@dataclass
class SurvivalCurve:
    times: np.ndarray
    p_s: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_total: int


def survival_curve(results: list[TrajectoryResult]) -> SurvivalCurve:
    """Fraction of trajectories never measured outside the target sector."""
    if not results:
        raise EmptyEnsembleError("no trajectories")
    if any(r.protocol not in ("dps", "dps_corrected") for r in results):
        raise ValueError("survival curves are defined for DPS trajectories")
    counts = surviving_counts(results)
    n = len(results)
    lo = np.empty(len(counts))
    hi = np.empty(len(counts))
    for i, k in enumerate(counts):
        lo[i], hi[i] = wilson_interval(int(k), n)
    return SurvivalCurve(
        times=results[0].times, p_s=counts / n, lower=lo, upper=hi, n_total=n
    )


# ---------------------------------------------------------------------------
# Unimodality deviation ("dip") of a sample.


def _interval_points(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct sorted values with their midpoint-ECDF value intervals.

    Ties collapse to one point carrying the interval [first, last] of the
    midpoint ECDF (i + 1/2)/n, so an atom can be matched exactly by a CDF
    jump at the mode.
    """
    xs = np.sort(np.asarray(x, dtype=float))
    n = len(xs)
    ux, first = np.unique(xs, return_index=True)
    counts = np.diff(np.append(first, n))
    lo = (first + 0.5) / n
    hi = (first + counts - 0.5) / n
    return ux, lo, hi


def _prefix_convex_errors(ux: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """eps[m] = sup-norm error of the best convex fit to points 0..m.

    Equals half the largest gap of a lower value above the lower convex hull
    of the upper values (sup-norm duality for convex approximation).
    """
    k = len(ux)
    eps = np.zeros(k)
    hull: list[int] = [0]
    for m in range(1, k):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            if (hi[j] - hi[i]) * (ux[m] - ux[j]) >= (hi[m] - hi[j]) * (ux[j] - ux[i]):
                hull.pop()
            else:
                break
        hull.append(m)
        hx = ux[hull]
        hy = hi[hull]
        gaps = lo[: m + 1] - np.interp(ux[: m + 1], hx, hy)
        eps[m] = 0.5 * max(0.0, float(gaps.max()))
    return np.maximum.accumulate(eps)


def dip_statistic(x) -> float:
    """Sup-norm distance of the midpoint ECDF from its best unimodal fit.

    The fit class is functions convex left of a mode and concave right of it
    (a CDF jump at the mode is allowed), evaluated at the distinct sample
    values.  Zero for samples compatible with one mode; large when the mass
    splits into separated clumps.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 4 or np.min(x) == np.max(x):
        return 0.0
    ux, lo, hi = _interval_points(x)
    eps_left = _prefix_convex_errors(ux, lo, hi)
    # The right side is the mirrored problem: concave fit to suffixes.
    eps_right = _prefix_convex_errors(-ux[::-1], -hi[::-1], -lo[::-1])[::-1]
    return float(np.min(np.maximum(eps_left, eps_right)))


_NULL_DIP_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def dip_pvalue(x, n_boot: int = 200, seed: int = 20240917) -> float:
    """Bootstrap p-value of the dip against the uniform (least favorable
    unimodal) null; deterministic for fixed ``seed``."""
    x = np.asarray(x, dtype=float)
    d = dip_statistic(x)
    key = (len(x), n_boot, seed)
    if key not in _NULL_DIP_CACHE:
        rng = np.random.default_rng(seed)
        _NULL_DIP_CACHE[key] = np.array(
            [dip_statistic(rng.random(len(x))) for _ in range(n_boot)]
        )
    null = _NULL_DIP_CACHE[key]
    return float((1 + np.sum(null >= d)) / (n_boot + 1))


@dataclass
class Histogram:
    """Normalized histogram of per-trajectory deviations at one time."""

    bin_edges: np.ndarray
    density: np.ndarray
    mean: float
    std_error: float
    dip: float
    n: int

    def total_mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.bin_edges)))


def error_histogram(
    results: list[TrajectoryResult],
    ideal_series: np.ndarray,
    time_index: int,
    bins: int = 30,
    observable: str = "e_field",
    subset=None,
) -> Histogram:
    """Distribution of trajectory-minus-ideal at one snapshot."""
    idx = _resolve_subset(results, subset)
    data = _observable_matrix([results[i] for i in idx], observable)
    values = data[:, time_index] - ideal_series[time_index]
    density, edges = np.histogram(values, bins=bins, density=True)
    return Histogram(
        bin_edges=edges,
        density=density,
        mean=float(values.mean()),
        std_error=float(values.std(ddof=1) / math.sqrt(len(values)))
        if len(values) > 1
        else 0.0,
        dip=dip_statistic(values),
        n=len(values),
    )


@dataclass
class FilterIteration:
    threshold: float
    n_kept: int
    mean_at_eval: float
    std_at_eval: float


@dataclass
class FilterResult:
    kept: list[int]
    iterations: list[FilterIteration]


def iterative_filter(
    results: list[TrajectoryResult],
    observable: str = "e_field",
    thresholds: tuple[float, ...] = (1.0, 2.0),
    subset=None,
    eval_time_index: int = -1,
) -> FilterResult:
    """Iteratively drop trajectories that stray from the running ensemble mean.

    Iteration i removes every trajectory whose observable deviates from the
    current subset mean by more than ``thresholds[i]`` running standard
    deviations at any recorded time.  Raises :class:`EmptyEnsembleError` if a
    pass would empty the ensemble.
    """
    idx = _resolve_subset(results, subset)
    data_all = _observable_matrix([results[i] for i in idx], observable)
    current = np.arange(len(idx))
    iterations: list[FilterIteration] = []
    iterations.append(
        FilterIteration(
            threshold=float("nan"),
            n_kept=len(current),
            mean_at_eval=float(data_all[current, eval_time_index].mean()),
            std_at_eval=float(data_all[current, eval_time_index].std()),
        )
    )
    for thr in thresholds:
        data = data_all[current]
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        dev = np.abs(data - mean)
        keep = (dev <= thr * std + 1e-15).all(axis=1)
        if not keep.any():
            raise EmptyEnsembleError(
                f"filter threshold {thr} removed every trajectory"
            )
        current = current[keep]
        iterations.append(
            FilterIteration(
                threshold=float(thr),
                n_kept=len(current),
                mean_at_eval=float(data_all[current, eval_time_index].mean()),
                std_at_eval=float(data_all[current, eval_time_index].std()),
            )
        )
    return FilterResult(kept=[idx[i] for i in current], iterations=iterations)


@dataclass
class CorrectionEstimate:
    """Closed-form failure arithmetic of the bit-flip correction scheme."""

    p2: float
    p_fail: float
    ratio: float


def correction_failure_estimate(
    p_err: float, n_qubits: int, n_matter: int, n_steps: int
) -> CorrectionEstimate:
    """Two-errors-per-window failure probability and the protection ratio.

    ``p2`` is the per-step probability that two flips land inside one
    adjacent-charge window, ``p_fail = 1 - (1 - p2)^n_steps`` the chance a
    run fails by the end, and ``ratio`` the corrected-over-uncorrected
    success ratio (approximately ``(1 + L p_err)^n_steps`` for small rates).
    """
    if not 0.0 <= p_err < 1.0:
        raise ValueError("p_err must be in [0, 1)")
    p2 = p_err**2 * (1.0 - p_err) ** (n_qubits - 2) * 6.0 * (n_matter - 1)
    p_fail = 1.0 - (1.0 - p2) ** n_steps
    ratio = ((1.0 - p2) / (1.0 - p_err) ** n_qubits) ** n_steps
    return CorrectionEstimate(p2=p2, p_fail=p_fail, ratio=ratio)


def shot_noise_comparison(
    results: list[TrajectoryResult],
    ideal: TrajectoryResult,
    observable: str = "e_field",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, trajectory std, quantum std of the ideal state)."""
    stats = ensemble_average(results, observable)
    quantum_std = np.sqrt(np.maximum(ideal.e_field_var, 0.0))
    return stats.times, stats.std, quantum_std
