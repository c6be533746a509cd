"""Trotterized digital evolution with mid-circuit charge monitoring.

One :func:`run_dps_trajectory` call produces a single stochastic trajectory:
first-order Trotter steps (gauge-invariant gates plus coherent error gates),
an optional incoherent bit-flip channel, periodic projective measurement of
all Gauss-law generators (with optional noisy pre-measurement rotations), and
optional syndrome-decoded feedback correction.

Randomness is counter-based: the stream for trajectory ``i`` of a run seeded
with ``s`` is ``Philox(key=(s, i))``, so ensembles are reproducible
independently of scheduling and worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .linalg import expm_small
from .models import (
    GaugeCharges,
    ModelSpec,
    ObservableCalculator,
    TargetSector,
    build_gauss_charges,
    prepare_meson_state,
    SPLUS,
    SMINUS,
    SX,
    SZ,
    _hop_term,
    _bond_sites,
)

_MASK64 = (1 << 64) - 1


class MeasurementError(RuntimeError):
    """Born-rule bookkeeping failed (probabilities off by more than 1e-8)."""


def trajectory_rng(master_seed: int, index: int = 0) -> np.random.Generator:
    """Independent deterministic stream for one trajectory of one run."""
    key = np.array([master_seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class ScheduleParams:
    """Trotter step, step count, and the measurement / correction cadence.

    ``measure_every = k`` measures all charges after every k-th step, i.e.
    the measurement period is ``dt_m = k * dt``.
    """

    dt: float
    n_steps: int
    measure_every: int = 1
    measure_enabled: bool = True
    correction_enabled: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.measure_every < 1:
            raise ValueError(f"measure_every must be >= 1, got {self.measure_every}")

    @property
    def total_time(self) -> float:
        return self.dt * self.n_steps

    @property
    def measure_period(self) -> float:
        return self.dt * self.measure_every


@dataclass(frozen=True)
class NoiseSpec:
    """Incoherent bit-flip probability and measurement-rotation noise level.

    ``sigma`` is the standard deviation of the random Z/X rotation angles
    applied to the support of a charge before it is measured; the
    corresponding measurement fidelity is ``F ~= 1 - 3 sigma^2``.
    """

    p_err: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_err <= 1.0:
            raise ValueError(f"p_err must be in [0, 1], got {self.p_err}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def fidelity(self) -> float:
        return 1.0 - 3.0 * self.sigma**2

    @staticmethod
    def sigma_for_fidelity(fidelity: float) -> float:
        if not 0.0 < fidelity <= 1.0:
            raise ValueError(f"fidelity must be in (0, 1], got {fidelity}")
        return math.sqrt((1.0 - fidelity) / 3.0)


@dataclass
class MeasurementRecord:
    """Outcome indices per measurement layer plus the first violating step."""

    steps: list[int] = field(default_factory=list)
    outcomes: list[np.ndarray] = field(default_factory=list)
    violation_step: int | None = None


@dataclass
class TrajectoryResult:
    """One stochastic run: observable series, record, flags, and logs."""

    seed: tuple[int, int]
    protocol: str
    times: np.ndarray
    e_field: np.ndarray | None
    e_field_var: np.ndarray | None
    gauge_violation: np.ndarray | None
    excitations: np.ndarray | None
    record: MeasurementRecord
    survived: bool
    corrected_ok: bool
    discarded_ambiguous: bool
    mis_corrected: bool
    flips_injected: list[tuple[int, int]]
    corrections_applied: list[tuple[int, str, int]]
    jump_count: int = 0


def _site_flip_perm(register_dims, pos: int) -> np.ndarray:
    """Index permutation realizing a Pauli-X on qubit ``pos``."""
    dims = tuple(int(d) for d in register_dims)
    if dims[pos] != 2:
        raise ValueError(f"site {pos} is {dims[pos]}-dimensional, X flip undefined")
    dim = int(np.prod(dims))
    post = int(np.prod(dims[pos + 1 :])) if pos + 1 < len(dims) else 1
    idx = np.arange(dim)
    digit = (idx // post) % 2
    return idx + (1 - 2 * digit) * post


class TrotterEngine:
    """Precompiled one-step gate program acting on full-register states.

    The step is an ordered product of grouped local exponentials:
    gauge-assisted hopping on even then odd bonds, one combined diagonal for
    the electric-field and mass terms, then the error gates (link rotations,
    unassisted hopping on even/odd matter bonds).  Gates are shared and
    immutable; applying a step never mutates its input.
    """

    def __init__(self, spec: ModelSpec, dt: float):
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        self.spec = spec
        self.dt = dt
        dims = spec.register_dims
        self.dim = spec.hilbert_dim
        gates: list[tuple[str, str, object]] = []

        if spec.J != 0.0:
            u_hop = expm_small(-1j * dt * _hop_term(spec, spec.J))
            for parity, name in ((0, "hop_even"), (1, "hop_odd")):
                bonds = [n for n in range(spec.n_links) if n % 2 == parity]
                if bonds:
                    layer = None
                    for n in bonds:
                        g = linalg.embed(u_hop, dims, _bond_sites(spec, n))
                        layer = g if layer is None else (g @ layer)
                    gates.append((name, "sparse", linalg.sparsify(layer)))

        diag = np.zeros(self.dim)
        if spec.f != 0.0 or spec.mu != 0.0:
            calc_diag = _field_mass_diag(spec)
            diag = calc_diag
            gates.append(("field_mass", "diag", np.exp(-1j * dt * diag)))

        if spec.lambda1 != 0.0:
            u_rot = expm_small(-1j * dt * spec.lambda1 * spec.link_rotation())
            links = list(range(spec.n_links))
            for i in range(0, len(links), 2):
                pair = links[i : i + 2]
                sites = [spec.link_pos(n) for n in pair]
                local = u_rot if len(pair) == 1 else np.kron(u_rot, u_rot)
                gates.append(
                    (f"err_link_{i}", "sparse", linalg.embed(local, dims, sites))
                )

        if spec.lambda2 != 0.0:
            hop2 = spec.lambda2 * np.kron(SPLUS, SMINUS)
            hop2 = hop2 + hop2.conj().T
            u_hop2 = expm_small(-1j * dt * hop2)
            for parity, name in ((0, "err_hop_even"), (1, "err_hop_odd")):
                bonds = [n for n in range(spec.n_links) if n % 2 == parity]
                if bonds:
                    layer = None
                    for n in bonds:
                        sites = [spec.matter_pos(n), spec.matter_pos(n + 1)]
                        g = linalg.embed(u_hop2, dims, sites)
                        layer = g if layer is None else (g @ layer)
                    gates.append((name, "sparse", linalg.sparsify(layer)))

        self.gates = gates
        self._flip_perms: dict[int, np.ndarray] = {}

    def flip_perm(self, pos: int) -> np.ndarray:
        if pos not in self._flip_perms:
            self._flip_perms[pos] = _site_flip_perm(self.spec.register_dims, pos)
        return self._flip_perms[pos]

    def apply_step(self, psi: np.ndarray) -> np.ndarray:
        out = psi
        for _, kind, op in self.gates:
            if kind == "sparse":
                out = op @ out
            else:
                out = op * out
        return out

    def step_matrix(self) -> np.ndarray:
        """Dense one-step unitary, for small-register checks only."""
        if self.dim > 4096:
            raise linalg.DimensionError("step_matrix only supported for dim <= 4096")
        u = np.eye(self.dim, dtype=complex)
        for _, kind, op in self.gates:
            u = (op.toarray() if kind == "sparse" else np.diag(op)) @ u
        return u


def _field_mass_diag(spec: ModelSpec) -> np.ndarray:
    dims = spec.register_dims
    dim = spec.hilbert_dim

    def site_diag(pos, local):
        pre = int(np.prod(dims[:pos])) if pos else 1
        post = int(np.prod(dims[pos + 1 :])) if pos + 1 < len(dims) else 1
        return np.tile(np.repeat(local, post), pre)

    diag = np.zeros(dim)
    if spec.f != 0.0:
        for n in range(spec.n_links):
            diag = diag + site_diag(spec.link_pos(n), spec.link_field_diag())
    if spec.mu != 0.0:
        for n in range(spec.n_matter):
            coeff = (spec.mu / 2.0) * ((-1) ** n)
            diag = diag + coeff * site_diag(spec.matter_pos(n), np.diag(SZ).real)
    return diag


def build_trotter_step(spec: ModelSpec, dt: float) -> TrotterEngine:
    """Compile the ordered local-gate program for one Trotter step."""
    return TrotterEngine(spec, dt)


def measure_charge(
    psi: np.ndarray,
    charges: GaugeCharges,
    n: int,
    rng: np.random.Generator,
) -> tuple[int, np.ndarray]:
    """Born-rule projective measurement of charge ``n``.

    Returns the sampled eigenvalue index and the projected, renormalized
    state.  Probabilities are the populations of the (diagonal) eigenspace
    masks; their sum is checked against 1 to 1e-8.
    """
    w = np.abs(psi) ** 2
    probs = np.array([float(np.dot(w, m)) for m in charges.masks[n]])
    total = probs.sum()
    if abs(total - 1.0) > 1e-8:
        raise MeasurementError(
            f"charge {n} outcome probabilities sum to {total}, expected 1"
        )
    u = rng.random() * total
    k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    k = min(k, len(probs) - 1)
    if probs[k] <= 0.0:
        k = int(np.argmax(probs))
    out = psi * charges.masks[n][k]
    out = out / math.sqrt(probs[k])
    return k, out


def noisy_premeasurement_rotation(
    psi: np.ndarray,
    spec: ModelSpec,
    charge_index: int,
    sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Random Z then X rotations on the qubits supporting one charge.

    Models the noise injected by the ancilla-coupling gates: for each qubit k
    in the support of G_n, apply exp(-i xi_k Z) exp(-i eta_k X) with
    xi, eta ~ Normal(0, sigma^2).  Only defined for qubit registers (Z2).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if spec.group != "Z2":
        raise NotImplementedError("noisy rotations are defined on qubit registers only")
    if sigma == 0.0:
        return psi
    n = charge_index
    support = [spec.link_pos(n - 1)] if n > 0 else []
    support.append(spec.matter_pos(n))
    if n < spec.n_links:
        support.append(spec.link_pos(n))
    support.sort()
    out = psi
    for pos in support:
        xi = rng.normal(0.0, sigma)
        eta = rng.normal(0.0, sigma)
        uz = np.diag([np.exp(-1j * xi), np.exp(1j * xi)])
        ux = math.cos(eta) * np.eye(2) - 1j * math.sin(eta) * SX
        out = linalg.apply_local(out, spec.register_dims, pos, uz @ ux)
    return out


def apply_bitflip_channel(
    psi: np.ndarray,
    engine: TrotterEngine,
    p_err: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[int]]:
    """Independent Pauli-X per qubit with probability ``p_err``.

    Draws exactly one uniform per register site (fixed stream layout) and
    applies the sampled flips.  Only defined when every site is a qubit.
    """
    if not 0.0 <= p_err <= 1.0:
        raise ValueError(f"p_err must be in [0, 1], got {p_err}")
    spec = engine.spec
    if spec.link_dim != 2:
        raise NotImplementedError("bit-flip channel is defined for qubit links only")
    u = rng.random(spec.n_sites)
    flipped = [int(pos) for pos in np.nonzero(u < p_err)[0]]
    out = psi
    for pos in flipped:
        out = out[engine.flip_perm(pos)]
    return out, flipped


def decode_syndrome(
    syndrome, n_charges: int
) -> list[tuple[str, int]] | None:
    """Greedy minimal-weight decoding of a set of flipped charge indices.

    Maximal runs of consecutive flipped charges decode as: length 1 -> X on
    that matter site; length 2 -> X on the shared link; length >= 3 is not
    uniquely decomposable into isolated singles and adjacent pairs and
    returns ``None`` (discard).
    """
    flips = sorted(set(int(s) for s in syndrome))
    if any(s < 0 or s >= n_charges for s in flips):
        raise ValueError(f"syndrome {flips} outside charge range 0..{n_charges - 1}")
    ops: list[tuple[str, int]] = []
    run: list[int] = []
    for s in flips + [None]:
        if run and (s is None or s != run[-1] + 1):
            if len(run) == 1:
                ops.append(("matter", run[0]))
            elif len(run) == 2:
                ops.append(("link", run[0]))
            else:
                return None
            run = []
        if s is not None:
            run.append(s)
    return ops


def decode_and_correct(
    syndrome,
    psi: np.ndarray,
    engine: TrotterEngine,
) -> tuple[np.ndarray, str, list[tuple[str, int]]]:
    """Apply the decoded inverse flips; status is ``corrected`` or ``discarded``."""
    spec = engine.spec
    ops = decode_syndrome(syndrome, spec.n_matter)
    if ops is None:
        return psi, "discarded", []
    out = psi
    for kind, n in ops:
        pos = spec.matter_pos(n) if kind == "matter" else spec.link_pos(n)
        out = out[engine.flip_perm(pos)]
    return out, "corrected", ops


class _LayerMeasurer:
    """Measures all charges of one layer in ascending order on shared weights.

    For noiseless measurements the per-charge conditional Born probabilities
    are masked sums of a single weight vector that is narrowed after each
    outcome, so a full layer costs a few passes over |psi|^2.
    """

    def __init__(self, charges: GaugeCharges, target: TargetSector):
        self.charges = charges
        self.target = target
        self.masks = [
            [m.astype(float) for m in charges.masks[n]]
            for n in range(charges.n_charges)
        ]

    def measure_layer(
        self, psi: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, list[int]]:
        """Returns (outcome indices, post-layer state, flipped charge list)."""
        w = np.abs(psi) ** 2
        outcomes = np.empty(self.charges.n_charges, dtype=np.int64)
        flipped: list[int] = []
        combined = None
        total = float(w.sum())
        for n in range(self.charges.n_charges):
            masks = self.masks[n]
            probs = np.array([float(np.dot(w, m)) for m in masks])
            psum = probs.sum()
            if abs(psum - total) > 1e-8 * max(total, 1e-300):
                raise MeasurementError(
                    f"layer probabilities for charge {n} sum to {psum}, "
                    f"expected {total}"
                )
            u = rng.random() * psum
            k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
            k = min(k, len(probs) - 1)
            if probs[k] <= 0.0:
                k = int(np.argmax(probs))
            outcomes[n] = k
            if k != self.target.indices[n]:
                flipped.append(n)
            m = masks[k]
            w = w * m
            total = float(probs[k])
            combined = m if combined is None else combined * m
        out = psi * combined
        out = out / math.sqrt(total)
        return outcomes, out, flipped


@dataclass
class DPSContext:
    """Shared immutable machinery for all trajectories of one configuration."""

    spec: ModelSpec
    engine: TrotterEngine
    charges: GaugeCharges
    target: TargetSector
    psi0: np.ndarray
    measurer: _LayerMeasurer
    calc: ObservableCalculator


def build_dps_context(spec: ModelSpec, dt: float) -> DPSContext:
    charges = build_gauss_charges(spec)
    psi0, target = prepare_meson_state(spec, charges)
    engine = TrotterEngine(spec, dt)
    measurer = _LayerMeasurer(charges, target)
    calc = ObservableCalculator(spec, charges, target)
    return DPSContext(
        spec=spec,
        engine=engine,
        charges=charges,
        target=target,
        psi0=psi0,
        measurer=measurer,
        calc=calc,
    )


def run_dps_trajectory(
    spec: ModelSpec,
    schedule: ScheduleParams,
    noise: NoiseSpec,
    seed: int | tuple[int, int],
    detail: str = "scalar",
    stop_on_violation: bool = False,
    context: DPSContext | None = None,
) -> TrajectoryResult:
    """Run one DPS trajectory and record its snapshots, outcomes and flags.

    Per step: (1) Trotter unitary including coherent error gates; (2) bit-flip
    channel when ``p_err > 0``; (3) on measurement steps, per charge in
    ascending order an optional noisy rotation followed by projective
    measurement; (4) with correction enabled, syndrome decoding and feedback.
    Snapshots are taken at t=0 and after every step.  A trajectory survives
    while no measured outcome ever differs from the target sector; decoding
    an ambiguous syndrome discards the run (evolution stops, flags set).
    """
    if detail not in ("none", "scalar", "full"):
        raise ValueError(f"unknown detail level {detail!r}")
    ctx = context or build_dps_context(spec, schedule.dt)
    if not np.isclose(ctx.engine.dt, schedule.dt):
        raise ValueError("context was built for a different Trotter step")
    seed_pair = seed if isinstance(seed, tuple) else (int(seed), 0)
    rng = trajectory_rng(*seed_pair)

    n_steps = schedule.n_steps
    times = schedule.dt * np.arange(n_steps + 1)
    record_scalar = detail in ("scalar", "full")
    e_field = np.full(n_steps + 1, np.nan) if record_scalar else None
    e_var = np.full(n_steps + 1, np.nan) if record_scalar else None
    dg = np.full(n_steps + 1, np.nan) if record_scalar else None
    exc = (
        np.full((n_steps + 1, spec.n_sites), np.nan) if detail == "full" else None
    )

    psi = ctx.psi0
    record = MeasurementRecord()
    survived = True
    corrected_ok = schedule.correction_enabled
    discarded = False
    mis_corrected = False
    flips_log: list[tuple[int, int]] = []
    corrections: list[tuple[int, str, int]] = []
    window_flips: set[int] = set()

    def take_snapshot(i: int):
        if not record_scalar:
            return
        snap = ctx.calc.snapshot(psi, times[i])
        e_field[i] = snap.e_field
        e_var[i] = snap.e_field_var
        dg[i] = snap.gauge_violation
        if exc is not None:
            exc[i] = snap.excitations

    take_snapshot(0)

    for step in range(1, n_steps + 1):
        psi = ctx.engine.apply_step(psi)
        if noise.p_err > 0.0:
            psi, flipped_sites = apply_bitflip_channel(
                psi, ctx.engine, noise.p_err, rng
            )
            for pos in flipped_sites:
                flips_log.append((step, pos))
                window_flips.symmetric_difference_update({pos})
        if schedule.measure_enabled and step % schedule.measure_every == 0:
            if noise.sigma > 0.0:
                outcomes = np.empty(ctx.charges.n_charges, dtype=np.int64)
                flipped = []
                for n in range(ctx.charges.n_charges):
                    psi = noisy_premeasurement_rotation(
                        psi, spec, n, noise.sigma, rng
                    )
                    k, psi = measure_charge(psi, ctx.charges, n, rng)
                    outcomes[n] = k
                    if k != ctx.target.indices[n]:
                        flipped.append(n)
            else:
                outcomes, psi, flipped = ctx.measurer.measure_layer(psi, rng)
            record.steps.append(step)
            record.outcomes.append(outcomes)
            if flipped:
                survived = False
                if record.violation_step is None:
                    record.violation_step = step
            if schedule.correction_enabled:
                if flipped:
                    psi, status, ops = decode_and_correct(
                        flipped, psi, ctx.engine
                    )
                    if status == "discarded":
                        discarded = True
                        corrected_ok = False
                        take_snapshot(step)
                        break
                    applied = {
                        (ctx.spec.matter_pos(n) if kind == "matter"
                         else ctx.spec.link_pos(n))
                        for kind, n in ops
                    }
                    if applied != window_flips:
                        mis_corrected = True
                    for kind, n in ops:
                        corrections.append((step, kind, n))
                elif window_flips:
                    # Syndrome canceled but the net flip operator is not the
                    # identity: an undetectable error slipped through.
                    mis_corrected = True
                window_flips = set()
            elif flipped and stop_on_violation:
                take_snapshot(step)
                break
        take_snapshot(step)

    return TrajectoryResult(
        seed=seed_pair,
        protocol="dps_corrected" if schedule.correction_enabled else "dps",
        times=times,
        e_field=e_field,
        e_field_var=e_var,
        gauge_violation=dg,
        excitations=exc,
        record=record,
        survived=survived,
        corrected_ok=corrected_ok and not discarded,
        discarded_ambiguous=discarded,
        mis_corrected=mis_corrected,
        flips_injected=flips_log,
        corrections_applied=corrections,
    )


def survival_estimate(
    lam: float,
    dt_m: float,
    n_charges: int,
    t: float,
    fidelity: float = 1.0,
) -> float:
    """Closed-form survival probability of the monitored digital evolution.

    ``exp(-[lam^2 dt_m + (1 - F)/dt_m] N t)``; the ideal-measurement case
    F = 1 reduces to ``exp(-lam^2 dt_m N t)``.
    """
    if dt_m <= 0:
        raise ValueError("dt_m must be > 0")
    if n_charges < 1:
        raise ValueError("n_charges must be >= 1")
    if t < 0:
        raise ValueError("t must be >= 0")
    rate = lam**2 * dt_m + (1.0 - fidelity) / dt_m
    return math.exp(-rate * n_charges * t)
