"""Vectorized Lindblad superoperators, spectra over a rate grid, and the
dense master-equation oracle.

Vectorization is column-stacking: ``vec(rho)[i + D*j] = rho[i, j]`` and
``vec(A rho B) = (B^T kron A) vec(rho)``.  The generator is

    L = -i [ (I kron H) - (H^T kron I) ]
        + gamma sum_n D[G_n]
        + (1 - F) gamma sum_k ( D[X_k] + D[Z_k] )        (when F < 1)

with ``D[L] = (conj(L) kron L) - (I kron L^dag L)/2 - ((L^dag L)^T kron I)/2``.
The per-site noise pair (X_k, Z_k) uses the Pauli matrices on qubits and the
group's shift/clock (Z3) or spin-1 x/z (U1) operators on three-level links.

The superoperator is stored sparse; spectra extract exact invariant blocks
(labelled by conserved matter magnetization on both tensor factors) before
running the dense eigensolver, which keeps three-level-link models tractable.
The block structure is verified entry-wise at build time and silently
collapses to a single block if the verification ever fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linalg import DimensionError, eig_general
from .models import (
    CLOCK_P,
    CLOCK_Q,
    SPIN1_SX,
    SPIN1_SZ,
    SX,
    SZ,
    GaugeCharges,
    ModelSpec,
    ObservableCalculator,
    TargetSector,
    build_gauss_charges,
    build_total_hamiltonian,
    embed,
)

LIOUVILLIAN_DIM_CAP = 72  # Hilbert dimension; superoperator is its square
INTEGRATE_DIM_CAP = 64
ZERO_EIGENVALUE_TOL = 1e-10


@dataclass
class Superoperator:
    """Sparse vectorized generator with its invariant-block labelling."""

    matrix: sp.csr_matrix
    hilbert_dim: int
    gamma: float
    fidelity: float
    spec: ModelSpec
    block_labels: np.ndarray | None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass
class SpectrumResult:
    """All complex eigenvalues of one superoperator, Re-descending."""

    gamma: float
    fidelity: float
    eigenvalues: np.ndarray


def _dissipator(op: sp.spmatrix, dim: int) -> sp.csr_matrix:
    op = sp.csr_matrix(op)
    ldl = (op.conj().T @ op).tocsr()
    eye = sp.identity(dim, dtype=complex, format="csr")
    out = sp.kron(op.conj(), op, format="csr")
    out = out - 0.5 * sp.kron(eye, ldl, format="csr")
    out = out - 0.5 * sp.kron(ldl.T, eye, format="csr")
    return out.tocsr()


def _noise_pair(spec: ModelSpec, pos: int) -> list[np.ndarray]:
    """Per-site (X-like, Z-like) noise operators for the noisy-measurement terms."""
    if spec.register_dims[pos] == 2:
        return [SX, SZ]
    if spec.group == "Z3":
        return [CLOCK_P, CLOCK_Q]
    return [SPIN1_SX, SPIN1_SZ]


def _matter_magnetization(spec: ModelSpec) -> np.ndarray:
    """Total matter-qubit sz per basis state (conserved by every generator term
    except the matter bit-flip noise, which shifts it by +-2 on both factors)."""
    dims = spec.register_dims
    dim = spec.hilbert_dim
    total = np.zeros(dim)
    for n in range(spec.n_matter):
        pos = spec.matter_pos(n)
        pre = int(np.prod(dims[:pos])) if pos else 1
        post = int(np.prod(dims[pos + 1 :])) if pos + 1 < len(dims) else 1
        total = total + np.tile(np.repeat(np.diag(SZ).real, post), pre)
    return total


def build_liouvillian(
    spec: ModelSpec,
    gamma: float,
    fidelity: float = 1.0,
    dim_cap: int = LIOUVILLIAN_DIM_CAP,
    charges: GaugeCharges | None = None,
) -> Superoperator:
    """Assemble the monitored-dynamics generator for one measurement rate."""
    if not 0.0 < fidelity <= 1.0:
        raise ValueError(f"fidelity must be in (0, 1], got {fidelity}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    d = spec.hilbert_dim
    if d > dim_cap:
        raise DimensionError(
            f"Hilbert dimension {d} exceeds the Liouvillian cap {dim_cap}"
        )
    charges = charges or build_gauss_charges(spec)
    h = build_total_hamiltonian(spec)
    eye = sp.identity(d, dtype=complex, format="csr")
    lio = -1j * (sp.kron(eye, h, format="csr") - sp.kron(h.T, eye, format="csr"))
    if gamma > 0.0:
        for g in charges.diags:
            lio = lio + gamma * _dissipator(sp.diags(g), d)
        if fidelity < 1.0:
            rate = (1.0 - fidelity) * gamma
            for pos in range(spec.n_sites):
                for local in _noise_pair(spec, pos):
                    op = embed(local, spec.register_dims, [pos])
                    lio = lio + rate * _dissipator(op, d)
    lio = sp.csr_matrix(lio)
    lio.eliminate_zeros()

    m = _matter_magnetization(spec)
    idx_row = np.tile(np.arange(d), d)      # vec index v = i + D*j
    idx_col = np.repeat(np.arange(d), d)
    if fidelity < 1.0:
        labels = np.mod(m[idx_row] - m[idx_col], 4.0)
    else:
        span = 2.0 * spec.n_matter + 1.0
        labels = m[idx_row] * span + m[idx_col]
    coo = lio.tocoo()
    if not np.array_equal(labels[coo.row], labels[coo.col]):
        labels = None
    return Superoperator(
        matrix=lio,
        hilbert_dim=d,
        gamma=gamma,
        fidelity=fidelity,
        spec=spec,
        block_labels=labels,
    )


def spectrum(superop: Superoperator) -> SpectrumResult:
    """Full complex spectrum via blockwise dense eigendecomposition."""
    mat = superop.matrix
    if superop.block_labels is None:
        vals = eig_general(mat.toarray(), dim_cap=mat.shape[0])
    else:
        pieces = []
        for label in np.unique(superop.block_labels):
            idx = np.nonzero(superop.block_labels == label)[0]
            block = mat[np.ix_(idx, idx)].toarray()
            pieces.append(eig_general(block, dim_cap=block.shape[0]))
        vals = np.concatenate(pieces)
    order = np.argsort(-vals.real, kind="stable")
    return SpectrumResult(
        gamma=superop.gamma, fidelity=superop.fidelity, eigenvalues=vals[order]
    )


def pure_density(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


@dataclass
class MasterEquationSeries:
    """Observable series of exp(L t) applied to an initial density matrix."""

    times: np.ndarray
    e_field: np.ndarray
    gauge_violation: np.ndarray
    trace: np.ndarray
    hermiticity_defect: np.ndarray
    rho_final: np.ndarray


def integrate_master_equation(
    spec: ModelSpec,
    gamma: float,
    fidelity: float,
    rho0: np.ndarray,
    t_grid: np.ndarray,
    charges: GaugeCharges | None = None,
    target: TargetSector | None = None,
) -> MasterEquationSeries:
    """Ensemble-exact reference dynamics on a uniform time grid."""
    d = spec.hilbert_dim
    if d > INTEGRATE_DIM_CAP:
        raise DimensionError(
            f"master-equation integration capped at dim {INTEGRATE_DIM_CAP}, got {d}"
        )
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < 2 or not np.allclose(np.diff(t_grid), t_grid[1] - t_grid[0]):
        raise ValueError("t_grid must be uniform with at least two points")
    charges = charges or build_gauss_charges(spec)
    superop = build_liouvillian(spec, gamma, fidelity, charges=charges)
    calc = ObservableCalculator(spec, charges, target)
    v0 = np.asarray(rho0, dtype=complex).reshape(d * d, order="F")
    cols = spla.expm_multiply(
        superop.matrix,
        v0,
        start=t_grid[0],
        stop=t_grid[-1],
        num=len(t_grid),
        endpoint=True,
    )
    n_t = len(t_grid)
    e_field = np.empty(n_t)
    dg = np.empty(n_t)
    trace = np.empty(n_t)
    herm = np.empty(n_t)
    rho = None
    for i in range(n_t):
        rho = cols[i].reshape(d, d, order="F")
        diag = np.diag(rho)
        trace[i] = float(diag.sum().real)
        herm[i] = float(np.abs(rho - rho.conj().T).max())
        e_field[i] = float(np.dot(calc.hf_diag, diag.real))
        if target is not None:
            pops = [
                float(np.dot(charges.masks[n][target.indices[n]], diag.real))
                for n in range(charges.n_charges)
            ]
            dg[i] = min(max(1.0 - float(np.mean(pops)), 0.0), 1.0)
        else:
            dg[i] = np.nan
    return MasterEquationSeries(
        times=t_grid,
        e_field=e_field,
        gauge_violation=dg,
        trace=trace,
        hermiticity_defect=herm,
        rho_final=rho,
    )


def _two_means_1d(x: np.ndarray) -> tuple[float, float]:
    """Exact 1-d 2-means (scan over sorted splits); returns (lo, hi) centroids."""
    xs = np.sort(x)
    n = len(xs)
    if n == 1:
        return float(xs[0]), float(xs[0])
    pref = np.cumsum(xs)
    pref2 = np.cumsum(xs**2)
    best_cost = np.inf
    best_split = 1
    for s in range(1, n):
        left_ss = pref2[s - 1] - pref[s - 1] ** 2 / s
        right_sum = pref[-1] - pref[s - 1]
        right_ss = (pref2[-1] - pref2[s - 1]) - right_sum**2 / (n - s)
        cost = left_ss + right_ss
        if cost < best_cost:
            best_cost = cost
            best_split = s
    lo = float(pref[best_split - 1] / best_split)
    hi = float((pref[-1] - pref[best_split - 1]) / (n - best_split))
    return lo, hi


@dataclass
class BranchAnalysis:
    """Slow/fast decay-rate clusters across the rate grid and their power laws."""

    gammas: np.ndarray
    slow_mags: np.ndarray
    fast_mags: np.ndarray
    separations: np.ndarray
    slope_slow: float
    slope_fast: float
    intercept_slow: float
    intercept_fast: float
    branch_point: float | None


def branch_slopes(
    spectra: list[SpectrumResult],
    lam: float,
    fit_window: tuple[float, float] = (3.0, 100.0),
    zero_tol: float = ZERO_EIGENVALUE_TOL,
    min_slope_gap: float = 0.5,
) -> BranchAnalysis:
    """Track the two |Re eigenvalue| clusters over the rate grid.

    Per rate, the nonzero decay magnitudes are split by exact 1-d 2-means in
    log magnitude.  Power laws are fitted over ``gamma/lam`` inside
    ``fit_window``; the branch point is the crossing of the two fitted lines
    (the rate where slow and fast clusters merge).  Degenerate fits (slopes
    closer than ``min_slope_gap``, as for ``lam = 0`` where everything scales
    with the rate) report no branch.
    """
    if len(spectra) < 8:
        raise ValueError("need at least 8 grid points to fit branch slopes")
    ordered = sorted(spectra, key=lambda s: s.gamma)
    gammas = np.array([s.gamma for s in ordered])
    slow = np.empty(len(ordered))
    fast = np.empty(len(ordered))
    sep = np.empty(len(ordered))
    for i, s in enumerate(ordered):
        mags = np.abs(s.eigenvalues.real)
        mags = mags[mags > zero_tol]
        if len(mags) == 0:
            slow[i] = fast[i] = np.nan
            sep[i] = 0.0
            continue
        lo, hi = _two_means_1d(np.log10(mags))
        slow[i] = 10.0**lo
        fast[i] = 10.0**hi
        sep[i] = hi - lo

    if lam > 0:
        in_window = (gammas >= fit_window[0] * lam) & (gammas <= fit_window[1] * lam)
    else:
        in_window = np.ones_like(gammas, dtype=bool)
    in_window &= np.isfinite(slow) & np.isfinite(fast)
    if in_window.sum() < 3:
        raise ValueError("fewer than 3 usable grid points inside the fit window")
    lx = np.log10(gammas[in_window])
    s_slow, b_slow = np.polyfit(lx, np.log10(slow[in_window]), 1)
    s_fast, b_fast = np.polyfit(lx, np.log10(fast[in_window]), 1)

    branch_point = None
    if abs(s_fast - s_slow) >= min_slope_gap:
        x_cross = (b_slow - b_fast) / (s_fast - s_slow)
        branch_point = float(10.0**x_cross)
    return BranchAnalysis(
        gammas=gammas,
        slow_mags=slow,
        fast_mags=fast,
        separations=sep,
        slope_slow=float(s_slow),
        slope_fast=float(s_fast),
        intercept_slow=float(b_slow),
        intercept_fast=float(b_fast),
        branch_point=branch_point,
    )
