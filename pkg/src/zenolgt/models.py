"""Hamiltonians, gauge charges, projectors and observables for the three models.

Register layout (open boundary): matter and links interleave as
``m0 l01 m1 l12 ... m(N-1)`` so every local term acts on adjacent or
near-adjacent register positions.  Matter sites are qubits; links are qubits
for Z2 and three-level systems for Z3 and the spin-1 U(1) quantum link model.

All gauge charges are diagonal in the computational (field) basis, which the
measurement and projection machinery exploits throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import linalg
from .linalg import DimensionError, embed, identity, sparsify

GROUPS = ("Z2", "Z3", "U1_S1")

# Qubit operators; basis |0> = sz eigenvalue +1, |1> = -1.
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SPLUS = np.array([[0, 1], [0, 0]], dtype=complex)   # |1> -> |0>, raises sz
SMINUS = SPLUS.T.conj()
ID2 = np.eye(2, dtype=complex)

OMEGA = np.exp(2j * np.pi / 3)
# Clock pair on the 3-level flux basis |m>, m = 0, 1, 2:
#   Q|m> = w^m |m>,  P|m> = |m+1 mod 3>,  QP = w PQ.
CLOCK_Q = np.diag([1.0 + 0j, OMEGA, OMEGA**2])
CLOCK_P = np.roll(np.eye(3, dtype=complex), 1, axis=0)

# Spin-1 link operators in the basis |m>, m = -1, 0, +1.
SPIN1_SZ = np.diag([-1.0 + 0j, 0.0, 1.0])
SPIN1_RAISE = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=complex
)  # U|m> = |m+1>, truncated
SPIN1_SX = np.array(
    [[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex
) / np.sqrt(2)


@dataclass(frozen=True)
class ModelSpec:
    """Gauge group, couplings and lattice size of one model instance.

    Couplings: ``J`` gauge-assisted hopping, ``f`` electric field, ``mu``
    staggered mass, ``lambda1`` link-rotation error strength, ``lambda2``
    unassisted-hopping error strength.  Boundary is open.
    """

    group: str = "Z2"
    n_matter: int = 3
    J: float = 1.0
    f: float = 0.5
    mu: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}, expected one of {GROUPS}")
        if self.n_matter < 2:
            raise ValueError(f"n_matter must be >= 2, got {self.n_matter}")

    @property
    def n_links(self) -> int:
        return self.n_matter - 1

    @property
    def n_sites(self) -> int:
        return 2 * self.n_matter - 1

    @property
    def link_dim(self) -> int:
        return 2 if self.group == "Z2" else 3

    @cached_property
    def register_dims(self) -> tuple[int, ...]:
        dims = []
        for pos in range(self.n_sites):
            dims.append(2 if pos % 2 == 0 else self.link_dim)
        return tuple(dims)

    @property
    def hilbert_dim(self) -> int:
        return int(np.prod(self.register_dims))

    def matter_pos(self, n: int) -> int:
        return 2 * n

    def link_pos(self, n: int) -> int:
        """Register position of the link between matter sites n and n+1."""
        return 2 * n + 1

    def link_rotation(self) -> np.ndarray:
        """Single-link field-rotation generator of the coherent error."""
        if self.group == "Z2":
            return SX
        if self.group == "Z3":
            return CLOCK_P + CLOCK_P.conj().T
        return SPIN1_RAISE + SPIN1_RAISE.conj().T

    def hop_connector(self) -> np.ndarray:
        """Link operator sandwiched in the gauge-assisted hopping term."""
        if self.group == "Z2":
            return SX
        if self.group == "Z3":
            return CLOCK_P.conj().T
        return SPIN1_RAISE

    def link_field_diag(self) -> np.ndarray:
        """Diagonal of the single-link electric term (coupling included)."""
        if self.group == "Z2":
            return self.f * np.diag(SZ).real.astype(float)
        if self.group == "Z3":
            return (self.f / 2.0) * np.diag(CLOCK_Q + CLOCK_Q.conj().T).real
        return self.f * np.diag(SPIN1_SZ @ SPIN1_SZ).real

    def link_reference_index(self) -> int:
        """Field-basis level every link starts in (m = 0 for 3-level links)."""
        if self.group == "U1_S1":
            return 1  # basis ordered m = -1, 0, +1
        return 0


def _hop_term(spec: ModelSpec, strength: float) -> np.ndarray:
    """Dense local generator strength*(s+ C s- + h.c.) on (matter, link, matter)."""
    conn = spec.hop_connector()
    term = strength * np.kron(SPLUS, np.kron(conn, SMINUS))
    return term + term.conj().T


def _bond_sites(spec: ModelSpec, n: int) -> list[int]:
    return [spec.matter_pos(n), spec.link_pos(n), spec.matter_pos(n + 1)]


def build_hamiltonian(spec: ModelSpec) -> sp.csr_matrix:
    """Gauge-invariant Hamiltonian: hopping + electric field + staggered mass."""
    dims = spec.register_dims
    dim = spec.hilbert_dim
    h = sp.csr_matrix((dim, dim), dtype=complex)
    if spec.J != 0.0:
        for n in range(spec.n_links):
            h = h + embed(_hop_term(spec, spec.J), dims, _bond_sites(spec, n))
    if spec.f != 0.0:
        for n in range(spec.n_links):
            d = sp.diags(spec.link_field_diag().astype(complex))
            h = h + embed(d, dims, [spec.link_pos(n)])
    if spec.mu != 0.0:
        for n in range(spec.n_matter):
            coeff = (spec.mu / 2.0) * ((-1) ** n)
            h = h + embed(coeff * SZ, dims, [spec.matter_pos(n)])
    return sparsify(h)


def build_error_hamiltonian(spec: ModelSpec) -> sp.csr_matrix:
    """Gauge-breaking error Hamiltonian: link rotations + unassisted hopping."""
    dims = spec.register_dims
    dim = spec.hilbert_dim
    h = sp.csr_matrix((dim, dim), dtype=complex)
    if spec.lambda1 != 0.0:
        rot = spec.lambda1 * spec.link_rotation()
        for n in range(spec.n_links):
            h = h + embed(rot, dims, [spec.link_pos(n)])
    if spec.lambda2 != 0.0:
        hop = spec.lambda2 * np.kron(SPLUS, SMINUS)
        hop = hop + hop.conj().T
        for n in range(spec.n_links):
            h = h + embed(hop, dims, [spec.matter_pos(n), spec.matter_pos(n + 1)])
    return sparsify(h)


def build_total_hamiltonian(spec: ModelSpec) -> sp.csr_matrix:
    return sparsify(build_hamiltonian(spec) + build_error_hamiltonian(spec))


def _charge_diag(spec: ModelSpec, n: int) -> np.ndarray:
    """Diagonal of the Gauss-law generator G_n on the full register.

    Boundary convention: a missing link factor is the identity for Z2/Z3 and
    a zero background field value for the U(1) model.
    """
    dims = spec.register_dims
    dim = spec.hilbert_dim

    def site_diag(pos: int, local_diag: np.ndarray) -> np.ndarray:
        full = np.ones(dim, dtype=complex)
        d = dims[pos]
        pre = int(np.prod(dims[:pos])) if pos else 1
        post = int(np.prod(dims[pos + 1 :])) if pos + 1 < len(dims) else 1
        full = np.tile(np.repeat(local_diag, post), pre)
        return full

    sz_m = site_diag(spec.matter_pos(n), np.diag(SZ))
    has_left = n > 0
    has_right = n < spec.n_links

    if spec.group == "Z2":
        g = -sz_m
        if has_left:
            g = g * site_diag(spec.link_pos(n - 1), np.diag(SZ))
        if has_right:
            g = g * site_diag(spec.link_pos(n), np.diag(SZ))
        return g

    if spec.group == "Z3":
        matter_phase = np.exp(-1j * (np.pi / 3.0) * (1.0 + np.diag(SZ).real))
        g = site_diag(spec.matter_pos(n), matter_phase)
        if has_left:
            g = g * site_diag(spec.link_pos(n - 1), np.diag(CLOCK_Q))
        if has_right:
            g = g * site_diag(spec.link_pos(n), np.diag(CLOCK_Q).conj())
        return g

    # U1_S1: G_n = Sz(right) - Sz(left) - ((-1)^n + sz_n) / 2
    g = -0.5 * (((-1.0) ** n) + sz_m)
    if has_left:
        g = g - site_diag(spec.link_pos(n - 1), np.diag(SPIN1_SZ))
    if has_right:
        g = g + site_diag(spec.link_pos(n), np.diag(SPIN1_SZ))
    return g


def _classify_eigenvalues(diag: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Distinct eigenvalues of a diagonal operator and their index masks.

    Grouping uses values rounded to 9 decimals; the stored representative of
    each group is the exact mean of its diagonal entries.
    """
    keys = np.round(diag, 9)
    uniq = np.unique(keys)
    order = np.lexsort((uniq.imag, uniq.real))
    uniq = uniq[order]
    masks = [keys == u for u in uniq]
    values = np.array([diag[m].mean() for m in masks])
    return values, masks


@dataclass(frozen=True)
class GaugeCharges:
    """The N Gauss-law generators with their spectral data.

    ``diags[n]`` is the full diagonal of G_n, ``eigenvalues[n]`` its distinct
    eigenvalues and ``masks[n][k]`` the boolean basis mask of the k-th
    eigenspace, from which projectors are materialized on demand.
    """

    spec: ModelSpec
    diags: tuple[np.ndarray, ...]
    eigenvalues: tuple[np.ndarray, ...]
    masks: tuple[tuple[np.ndarray, ...], ...]

    @property
    def n_charges(self) -> int:
        return len(self.diags)

    def operator(self, n: int) -> sp.csr_matrix:
        return sp.diags(self.diags[n]).tocsr()

    @property
    def operators(self) -> tuple[sp.csr_matrix, ...]:
        return tuple(self.operator(n) for n in range(self.n_charges))

    def projector(self, n: int, k: int) -> sp.csr_matrix:
        return sp.diags(self.masks[n][k].astype(complex)).tocsr()

    def projectors(self, n: int) -> tuple[sp.csr_matrix, ...]:
        return tuple(self.projector(n, k) for k in range(len(self.eigenvalues[n])))

    @property
    def all_unitary(self) -> bool:
        """True when every G_n is unitary (then G+G = 1 and the jump rate is flat)."""
        return all(
            np.allclose(np.abs(d), 1.0, atol=1e-12) for d in self.diags
        )

    def eigenvalue_index(self, n: int, value: complex) -> int:
        dist = np.abs(self.eigenvalues[n] - value)
        k = int(np.argmin(dist))
        if dist[k] > 1e-6:
            raise ValueError(
                f"{value} is not an eigenvalue of charge {n}; "
                f"candidates {self.eigenvalues[n]}"
            )
        return k


@dataclass(frozen=True)
class TargetSector:
    """Per-charge target eigenvalues (and their indices into the charge spectra)."""

    values: tuple[complex, ...]
    indices: tuple[int, ...]

    @property
    def n_charges(self) -> int:
        return len(self.values)


def build_gauss_charges(spec: ModelSpec) -> GaugeCharges:
    diags = []
    eigs = []
    masks = []
    for n in range(spec.n_matter):
        d = _charge_diag(spec, n)
        e, m = _classify_eigenvalues(d)
        diags.append(d)
        eigs.append(e)
        masks.append(tuple(m))
    return GaugeCharges(
        spec=spec, diags=tuple(diags), eigenvalues=tuple(eigs), masks=tuple(masks)
    )


def _basis_state(dims, levels) -> np.ndarray:
    idx = int(np.ravel_multi_index([int(x) for x in levels], [int(d) for d in dims]))
    psi = np.zeros(int(np.prod(dims)), dtype=complex)
    psi[idx] = 1.0
    return psi


def _matter_reference_levels(spec: ModelSpec) -> list[int]:
    if spec.group == "U1_S1":
        # Staggered vacuum: sz_n = -(-1)^n satisfies G_n = 0 on every site.
        return [1 if n % 2 == 0 else 0 for n in range(spec.n_matter)]
    return [0] * spec.n_matter


def _sector_of_basis_state(
    spec: ModelSpec, charges: GaugeCharges, psi: np.ndarray
) -> TargetSector:
    values = []
    indices = []
    for n in range(charges.n_charges):
        gpsi = charges.diags[n] * psi
        val = complex(np.vdot(psi, gpsi))
        k = charges.eigenvalue_index(n, val)
        value = complex(charges.eigenvalues[n][k])
        if np.linalg.norm(gpsi - value * psi) > 1e-10:
            raise AssertionError(
                f"prepared state is not an eigenstate of charge {n}"
            )
        values.append(value)
        indices.append(k)
    return TargetSector(values=tuple(values), indices=tuple(indices))


def prepare_reference_state(
    spec: ModelSpec, charges: GaugeCharges | None = None
) -> tuple[np.ndarray, TargetSector]:
    """Defect-free product state: links in the field reference level, matter
    in its vacuum configuration.  For the U(1) model this is the staggered
    vacuum with G_n = 0 on all sites."""
    charges = charges or build_gauss_charges(spec)
    levels = []
    matter = _matter_reference_levels(spec)
    for pos in range(spec.n_sites):
        if pos % 2 == 0:
            levels.append(matter[pos // 2])
        else:
            levels.append(spec.link_reference_index())
    psi = _basis_state(spec.register_dims, levels)
    return psi, _sector_of_basis_state(spec, charges, psi)


def prepare_meson_state(
    spec: ModelSpec, charges: GaugeCharges | None = None
) -> tuple[np.ndarray, TargetSector]:
    """Reference state with the central matter site flipped (one mass defect).

    ``center = n_matter // 2``; for odd N this is the exact chain center.
    The returned sector is the verified simultaneous eigenvalue set of the
    state, defect included.
    """
    charges = charges or build_gauss_charges(spec)
    center = spec.n_matter // 2
    matter = _matter_reference_levels(spec)
    matter[center] = 1 - matter[center]
    levels = []
    for pos in range(spec.n_sites):
        if pos % 2 == 0:
            levels.append(matter[pos // 2])
        else:
            levels.append(spec.link_reference_index())
    psi = _basis_state(spec.register_dims, levels)
    return psi, _sector_of_basis_state(spec, charges, psi)


def charge_expectations(psi: np.ndarray, charges: GaugeCharges) -> np.ndarray:
    w = np.abs(psi) ** 2
    return np.array([np.dot(d, w) for d in charges.diags])


def gauge_violation(
    psi: np.ndarray, charges: GaugeCharges, target: TargetSector
) -> float:
    """Normalized distance from the target sector, in [0, 1].

    Computed as ``mean_n (1 - <P_n,target>)``, which for Z2 coincides exactly
    with ``(1/2N) sum_n |<G_n> - g_n|`` since ``|<G> -+ 1| = 2(1 - <P+->)``.
    """
    w = np.abs(psi) ** 2
    total = 0.0
    for n in range(charges.n_charges):
        mask = charges.masks[n][target.indices[n]]
        total += 1.0 - float(np.dot(w, mask))
    val = total / charges.n_charges
    return float(min(max(val, 0.0), 1.0))


@dataclass(frozen=True)
class ObservableSnapshot:
    """Per-time observables of one state: site excitations, electric energy,
    its quantum variance, and the gauge violation."""

    time: float
    excitations: np.ndarray
    e_field: float
    e_field_var: float
    gauge_violation: float


class ObservableCalculator:
    """Caches the diagonals needed to score states repeatedly.

    Exploits that the electric Hamiltonian, the site-excitation operators and
    all charge projectors are diagonal in the computational basis, so every
    snapshot costs a handful of dot products with |psi|^2.
    """

    def __init__(
        self,
        spec: ModelSpec,
        charges: GaugeCharges | None = None,
        target: TargetSector | None = None,
    ):
        self.spec = spec
        self.charges = charges
        self.target = target
        dims = spec.register_dims
        dim = spec.hilbert_dim

        def site_diag(pos, local):
            pre = int(np.prod(dims[:pos])) if pos else 1
            post = int(np.prod(dims[pos + 1 :])) if pos + 1 < len(dims) else 1
            return np.tile(np.repeat(local, post), pre)

        self.hf_diag = np.zeros(dim)
        for n in range(spec.n_links):
            self.hf_diag += site_diag(spec.link_pos(n), spec.link_field_diag())
        self.exc_diags = []
        ref = spec.link_reference_index()
        for pos in range(spec.n_sites):
            if pos % 2 == 0:
                local = np.array([0.0, 1.0])  # (1 - sz)/2
            else:
                local = np.ones(spec.link_dim)
                local[ref] = 0.0  # population outside the reference level
            self.exc_diags.append(site_diag(pos, local))
        self.exc_matrix = np.stack(self.exc_diags)
        if charges is not None and target is not None:
            self.target_masks = [
                charges.masks[n][target.indices[n]].astype(float)
                for n in range(charges.n_charges)
            ]
        else:
            self.target_masks = None

    def snapshot(self, psi: np.ndarray, time: float) -> ObservableSnapshot:
        w = np.abs(psi) ** 2
        ef = float(np.dot(self.hf_diag, w))
        ef2 = float(np.dot(self.hf_diag**2, w))
        exc = self.exc_matrix @ w
        if self.target_masks is not None:
            dg = 1.0 - float(np.mean([np.dot(m, w) for m in self.target_masks]))
            dg = min(max(dg, 0.0), 1.0)
        else:
            dg = float("nan")
        return ObservableSnapshot(
            time=time,
            excitations=exc,
            e_field=ef,
            e_field_var=max(ef2 - ef * ef, 0.0),
            gauge_violation=dg,
        )


def observables(
    psi: np.ndarray,
    spec: ModelSpec,
    charges: GaugeCharges | None = None,
    target: TargetSector | None = None,
    time: float = 0.0,
) -> ObservableSnapshot:
    return ObservableCalculator(spec, charges, target).snapshot(psi, time)
