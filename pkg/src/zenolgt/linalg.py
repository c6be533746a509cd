"""Complex sparse/dense matrix substrate shared by all model builders.

Conventions fixed project-wide:

* Operators are ``scipy.sparse`` matrices (CSR) or dense ``numpy`` arrays;
  states are plain 1d complex ``numpy`` arrays.
* Site 0 of a register is the slowest-varying tensor index, i.e. the
  leftmost Kronecker factor.
* Sparse results drop entries below ``DROP_TOL`` (well under the double
  precision noise floor of accumulated products).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

DEFAULT_DIM_CAP = 1 << 20
EXPM_DIM_CAP = 64
EIG_DIM_CAP = 4096
DROP_TOL = 1e-14


class DimensionError(ValueError):
    """Operator/register dimensions are inconsistent or exceed a cap."""


def as_sparse(m) -> sp.csr_matrix:
    if sp.issparse(m):
        return m.tocsr()
    return sp.csr_matrix(np.asarray(m, dtype=complex))


def as_dense(m) -> np.ndarray:
    if sp.issparse(m):
        return m.toarray()
    return np.asarray(m, dtype=complex)


def sparsify(m, tol: float = DROP_TOL) -> sp.csr_matrix:
    """CSR copy of ``m`` with entries of magnitude <= ``tol`` dropped."""
    out = as_sparse(m).copy()
    out.data[np.abs(out.data) <= tol] = 0.0
    out.eliminate_zeros()
    return out


def kron(a, b, dim_cap: int = DEFAULT_DIM_CAP) -> sp.csr_matrix:
    """Kronecker product with the left factor slowest-varying."""
    a = as_sparse(a)
    b = as_sparse(b)
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if max(rows, cols) > dim_cap:
        raise DimensionError(
            f"kron result {rows}x{cols} exceeds dimension cap {dim_cap}"
        )
    return sp.kron(a, b, format="csr")


def identity(dim: int) -> sp.csr_matrix:
    return sp.identity(dim, dtype=complex, format="csr")


def embed(
    local,
    register_dims,
    targets,
    dim_cap: int = DEFAULT_DIM_CAP,
) -> sp.csr_matrix:
    """Embed a local operator into the full register.

    Acts as ``local`` on the (sorted, possibly non-contiguous) ``targets``
    and as the identity elsewhere.  ``local`` must be given in the tensor
    basis of the target sites taken in ascending order.
    """
    dims = [int(d) for d in register_dims]
    targets = [int(t) for t in targets]
    n_sites = len(dims)
    if any(t < 0 or t >= n_sites for t in targets):
        raise DimensionError(f"targets {targets} out of range for {n_sites} sites")
    if sorted(set(targets)) != targets:
        raise DimensionError(f"targets must be sorted and unique, got {targets}")
    d_targets = [dims[t] for t in targets]
    d_local = int(np.prod(d_targets))
    loc = sp.coo_matrix(as_sparse(local))
    if loc.shape != (d_local, d_local):
        raise DimensionError(
            f"local operator is {loc.shape}, targets span dimension {d_local}"
        )
    full_dim = int(np.prod(dims))
    if full_dim > dim_cap:
        raise DimensionError(f"register dimension {full_dim} exceeds cap {dim_cap}")

    others = [s for s in range(n_sites) if s not in targets]
    d_others = [dims[s] for s in others]
    n_other = int(np.prod(d_others)) if others else 1

    # Decode local row / column indices into per-target digits, enumerate all
    # identity-site configurations, and reassemble global flat indices.
    nnz = loc.nnz
    row_digits = np.array(np.unravel_index(loc.row, d_targets))  # (n_t, nnz)
    col_digits = np.array(np.unravel_index(loc.col, d_targets))
    if others:
        other_digits = np.array(np.unravel_index(np.arange(n_other), d_others))
    else:
        other_digits = np.zeros((0, 1), dtype=np.intp)

    full_rows = np.empty((n_sites, nnz * n_other), dtype=np.intp)
    full_cols = np.empty((n_sites, nnz * n_other), dtype=np.intp)
    for k, t in enumerate(targets):
        full_rows[t] = np.repeat(row_digits[k], n_other)
        full_cols[t] = np.repeat(col_digits[k], n_other)
    for k, s in enumerate(others):
        full_rows[s] = np.tile(other_digits[k], nnz)
        full_cols[s] = np.tile(other_digits[k], nnz)

    rows = np.ravel_multi_index(full_rows, dims)
    cols = np.ravel_multi_index(full_cols, dims)
    data = np.repeat(loc.data.astype(complex), n_other)
    out = sp.coo_matrix((data, (rows, cols)), shape=(full_dim, full_dim))
    return sparsify(out)


def expm_small(a) -> np.ndarray:
    """Dense matrix exponential for gate-sized generators (dim <= 64)."""
    m = as_dense(a)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expm_small needs a square matrix, got {m.shape}")
    if m.shape[0] > EXPM_DIM_CAP:
        raise DimensionError(
            f"expm_small refuses dim {m.shape[0]} > {EXPM_DIM_CAP}; "
            "embed local gates instead of exponentiating global operators"
        )
    return sla.expm(m)


def apply(op, psi: np.ndarray) -> np.ndarray:
    """Matrix-vector product without implicit normalization."""
    psi = np.asarray(psi)
    if op.shape[1] != psi.shape[0]:
        raise DimensionError(f"operator {op.shape} cannot act on state {psi.shape}")
    return op @ psi


def expectation(op, psi: np.ndarray) -> complex:
    """``<psi|op|psi>`` for a normalized state."""
    psi = np.asarray(psi)
    if op.shape[1] != psi.shape[0]:
        raise DimensionError(f"operator {op.shape} cannot act on state {psi.shape}")
    return complex(np.vdot(psi, op @ psi))


def eig_general(m, vectors: bool = False, dim_cap: int = EIG_DIM_CAP):
    """All eigenvalues of a general complex matrix (optionally eigenvectors).

    Dispatches to the real Schur path when the matrix is real, which is
    roughly twice as fast for the Liouvillians of models with real
    Hamiltonians and real jump operators.
    """
    a = as_dense(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"eig_general needs a square matrix, got {a.shape}")
    if a.shape[0] > dim_cap:
        raise DimensionError(f"eig_general dim {a.shape[0]} exceeds cap {dim_cap}")
    if np.all(a.imag == 0.0):
        a = np.ascontiguousarray(a.real)
    if vectors:
        w, v = sla.eig(a)
        return w, v
    return sla.eigvals(a)


def apply_local(psi: np.ndarray, register_dims, site: int, gate: np.ndarray) -> np.ndarray:
    """Apply a one-site gate by reshaping instead of building a global matrix."""
    dims = tuple(int(d) for d in register_dims)
    d = dims[site]
    pre = int(np.prod(dims[:site])) if site else 1
    post = int(np.prod(dims[site + 1 :])) if site + 1 < len(dims) else 1
    work = psi.reshape(pre, d, post)
    out = np.einsum("ab,ibj->iaj", gate, work)
    return np.ascontiguousarray(out).reshape(psi.shape[0])


def norm(psi: np.ndarray) -> float:
    return float(np.linalg.norm(psi))


def normalized(psi: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(psi)
    if n == 0.0:
        raise FloatingPointError("cannot normalize a zero state")
    return psi / n
