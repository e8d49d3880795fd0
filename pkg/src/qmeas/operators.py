"""Finite-dimensional operator algebra on tensor-product Hilbert spaces.

Conventions used throughout the package:

* all Hilbert spaces are finite dimensional, states are complex vectors,
  operators are dense complex matrices;
* tensor products are slot-major: the first factor varies slowest, which is
  exactly the ordering of ``numpy.kron``;
* hbar = 1.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

# Relative tolerance for the hermiticity check on flagged operators.
HERMITICITY_RTOL = 1e-12

# An operator counts as positive when min eig >= -POSITIVITY_RTOL * max eig.
POSITIVITY_RTOL = 1e-10

# Guard against runaway tensor products; overridable per call.
DEFAULT_DIMENSION_CAP = 4096


def _as_matrix(a) -> np.ndarray:
    """Coerce an Operator or array-like to a square complex ndarray."""
    if isinstance(a, Operator):
        return a.entries
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def is_hermitian(a, rtol: float = HERMITICITY_RTOL) -> bool:
    """True when ``a`` equals its conjugate transpose to relative tolerance."""
    m = _as_matrix(a)
    scale = max(np.abs(m).max(), 1.0)
    return bool(np.abs(m - m.conj().T).max() <= rtol * scale)


@dataclasses.dataclass(frozen=True)
class Operator:
    """A square complex matrix with an optional hermiticity promise.

    Parameters
    ----------
    entries:
        Square array-like of complex numbers.  Copied and frozen (the
        underlying buffer is marked read-only), so instances are safe to
        share between threads after construction.
    hermitian:
        If True, hermiticity is verified at construction to relative
        tolerance ``HERMITICITY_RTOL`` and a ValueError is raised on failure.
    """

    entries: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator entries must be square, got shape {m.shape}")
        if self.hermitian and not is_hermitian(m):
            raise ValueError("operator flagged hermitian is not hermitian")
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> np.ndarray:
        """The underlying (read-only) matrix."""
        return self.entries

    def dag(self) -> "Operator":
        return Operator(self.entries.conj().T, hermitian=self.hermitian)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def norm(self) -> float:
        """Spectral norm (largest singular value)."""
        return float(np.linalg.norm(self.entries, ord=2))

    def __matmul__(self, other) -> "Operator":
        return Operator(self.entries @ _as_matrix(other))

    def __add__(self, other) -> "Operator":
        return Operator(self.entries + _as_matrix(other),
                        hermitian=self.hermitian and getattr(other, "hermitian", False))

    def __sub__(self, other) -> "Operator":
        return Operator(self.entries - _as_matrix(other),
                        hermitian=self.hermitian and getattr(other, "hermitian", False))

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.entries * scalar)

    __rmul__ = __mul__

    @staticmethod
    def identity(dim: int) -> "Operator":
        return Operator(np.eye(dim, dtype=complex), hermitian=True)

    @staticmethod
    def zero(dim: int) -> "Operator":
        return Operator(np.zeros((dim, dim), dtype=complex), hermitian=True)


def _orthonormal(cols: np.ndarray, rtol: float = 1e-10) -> bool:
    if cols.shape[1] == 0:
        return True
    g = cols.conj().T @ cols
    return bool(np.abs(g - np.eye(cols.shape[1])).max() <= rtol)


@dataclasses.dataclass(frozen=True)
class SubspaceSplit:
    """An orthogonal decomposition H = H_minus + H_plus.

    ``basis_minus`` and ``basis_plus`` hold orthonormal basis columns of the
    two subspaces.  The associated projectors satisfy Q + P = 1 and QP = 0
    by construction.
    """

    basis_minus: np.ndarray
    basis_plus: np.ndarray

    def __post_init__(self):
        bm = np.array(self.basis_minus, dtype=complex)
        bp = np.array(self.basis_plus, dtype=complex)
        if bm.ndim != 2 or bp.ndim != 2 or bm.shape[0] != bp.shape[0]:
            raise ValueError("subspace bases must share the ambient dimension")
        if bm.shape[1] + bp.shape[1] != bm.shape[0]:
            raise ValueError("subspace dimensions must add up to the ambient dimension")
        joint = np.hstack([bm, bp])
        if not _orthonormal(joint):
            raise ValueError("subspace bases are not jointly orthonormal")
        bm.flags.writeable = False
        bp.flags.writeable = False
        object.__setattr__(self, "basis_minus", bm)
        object.__setattr__(self, "basis_plus", bp)

    @property
    def dim(self) -> int:
        return self.basis_minus.shape[0]

    @property
    def dim_minus(self) -> int:
        return self.basis_minus.shape[1]

    @property
    def dim_plus(self) -> int:
        return self.basis_plus.shape[1]

    @property
    def projector_minus(self) -> np.ndarray:
        """Q, the projector onto H_minus."""
        return self.basis_minus @ self.basis_minus.conj().T

    @property
    def projector_plus(self) -> np.ndarray:
        """P, the projector onto H_plus."""
        return self.basis_plus @ self.basis_plus.conj().T

    @classmethod
    def from_indices(cls, dim: int, minus_indices: Sequence[int]) -> "SubspaceSplit":
        """Split along computational-basis directions."""
        minus = sorted(set(int(i) for i in minus_indices))
        if any(i < 0 or i >= dim for i in minus):
            raise ValueError("minus_indices out of range")
        plus = [i for i in range(dim) if i not in minus]
        eye = np.eye(dim, dtype=complex)
        return cls(eye[:, minus], eye[:, plus])

    @classmethod
    def from_projector(cls, q, tol: float = 1e-10) -> "SubspaceSplit":
        """Split defined by a hermitian projector Q (eigenvalues 0 or 1)."""
        m = _as_matrix(q)
        if not is_hermitian(m, rtol=1e-10):
            raise ValueError("projector must be hermitian")
        w, v = np.linalg.eigh(m)
        if np.any(np.minimum(np.abs(w), np.abs(w - 1.0)) > tol):
            raise ValueError("matrix is not a projector (eigenvalues not in {0, 1})")
        minus = v[:, w > 0.5]
        plus = v[:, w <= 0.5]
        return cls(minus, plus)


def tensor_product(*factors, dim_cap: int | None = DEFAULT_DIMENSION_CAP) -> Operator:
    """Slot-major Kronecker product of the given operators.

    The first factor varies slowest.  Raises ValueError when the product
    dimension exceeds ``dim_cap`` (pass None to disable the cap).
    """
    if not factors:
        raise ValueError("tensor_product needs at least one factor")
    mats = [_as_matrix(f) for f in factors]
    total = 1
    for m in mats:
        total *= m.shape[0]
    if dim_cap is not None and total > dim_cap:
        raise ValueError(f"tensor product dimension {total} exceeds cap {dim_cap}")
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    herm = all(getattr(f, "hermitian", False) for f in factors)
    return Operator(out, hermitian=herm)


def lift(op, slot: int, dims: Sequence[int],
         dim_cap: int | None = DEFAULT_DIMENSION_CAP) -> Operator:
    """Embed ``op`` at position ``slot`` of a tensor product with identities.

    ``dims`` lists the factor dimensions of the full space in slot-major
    order; ``op`` must match ``dims[slot]``.  Lifts into distinct slots
    commute.
    """
    m = _as_matrix(op)
    if slot < 0 or slot >= len(dims):
        raise ValueError(f"slot {slot} out of range for {len(dims)} factors")
    if m.shape[0] != dims[slot]:
        raise ValueError(f"operator dim {m.shape[0]} does not match slot dim {dims[slot]}")
    factors = [np.eye(d, dtype=complex) for d in dims]
    factors[slot] = m
    out = tensor_product(*factors, dim_cap=dim_cap)
    return Operator(out.entries, hermitian=getattr(op, "hermitian", False))


def mat_exp(op, scale: complex = 1.0) -> Operator:
    """Matrix exponential exp(scale * op).

    Backed by scaling-and-squaring with a rational approximant; accurate to
    near machine precision for well-conditioned inputs.
    """
    m = _as_matrix(op)
    herm_in = getattr(op, "hermitian", False) or is_hermitian(m, rtol=1e-13)
    out = scipy.linalg.expm(scale * m)
    herm_out = herm_in and abs(complex(scale).imag) == 0.0
    return Operator(out, hermitian=herm_out)


def herm_eig(op) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvector columns of a
    hermitian operator.

    Raises ValueError when the input is not hermitian to tolerance, since a
    silent eigh of a non-hermitian matrix would discard half the data.
    """
    m = _as_matrix(op)
    if not is_hermitian(m, rtol=1e-9):
        raise ValueError("herm_eig requires a hermitian operator")
    w, v = np.linalg.eigh(m)
    return w, v


def positivity_report(op, rtol: float = POSITIVITY_RTOL) -> dict:
    """Minimum/maximum eigenvalue of a hermitian operator and a pass flag.

    The flag is True when min_eig >= -rtol * max(|max_eig|, tiny).  Nothing
    is clipped; callers surface failures.
    """
    w, _ = herm_eig(op)
    lo = float(w[0])
    hi = float(w[-1])
    floor = -rtol * max(abs(hi), 1e-300)
    return {"min_eig": lo, "max_eig": hi, "positive": lo >= floor}


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> Operator:
    """Random hermitian matrix with entries of size ~scale (test helper)."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return Operator(scale * (a + a.conj().T) / 2.0, hermitian=True)


def random_state(dim: int, rng: np.random.Generator,
                 basis: np.ndarray | None = None) -> np.ndarray:
    """Random normalized state vector, optionally inside span(basis columns)."""
    if basis is None:
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    else:
        k = basis.shape[1]
        c = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        v = basis @ c
    return v / np.linalg.norm(v)


def density_matrix(psi: np.ndarray) -> np.ndarray:
    """Rank-one density matrix |psi><psi| of a normalized state."""
    v = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())
