"""Truncated field models and closed-time-path correlation functions.

A ``FieldModel`` is a finite-dimensional stand-in for a quantum field: a
free Hamiltonian, a family of hermitian composite operators Y_A(x) declared
at discrete spatial labels, and an initial state.  Requested positions snap
to the nearest declared label; callers that care about the snap distance ask
for it explicitly.

Closed-time-path correlators take a forward and a backward list of indexed
spacetime points,

    G = Tr[ T{Y_An(Xn) ... Y_A1(X1)} rho T~{Y_B1(X1') ... Y_Bn(Xn')} ],

with the forward branch time-ordered (latest leftmost), the backward branch
anti-time-ordered (earliest leftmost) and equal-time products symmetrized.

Covariance caveat: time translations (always) and spatial translations by
lattice multiples (for invariant states) are verified by
``translation_covariance_check``.  Boost covariance is deliberately not
verified anywhere: excitation-number truncation breaks it, and pretending
otherwise would hide a real approximation.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Mapping, Sequence

import numpy as np

from .evolution import BoundedCache, unitary_family
from .histories import time_ordered_product
from .operators import DEFAULT_DIMENSION_CAP, _as_matrix, herm_eig, is_hermitian

#: Relative tolerance for the state-invariance tests inside covariance checks.
INVARIANCE_RTOL = 1e-10


def _label_key(x) -> tuple:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.size > 3:
        raise ValueError("spatial labels have at most 3 components")
    out = np.zeros(3)
    out[:v.size] = v
    return tuple(round(float(c), 12) for c in out)


@dataclasses.dataclass(frozen=True)
class CtpPoint:
    """One indexed spacetime point on a closed-time-path branch."""

    a_index: str
    x: np.ndarray

    def __post_init__(self):
        v = np.array(self.x, dtype=float).reshape(4)
        v.flags.writeable = False
        object.__setattr__(self, "x", v)
        object.__setattr__(self, "a_index", str(self.a_index))

    @property
    def time(self) -> float:
        return float(self.x[0])

    @property
    def space(self) -> np.ndarray:
        return self.x[1:]


@dataclasses.dataclass
class FieldModel:
    """Finite-dimensional field data, immutable after validation.

    ``composites`` maps a coupling index A to a family of hermitian
    operators over spatial labels.  ``momentum`` is the lattice translation
    generator when one exists; ``lattice_spacing`` the site spacing; both
    are optional and only used by covariance checks and spatial sums.
    ``covariance_data`` holds declared symmetry-transformation matrices as
    metadata; nothing validates them, truncated models cannot realize the
    boosts they describe.  ``meta`` carries builder extras (mode data,
    conjugate momenta) that are not part of the validated contract.
    """

    h_phi: np.ndarray
    composites: Mapping[str, Mapping[tuple, np.ndarray]]
    rho0: np.ndarray
    momentum: np.ndarray | None = None
    lattice_spacing: float | None = None
    covariance_data: dict | None = None
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        h = _as_matrix(self.h_phi)
        if not is_hermitian(h, rtol=1e-10):
            raise ValueError("field Hamiltonian must be hermitian")
        dim = h.shape[0]
        rho = _as_matrix(self.rho0)
        if rho.shape[0] != dim or not is_hermitian(rho, rtol=1e-10):
            raise ValueError("initial state must be hermitian of the field dimension")
        if abs(np.trace(rho).real - 1.0) > 1e-10:
            raise ValueError("initial state must have unit trace")
        w, _ = herm_eig(rho)
        if w[0] < -1e-10:
            raise ValueError(f"initial state has negative eigenvalue {w[0]:.3e}")
        comps: dict[str, dict[tuple, np.ndarray]] = {}
        for a_idx, fam in self.composites.items():
            fam_out: dict[tuple, np.ndarray] = {}
            for x, y in fam.items():
                m = _as_matrix(y)
                if m.shape[0] != dim or not is_hermitian(m, rtol=1e-10):
                    raise ValueError(
                        f"composite {a_idx!r} at {x} must be hermitian of dimension {dim}")
                fam_out[_label_key(x)] = m
            if not fam_out:
                raise ValueError(f"composite family {a_idx!r} is empty")
            comps[str(a_idx)] = fam_out
        if not comps:
            raise ValueError("need at least one composite family")
        if self.momentum is not None:
            p = _as_matrix(self.momentum)
            if p.shape[0] != dim or not is_hermitian(p, rtol=1e-10):
                raise ValueError("momentum generator must be hermitian of the field dimension")
            self.momentum = p
        self.h_phi = h
        self.rho0 = rho
        self.composites = comps
        self._u = unitary_family(h)
        self._heis_cache = BoundedCache()

    @property
    def dim(self) -> int:
        return self.h_phi.shape[0]

    def labels(self, a_index: str) -> list[tuple]:
        return sorted(self.composites[str(a_index)].keys())


def snap_label(model: FieldModel, a_index: str, x) -> tuple[tuple, float]:
    """Nearest declared label for composite family A and the snap distance.

    Ties resolve to the lexicographically smallest label so results never
    depend on dictionary order.
    """
    fam = model.composites.get(str(a_index))
    if fam is None:
        raise KeyError(f"field model has no composite family {a_index!r}")
    target = np.asarray(_label_key(x))
    best_key = None
    best_d = np.inf
    for key in sorted(fam.keys()):
        d = float(np.linalg.norm(np.asarray(key) - target))
        if d < best_d - 1e-15:
            best_key = key
            best_d = d
    return best_key, best_d


def heisenberg_composite(model: FieldModel, a_index: str, point) -> np.ndarray:
    """Heisenberg-picture composite exp(+iHt) Y_A(x) exp(-iHt).

    ``point`` is a spacetime 4-vector (t, x); the spatial part snaps to the
    nearest declared label.  Use ``snap_label`` first when the snap distance
    matters.  Values are cached per (A, label, t).
    """
    p = np.asarray(point, dtype=float).reshape(4)
    key, _ = snap_label(model, a_index, p[1:])
    t = float(p[0])
    ck = (str(a_index), key, t)
    got = model._heis_cache.get(ck)
    if got is None:
        y = model.composites[str(a_index)][key]
        got = model._heis_cache.put(ck, model._u(-t) @ y @ model._u(t))
    return got


def ctp_correlator(model: FieldModel, forward: Sequence[CtpPoint],
                   backward: Sequence[CtpPoint]) -> complex:
    """Closed-time-path correlator of Heisenberg composites.

    The forward branch multiplies latest-leftmost, the backward branch
    earliest-leftmost, ties symmetrized on each branch separately.  With
    identical forward and backward lists the result is a norm squared, so
    it comes out real and nonnegative.  Both branches must carry the same
    number of points, at least one each.
    """
    if not forward or len(forward) != len(backward):
        raise ValueError("need n forward and n backward points, n >= 1")

    def branch(points: Sequence[CtpPoint], anti: bool) -> np.ndarray:
        factors = [heisenberg_composite(model, p.a_index, p.x)
                   for p in points]
        times = [(-p.time if anti else p.time) for p in points]
        return time_ordered_product(factors, times)

    fwd = branch(forward, anti=False)
    bwd = branch(backward, anti=True)
    return complex(np.trace(fwd @ model.rho0 @ bwd))


@dataclasses.dataclass(frozen=True)
class CovarianceReport:
    """Result of a translation-covariance comparison."""

    name: str
    applicable: bool
    passed: bool
    deviation: float
    detail: str


def translation_covariance_check(model: FieldModel, shift,
                                 forward: Sequence[CtpPoint],
                                 backward: Sequence[CtpPoint],
                                 tol: float = 1e-8) -> CovarianceReport:
    """Compare a correlator against its version translated by a 4-vector.

    Time shifts need an H-invariant state; spatial shifts must be integer
    multiples of the lattice spacing along the lattice axis and need the
    translation generator and a P-invariant state.  A non-invariant state
    makes the check inapplicable, not failed.  Boost covariance is not
    checked here or anywhere.
    """
    a = np.asarray(shift, dtype=float).reshape(4)
    name = "translation_covariance"
    if np.any(a[2:] != 0.0):
        raise ValueError("spatial shifts are supported along the lattice "
                         "axis only")
    rho_scale = max(np.abs(model.rho0).max(), 1e-300)
    if a[0] != 0.0:
        comm = model.h_phi @ model.rho0 - model.rho0 @ model.h_phi
        if np.abs(comm).max() > INVARIANCE_RTOL * rho_scale:
            return CovarianceReport(name=name, applicable=False, passed=False,
                                    deviation=np.nan,
                                    detail="state is not invariant under time translations")
    if a[1] != 0.0:
        if model.lattice_spacing is None or model.momentum is None:
            return CovarianceReport(name=name, applicable=False, passed=False,
                                    deviation=np.nan,
                                    detail="model declares no lattice translation structure")
        steps = a[1] / model.lattice_spacing
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"spatial shift {a[1]} is not a multiple of the "
                             f"lattice spacing {model.lattice_spacing}")
        comm = model.momentum @ model.rho0 - model.rho0 @ model.momentum
        if np.abs(comm).max() > INVARIANCE_RTOL * rho_scale:
            return CovarianceReport(name=name, applicable=False, passed=False,
                                    deviation=np.nan,
                                    detail="state is not invariant under lattice translations")

    def shifted(points: Sequence[CtpPoint]) -> list[CtpPoint]:
        out = []
        for p in points:
            x = p.x.copy()
            x[0] += a[0]
            x[1] += a[1]
            # wrap onto the periodic lattice where one is declared
            if a[1] != 0.0:
                length = model.meta.get("length")
                if length:
                    x[1] = math.fmod(x[1], length)
                    if x[1] < -1e-12:
                        x[1] += length
            out.append(CtpPoint(p.a_index, x))
        return out

    base = ctp_correlator(model, forward, backward)
    moved = ctp_correlator(model, shifted(forward), shifted(backward))
    dev = abs(moved - base)
    scale = max(abs(base), 1.0)
    passed = dev <= tol * scale
    detail = (f"|G_shifted - G| = {dev:.3e} against scale {scale:.3e}"
              + ("" if passed else f" exceeds tol {tol:g}"))
    return CovarianceReport(name=name, applicable=True, passed=passed,
                            deviation=dev, detail=detail)


# -- free scalar on a periodic 1D lattice --------------------------------


def _occupations(modes: int, cap: int) -> list[tuple[int, ...]]:
    """All occupation tuples with total excitation <= cap, lexicographic."""
    out = []
    def rec(prefix: tuple[int, ...], remaining: int, budget: int):
        if remaining == 0:
            out.append(prefix)
            return
        for n in range(budget + 1):
            rec(prefix + (n,), remaining - 1, budget - n)
    rec((), modes, cap)
    return out


def free_scalar_builder(sites: int, excitation_cap: int, mass: float,
                        length: float,
                        initial_occupation: Mapping[int, int] | None = None) -> FieldModel:
    """Free massive scalar on a periodic 1D lattice, truncated Fock space.

    Modes k_n = 2 pi n / length for the ``sites`` integers n nearest zero,
    frequencies omega_k = sqrt(mass^2 + k^2), Hamiltonian sum_k omega_k
    a_k^dagger a_k on the total-excitation-capped Fock space.  The field
    operator at site x_j = j * length / sites is

        phi(x) = sum_k ( a_k e^{ikx} + a_k^dagger e^{-ikx} ) / sqrt(2 omega_k length)

    declared as composite family "phi".  The conjugate momentum family and
    mode bookkeeping live in ``meta`` ("pi", "mode_numbers", "occupations").
    The lattice translation generator sum_k k a_k^dagger a_k is attached as
    ``momentum``.

    ``initial_occupation`` maps mode number n to an occupation count; the
    default is the vacuum.  The mass must be positive: a massless zero mode
    has no normalizable finite-volume ground state.
    """
    if sites < 1 or excitation_cap < 0:
        raise ValueError("need sites >= 1 and excitation_cap >= 0")
    if mass <= 0.0:
        raise ValueError("mass must be positive (zero mode would be singular)")
    if length <= 0.0:
        raise ValueError("length must be positive")
    # Brillouin-zone mode numbers, e.g. sites=4 -> [-1, 0, 1, 2].
    mode_numbers = sorted(int(round(f)) for f in np.fft.fftfreq(sites, d=1.0 / sites))
    ks = np.array([2.0 * np.pi * n / length for n in mode_numbers])
    omegas = np.sqrt(mass * mass + ks * ks)

    occs = _occupations(sites, excitation_cap)
    index = {occ: i for i, occ in enumerate(occs)}
    dim = len(occs)
    if dim > DEFAULT_DIMENSION_CAP:
        raise ValueError(f"truncated Fock space has dimension {dim}, beyond "
                         f"the cap {DEFAULT_DIMENSION_CAP}; lower the site "
                         "count or the excitation cap")

    lowering = []
    for m in range(sites):
        a = np.zeros((dim, dim), dtype=complex)
        for occ, i in index.items():
            if occ[m] > 0:
                lower = list(occ)
                lower[m] -= 1
                a[index[tuple(lower)], i] = np.sqrt(occ[m])
        lowering.append(a)

    number = [a.conj().T @ a for a in lowering]
    h_phi = sum(w * n for w, n in zip(omegas, number))
    momentum = sum(k * n for k, n in zip(ks, number))

    spacing = length / sites
    phi_fam: dict[tuple, np.ndarray] = {}
    pi_fam: dict[tuple, np.ndarray] = {}
    for j in range(sites):
        x = j * spacing
        phi = np.zeros((dim, dim), dtype=complex)
        pi = np.zeros((dim, dim), dtype=complex)
        for k, w, a in zip(ks, omegas, lowering):
            phase = np.exp(1j * k * x)
            phi += (a * phase + a.conj().T * np.conj(phase)) / np.sqrt(2.0 * w * length)
            pi += -1j * np.sqrt(w / (2.0 * length)) * (a * phase - a.conj().T * np.conj(phase))
        key = _label_key((x, 0.0, 0.0))
        phi_fam[key] = phi
        pi_fam[key] = pi

    rho0 = np.zeros((dim, dim), dtype=complex)
    if initial_occupation:
        occ = [0] * sites
        for n, count in initial_occupation.items():
            if n not in mode_numbers:
                raise ValueError(f"mode {n} not present; available: {mode_numbers}")
            occ[mode_numbers.index(n)] += int(count)
        if sum(occ) > excitation_cap:
            raise ValueError("initial occupation exceeds the excitation cap")
        rho0[index[tuple(occ)], index[tuple(occ)]] = 1.0
    else:
        rho0[index[tuple([0] * sites)], index[tuple([0] * sites)]] = 1.0

    return FieldModel(
        h_phi=h_phi,
        composites={"phi": phi_fam},
        rho0=rho0,
        momentum=momentum,
        lattice_spacing=spacing,
        meta={
            "kind": "free_scalar",
            "sites": sites,
            "excitation_cap": excitation_cap,
            "mass": float(mass),
            "length": float(length),
            "mode_numbers": mode_numbers,
            "frequencies": omegas.tolist(),
            "occupations": occs,
            "pi": pi_fam,
        },
    )


def tensor_field_models(left: FieldModel, right: FieldModel) -> FieldModel:
    """Two independent field sectors as one model on the product space.

    Family names must differ between the sectors; rename one side (say
    "phi1"/"phi2") before combining.
    """
    dl, dr = left.dim, right.dim
    eye_l = np.eye(dl)
    eye_r = np.eye(dr)
    h = np.kron(left.h_phi, eye_r) + np.kron(eye_l, right.h_phi)
    comps: dict[str, dict[tuple, np.ndarray]] = {}
    for a_idx, fam in left.composites.items():
        comps[a_idx] = {k: np.kron(y, eye_r) for k, y in fam.items()}
    for a_idx, fam in right.composites.items():
        if a_idx in comps:
            raise ValueError(f"composite family name clash: {a_idx!r}")
        comps[a_idx] = {k: np.kron(eye_l, y) for k, y in fam.items()}
    rho = np.kron(left.rho0, right.rho0)
    return FieldModel(h_phi=h, composites=comps, rho0=rho,
                      momentum=None, lattice_spacing=left.lattice_spacing,
                      meta={"kind": "tensor", "factors": (left.meta, right.meta)})


# -- custom model ingestion -----------------------------------------------


def _parse_matrix_rows(lines: list[tuple[int, str]], start: int, dim: int,
                       path: str) -> tuple[np.ndarray, int]:
    m = np.zeros((dim, dim), dtype=complex)
    row = 0
    i = start
    while row < dim:
        if i >= len(lines):
            raise ValueError(f"{path}: unexpected end of file inside a matrix "
                             f"(row {row + 1} of {dim})")
        lineno, text = lines[i]
        parts = text.split()
        if len(parts) != 2 * dim:
            raise ValueError(
                f"{path}:{lineno}: matrix row needs {2 * dim} numbers "
                f"(re im pairs), got {len(parts)}")
        vals = [float(p) for p in parts]
        for c in range(dim):
            m[row, c] = complex(vals[2 * c], vals[2 * c + 1])
        row += 1
        i += 1
    return m, i


def load_field_model(path) -> FieldModel:
    """Read a field model from a structured text file.

    Sections, in any order after ``dim``::

        dim N
        hphi            followed by N rows of N "re im" pairs
        rho0            followed by N rows
        composite A x1 [x2 x3]   followed by N rows
        momentum        followed by N rows          (optional)
        spacing a                                    (optional)

    Lines starting with ``#`` and blank lines are ignored.
    """
    raw: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                raw.append((lineno, stripped))
    if not raw or raw[0][1].split()[0] != "dim":
        raise ValueError(f"{path}: first directive must be 'dim N'")
    head = raw[0][1].split()
    if len(head) != 2:
        raise ValueError(f"{path}:{raw[0][0]}: 'dim' takes exactly one value")
    dim = int(head[1])
    if dim < 1:
        raise ValueError(f"{path}: dimension must be positive")

    h_phi = None
    rho0 = None
    momentum = None
    spacing = None
    comps: dict[str, dict[tuple, np.ndarray]] = {}
    i = 1
    while i < len(raw):
        lineno, text = raw[i]
        parts = text.split()
        word = parts[0]
        if word == "hphi":
            h_phi, i = _parse_matrix_rows(raw, i + 1, dim, str(path))
        elif word == "rho0":
            rho0, i = _parse_matrix_rows(raw, i + 1, dim, str(path))
        elif word == "momentum":
            momentum, i = _parse_matrix_rows(raw, i + 1, dim, str(path))
        elif word == "spacing":
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: 'spacing' takes one value")
            spacing = float(parts[1])
            i += 1
        elif word == "composite":
            if len(parts) < 3 or len(parts) > 5:
                raise ValueError(
                    f"{path}:{lineno}: 'composite A x1 [x2 x3]' expected")
            a_idx = parts[1]
            x = [float(p) for p in parts[2:]]
            m, i = _parse_matrix_rows(raw, i + 1, dim, str(path))
            comps.setdefault(a_idx, {})[_label_key(x)] = m
        else:
            raise ValueError(f"{path}:{lineno}: unknown directive {word!r}")
    if h_phi is None:
        raise ValueError(f"{path}: missing 'hphi' section")
    if rho0 is None:
        raise ValueError(f"{path}: missing 'rho0' section")
    if not comps:
        raise ValueError(f"{path}: no 'composite' sections")
    return FieldModel(h_phi=h_phi, composites=comps, rho0=rho0,
                      momentum=momentum, lattice_spacing=spacing,
                      meta={"kind": "file", "path": str(path)})
