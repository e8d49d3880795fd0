"""Class operators for measurement events.

A measurement event is a transition between complementary subspaces.  For a
single event with split H = H_minus + H_plus and a POVM root R(lambda)
supported on H_plus, the class operator at event time t is

    C(lambda, t) = exp(+iHt) R(lambda) H S_t

with S_t the restricted propagator inside H_minus.  At leading order in the
interaction the exact chain collapses to the Heisenberg-picture form

    A(lambda, t) = exp(+iH0 t) R(lambda) H_int exp(-iH0 t)

valid when the free Hamiltonian preserves the split.  Sequences of n events
use a nested family of subspaces H_0 in H_1 in ... in H_n = H; event i is
the transition into the sector H_i minus H_{i-1}.
"""

from __future__ import annotations

import dataclasses
import itertools
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .evolution import restricted_propagator_family, unitary_family
from .operators import Operator, SubspaceSplit, _as_matrix, is_hermitian

#: Tolerance for support and resolution checks on POVM roots.
ROOT_SUPPORT_TOL = 1e-10

#: Tolerance (relative) for [H0, projector] commutation in perturbative paths.
FREE_COMMUTATION_RTOL = 1e-12


def _check_root_support(root: np.ndarray, sector: np.ndarray, what: str) -> None:
    scale = max(np.abs(root).max(), 1.0)
    if np.abs(sector @ root - root).max() > ROOT_SUPPORT_TOL * scale:
        raise ValueError(f"{what}: POVM root is not supported on its event sector")


@dataclasses.dataclass(frozen=True)
class EventSpec:
    """Nested subspace sequence and per-event POVM roots for n events.

    ``nested_projectors`` holds Q_0, ..., Q_n (projectors onto H_0 through
    H_n = full space, so the last entry is the identity).  Event i (1-based)
    has sector projector P_i = Q_i - Q_{i-1} and a family of POVM roots
    ``povm_roots[i-1]`` mapping outcome labels to matrices supported on that
    sector, with squares summing to P_i.
    """

    nested_projectors: tuple
    povm_roots: tuple

    def __post_init__(self):
        qs = tuple(np.array(_as_matrix(q), dtype=complex) for q in self.nested_projectors)
        if len(qs) < 2:
            raise ValueError("need at least Q_0 and Q_n = identity")
        dim = qs[0].shape[0]
        eye = np.eye(dim)
        for q in qs:
            if q.shape[0] != dim:
                raise ValueError("all projectors must share one dimension")
            if not is_hermitian(q, rtol=1e-10) or np.abs(q @ q - q).max() > 1e-10:
                raise ValueError("nested_projectors entries must be orthogonal projectors")
        if np.abs(qs[-1] - eye).max() > 1e-10:
            raise ValueError("the last projector must be the identity")
        for lo, hi in zip(qs[:-1], qs[1:]):
            if np.abs(hi @ lo - lo).max() > 1e-10:
                raise ValueError("projectors must be nested (Q_i inside Q_{i+1})")
        roots = tuple(dict(r) for r in self.povm_roots)
        if len(roots) != len(qs) - 1:
            raise ValueError("need one POVM root family per event")
        for i, fam in enumerate(roots):
            sector = qs[i + 1] - qs[i]
            if not fam:
                raise ValueError(f"event {i + 1} has no outcomes")
            total = np.zeros((dim, dim), dtype=complex)
            for label, root in fam.items():
                r = np.array(_as_matrix(root), dtype=complex)
                _check_root_support(r, sector, f"event {i + 1}, outcome {label!r}")
                _check_root_support(r.conj().T, sector,
                                    f"event {i + 1}, outcome {label!r} (adjoint)")
                total += r.conj().T @ r
                r.flags.writeable = False
                fam[label] = r
            if np.abs(total - sector).max() > 1e-8 * max(1.0, np.abs(sector).max()):
                raise ValueError(f"event {i + 1}: POVM roots do not resolve the sector")
        for q in qs:
            q.flags.writeable = False
        object.__setattr__(self, "nested_projectors", qs)
        object.__setattr__(self, "povm_roots", roots)

    @property
    def dim(self) -> int:
        return self.nested_projectors[0].shape[0]

    @property
    def n_events(self) -> int:
        return len(self.povm_roots)

    def sector_projector(self, event: int) -> np.ndarray:
        """P_i for 1-based event index i."""
        return self.nested_projectors[event] - self.nested_projectors[event - 1]

    @classmethod
    def single(cls, split: SubspaceSplit,
               povm_roots: Mapping[Hashable, np.ndarray]) -> "EventSpec":
        """One event: H_0 = H_minus, sector H_plus."""
        eye = np.eye(split.dim, dtype=complex)
        return cls((split.projector_minus, eye), (dict(povm_roots),))


def class_operator(h, split: SubspaceSplit, povm_root, t: float) -> Operator:
    """Exact single-event class operator exp(+iHt) R H S_t."""
    return Operator(class_operator_exact_family(h, split, povm_root)(t))


def class_operator_exact_family(h, split: SubspaceSplit,
                                povm_root) -> Callable[[float], np.ndarray]:
    """t -> C(t) for the exact single-event class operator, spectral work
    hoisted; use this for quadrature loops."""
    m = _as_matrix(h)
    root = _as_matrix(povm_root)
    _check_root_support(root, split.projector_plus, "class_operator")
    u = unitary_family(m)            # exp(-iHt); exp(+iHt) is u(-t)
    s = restricted_propagator_family(m, split)
    core = root @ m
    cache: dict[float, np.ndarray] = {}

    def c(t: float) -> np.ndarray:
        t = float(t)
        got = cache.get(t)
        if got is None:
            got = u(-t) @ core @ s(t)
            cache[t] = got
        return got

    return c


def heisenberg_event_op(h0, povm_root, h_int, t: float) -> np.ndarray:
    """Heisenberg-picture event operator exp(+iH0 t) R H_int exp(-iH0 t)."""
    return heisenberg_event_family(h0, povm_root, h_int)(t)


def heisenberg_event_family(h0, povm_root, h_int) -> Callable[[float], np.ndarray]:
    """t -> A(t) with cached free-evolution spectral data."""
    u = unitary_family(_as_matrix(h0))
    core = _as_matrix(povm_root) @ _as_matrix(h_int)
    cache: dict[float, np.ndarray] = {}

    def a(t: float) -> np.ndarray:
        t = float(t)
        got = cache.get(t)
        if got is None:
            got = u(-t) @ core @ u(t)
            cache[t] = got
        return got

    return a


def class_operator_perturbative(h0, h_int, split: SubspaceSplit, povm_root,
                                t: float) -> Operator:
    """Leading-order class operator; requires the free Hamiltonian to
    preserve the split ([H0, P] = 0), which is what makes the restricted
    propagator collapse to free evolution."""
    m0 = _as_matrix(h0)
    p = split.projector_plus
    scale = max(np.abs(m0).max(), 1.0)
    if np.abs(m0 @ p - p @ m0).max() > FREE_COMMUTATION_RTOL * scale * 10:
        raise ValueError("free Hamiltonian does not preserve the subspace split")
    root = _as_matrix(povm_root)
    _check_root_support(root, p, "class_operator_perturbative")
    return Operator(heisenberg_event_op(m0, root, _as_matrix(h_int), t))


def class_operator_n(h, spec: EventSpec, outcomes: Sequence[Hashable],
                     times: Sequence[float]) -> Operator:
    """Exact n-event class operator for ordered event times.

    C = exp(+iH t_n) R_n H S^{(n-1)}_{t_n - t_{n-1}} ... R_1 H S^{(0)}_{t_1},
    where S^{(i)} is restricted to H_i.  Times must be non-decreasing.
    """
    n = spec.n_events
    if len(outcomes) != n or len(times) != n:
        raise ValueError(f"need {n} outcomes and times")
    ts = [float(t) for t in times]
    if any(b < a for a, b in zip(ts[:-1], ts[1:])):
        raise ValueError("event times must be non-decreasing")
    m = _as_matrix(h)
    eye = np.eye(spec.dim, dtype=complex)

    def restricted(q: np.ndarray, dt: float) -> np.ndarray:
        a = q @ m @ q
        w, v = np.linalg.eigh(a)
        return (v * np.exp(-1j * w * dt)) @ v.conj().T @ q

    acc = restricted(spec.nested_projectors[0], ts[0])
    for i in range(1, n + 1):
        fam = spec.povm_roots[i - 1]
        label = outcomes[i - 1]
        if label not in fam:
            raise KeyError(f"event {i} has no outcome {label!r}")
        acc = fam[label] @ m @ acc
        if i < n:
            acc = restricted(spec.nested_projectors[i], ts[i] - ts[i - 1]) @ acc
    wq, vq = np.linalg.eigh(m)
    final_u = (vq * np.exp(1j * wq * ts[-1])) @ vq.conj().T
    del eye
    return Operator(final_u @ acc)


def _symmetrized_product(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Average of all orderings; for two factors this is the theta(0) = 1/2
    convention for equal-time operators."""
    if len(factors) == 1:
        return factors[0]
    dim = factors[0].shape[0]
    acc = np.zeros((dim, dim), dtype=complex)
    count = 0
    for perm in itertools.permutations(factors):
        prod = perm[0]
        for f in perm[1:]:
            prod = prod @ f
        acc += prod
        count += 1
    return acc / count


def time_ordered_product(factors: Sequence[np.ndarray],
                         times: Sequence[float]) -> np.ndarray:
    """T-ordered product: latest time leftmost, ties symmetrized."""
    if len(factors) != len(times):
        raise ValueError("factors and times must align")
    if not factors:
        raise ValueError("need at least one factor")
    ts = np.asarray([float(t) for t in times])
    order = np.argsort(-ts, kind="stable")
    groups: list[list[int]] = []
    for idx in order:
        if groups and ts[groups[-1][-1]] == ts[idx]:
            groups[-1].append(int(idx))
        else:
            groups.append([int(idx)])
    prod = None
    for grp in groups:
        block = _symmetrized_product([factors[i] for i in grp])
        prod = block if prod is None else prod @ block
    return prod


def time_ordered_class_n(h0, h_int, spec: EventSpec,
                         outcomes: Sequence[Hashable],
                         times: Sequence[float]) -> Operator:
    """Perturbative n-event class operator D = T[A_n ... A_1].

    Each factor is the Heisenberg event operator of its event; the product
    is time-ordered with equal-time ties symmetrized, so the result does not
    depend on the order in which the events are listed.
    """
    n = spec.n_events
    if len(outcomes) != n or len(times) != n:
        raise ValueError(f"need {n} outcomes and times")
    m0 = _as_matrix(h0)
    mi = _as_matrix(h_int)
    scale = max(np.abs(m0).max(), 1.0)
    for i in range(1, n + 1):
        p = spec.sector_projector(i)
        if np.abs(m0 @ p - p @ m0).max() > FREE_COMMUTATION_RTOL * scale * 10:
            raise ValueError(f"free Hamiltonian does not preserve event {i}'s sector")
    factors = []
    for i in range(n):
        fam = spec.povm_roots[i]
        if outcomes[i] not in fam:
            raise KeyError(f"event {i + 1} has no outcome {outcomes[i]!r}")
        factors.append(heisenberg_event_op(m0, fam[outcomes[i]], mi, times[i]))
    return Operator(time_ordered_product(factors, times))
