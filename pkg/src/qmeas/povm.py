"""Probability densities, smeared POVM elements, multi-event families, and
the bookkeeping identities that go with them.

The bilinear form of a class-operator family C(t) against an initial state,

    K(s, s') = Tr[ C(s) rho C(s')^dagger ],

is the single object everything here contracts.  Interval probabilities
integrate it over a box; densities smear it with the kernels from
``smearing``; POVM elements repackage the same integrals as operators so
the state can be contracted out later.

Sign conventions: event branches carry an amplitude weight -i relative to
the no-event branch, so the interference term of the three-way
normalization identity is 2 Re[-i Tr(C_plus rho C_empty^dagger)].
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from . import smearing
from .operators import Operator, _as_matrix, herm_eig, mat_exp
from .smearing import QuadratureRule, f_sigma, g_sigma

#: POVM elements tolerate min eig >= -POVM_POSITIVITY_RTOL * max eig.
POVM_POSITIVITY_RTOL = 1e-8

#: Relative imaginary residue allowed when a trace should be real.
IMAG_RESIDUE_RTOL = 1e-10

_DEFAULT_RULE = QuadratureRule(nodes=smearing.DEFAULT_TIME_NODES)


class WindowInsufficiencyWarning(UserWarning):
    """The integrand has not decayed at the edge of the integration window."""


def _real_part(value: complex, what: str, rtol: float = IMAG_RESIDUE_RTOL) -> float:
    scale = max(abs(value), 1.0e-300)
    if abs(value.imag) > rtol * max(scale, 1.0):
        raise ArithmeticError(
            f"{what}: imaginary residue {value.imag:.3e} exceeds tolerance "
            f"(value {value!r})")
    return float(value.real)


def _trace_bilinear(left: np.ndarray, rho: np.ndarray, right: np.ndarray) -> complex:
    """Tr[left rho right^dagger]."""
    return complex(np.sum((left @ rho) * right.conj()))


def integrated_class_operator(c: Callable[[float], np.ndarray],
                              interval: tuple[float, float],
                              rule: QuadratureRule = _DEFAULT_RULE) -> np.ndarray:
    """Quadrature of the family over an interval: A = int_I C(t) dt."""
    a, b = float(interval[0]), float(interval[1])
    if b <= a:
        raise ValueError("interval must have positive length")
    nodes, weights = rule.on(a, b)
    acc = weights[0] * c(nodes[0])
    for x, w in zip(nodes[1:], weights[1:]):
        acc = acc + w * c(x)
    return acc


def interval_probability(c: Callable[[float], np.ndarray], rho0,
                         interval: tuple[float, float],
                         rule: QuadratureRule = _DEFAULT_RULE) -> float:
    """P(interval) = int_I int_I Tr[C(t) rho C(t')^dagger] dt dt'.

    Computed as Tr[A rho A^dagger] with A the integrated family, which is
    algebraically the same double integral and manifestly nonnegative.
    """
    a = integrated_class_operator(c, interval, rule)
    rho = _as_matrix(rho0)
    return _real_part(_trace_bilinear(a, rho, a), "interval_probability")


@dataclasses.dataclass(frozen=True)
class ConsistencyReport:
    """Off-diagonal two-interval term and the induced additivity defect."""

    value: complex
    additivity_defect: float
    probability_first: float
    probability_second: float


def consistency_offdiagonal(c: Callable[[float], np.ndarray], rho0,
                            interval1: tuple[float, float],
                            interval2: tuple[float, float],
                            rule: QuadratureRule = _DEFAULT_RULE) -> ConsistencyReport:
    """Off-diagonal bilinear between two intervals and the additivity defect.

    The defect is what probability additivity over the two intervals misses:
    P(I1 or I2) - P(I1) - P(I2) = 2 Re(value).  Decoherence of the pair
    means |value| small against the diagonal terms.
    """
    rho = _as_matrix(rho0)
    a1 = integrated_class_operator(c, interval1, rule)
    a2 = integrated_class_operator(c, interval2, rule)
    value = _trace_bilinear(a1, rho, a2)
    p1 = _real_part(_trace_bilinear(a1, rho, a1), "consistency_offdiagonal/P1")
    p2 = _real_part(_trace_bilinear(a2, rho, a2), "consistency_offdiagonal/P2")
    return ConsistencyReport(value=value, additivity_defect=2.0 * value.real,
                             probability_first=p1, probability_second=p2)


@dataclasses.dataclass(frozen=True)
class PovmElement:
    """A smeared detection operator with its positivity diagnostics.

    Negativity beyond tolerance sets ``positive`` to False; the matrix is
    never clipped.
    """

    matrix: np.ndarray
    min_eig: float
    max_eig: float
    positive: bool
    herm_defect: float = 0.0
    label: Hashable = None
    time: float | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


def _as_element(m: np.ndarray, label=None, time=None) -> PovmElement:
    defect = float(np.abs(m - m.conj().T).max())
    h = 0.5 * (m + m.conj().T)
    w, _ = herm_eig(h)
    lo, hi = float(w[0]), float(w[-1])
    ok = lo >= -POVM_POSITIVITY_RTOL * max(abs(hi), 1e-300)
    return PovmElement(matrix=m, min_eig=lo, max_eig=hi, positive=ok,
                       herm_defect=defect, label=label, time=time)


def povm_density(c: Callable[[float], np.ndarray], t: float, sigma: float,
                 rule: QuadratureRule = _DEFAULT_RULE,
                 label: Hashable = None) -> PovmElement:
    """Time-localized POVM element at event time t.

    Pi(t) = int ds ds' sqrt(f(s - t) f(s' - t)) C(s')^dagger C(s).  Because
    the square-root kernel factorizes, the double integral is the Gram
    square B^dagger B of B = int ds sqrt(f(s - t)) C(s), so the discretized
    element is positive semidefinite by construction.
    """
    lo, hi = smearing.f_window(sigma, center=t)
    nodes, weights = rule.on(lo, hi)
    amps = np.sqrt(f_sigma(nodes - t, sigma)) * weights
    b = amps[0] * c(nodes[0])
    for x, a in zip(nodes[1:], amps[1:]):
        b = b + a * c(x)
    return _as_element(b.conj().T @ b, label=label, time=float(t))


def prob_density(c: Callable[[float], np.ndarray], rho0, t: float, sigma: float,
                 rule: QuadratureRule = _DEFAULT_RULE) -> float:
    """Detection-time probability density at resolution sigma.

    P(t) = int dtau g_sigma(tau) Tr[C(t + tau/2) rho C(t - tau/2)^dagger].
    The convolution of this density with f_sigma equals the expectation of
    the ``povm_density`` element in the same state.
    """
    rho = _as_matrix(rho0)
    lo, hi = smearing.g_window(sigma)
    nodes, weights = rule.on(lo, hi)
    acc = 0.0 + 0.0j
    for tau, w in zip(nodes, weights):
        acc += w * g_sigma(tau, sigma) * _trace_bilinear(
            c(t + 0.5 * tau), rho, c(t - 0.5 * tau))
    return _real_part(acc, "prob_density")


def prob_density_large_sigma(c: Callable[[float], np.ndarray], rho0, t: float,
                             window: float,
                             rule: QuadratureRule = _DEFAULT_RULE) -> float:
    """The sigma -> infinity density: no relative-time kernel at all.

    Converges only when the bilinear form decays in the relative time; the
    integrand is checked at the window edges and a
    ``WindowInsufficiencyWarning`` is emitted when it has not died off.
    """
    rho = _as_matrix(rho0)
    nodes, weights = rule.on(-window, window)
    vals = np.empty(len(nodes), dtype=complex)
    for j, tau in enumerate(nodes):
        vals[j] = _trace_bilinear(c(t + 0.5 * tau), rho, c(t - 0.5 * tau))
    peak = float(np.abs(vals).max())
    edge = float(max(np.abs(vals[0]), np.abs(vals[-1])))
    if peak > 0.0 and edge > 1e-3 * peak:
        warnings.warn(
            f"relative-time integrand at the window edge is {edge / peak:.2e} "
            "of its peak; enlarge the window",
            WindowInsufficiencyWarning, stacklevel=2)
    return _real_part(complex(np.sum(weights * vals)), "prob_density_large_sigma")


@dataclasses.dataclass(frozen=True)
class NoDetectionReport:
    """1 minus the integrated detection family, with diagnostics.

    ``completeness_residual`` re-sums the family in reverse order and
    measures how far operator + sum falls from the identity; it is a check
    on the construction, not on physics.  ``min_eig`` may be negative: that
    is reported, never clipped.
    """

    operator: np.ndarray
    min_eig: float
    max_eig: float
    completeness_residual: float

    def __post_init__(self):
        m = np.array(self.operator, dtype=complex)
        m.flags.writeable = False
        object.__setattr__(self, "operator", m)


def no_detection_operator(families: Mapping[Hashable, Callable[[float], object]],
                          window: float,
                          rule: QuadratureRule = _DEFAULT_RULE) -> NoDetectionReport:
    """No-detection operator over [0, T]: 1 - sum_lambda int_0^T Pi(lambda, t) dt.

    ``families`` maps outcome labels to callables t -> PovmElement (or bare
    matrix).  Eigenvalue diagnostics are surfaced so callers can see
    negativity; nothing is clipped.
    """
    nodes, weights = rule.on(0.0, float(window))
    labels = list(families.keys())
    pieces: list[np.ndarray] = []
    for lam in labels:
        fam = families[lam]
        for x, w in zip(nodes, weights):
            el = fam(x)
            m = el.matrix if isinstance(el, PovmElement) else _as_matrix(el)
            pieces.append(w * m)
    dim = pieces[0].shape[0] if pieces else 1
    total = np.zeros((dim, dim), dtype=complex)
    for p in pieces:
        total += p
    eye = np.eye(dim, dtype=complex)
    op = eye - total
    # Independent re-summation, reversed order, straight into the residual.
    re_total = np.zeros((dim, dim), dtype=complex)
    for p in reversed(pieces):
        re_total += p
    residual = float(np.abs(op + re_total - eye).max())
    w_eig, _ = herm_eig(0.5 * (op + op.conj().T))
    return NoDetectionReport(operator=op, min_eig=float(w_eig[0]),
                             max_eig=float(w_eig[-1]),
                             completeness_residual=residual)


def _relative_rule(sigma: float, rule: QuadratureRule | None) -> tuple[np.ndarray, np.ndarray]:
    r = rule if rule is not None else _DEFAULT_RULE
    lo, hi = smearing.g_window(sigma)
    return r.on(lo, hi)


def prob_density_n(d: Callable[[Sequence[float]], np.ndarray], rho0,
                   times: Sequence[float], sigma: float,
                   rule: QuadratureRule | None = None) -> float:
    """Joint detection-time density for n events.

    ``d`` maps a full tuple of event times to the time-ordered class
    operator at fixed outcomes.  The density integrates one relative-time
    kernel per event:

        P(t_1..t_n) = int prod_i [dtau_i g_sigma(tau_i)]
                      Tr[ D(t + tau/2) rho D(t - tau/2)^dagger ].
    """
    rho = _as_matrix(rho0)
    ts = [float(t) for t in times]
    nodes, weights = _relative_rule(sigma, rule)
    gvals = g_sigma(nodes, sigma) * weights
    acc = 0.0 + 0.0j
    for combo in itertools.product(range(len(nodes)), repeat=len(ts)):
        shift = [0.5 * nodes[j] for j in combo]
        fwd = d([t + s for t, s in zip(ts, shift)])
        bwd = d([t - s for t, s in zip(ts, shift)])
        coeff = 1.0
        for j in combo:
            coeff *= gvals[j]
        acc += coeff * _trace_bilinear(fwd, rho, bwd)
    return _real_part(acc, "prob_density_n")


@dataclasses.dataclass(frozen=True)
class EventChannel:
    """Everything the family builder needs to know about one event.

    ``op`` maps (outcome label, time) to the event's Heisenberg operator;
    ``time_nodes``/``time_weights`` fix the grid on which family elements
    are reported and integrated over [0, T].
    """

    labels: tuple
    op: Callable[[Hashable, float], np.ndarray]
    time_nodes: np.ndarray
    time_weights: np.ndarray


@dataclasses.dataclass(frozen=True)
class NEventPovmFamily:
    """The complete detect/no-detect operator family for n events.

    Keys of ``elements`` are tuples with one slot per event: either
    ``(label, time_index)`` for a detection or ``None`` for no detection in
    that slot.  The all-None key is the terminal element.  By construction
    (inclusion-exclusion over event subsets) the weighted sum of the whole
    family is the identity to machine precision.
    """

    channels: tuple
    elements: dict
    sigma: float

    def weight(self, key: tuple) -> float:
        w = 1.0
        for i, slot in enumerate(key):
            if slot is not None:
                w *= float(self.channels[i].time_weights[slot[1]])
        return w

    def completeness_residual(self) -> float:
        """Independent re-summation of the full family against the identity."""
        dim = next(iter(self.elements.values())).shape[0]
        total = np.zeros((dim, dim), dtype=complex)
        for key in sorted(self.elements.keys(), key=repr, reverse=True):
            total += self.weight(key) * self.elements[key]
        return float(np.abs(total - np.eye(dim)).max())

    def element_report(self, key: tuple) -> PovmElement:
        return _as_element(self.elements[key], label=key)


def _time_ordered(factors: list[np.ndarray], times: list[float]) -> np.ndarray:
    from .histories import time_ordered_product
    return time_ordered_product(factors, times)


def povm_n_family(channels: Sequence[EventChannel], sigma: float,
                  rule: QuadratureRule | None = None) -> NEventPovmFamily:
    """Build the n-event POVM family on the channels' time grids.

    Detection elements carry one relative-time kernel per detected event:

        Pi(l_1, t_1; ...) = int prod_i [dtau_i g_sigma(tau_i)]
            D(t - tau/2)^dagger D(t + tau/2),

    with D the time-ordered product over the detected subset.  Partial and
    terminal elements follow by inclusion-exclusion over event subsets,
    which telescopes: the weighted family sums to the identity exactly,
    independent of quadrature choices.
    """
    n = len(channels)
    if n < 1:
        raise ValueError("need at least one event channel")
    probe = channels[0].op(channels[0].labels[0], float(channels[0].time_nodes[0]))
    dim = probe.shape[0]
    nodes, weights = _relative_rule(sigma, rule)
    gvals = g_sigma(nodes, sigma) * weights

    def detection_element(subset: tuple[int, ...], labels: tuple,
                          times: tuple[float, ...]) -> np.ndarray:
        if not subset:
            return np.eye(dim, dtype=complex)
        acc = np.zeros((dim, dim), dtype=complex)
        for combo in itertools.product(range(len(nodes)), repeat=len(subset)):
            coeff = 1.0
            for j in combo:
                coeff *= gvals[j]
            fwd_times = [times[k] + 0.5 * nodes[j] for k, j in enumerate(combo)]
            bwd_times = [times[k] - 0.5 * nodes[j] for k, j in enumerate(combo)]
            fwd_fac = [channels[i].op(labels[k], fwd_times[k])
                       for k, i in enumerate(subset)]
            bwd_fac = [channels[i].op(labels[k], bwd_times[k])
                       for k, i in enumerate(subset)]
            fwd = _time_ordered(fwd_fac, fwd_times)
            bwd = _time_ordered(bwd_fac, bwd_times)
            acc += coeff * (bwd.conj().T @ fwd)
        return acc

    # Detection elements for every subset of events, on the grids.
    det: dict[tuple[int, ...], dict[tuple, np.ndarray]] = {}
    all_events = tuple(range(n))
    for size in range(n + 1):
        for subset in itertools.combinations(all_events, size):
            table: dict[tuple, np.ndarray] = {}
            label_space = [channels[i].labels for i in subset]
            grid_space = [range(len(channels[i].time_nodes)) for i in subset]
            for labels in itertools.product(*label_space):
                for tidx in itertools.product(*grid_space):
                    times = tuple(float(channels[i].time_nodes[tidx[k]])
                                  for k, i in enumerate(subset))
                    table[(labels, tidx)] = detection_element(subset, labels, times)
            det[subset] = table

    def integrate_out(subset: tuple[int, ...], keep: tuple[int, ...],
                      keep_labels: tuple, keep_tidx: tuple) -> np.ndarray:
        """Sum the subset's detection table over the events not in keep,
        with the kept events pinned to the given outcome/grid point."""
        drop = tuple(i for i in subset if i not in keep)
        acc = np.zeros((dim, dim), dtype=complex)
        label_space = [channels[i].labels for i in drop]
        grid_space = [range(len(channels[i].time_nodes)) for i in drop]
        for labels_d in itertools.product(*label_space):
            for tidx_d in itertools.product(*grid_space):
                full_labels = []
                full_tidx = []
                ki = 0
                di = 0
                w = 1.0
                for i in subset:
                    if i in keep:
                        full_labels.append(keep_labels[ki])
                        full_tidx.append(keep_tidx[ki])
                        ki += 1
                    else:
                        full_labels.append(labels_d[di])
                        full_tidx.append(tidx_d[di])
                        w *= float(channels[i].time_weights[tidx_d[di]])
                        di += 1
                acc += w * det[subset][(tuple(full_labels), tuple(full_tidx))]
        return acc

    elements: dict[tuple, np.ndarray] = {}
    for size in range(n + 1):
        for kept in itertools.combinations(all_events, size):
            label_space = [channels[i].labels for i in kept]
            grid_space = [range(len(channels[i].time_nodes)) for i in kept]
            for labels in itertools.product(*label_space):
                for tidx in itertools.product(*grid_space):
                    acc = np.zeros((dim, dim), dtype=complex)
                    rest = [i for i in all_events if i not in kept]
                    for extra_size in range(len(rest) + 1):
                        for extra in itertools.combinations(rest, extra_size):
                            subset = tuple(sorted(kept + extra))
                            sign = (-1.0) ** len(extra)
                            acc += sign * integrate_out(subset, kept, labels, tidx)
                    key = []
                    ki = 0
                    for i in all_events:
                        if i in kept:
                            key.append((labels[ki], tidx[ki]))
                            ki += 1
                        else:
                            key.append(None)
                    elements[tuple(key)] = acc

    return NEventPovmFamily(channels=tuple(channels), elements=elements,
                            sigma=float(sigma))


@dataclasses.dataclass(frozen=True)
class ZenoReport:
    """Three-way normalization of detect / no-event / interference.

    For any initial state supported on H_minus the three terms sum to one.
    ``detect_total`` can approach its bound only through a large negative
    interference term, which is the signature of measurement back-action on
    the never-detected branch.
    """

    detect_total: float
    no_event: float
    interference: float
    total: float
    deviation: float
    detect_bounded: bool
    supported_on_initial_sector: bool
    condaa_applicable: bool
    condaa_lhs: float
    condaa_rhs: float
    condaa_residual: float


def zeno_diagnostic(c_plus, s_T, rho0, hamiltonian, window: float) -> ZenoReport:
    """Normalization diagnostic for the exact single-event decomposition.

    ``c_plus`` is the class operator integrated over [0, T]; ``s_T`` the
    restricted propagator at T.  The no-event branch in the event-branch
    phase convention is exp(+iHT) S_T, and the branch decomposition
    Q = C_empty - i C_plus makes

        Tr(C+ rho C+^dag) + Tr(C0 rho C0^dag) + 2 Re[-i Tr(C+ rho C0^dag)] = 1

    exact for states supported on H_minus.  When the support condition
    holds, the detected weight also equals +2 Re[i Tr(C+ rho C0^dag)]
    (both sides are computed independently and reported).
    """
    cp = _as_matrix(c_plus)
    st = _as_matrix(s_T)
    rho = _as_matrix(rho0)
    h = _as_matrix(hamiltonian)
    c_empty = mat_exp(h, scale=1j * float(window)).m @ st
    q = st @ st.conj().T
    supported = bool(np.abs(q @ rho @ q - rho).max() <= 1e-10 * max(np.abs(rho).max(), 1.0))
    detect = _real_part(_trace_bilinear(cp, rho, cp), "zeno detect term")
    no_event = _real_part(_trace_bilinear(c_empty, rho, c_empty), "zeno no-event term")
    cross = _trace_bilinear(cp, rho, c_empty)
    interference = 2.0 * (-1j * cross).real
    total = detect + no_event + interference
    lhs = detect
    rhs = 2.0 * (1j * cross).real
    return ZenoReport(
        detect_total=detect,
        no_event=no_event,
        interference=interference,
        total=total,
        deviation=abs(total - 1.0),
        detect_bounded=detect <= 2.0,
        supported_on_initial_sector=supported,
        condaa_applicable=supported,
        condaa_lhs=lhs,
        condaa_rhs=rhs,
        condaa_residual=abs(lhs - rhs),
    )
