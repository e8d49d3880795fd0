"""Contraction of detectors, worldtubes and field models into event densities.

Two independent routes to the same physics live here.  The kernel route
never builds a product Hilbert space: it multiplies a detector kernel

    M^BA(s, Q, r, mu) = <w'| J^B(Q - r/2) sqrt(F2) e^{i h s} sqrt(F2) J^A(Q + r/2) |w'>

against closed-time-path field correlators at the embedded points
E(tau +- s/2, Q +- r/2), integrates the relative coordinates with the wide
kernels, and scales by the squared couplings.  The composite route builds
the detector x field space explicitly and evolves first-order event
operators on it; it only exists for static tubes and serves as the
cross-check for the kernel route.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import itertools
import os
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .detector import (CheckReport, DetectorModel, _body_key,
                       nonsimultaneity_check, pointer_factorization_check,
                       sqrt_psd, stationarity_check)
from .evolution import unitary_family
from .field import CtpPoint, FieldModel, ctp_correlator, snap_label
from .histories import class_operator_exact_family, heisenberg_event_family
from .operators import SubspaceSplit, lift
from .smearing import QuadratureRule, SmearingConfig, g_sigma, g_window, w_delta

#: Residual imaginary part (relative to magnitude) tolerated in a density.
IMAG_RESIDUE_LIMIT = 1e-6

#: Snap distances up to this fraction of delta are acceptable for extended
#: bodies; beyond it the lattice cannot resolve the pointer width.
SNAP_LIMIT_FRACTION = 0.5

#: Folded-summation roundoff per unit of unsigned quadrature mass: a few
#: thousand double-precision terms cannot cancel more cleanly than this.
ROUNDOFF_FACTOR = 1e-12


class ValidationError(ValueError):
    """Raised when a contraction prerequisite fails; names the conditions."""

    def __init__(self, failures: Sequence[CheckReport]):
        self.failures = tuple(failures)
        names = ", ".join(f.name for f in self.failures)
        details = "; ".join(f.detail for f in self.failures)
        super().__init__(f"validation failed [{names}]: {details}")


@dataclasses.dataclass(frozen=True)
class DetectorCoupling:
    """One detector attached to the field with strength ``coupling``.

    ``family_map`` sends each current index A to a composite family of the
    field model; identity on names when omitted.
    """

    detector: DetectorModel
    coupling: float
    family_map: Mapping[str, str] | None = None

    def __post_init__(self):
        fam = dict(self.family_map) if self.family_map else {
            a: a for a in self.detector.currents.keys()}
        missing = [a for a in self.detector.currents.keys() if a not in fam]
        if missing:
            raise ValueError(f"family_map misses current indices {missing}")
        object.__setattr__(self, "family_map", fam)


@dataclasses.dataclass(frozen=True)
class Assembly:
    """A field model with one or more coupled detectors."""

    field: FieldModel
    couplings: tuple[DetectorCoupling, ...]

    def __post_init__(self):
        if not self.couplings:
            raise ValueError("need at least one detector")
        object.__setattr__(self, "couplings", tuple(self.couplings))
        for c in self.couplings:
            for a_idx, fam in c.family_map.items():
                if fam not in self.field.composites:
                    raise ValueError(
                        f"detector {c.detector.name}: current {a_idx!r} maps to "
                        f"unknown field family {fam!r}")

    @property
    def n_detectors(self) -> int:
        return len(self.couplings)


@dataclasses.dataclass(frozen=True)
class ValidationResult:
    checks: tuple[CheckReport, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> tuple[CheckReport, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def raise_on_failure(self) -> None:
        bad = self.failures()
        if bad:
            raise ValidationError(bad)


def _snap_check(field: FieldModel, coupling: DetectorCoupling) -> CheckReport:
    det = coupling.detector
    worst = 0.0
    for a_idx in sorted(det.currents.keys()):
        fam = coupling.family_map[a_idx]
        for key in det.body_keys():
            x = det.tube.embedding(0.0, key)[1:]
            _, dist = snap_label(field, fam, x)
            worst = max(worst, dist)
    if det.pointlike:
        return CheckReport(
            name="site_snap", passed=True, values={"max_distance": worst},
            detail=f"worldline snaps to the lattice within {worst:.3e} at tau=0")
    limit = SNAP_LIMIT_FRACTION * det.delta
    passed = worst <= limit
    detail = (f"max body-point snap distance {worst:.3e} "
              + ("within" if passed else "exceeds") + f" delta/2 = {limit:.3e}")
    return CheckReport(name="site_snap", passed=passed,
                       values={"max_distance": worst, "limit": limit},
                       detail=detail)


def _stationarity_grid(smearing: SmearingConfig) -> np.ndarray:
    lo, hi = g_window(smearing.sigma)
    return np.linspace(lo, hi, 25)


def validate_assembly(assembly: Assembly, smearing: SmearingConfig) -> ValidationResult:
    """Run every contraction prerequisite and name each outcome.

    Checks, per detector: worldtube normalization, nonsimultaneity against
    sigma, current stationarity (a failure is tolerated for pointlike
    detectors, which fall back to the slower time-dependent kernel), pointer
    factorization, and lattice snap distances.  Nothing raises here; use
    ``raise_on_failure`` on the result to turn failures into errors.
    """
    checks: list[CheckReport] = []
    for coupling in assembly.couplings:
        det = coupling.detector
        tag = det.name

        defect = det.tube.velocity_normalization_defect()
        checks.append(CheckReport(
            name=f"{tag}:tube_normalization", passed=defect <= 1e-8,
            values={"defect": defect},
            detail=f"four-velocity normalization defect {defect:.3e}"))

        ns = nonsimultaneity_check(det.tube, smearing.sigma)
        checks.append(dataclasses.replace(ns, name=f"{tag}:{ns.name}"))

        st = stationarity_check(det, _stationarity_grid(smearing))
        if st.passed:
            checks.append(dataclasses.replace(st, name=f"{tag}:{st.name}"))
        elif det.pointlike:
            checks.append(CheckReport(
                name=f"{tag}:stationarity", passed=True, values=st.values,
                detail=st.detail + "; pointlike detector falls back to the "
                "time-dependent kernel"))
        else:
            checks.append(dataclasses.replace(
                st, name=f"{tag}:{st.name}",
                detail=st.detail + "; extended bodies have no fallback"))

        pf = pointer_factorization_check(det)
        checks.append(dataclasses.replace(pf, name=f"{tag}:{pf.name}"))

        sn = _snap_check(assembly.field, coupling)
        checks.append(dataclasses.replace(sn, name=f"{tag}:{sn.name}"))
    return ValidationResult(checks=tuple(checks))


# -- detector kernels ------------------------------------------------------


@dataclasses.dataclass
class DetectorKernel:
    """Evaluator for the two-current detector factor of one detector.

    In stationary mode the factor depends on the proper-time separation
    only; otherwise (pointlike detectors whose currents see the internal
    evolution) it keeps both endpoint times.
    """

    detector: DetectorModel
    stationary: bool

    def __post_init__(self):
        det = self.detector
        self._u = unitary_family(det.self_h)
        self._roots = {mu: sqrt_psd(f, f"F2({mu!r})")
                       for mu, f in det.pointer_other.items()}
        self._vecs: dict = {}
        if self.stationary:
            if det.omega_prime is None:
                raise ValueError("stationary kernel needs the fitted vector; "
                                 "run stationarity_check first")
            for mu, root in self._roots.items():
                for a_idx in sorted(det.currents.keys()):
                    for key, j in det.currents[a_idx].items():
                        self._vecs[(mu, a_idx, key)] = root @ (j @ det.omega_prime)

    def outcomes(self) -> list:
        return sorted(self.detector.pointer_other.keys(), key=repr)

    def _vec(self, mu, a_idx: str, qkey: tuple, tau: float) -> np.ndarray:
        if self.stationary:
            return self._vecs[(mu, a_idx, qkey)]
        ck = (mu, a_idx, qkey, float(tau))
        got = self._vecs.get(ck)
        if got is None:
            j = self.detector.currents[a_idx][qkey]
            got = self._roots[mu] @ (j @ (self._u(float(tau)) @ self.detector.omega))
            self._vecs[ck] = got
        return got

    def value(self, mu, b_idx: str, q_minus: tuple, a_idx: str, q_plus: tuple,
              s: float, tau_minus: float = 0.0, tau_plus: float = 0.0) -> complex:
        """M^BA for outcome mu at body points q-, q+ and separation s.

        ``tau_minus``/``tau_plus`` matter only in the non-stationary
        fallback, where the factor keeps both endpoint proper times.
        """
        left = self._vec(mu, b_idx, q_minus, tau_minus)
        right = self._vec(mu, a_idx, q_plus, tau_plus)
        return complex(left.conj() @ (self._u(-float(s)) @ right))

    def symmetry_defect(self, s_values: Sequence[float]) -> float:
        """Worst |M^BA(s, q-, q+) - conj(M^AB(-s, q+, q-))| over the grids."""
        det = self.detector
        keys = det.body_keys()
        idxs = sorted(det.currents.keys())
        worst = 0.0
        for mu in self.outcomes():
            for s in s_values:
                for b_idx, a_idx in itertools.product(idxs, idxs):
                    for qm, qp in itertools.product(keys, keys):
                        m1 = self.value(mu, b_idx, qm, a_idx, qp, s,
                                        tau_minus=-0.5 * s, tau_plus=0.5 * s)
                        m2 = self.value(mu, a_idx, qp, b_idx, qm, -s,
                                        tau_minus=0.5 * s, tau_plus=-0.5 * s)
                        worst = max(worst, abs(m1 - np.conj(m2)))
        return worst


def kernel_evaluator(coupling: DetectorCoupling,
                     smearing: SmearingConfig) -> DetectorKernel:
    """Build the kernel evaluator, preferring the stationary reduction.

    A detector that fails the stationarity fit must be pointlike; extended
    bodies without a stationary current structure are rejected with the
    failed check attached.
    """
    det = coupling.detector
    if det.omega_prime is None:
        st = stationarity_check(det, _stationarity_grid(smearing))
        if not st.passed:
            if not det.pointlike:
                raise ValidationError([dataclasses.replace(
                    st, name=f"{det.name}:stationarity",
                    detail=st.detail + "; extended bodies have no fallback")])
            return DetectorKernel(detector=det, stationary=False)
    return DetectorKernel(detector=det, stationary=True)


@dataclasses.dataclass(frozen=True)
class KernelGrid:
    """Sampled detector kernel at fixed (tau, record position, outcome).

    ``samples[(B, A)]`` is a complex array over (s node, body pair); the
    matching embedded forward/backward points sit in ``points`` with shape
    (s node, body pair, 2, 4), forward first.  ``weights`` carries the
    quadrature weight times the wide temporal and spatial kernels.
    """

    detector: str
    tau: float
    position: tuple
    outcome: Hashable
    s_nodes: np.ndarray
    pairs: tuple
    samples: dict
    points: np.ndarray
    weights: np.ndarray

    def symmetry_defect(self) -> float:
        """Worst |M^BA(s, r) - conj(M^AB(-s, -r))| over the whole table.

        The s grid is symmetric for the shipped rules and the pair list is
        closed under orientation reversal, so every mirrored sample exists.
        """
        pair_pos = {(qp, qm): k for k, (qp, qm, _) in enumerate(self.pairs)}
        worst = 0.0
        for (b_idx, a_idx), table in self.samples.items():
            mirror = self.samples[(a_idx, b_idx)]
            for si, s in enumerate(self.s_nodes):
                sj = len(self.s_nodes) - 1 - si
                if abs(self.s_nodes[sj] + s) > 1e-9 * max(abs(s), 1.0):
                    continue
                for k, (qp, qm, _) in enumerate(self.pairs):
                    kk = pair_pos[(qm, qp)]
                    worst = max(worst, abs(table[si, k]
                                           - np.conj(mirror[sj, kk])))
        return worst


def detector_kernel(coupling: DetectorCoupling, tau: float, position,
                    outcome, smearing: SmearingConfig,
                    rule: QuadratureRule | None = None) -> KernelGrid:
    """Tabulate the kernel of one detector at fixed (tau, position, outcome).

    Each sample is the two-current matrix element between the body points
    of a pair whose midpoint is the record position, at one relative
    proper-time node; the attached weight is quadrature weight times
    g_sigma(s) w_delta(r), and the attached points are the embedded
    forward/backward spacetime positions.
    """
    det = coupling.detector
    if outcome not in det.pointer_other:
        raise ValueError(f"detector {det.name}: unknown outcome {outcome!r}")
    kern = kernel_evaluator(coupling, smearing)
    rule = rule or QuadratureRule(nodes=48)
    lo, hi = g_window(smearing.sigma)
    s_nodes, s_weights = rule.on(lo, hi)
    pairs = tuple(_event_pairs(det, position))
    idxs = sorted(det.currents.keys())

    samples = {(b, a): np.empty((len(s_nodes), len(pairs)), dtype=complex)
               for b in idxs for a in idxs}
    points = np.empty((len(s_nodes), len(pairs), 2, 4))
    weights = np.empty((len(s_nodes), len(pairs)))
    for si, s in enumerate(s_nodes):
        tau_p = tau + 0.5 * float(s)
        tau_m = tau - 0.5 * float(s)
        for k, (qp, qm, w_r) in enumerate(pairs):
            points[si, k, 0] = det.tube.embedding(tau_p, qp)
            points[si, k, 1] = det.tube.embedding(tau_m, qm)
            weights[si, k] = float(s_weights[si]) * float(
                g_sigma(s, smearing.sigma)) * w_r
            for b_idx in idxs:
                for a_idx in idxs:
                    samples[(b_idx, a_idx)][si, k] = kern.value(
                        outcome, b_idx, qm, a_idx, qp, float(s),
                        tau_minus=tau_m, tau_plus=tau_p)
    if det.pointlike:
        pos_key = det.body_keys()[0]
    else:
        pos_key = _body_key(position)
    return KernelGrid(detector=det.name, tau=float(tau), position=pos_key,
                      outcome=outcome, s_nodes=s_nodes, pairs=pairs,
                      samples=samples, points=points, weights=weights)


# -- event densities -------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class EventRequest:
    """One requested measurement event: proper time, outcome and, for
    extended bodies, the record position on the body."""

    tau: float
    outcome: Hashable
    position: Sequence[float] | None = None


def _event_pairs(det: DetectorModel, position) -> list[tuple[tuple, tuple, float]]:
    """Body-point pairs (q+, q-) whose midpoint is the record position.

    Discrete bodies carry the counting measure; each pair is weighted by
    the wide spatial kernel of the separation.
    """
    keys = det.body_keys()
    if det.pointlike:
        return [(keys[0], keys[0], 1.0)]
    if position is None:
        raise ValueError(f"detector {det.name}: extended bodies need a record "
                         "position on each event request")
    target = np.asarray(_body_key(position))
    pairs = []
    for qp, qm in itertools.product(keys, keys):
        mid = 0.5 * (np.asarray(qp) + np.asarray(qm))
        if np.linalg.norm(mid - target) > 1e-9:
            continue
        r = np.asarray(qp) - np.asarray(qm)
        pairs.append((qp, qm, float(w_delta(r, det.delta))))
    if not pairs:
        raise ValueError(f"detector {det.name}: no body-point pair has record "
                         f"position {position}")
    return pairs


def assemble_probability(assembly: Assembly, events: Sequence[EventRequest],
                         smearing: SmearingConfig,
                         rule: QuadratureRule | None = None,
                         kernels: Sequence[DetectorKernel] | None = None,
                         stats: dict | None = None) -> float:
    """Joint density for one measurement event per coupled detector.

    For each detector the relative proper time s and the body-point pair
    (q+, q-) around the requested record position are summed with weights
    g_sigma(s) w_delta(q+ - q-), the detector factor from its kernel, and
    the closed-time-path correlator of the field composites at the embedded
    points E(tau + s/2, q+) (forward branch) and E(tau - s/2, q-)
    (backward branch).  The result picks up the squared coupling of every
    detector and must come out real; an imaginary residue above
    ``IMAG_RESIDUE_LIMIT`` relative to the magnitude raises instead of being
    silently dropped, unless it sits inside the summation roundoff band.

    Off resonance the quadrature cancels almost completely, and what
    survives can be dominated by floating-point noise at the scale of
    ``ROUNDOFF_FACTOR`` times the unsigned term sum.  Passing a ``stats``
    dict returns that unsigned sum under ``"gross"`` so callers can judge
    small values against it.
    """
    if len(events) != assembly.n_detectors:
        raise ValueError(f"need exactly one event per detector "
                         f"({assembly.n_detectors}), got {len(events)}")
    rule = rule or QuadratureRule(nodes=48)
    if kernels is None:
        kernels = [kernel_evaluator(c, smearing) for c in assembly.couplings]

    lo, hi = g_window(smearing.sigma)
    s_nodes, s_weights = rule.on(lo, hi)

    per_det = []
    for coupling, kern, ev in zip(assembly.couplings, kernels, events):
        det = coupling.detector
        if ev.outcome not in det.pointer_other:
            raise ValueError(f"detector {det.name}: unknown outcome "
                             f"{ev.outcome!r}")
        pairs = _event_pairs(det, ev.position)
        idxs = sorted(det.currents.keys())
        per_det.append((coupling, kern, ev, pairs, idxs))

    total = 0.0 + 0.0j
    gross = 0.0
    n = assembly.n_detectors
    for s_pick in itertools.product(range(len(s_nodes)), repeat=n):
        weight_s = 1.0
        s_list = []
        for i in s_pick:
            s_list.append(float(s_nodes[i]))
            weight_s *= float(s_weights[i]) * float(g_sigma(s_nodes[i],
                                                            smearing.sigma))
        for pair_pick in itertools.product(*[p[3] for p in per_det]):
            weight_r = 1.0
            for (_, _, w) in pair_pick:
                weight_r *= w
            if weight_r == 0.0:
                continue
            for idx_pick in itertools.product(
                    *[itertools.product(p[4], p[4]) for p in per_det]):
                kern_factor = 1.0 + 0.0j
                fwd: list[CtpPoint] = []
                bwd: list[CtpPoint] = []
                for (coupling, kern, ev, _, _), s, (qp, qm, _), (a_idx, b_idx) \
                        in zip(per_det, s_list, pair_pick, idx_pick):
                    det = coupling.detector
                    tau_p = ev.tau + 0.5 * s
                    tau_m = ev.tau - 0.5 * s
                    kern_factor *= kern.value(ev.outcome, b_idx, qm, a_idx, qp,
                                              s, tau_minus=tau_m, tau_plus=tau_p)
                    fam_a = coupling.family_map[a_idx]
                    fam_b = coupling.family_map[b_idx]
                    fwd.append(CtpPoint(fam_a, det.tube.embedding(tau_p, qp)))
                    bwd.append(CtpPoint(fam_b, det.tube.embedding(tau_m, qm)))
                if kern_factor == 0.0:
                    continue
                g_ctp = ctp_correlator(assembly.field, fwd, bwd)
                term = weight_s * weight_r * kern_factor * g_ctp
                total += term
                gross += abs(term)

    for coupling in assembly.couplings:
        total *= coupling.coupling ** 2
        gross *= coupling.coupling ** 2
    noise = ROUNDOFF_FACTOR * gross
    if abs(total.imag) > max(IMAG_RESIDUE_LIMIT * abs(total), noise):
        raise ValueError(f"assembled density has imaginary residue "
                         f"{total.imag:.3e} against magnitude {abs(total):.3e}")
    if stats is not None:
        stats["gross"] = gross
        stats["imag"] = float(total.imag)
    return float(total.real)


@dataclasses.dataclass(frozen=True)
class AssembledDensity:
    """Single-detector event density on a proper-time grid, per outcome.

    ``values[mu]`` is real, one entry per tau.  Negative values are rejected
    at construction once they exceed both -1e-8 of the peak magnitude and
    the quadrature ``noise_floor``; a grid whose true values cancel to the
    roundoff level is noise, not a positivity violation.
    """

    taus: np.ndarray
    values: dict
    provenance: dict
    noise_floor: float = 0.0

    def __post_init__(self):
        scale = max((float(np.abs(v).max()) for v in self.values.values()
                     if len(v)), default=0.0)
        floor = -max(1e-8 * max(scale, 1e-300), self.noise_floor)
        for mu, v in self.values.items():
            if len(v) and float(v.min()) < floor:
                raise ValueError(
                    f"density for outcome {mu!r} dips to {float(v.min()):.3e}, "
                    f"below the negativity floor {floor:.3e}")


def _parallel_map(fn, items):
    """Map preserving order; QMEAS_WORKERS > 1 fans out over threads."""
    workers = int(os.environ.get("QMEAS_WORKERS", "1") or "1")
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def density_grid(assembly: Assembly, taus: Sequence[float],
                 smearing: SmearingConfig,
                 rule: QuadratureRule | None = None,
                 outcomes: Sequence[Hashable] | None = None,
                 position=None) -> AssembledDensity:
    """Single-detector density over a proper-time grid, one array per outcome."""
    if assembly.n_detectors != 1:
        raise ValueError("density grids are single-detector; call "
                         "assemble_probability directly for joint events")
    kern = kernel_evaluator(assembly.couplings[0], smearing)
    if outcomes is None:
        outcomes = kern.outcomes()
    values = {}
    worst_gross = 0.0
    for mu in outcomes:
        def point(tau: float, mu=mu) -> tuple[float, float]:
            st: dict = {}
            val = assemble_probability(
                assembly, [EventRequest(tau=float(tau), outcome=mu,
                                        position=position)],
                smearing, rule=rule, kernels=[kern], stats=st)
            return val, st["gross"]
        got = _parallel_map(point, [float(t) for t in taus])
        values[mu] = np.asarray([v for v, _ in got])
        worst_gross = max([worst_gross] + [g for _, g in got])
    noise_floor = ROUNDOFF_FACTOR * worst_gross
    prov = {
        "sigma": smearing.sigma,
        "window": smearing.window,
        "delta": smearing.delta,
        "nodes": (rule or QuadratureRule(nodes=48)).nodes,
        "scheme": (rule or QuadratureRule(nodes=48)).scheme,
        "coupling": assembly.couplings[0].coupling,
        "detector": assembly.couplings[0].detector.name,
        "stationary_kernel": kern.stationary,
        "imag_residue_limit": IMAG_RESIDUE_LIMIT,
        "noise_floor": noise_floor,
    }
    return AssembledDensity(taus=np.asarray(taus, dtype=float), values=values,
                            provenance=prov, noise_floor=noise_floor)


@dataclasses.dataclass(frozen=True)
class NoDetectionSummary:
    """Detection totals over a window and the complementary probability."""

    detection_by_outcome: dict
    total_detection: float
    no_detection: float
    bounded: bool


def assemble_no_detection(assembly: Assembly, smearing: SmearingConfig,
                          rule: QuadratureRule | None = None,
                          tau_rule: QuadratureRule | None = None,
                          position=None) -> NoDetectionSummary:
    """Integrate the detection density over the window; the rest is silence.

    Single-detector assemblies only.  At lowest order the no-detection
    probability is one minus the summed detection probability; ``bounded``
    records whether it landed inside [0, 1] up to roundoff.
    """
    if assembly.n_detectors != 1:
        raise ValueError("no-detection summaries are single-detector")
    tau_rule = tau_rule or QuadratureRule(nodes=48)
    nodes, weights = tau_rule.on(0.0, smearing.window)
    grid = density_grid(assembly, nodes, smearing, rule=rule, position=position)
    by_outcome = {mu: float(np.dot(weights, vals))
                  for mu, vals in grid.values.items()}
    total = float(sum(by_outcome.values()))
    rest = 1.0 - total
    bounded = -1e-10 <= rest <= 1.0 + 1e-10
    return NoDetectionSummary(detection_by_outcome=by_outcome,
                              total_detection=total, no_detection=rest,
                              bounded=bounded)


# -- composite cross-check route ------------------------------------------


@dataclasses.dataclass
class Composite:
    """Explicit field x detector(s) product-space model, static tubes only.

    Slot 0 is the field; detectors follow in coupling order.  ``h_int``
    already carries the couplings.  ``event_family(i, mu)`` gives the
    first-order event operator family for detector i and outcome mu,
    directly comparable to the kernel-route density through the same
    relative-time quadrature.
    """

    h0: np.ndarray
    h_int: np.ndarray
    roots: dict
    record_projectors: tuple
    rho0: np.ndarray
    dims: tuple[int, ...]

    @property
    def h_total(self) -> np.ndarray:
        return self.h0 + self.h_int

    def event_family(self, i: int, mu) -> Callable[[float], np.ndarray]:
        return heisenberg_event_family(self.h0, self.roots[(i, mu)], self.h_int)

    def record_split(self, i: int) -> SubspaceSplit:
        """No-record / record split of the composite space for detector i."""
        eye = np.eye(self.h0.shape[0])
        return SubspaceSplit.from_projector(eye - self.record_projectors[i])

    def exact_family(self, i: int, mu) -> Callable[[float], np.ndarray]:
        """Nonperturbative event-operator family under the full Hamiltonian."""
        return class_operator_exact_family(self.h_total, self.record_split(i),
                                           self.roots[(i, mu)])


def _is_static(det: DetectorModel) -> bool:
    tube = det.tube
    if tube.kind != "inertial":
        return False
    return bool(np.allclose(tube.four_velocity, [1.0, 0.0, 0.0, 0.0],
                            atol=1e-12))


def build_composite(assembly: Assembly) -> Composite:
    """Assemble the explicit product space for the cross-check route.

    Static tubes only: the composite Hamiltonian is time-independent only
    in a frame where every detector rests, so a moving or accelerated tube
    is refused rather than silently frozen at tau = 0.
    """
    for c in assembly.couplings:
        if not _is_static(c.detector):
            raise ValueError(
                f"detector {c.detector.name}: composite route needs a static "
                "worldtube; the kernel route handles moving detectors")
    dims = (assembly.field.dim,) + tuple(c.detector.dim
                                         for c in assembly.couplings)

    h0 = lift(assembly.field.h_phi, 0, dims).m.astype(complex)
    for i, c in enumerate(assembly.couplings):
        h0 = h0 + lift(c.detector.self_h, i + 1, dims).m

    h_int = np.zeros_like(h0)
    for i, c in enumerate(assembly.couplings):
        det = c.detector
        for a_idx in sorted(det.currents.keys()):
            fam = c.family_map[a_idx]
            for key in det.body_keys():
                x = det.tube.embedding(0.0, key)[1:]
                label, _ = snap_label(assembly.field, fam, x)
                j_lift = lift(det.currents[a_idx][key], i + 1, dims).m
                y_lift = lift(assembly.field.composites[fam][label], 0, dims).m
                h_int = h_int + c.coupling * (j_lift @ y_lift)

    roots = {}
    projectors = []
    for i, c in enumerate(assembly.couplings):
        for mu, f2 in c.detector.pointer_other.items():
            root = sqrt_psd(f2, f"F2({mu!r})")
            roots[(i, mu)] = lift(root, i + 1, dims).m
        projectors.append(lift(c.detector.record_projector, i + 1, dims).m)

    rho = assembly.field.rho0
    for c in assembly.couplings:
        omega = c.detector.omega
        rho = np.kron(rho, np.outer(omega, omega.conj()))
    return Composite(h0=h0, h_int=h_int, roots=roots,
                     record_projectors=tuple(projectors), rho0=rho, dims=dims)
