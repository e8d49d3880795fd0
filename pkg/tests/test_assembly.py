"""Kernel-route densities, their oracles, and the composite cross-check."""

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from qmeas.assembly import (Assembly, AssembledDensity, DetectorCoupling,
                            DetectorKernel, EventRequest, ValidationError,
                            assemble_no_detection, assemble_probability,
                            build_composite, density_grid, detector_kernel,
                            kernel_evaluator, validate_assembly)
from qmeas.detector import DetectorModel, WorldTube
from qmeas.field import free_scalar_builder
from qmeas.operators import SubspaceSplit
from qmeas.povm import prob_density
from qmeas.smearing import QuadratureRule, SmearingConfig, g_sigma, g_window, w_delta

from helpers import (one_mode_assembly, rename_family, twin_assembly,
                     two_level_detector)

SMEAR = SmearingConfig(sigma=2.0, window=30.0)
LENGTH = 2.0 * np.pi


def one_mode_wightman(s, n_q=1, mass=1.0, length=LENGTH):
    """Single zero mode, n_q quanta: <phi(tau - s/2) phi(tau + s/2)>."""
    stim = (1.0 + n_q) * np.exp(1j * mass * s) / (2.0 * mass * length)
    absorb = n_q * np.exp(-1j * mass * s) / (2.0 * mass * length)
    return stim + absorb


def test_kernel_value_is_gap_phase():
    asm = one_mode_assembly(gap=1.3)
    kern = kernel_evaluator(asm.couplings[0], SMEAR)
    assert kern.stationary
    body = asm.couplings[0].detector.body_keys()[0]
    for s in (0.0, 0.7, -2.4):
        got = kern.value("click", "phi", body, "phi", body, s)
        assert got == pytest.approx(np.exp(1.3j * s), rel=1e-13)
    assert kern.outcomes() == ["click"]
    assert kern.symmetry_defect([0.4, 1.1]) < 1e-14


def test_nonstationary_kernel_agrees_for_eigen_ground():
    # ground level at energy zero: the tau-dependent vectors never rotate,
    # so the fallback kernel must reproduce the stationary one exactly
    asm = one_mode_assembly(gap=1.3)
    det = asm.couplings[0].detector
    stat = kernel_evaluator(asm.couplings[0], SMEAR)
    slow = DetectorKernel(detector=det, stationary=False)
    body = det.body_keys()[0]
    for tau in (0.0, 4.0):
        for s in (-1.5, 0.3, 2.0):
            a = stat.value("click", "phi", body, "phi", body, s)
            b = slow.value("click", "phi", body, "phi", body, s,
                           tau_minus=tau - 0.5 * s, tau_plus=tau + 0.5 * s)
            assert a == pytest.approx(b, abs=1e-14)
    p_stat = assemble_probability(asm, [EventRequest(5.0, "click")], SMEAR,
                                  rule=QuadratureRule(nodes=24))
    p_slow = assemble_probability(asm, [EventRequest(5.0, "click")], SMEAR,
                                  rule=QuadratureRule(nodes=24), kernels=[slow])
    assert p_slow == pytest.approx(p_stat, rel=1e-12)


def superposed_ground_kwargs(**over):
    j = np.zeros((3, 3), dtype=complex)
    j[2, 0] = j[0, 2] = 1.0
    j[2, 1] = j[1, 2] = 1.0
    base = dict(
        name="super",
        split=SubspaceSplit.from_indices(3, [0, 1]),
        self_h=np.diag([0.0, 1.0, 5.0]).astype(complex),
        currents={"phi": {(0.0, 0.0, 0.0): j}},
        omega=np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0),
        pointer_other={"click": np.diag([0.0, 0.0, 1.0]).astype(complex)},
        tube=WorldTube.static(),
    )
    base.update(over)
    return base


def test_kernel_evaluator_fallback_paths():
    pointlike = DetectorModel(**superposed_ground_kwargs())
    kern = kernel_evaluator(DetectorCoupling(pointlike, 1e-3), SMEAR)
    assert not kern.stationary

    q1, q2 = (0.0, 0.0, 0.0), (0.5, 0.0, 0.0)
    j = np.zeros((3, 3), dtype=complex)
    j[2, 0] = j[0, 2] = 1.0
    j[2, 1] = j[1, 2] = 1.0
    record = np.diag([0.0, 0.0, 1.0]).astype(complex)
    extended = DetectorModel(**superposed_ground_kwargs(
        name="wide",
        currents={"phi": {q1: j, q2: j}},
        tube=WorldTube.static(body_points=(q1, q2)),
        pointer_position={q1: 0.5 * record, q2: 0.5 * record},
        delta=0.2,
    ))
    with pytest.raises(ValidationError, match="no fallback"):
        kernel_evaluator(DetectorCoupling(extended, 1e-3), SMEAR)


def test_detector_kernel_grid():
    asm = one_mode_assembly(gap=1.0)
    rule = QuadratureRule(nodes=12)
    grid = detector_kernel(asm.couplings[0], tau=2.0, position=None,
                           outcome="click", smearing=SMEAR, rule=rule)
    lo, hi = g_window(SMEAR.sigma)
    s_nodes, s_weights = rule.on(lo, hi)
    assert np.allclose(grid.s_nodes, s_nodes)
    assert grid.pairs == (((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 1.0),)
    assert grid.position == (0.0, 0.0, 0.0)
    table = grid.samples[("phi", "phi")]
    assert np.allclose(table[:, 0], np.exp(1j * s_nodes), atol=1e-13)
    assert np.allclose(grid.weights[:, 0],
                       s_weights * g_sigma(s_nodes, SMEAR.sigma))
    assert np.allclose(grid.points[:, 0, 0, 0], 2.0 + 0.5 * s_nodes)
    assert np.allclose(grid.points[:, 0, 1, 0], 2.0 - 0.5 * s_nodes)
    assert np.allclose(grid.points[:, 0, :, 1:], 0.0)
    assert grid.symmetry_defect() < 1e-13
    with pytest.raises(ValueError, match="unknown outcome"):
        detector_kernel(asm.couplings[0], tau=2.0, position=None,
                        outcome="ding", smearing=SMEAR, rule=rule)


def test_single_event_density_against_direct_quadrature():
    gap, g = 1.0, 1e-3
    asm = one_mode_assembly(gap=gap, coupling=g)
    n = 40
    p = assemble_probability(asm, [EventRequest(9.0, "click")], SMEAR,
                             rule=QuadratureRule(nodes=n))
    # same contraction from scratch: M(s) G(s) against the wide kernel
    lo, hi = g_window(SMEAR.sigma)
    x, w = leggauss(n)
    s = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * w
    integrand = np.exp(1j * gap * s) * one_mode_wightman(s)
    expect = g * g * float(np.real(np.sum(w * g_sigma(s, SMEAR.sigma)
                                          * integrand)))
    assert p == pytest.approx(expect, rel=1e-12)
    # stationary state, stationary kernel: the density cannot depend on tau
    p_late = assemble_probability(asm, [EventRequest(21.0, "click")], SMEAR,
                                  rule=QuadratureRule(nodes=n))
    assert p_late == pytest.approx(p, rel=1e-13)


def test_resonant_density_matches_closed_form():
    gap, g, sigma = 1.0, 1e-3, 8.0
    smear = SmearingConfig(sigma=sigma, window=40.0)
    asm = one_mode_assembly(gap=gap, coupling=g)
    p = assemble_probability(asm, [EventRequest(20.0, "click")], smear,
                             rule=QuadratureRule(nodes=384))
    # Gaussian transform of each Wightman mode term; the detector sits on
    # resonance so the absorption term survives almost alone
    amp = np.sqrt(8.0 * np.pi * sigma ** 2)
    stim = 2.0 * np.exp(-2.0 * sigma ** 2 * (gap + 1.0) ** 2) / (2.0 * LENGTH)
    absorb = np.exp(-2.0 * sigma ** 2 * (gap - 1.0) ** 2) / (2.0 * LENGTH)
    expect = g * g * amp * (stim + absorb)
    assert p == pytest.approx(expect, rel=1e-8)


def test_density_scales_with_coupling_squared():
    rule = QuadratureRule(nodes=24)
    ps = {}
    for g in (1e-3, 2e-3):
        asm = one_mode_assembly(coupling=g)
        ps[g] = assemble_probability(asm, [EventRequest(5.0, "click")], SMEAR,
                                     rule=rule)
    assert ps[2e-3] == pytest.approx(4.0 * ps[1e-3], rel=1e-12)


def test_joint_density_factorizes_over_decoupled_pairs():
    rule = QuadratureRule(nodes=20)
    twin = twin_assembly(coupling=1e-3)
    joint = assemble_probability(
        twin, [EventRequest(5.0, "click"), EventRequest(7.0, "click")],
        SMEAR, rule=rule)

    singles = []
    for name, fam, tau in (("left", "phi1", 5.0), ("right", "phi2", 7.0)):
        field = rename_family(
            free_scalar_builder(1, 2, 1.0, LENGTH, {0: 1}), fam)
        det = two_level_detector(name=name, gap=1.0, current_key=fam)
        solo = Assembly(field=field,
                        couplings=(DetectorCoupling(det, 1e-3),))
        singles.append(assemble_probability(
            solo, [EventRequest(tau, "click")], SMEAR, rule=rule))
    assert joint == pytest.approx(singles[0] * singles[1], rel=1e-12)


def test_assemble_probability_stats_and_errors():
    asm = one_mode_assembly()
    stats = {}
    p = assemble_probability(asm, [EventRequest(5.0, "click")], SMEAR,
                             rule=QuadratureRule(nodes=24), stats=stats)
    assert stats["gross"] >= abs(p) > 0.0
    assert abs(stats["imag"]) < 1e-6 * stats["gross"]
    with pytest.raises(ValueError, match="one event per detector"):
        assemble_probability(asm, [], SMEAR)
    with pytest.raises(ValueError, match="unknown outcome"):
        assemble_probability(asm, [EventRequest(5.0, "ding")], SMEAR)


def test_extended_bodies_need_a_record_position():
    q1, q2 = (0.0, 0.0, 0.0), (0.5, 0.0, 0.0)
    j = np.zeros((3, 3), dtype=complex)
    j[1, 0] = j[0, 1] = 1.0
    record = np.diag([0.0, 1.0, 1.0]).astype(complex)
    det = DetectorModel(
        name="bar",
        split=SubspaceSplit.from_indices(3, [0]),
        self_h=np.diag([0.0, 1.0, 1.0]).astype(complex),
        currents={"phi": {q1: j, q2: j}},
        omega=np.array([1.0, 0.0, 0.0], dtype=complex),
        pointer_other={"click": record},
        tube=WorldTube.static(body_points=(q1, q2)),
        pointer_position={q1: np.diag([0.0, 1.0, 0.0]),
                          q2: np.diag([0.0, 0.0, 1.0])},
        delta=0.2,
    )
    field = free_scalar_builder(3, 1, 1.0, LENGTH)
    asm = Assembly(field=field, couplings=(DetectorCoupling(det, 1e-3),))
    with pytest.raises(ValueError, match="need a record position"):
        assemble_probability(asm, [EventRequest(1.0, "click")], SMEAR,
                             rule=QuadratureRule(nodes=8))
    with pytest.raises(ValueError, match="no body-point pair"):
        assemble_probability(
            asm, [EventRequest(1.0, "click", position=(0.3, 0.0, 0.0))],
            SMEAR, rule=QuadratureRule(nodes=8))
    # the midpoint between the two body points admits the two mixed pairs
    rule = QuadratureRule(nodes=8)
    grid = detector_kernel(asm.couplings[0], tau=1.0,
                           position=(0.25, 0.0, 0.0), outcome="click",
                           smearing=SMEAR, rule=rule)
    assert {(p[0], p[1]) for p in grid.pairs} == {(q1, q2), (q2, q1)}
    for _, _, wr in grid.pairs:
        assert wr == pytest.approx(float(w_delta((0.5, 0.0, 0.0), 0.2)))
    assert grid.symmetry_defect() < 1e-13


def test_coupling_and_assembly_validation_errors():
    det = two_level_detector()
    field = free_scalar_builder(1, 2, 1.0, LENGTH, {0: 1})
    with pytest.raises(ValueError, match="family_map misses"):
        DetectorCoupling(det, 1e-3, family_map={"other": "phi"})
    with pytest.raises(ValueError, match="unknown field family 'psi'"):
        Assembly(field=field, couplings=(
            DetectorCoupling(det, 1e-3, family_map={"phi": "psi"}),))
    with pytest.raises(ValueError, match="at least one detector"):
        Assembly(field=field, couplings=())


def test_validate_assembly_names_every_check():
    asm = one_mode_assembly()
    result = validate_assembly(asm, SMEAR)
    names = [c.name for c in result.checks]
    assert names == [
        "probe:tube_normalization",
        "probe:nonsimultaneity",
        "probe:stationarity",
        "probe:pointer_factorization",
        "probe:site_snap",
    ]
    assert result.passed
    assert result.failures() == ()
    result.raise_on_failure()


def test_validate_assembly_flags_wide_bodies():
    q1, q2 = (0.0, 0.0, 0.0), (0.5, 0.0, 0.0)
    j = np.zeros((3, 3), dtype=complex)
    j[1, 0] = j[0, 1] = 1.0
    record = np.diag([0.0, 1.0, 1.0]).astype(complex)
    det = DetectorModel(
        name="bar",
        split=SubspaceSplit.from_indices(3, [0]),
        self_h=np.diag([0.0, 1.0, 1.0]).astype(complex),
        currents={"phi": {q1: j, q2: j}},
        omega=np.array([1.0, 0.0, 0.0], dtype=complex),
        pointer_other={"click": record},
        tube=WorldTube.static(body_points=(q1, q2)),
        pointer_position={q1: np.diag([0.0, 1.0, 0.0]),
                          q2: np.diag([0.0, 0.0, 1.0])},
        delta=0.2,
    )
    field = free_scalar_builder(3, 1, 1.0, LENGTH)
    asm = Assembly(field=field, couplings=(DetectorCoupling(det, 1e-3),))
    result = validate_assembly(asm, SmearingConfig(sigma=1.0, window=10.0))
    assert not result.passed
    failed = {c.name for c in result.failures()}
    # body extent 0.5 against sigma 1 breaks nonsimultaneity, and the
    # 3-site lattice cannot snap the off-site body point within delta/2
    assert "bar:nonsimultaneity" in failed
    assert "bar:site_snap" in failed
    with pytest.raises(ValidationError, match="nonsimultaneity"):
        result.raise_on_failure()


def test_assembled_density_negativity_floor():
    taus = np.array([0.0, 1.0])
    AssembledDensity(taus=taus, values={"click": np.array([1.0, -5e-9])},
                     provenance={})
    with pytest.raises(ValueError, match="negativity floor"):
        AssembledDensity(taus=taus, values={"click": np.array([1.0, -1e-6])},
                         provenance={})
    # a declared quadrature noise floor widens the acceptance band
    AssembledDensity(taus=taus, values={"click": np.array([1e-3, -5e-4])},
                     provenance={}, noise_floor=1e-3)


def test_density_grid_matches_pointwise_assembly():
    asm = one_mode_assembly()
    rule = QuadratureRule(nodes=24)
    taus = [2.0, 6.0, 10.0]
    grid = density_grid(asm, taus, SMEAR, rule=rule)
    assert set(grid.values.keys()) == {"click"}
    for j, tau in enumerate(taus):
        direct = assemble_probability(asm, [EventRequest(tau, "click")],
                                      SMEAR, rule=rule)
        assert grid.values["click"][j] == pytest.approx(direct, rel=1e-13)
    prov = grid.provenance
    assert prov["detector"] == "probe"
    assert prov["coupling"] == 1e-3
    assert prov["nodes"] == 24
    assert prov["stationary_kernel"] is True
    assert prov["noise_floor"] == grid.noise_floor > 0.0
    with pytest.raises(ValueError, match="single-detector"):
        density_grid(twin_assembly(), taus, SMEAR, rule=rule)


def test_density_grid_worker_fanout_is_deterministic(monkeypatch):
    asm = one_mode_assembly()
    rule = QuadratureRule(nodes=16)
    taus = np.linspace(1.0, 9.0, 5)
    serial = density_grid(asm, taus, SMEAR, rule=rule)
    monkeypatch.setenv("QMEAS_WORKERS", "3")
    fanned = density_grid(asm, taus, SMEAR, rule=rule)
    assert np.array_equal(serial.values["click"], fanned.values["click"])


def test_no_detection_summary():
    asm = one_mode_assembly()
    rule = QuadratureRule(nodes=16)
    tau_rule = QuadratureRule(nodes=12)
    summary = assemble_no_detection(asm, SMEAR, rule=rule, tau_rule=tau_rule)
    nodes, weights = tau_rule.on(0.0, SMEAR.window)
    grid = density_grid(asm, nodes, SMEAR, rule=rule)
    manual = float(np.dot(weights, grid.values["click"]))
    assert summary.detection_by_outcome["click"] == pytest.approx(manual,
                                                                  rel=1e-12)
    assert summary.total_detection == pytest.approx(manual, rel=1e-12)
    assert summary.no_detection == pytest.approx(1.0 - manual, rel=1e-12)
    assert summary.bounded
    with pytest.raises(ValueError, match="single-detector"):
        assemble_no_detection(twin_assembly(), SMEAR, rule=rule)


def test_build_composite_structure():
    asm = one_mode_assembly(gap=1.0, coupling=1e-3)
    comp = build_composite(asm)
    assert comp.dims == (3, 2)
    field = asm.field
    label = field.labels("phi")[0]
    y = field.composites["phi"][label]
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(comp.h0, np.kron(field.h_phi, np.eye(2))
                       + np.kron(np.eye(3), np.diag([0.0, 1.0])))
    assert np.allclose(comp.h_int, 1e-3 * np.kron(y, sx))
    assert np.allclose(comp.roots[(0, "click")],
                       np.kron(np.eye(3), np.diag([0.0, 1.0])))
    assert np.allclose(comp.record_projectors[0],
                       np.kron(np.eye(3), np.diag([0.0, 1.0])))
    assert np.trace(comp.rho0) == pytest.approx(1.0)
    assert np.allclose(comp.rho0, comp.rho0.conj().T)
    split = comp.record_split(0)
    assert np.allclose(split.projector_plus, comp.record_projectors[0])


def test_composite_route_reproduces_kernel_density():
    asm = one_mode_assembly(gap=1.0, coupling=1e-3)
    comp = build_composite(asm)
    rule = QuadratureRule(nodes=48)
    fam = comp.event_family(0, "click")
    for tau in (4.0, 9.5):
        kernel_route = assemble_probability(
            asm, [EventRequest(tau, "click")], SMEAR, rule=rule)
        povm_route = prob_density(fam, comp.rho0, tau, SMEAR.sigma, rule=rule)
        assert kernel_route == pytest.approx(povm_route, rel=1e-10)


def test_build_composite_refuses_moving_tubes():
    field = free_scalar_builder(1, 2, 1.0, LENGTH, {0: 1})
    tube = WorldTube.inertial((0.6, 0.0, 0.0))
    det = two_level_detector(tube=tube)
    asm = Assembly(field=field, couplings=(DetectorCoupling(det, 1e-3),))
    with pytest.raises(ValueError, match="static worldtube"):
        build_composite(asm)
