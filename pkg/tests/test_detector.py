"""World tubes, detector internals and validity checks."""

import numpy as np
import pytest

from qmeas.detector import (ETA, DetectorModel, WorldTube, boost_embedding,
                            boost_matrix, nonsimultaneity_check,
                            pointer_factorization_check, sqrt_psd,
                            stationarity_check)
from qmeas.operators import SubspaceSplit

from helpers import SX, two_level_detector


def acceleration_table(a=0.5, n=801, span=2.0):
    taus = np.linspace(-span, span, n)
    wl = np.zeros((n, 4))
    wl[:, 0] = np.sinh(a * taus) / a
    wl[:, 1] = np.cosh(a * taus) / a
    return taus, wl


def test_boost_matrix_preserves_metric():
    lam = boost_matrix((0.6, 0.0, 0.0))
    assert np.abs(lam.T @ ETA @ lam - ETA).max() < 1e-12
    assert lam[0, 0] == pytest.approx(1.25)
    lam2 = boost_matrix((0.1, -0.2, 0.3))
    assert np.abs(lam2.T @ ETA @ lam2 - ETA).max() < 1e-12
    with pytest.raises(ValueError, match="below 1"):
        boost_matrix((1.0, 0.0, 0.0))


def test_static_tube_embedding():
    tube = WorldTube.static(position=(1.0, 2.0, 3.0), start_time=0.5)
    assert np.allclose(tube.embedding(2.0), [2.5, 1.0, 2.0, 3.0])
    assert np.allclose(tube.embedding(0.0, (0.1, 0.0, 0.0)),
                       [0.5, 1.1, 2.0, 3.0])
    assert tube.extent == 0.0
    assert tube.velocity_normalization_defect() < 1e-15
    assert np.allclose(tube.body_metric(), np.eye(3))


def test_inertial_tube_kinematics():
    tube = WorldTube.inertial((0.6, 0.0, 0.0))
    assert np.allclose(tube.four_velocity, [1.25, 0.75, 0.0, 0.0])
    assert np.allclose(tube.embedding(2.0), [2.5, 1.5, 0.0, 0.0])
    # boosted triad keeps the body metric euclidean
    assert np.allclose(tube.body_metric(), np.eye(3), atol=1e-12)
    assert tube.proper_time_of(2.5) == pytest.approx(2.0)
    tmap = tube.coordinate_time_map(0.0, 4.0)
    assert tmap(2.0) == pytest.approx(2.5)
    assert tmap.inverse(2.5) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(ValueError, match="tau range"):
        tube.coordinate_time_map()


def test_extended_body_extent():
    tube = WorldTube.static(body_points=((0.0, 0.0, 0.0), (0.3, 0.0, 0.0)))
    assert tube.extent == pytest.approx(0.3)


def test_tabulated_accelerated_tube():
    taus, wl = acceleration_table()
    tube = WorldTube.tabulated(taus, wl)
    assert tube.velocity_normalization_defect() < 1e-8
    # linear interpolation against the analytic embedding
    got = tube.embedding(0.37)
    expect = [np.sinh(0.5 * 0.37) / 0.5, np.cosh(0.5 * 0.37) / 0.5, 0.0, 0.0]
    assert np.allclose(got, expect, atol=1e-4)
    assert tube.body_metric().size == 0
    tmap = tube.coordinate_time_map()
    t = float(np.sinh(0.5 * 1.2) / 0.5)
    assert tube.proper_time_of(t) == pytest.approx(1.2, abs=1e-4)
    assert tmap.inverse(t) == pytest.approx(1.2, abs=1e-4)
    with pytest.raises(ValueError, match="body point"):
        tube.embedding(0.0, (1.0, 0.0, 0.0))


def test_tabulated_tube_rejects_bad_tables():
    taus, wl = acceleration_table(n=5)
    with pytest.raises(ValueError, match=">= 5"):
        WorldTube.tabulated(taus[:4], wl[:4])
    jitter = taus.copy()
    jitter[2] += 0.1
    with pytest.raises(ValueError, match="uniformly spaced"):
        WorldTube.tabulated(jitter, wl)
    with pytest.raises(ValueError, match="strictly increasing"):
        WorldTube.tabulated(taus[::-1], wl)
    bad = wl.copy()
    bad[:, 0] = 2.0 * taus  # eta(u,u) = -4, defect 3
    with pytest.raises(ValueError, match="normalization defect"):
        WorldTube.tabulated(taus, bad)


def test_from_table_round_trip(tmp_path):
    taus, wl = acceleration_table(n=101, span=1.0)
    path = tmp_path / "tube.txt"
    lines = ["# tau q1 q2 q3 E0 E1 E2 E3"]
    for tau, row in zip(taus, wl):
        lines.append("%.17g 0 0 0 %.17g %.17g %.17g %.17g" % (tau, *row))
    path.write_text("\n".join(lines) + "\n")
    tube = WorldTube.from_table(path)
    assert np.allclose(tube.tau_samples, taus)
    assert np.allclose(tube.worldline, wl)


def test_from_table_error_messages(tmp_path):
    bad = tmp_path / "short.txt"
    bad.write_text("0.0 0 0 0 0.0 0.0 0.0\n")
    with pytest.raises(ValueError, match="short.txt:1: expected 8 columns"):
        WorldTube.from_table(bad)
    multi = tmp_path / "multi.txt"
    rows = ["%g 0 0 0 %g 0 0 0" % (t, t) for t in np.linspace(0, 1, 6)]
    rows[3] = "0.6 1 0 0 0.6 0 0 0"
    multi.write_text("\n".join(rows) + "\n")
    with pytest.raises(ValueError, match="multiple body points"):
        WorldTube.from_table(multi)
    empty = tmp_path / "empty.txt"
    empty.write_text("# just a comment\n")
    with pytest.raises(ValueError, match="no data rows"):
        WorldTube.from_table(empty)


def test_boost_embedding_transforms_points():
    lam = boost_matrix((0.0, 0.6, 0.0))
    shift = np.array([1.0, 0.0, -2.0, 0.0])
    tube = WorldTube.static(position=(0.3, 0.0, 0.0))
    moved = boost_embedding(tube, lam, shift)
    for tau in (0.0, 0.7, 1.9):
        assert np.allclose(moved.embedding(tau),
                           lam @ tube.embedding(tau) + shift, atol=1e-12)
    taus, wl = acceleration_table(n=101, span=1.0)
    tab = WorldTube.tabulated(taus, wl)
    moved_tab = boost_embedding(tab, lam, shift)
    assert np.allclose(moved_tab.worldline, (lam @ wl.T).T + shift)
    with pytest.raises(ValueError, match="preserve the metric"):
        boost_embedding(tube, 2.0 * np.eye(4))
    with pytest.raises(ValueError, match="not proper"):
        boost_embedding(tube, np.diag([1.0, -1.0, 1.0, 1.0]))


def test_nonsimultaneity_check():
    ok = nonsimultaneity_check(WorldTube.static(), sigma=1.0)
    assert ok.passed
    assert ok.values["nons1"] == 0.0
    assert "both within" in ok.detail
    wide = WorldTube.static(body_points=((0.0, 0.0, 0.0), (0.5, 0.0, 0.0)))
    bad = nonsimultaneity_check(wide, sigma=1.0)
    assert not bad.passed
    assert bad.values["nons1"] == pytest.approx(0.5)
    assert "nons1 ratio 0.5 > 0.1" in bad.detail


def test_detector_model_accepts_standard_two_level():
    det = two_level_detector(gap=1.3)
    assert det.dim == 2
    assert det.pointlike
    assert np.allclose(det.record_projector, np.diag([0.0, 1.0]))
    assert det.body_keys() == [(0.0, 0.0, 0.0)]
    assert np.allclose(det.position_element((0.0, 0.0, 0.0)),
                       det.record_projector)
    assert det.omega_prime is None


def two_level_kwargs(**over):
    tube = WorldTube.static()
    base = dict(
        name="probe",
        split=SubspaceSplit.from_indices(2, [0]),
        self_h=np.diag([0.0, 1.0]).astype(complex),
        currents={"phi": {(0.0, 0.0, 0.0): SX}},
        omega=np.array([1.0, 0.0], dtype=complex),
        pointer_other={"click": np.diag([0.0, 1.0]).astype(complex)},
        tube=tube,
    )
    base.update(over)
    return base


def test_detector_model_validation_errors():
    with pytest.raises(ValueError, match="must be normalized"):
        DetectorModel(**two_level_kwargs(omega=np.array([2.0, 0.0])))
    with pytest.raises(ValueError, match="not annihilated"):
        DetectorModel(**two_level_kwargs(omega=np.array([0.0, 1.0])))
    with pytest.raises(ValueError, match="hermitian"):
        DetectorModel(**two_level_kwargs(
            self_h=np.array([[0.0, 1.0], [0.0, 1.0]])))
    with pytest.raises(ValueError, match="at least one current"):
        DetectorModel(**two_level_kwargs(currents={}))
    with pytest.raises(ValueError, match="does not sum"):
        DetectorModel(**two_level_kwargs(
            pointer_other={"click": np.diag([0.0, 0.5])}))
    with pytest.raises(ValueError, match="not positive"):
        DetectorModel(**two_level_kwargs(
            pointer_other={"a": np.diag([0.0, 2.0]),
                           "b": np.diag([0.0, -1.0])}))


def extended_kwargs(**over):
    q1, q2 = (0.0, 0.0, 0.0), (0.5, 0.0, 0.0)
    tube = WorldTube.static(body_points=(q1, q2))
    e_up = np.diag([0.0, 1.0, 1.0]).astype(complex)
    j1 = np.zeros((3, 3), dtype=complex)
    j1[0, 1] = j1[1, 0] = 1.0
    j2 = np.zeros((3, 3), dtype=complex)
    j2[0, 2] = j2[2, 0] = 1.0
    base = dict(
        name="bar",
        split=SubspaceSplit.from_indices(3, [0]),
        self_h=np.diag([0.0, 1.0, 1.0]).astype(complex),
        currents={"phi": {q1: j1, q2: j2}},
        omega=np.array([1.0, 0.0, 0.0], dtype=complex),
        pointer_other={"click": e_up},
        tube=tube,
        pointer_position={q1: np.diag([0.0, 1.0, 0.0]),
                          q2: np.diag([0.0, 0.0, 1.0])},
        delta=0.2,
    )
    base.update(over)
    return base


def test_extended_detector_validation():
    det = DetectorModel(**extended_kwargs())
    assert not det.pointlike
    assert np.allclose(det.position_element((0.5, 0.0, 0.0)),
                       np.diag([0.0, 0.0, 1.0]))
    q1 = (0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="missing body points"):
        DetectorModel(**extended_kwargs(
            currents={"phi": {q1: np.zeros((3, 3))}}))
    with pytest.raises(ValueError, match="pointer-position POVM"):
        DetectorModel(**extended_kwargs(pointer_position=None))
    with pytest.raises(ValueError, match="need delta"):
        DetectorModel(**extended_kwargs(delta=None))
    with pytest.raises(ValueError, match="not a body point"):
        DetectorModel(**extended_kwargs(
            pointer_position={(9.0, 0.0, 0.0): np.diag([0.0, 1.0, 1.0])}))
    with pytest.raises(ValueError, match="counting measure"):
        DetectorModel(**extended_kwargs(
            pointer_position={q1: np.diag([0.0, 1.0, 0.0]),
                              (0.5, 0.0, 0.0): np.diag([0.0, 0.0, 0.5])}))


def test_sqrt_psd():
    rng = np.random.default_rng(61)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    m = a @ a.conj().T
    root = sqrt_psd(m)
    assert np.allclose(root @ root, m, atol=1e-10)
    assert np.abs(root - root.conj().T).max() < 1e-12
    rank_def = np.diag([0.0, 4.0]).astype(complex)
    assert np.allclose(sqrt_psd(rank_def), np.diag([0.0, 2.0]))
    with pytest.raises(ValueError, match="no real root"):
        sqrt_psd(np.diag([-1.0, 1.0]).astype(complex), "test matrix")


def test_stationarity_check_passes_for_phase_invariant_ground():
    det = two_level_detector(gap=1.0)
    rep = stationarity_check(det, np.linspace(0.0, 5.0, 11))
    assert rep.passed
    assert rep.values["residual"] < 1e-12
    assert det.omega_prime is not None
    assert np.allclose(det.omega_prime, [1.0, 0.0], atol=1e-10)


def test_stationarity_check_fails_for_superposed_ground():
    # two occupied levels with different energies dephase under the free
    # evolution, so no single dressed vector can reproduce every tau
    j = np.zeros((3, 3), dtype=complex)
    j[2, 0] = j[0, 2] = 1.0
    j[2, 1] = j[1, 2] = 1.0
    det = DetectorModel(
        name="super",
        split=SubspaceSplit.from_indices(3, [0, 1]),
        self_h=np.diag([0.0, 1.0, 5.0]).astype(complex),
        currents={"phi": {(0.0, 0.0, 0.0): j}},
        omega=np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0),
        pointer_other={"click": np.diag([0.0, 0.0, 1.0]).astype(complex)},
        tube=WorldTube.static(),
    )
    rep = stationarity_check(det, np.linspace(0.0, 5.0, 11))
    assert not rep.passed
    assert rep.values["residual"] > 1e-3
    assert det.omega_prime is None


def test_pointer_factorization_check():
    good = pointer_factorization_check(two_level_detector())
    assert good.passed
    assert good.values["ratio"] == 0.0

    q1, q2 = (0.0, 0.0, 0.0), (0.5, 0.0, 0.0)
    e_up = np.diag([0.0, 1.0, 1.0]).astype(complex)
    x = np.diag([0.0, 0.4, -0.4]).astype(complex)
    y = np.zeros((3, 3), dtype=complex)
    y[1, 2] = y[2, 1] = 0.4
    det = DetectorModel(**extended_kwargs(
        pointer_position={q1: 0.5 * e_up + x, q2: 0.5 * e_up - x},
        pointer_other={"a": 0.5 * e_up + y, "b": 0.5 * e_up - y},
    ))
    rep = pointer_factorization_check(det)
    assert not rep.passed
    assert rep.values["ratio"] == pytest.approx(0.64)
    assert "> 0.01" in rep.detail
