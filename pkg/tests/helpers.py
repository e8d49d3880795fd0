"""Shared builders for the test suite.

Only constructions live here.  Numerical oracles stay inline in the test
modules that use them, so every check remains readable on its own.
"""

import numpy as np

from qmeas.assembly import Assembly, DetectorCoupling
from qmeas.detector import DetectorModel, WorldTube
from qmeas.field import FieldModel, free_scalar_builder, tensor_field_models
from qmeas.operators import SubspaceSplit

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def two_qubit_toy(eps: float = 1.3, nu: float = 0.7, g: float = 1e-3):
    """Detector qubit (gap eps) times one field mode (energy nu).

    Slot-major basis |detector, mode>: indices 0 and 1 span the no-record
    sector (detector in the ground level).  The interaction sx (x) sx maps
    that sector onto its complement exactly, so the free Hamiltonian
    commutes with the split and the perturbative chain applies.

    Returns (h0, h_int, h, split, root); root is the record projector.
    """
    n = np.diag([0.0, 1.0]).astype(complex)
    eye = np.eye(2, dtype=complex)
    h0 = eps * np.kron(n, eye) + nu * np.kron(eye, n)
    h_int = g * np.kron(SX, SX)
    split = SubspaceSplit.from_indices(4, [0, 1])
    return h0, h_int, h0 + h_int, split, split.projector_plus


def two_level_detector(name: str = "probe", gap: float = 1.0,
                       position=(0.0, 0.0, 0.0), current_key: str = "phi",
                       tube: WorldTube | None = None) -> DetectorModel:
    """Ground/excited detector with a level-swap current, at rest by default."""
    tube = tube if tube is not None else WorldTube.static(position=position)
    body = tuple(tube.body_points[0])
    return DetectorModel(
        name=name,
        split=SubspaceSplit.from_indices(2, [0]),
        self_h=np.diag([0.0, gap]).astype(complex),
        currents={current_key: {body: SX}},
        omega=np.array([1.0, 0.0], dtype=complex),
        pointer_other={"click": np.diag([0.0, 1.0]).astype(complex)},
        tube=tube,
    )


def one_mode_assembly(gap: float = 1.0, coupling: float = 1e-3,
                      mass: float = 1.0, length: float = 2.0 * np.pi,
                      occupation: dict | None = None, sites: int = 1,
                      cap: int = 2) -> Assembly:
    """Single static two-level detector on a small free-scalar lattice.

    The default initial state carries one quantum in the zero mode, which
    makes the gap = mass detector resonant.  Pass occupation={} for vacuum.
    """
    occ = {0: 1} if occupation is None else occupation
    field = free_scalar_builder(sites, cap, mass, length,
                                initial_occupation=occ)
    det = two_level_detector(gap=gap)
    return Assembly(field=field,
                    couplings=(DetectorCoupling(detector=det,
                                                coupling=coupling),))


def rename_family(model: FieldModel, new: str) -> FieldModel:
    """Copy of a one-family model with its composite family renamed."""
    (old,) = model.composites.keys()
    return FieldModel(h_phi=model.h_phi,
                      composites={new: model.composites[old]},
                      rho0=model.rho0, momentum=model.momentum,
                      lattice_spacing=model.lattice_spacing,
                      meta=dict(model.meta))


def twin_assembly(gap: float = 1.0, coupling: float = 1e-3,
                  mass: float = 1.0, length: float = 2.0 * np.pi) -> Assembly:
    """Two decoupled field sectors, one resonant detector on each."""
    left = rename_family(
        free_scalar_builder(1, 2, mass, length, {0: 1}), "phi1")
    right = rename_family(
        free_scalar_builder(1, 2, mass, length, {0: 1}), "phi2")
    field = tensor_field_models(left, right)
    d1 = two_level_detector(name="left", gap=gap, current_key="phi1")
    d2 = two_level_detector(name="right", gap=gap, current_key="phi2")
    return Assembly(field=field, couplings=(
        DetectorCoupling(detector=d1, coupling=coupling),
        DetectorCoupling(detector=d2, coupling=coupling)))
