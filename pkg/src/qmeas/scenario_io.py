"""Scenario documents: one self-contained text file per experiment.

A scenario is a YAML document with sections for the field model, the
detectors, the smearing scales, the outcome grids and the run defaults.
Complex matrix entries are written as [re, im] pairs; bare numbers are
real.  ``load_scenario`` validates the structure and reports problems with
their field path; ``Scenario.assembly()`` turns the document into the
operational objects.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib.resources
import os
from typing import Sequence

import numpy as np
import yaml

from .assembly import Assembly, DetectorCoupling
from .detector import DetectorModel, WorldTube
from .field import FieldModel, free_scalar_builder, load_field_model, tensor_field_models
from .operators import SubspaceSplit
from .smearing import SmearingConfig

KNOWN_TASKS = ("density", "povm_family", "no_detection", "zeno",
               "consistency", "covariance_check", "convergence_sweep")


class ScenarioError(ValueError):
    """A scenario document is malformed; the message carries the field path."""


def _fail(where: str, msg: str):
    raise ScenarioError(f"{where}: {msg}")


def _need(mapping: dict, key: str, where: str):
    if not isinstance(mapping, dict) or key not in mapping:
        _fail(where, f"missing required key {key!r}")
    return mapping[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(where, f"expected a number, got {value!r}")
    return float(value)


def _complex_entry(value, where: str) -> complex:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if (isinstance(value, list) and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                    for v in value)):
        return complex(value[0], value[1])
    _fail(where, f"expected a number or [re, im] pair, got {value!r}")


def _matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        _fail(where, "expected a nonempty list of rows")
    n = len(value)
    m = np.zeros((n, n), dtype=complex)
    for r, row in enumerate(value):
        if not isinstance(row, list) or len(row) != n:
            _fail(where, f"row {r} must hold exactly {n} entries")
        for c, entry in enumerate(row):
            m[r, c] = _complex_entry(entry, f"{where}[{r}][{c}]")
    return m


def _vector(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        _fail(where, "expected a nonempty list")
    return np.array([_complex_entry(v, f"{where}[{k}]")
                     for k, v in enumerate(value)])


def _position(value, where: str, default=(0.0, 0.0, 0.0)) -> tuple:
    if value is None:
        return tuple(default)
    if not isinstance(value, list) or not (1 <= len(value) <= 3):
        _fail(where, "expected a position list of 1 to 3 numbers")
    out = [0.0, 0.0, 0.0]
    for k, v in enumerate(value):
        out[k] = _number(v, f"{where}[{k}]")
    return tuple(out)


# -- field section ----------------------------------------------------------


def _build_field(spec: dict, where: str, base_dir: str) -> FieldModel:
    kind = _need(spec, "kind", where)
    if kind == "free_scalar":
        occ = spec.get("initial_occupation") or {}
        if not isinstance(occ, dict):
            _fail(f"{where}.initial_occupation", "expected a mode -> count map")
        model = free_scalar_builder(
            sites=int(_number(_need(spec, "sites", where), f"{where}.sites")),
            excitation_cap=int(_number(_need(spec, "excitation_cap", where),
                                       f"{where}.excitation_cap")),
            mass=_number(_need(spec, "mass", where), f"{where}.mass"),
            length=_number(_need(spec, "length", where), f"{where}.length"),
            initial_occupation={int(k): int(v) for k, v in occ.items()},
        )
        family = spec.get("family", "phi")
        if family != "phi":
            comps = {str(family): model.composites["phi"]}
            model = FieldModel(h_phi=model.h_phi, composites=comps,
                               rho0=model.rho0, momentum=model.momentum,
                               lattice_spacing=model.lattice_spacing,
                               meta=model.meta)
        return model
    if kind == "tensor":
        factors = _need(spec, "factors", where)
        if not isinstance(factors, list) or len(factors) < 2:
            _fail(f"{where}.factors", "expected at least two field sections")
        model = _build_field(factors[0], f"{where}.factors[0]", base_dir)
        for k, sub in enumerate(factors[1:], start=1):
            model = tensor_field_models(
                model, _build_field(sub, f"{where}.factors[{k}]", base_dir))
        return model
    if kind == "file":
        path = _need(spec, "path", where)
        return load_field_model(os.path.join(base_dir, str(path)))
    _fail(f"{where}.kind", f"unknown field kind {kind!r}")


# -- detector section --------------------------------------------------------


def _build_tube(spec: dict, where: str, base_dir: str):
    if "worldtube" in spec:
        return WorldTube.from_table(os.path.join(base_dir,
                                                 str(spec["worldtube"])))
    position = _position(spec.get("position"), f"{where}.position")
    body = spec.get("body_points")
    if body is None:
        body_points = ((0.0, 0.0, 0.0),)
    else:
        if not isinstance(body, list) or not body:
            _fail(f"{where}.body_points", "expected a list of positions")
        body_points = tuple(_position(b, f"{where}.body_points[{k}]")
                            for k, b in enumerate(body))
    vel = spec.get("velocity")
    if vel is None:
        return WorldTube.static(position=position, body_points=body_points)
    velocity = _position(vel, f"{where}.velocity")
    if velocity == (0.0, 0.0, 0.0):
        return WorldTube.static(position=position, body_points=body_points)
    return WorldTube.inertial(velocity=velocity, position=position,
                              body_points=body_points)


def _two_level_detector(spec: dict, where: str, base_dir: str) -> DetectorModel:
    """Gap detector: ground and excited level, record = excited occupation.

    The single current is the level-swap matrix, coupling the declared
    field family at the tube's body point.
    """
    gap = _number(_need(spec, "gap", where), f"{where}.gap")
    if gap <= 0.0:
        _fail(f"{where}.gap", "gap must be positive")
    family = str(spec.get("family", "phi"))
    tube = _build_tube(spec, where, base_dir)
    h = np.array([[0.0, 0.0], [0.0, gap]], dtype=complex)
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    excited = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    body = tube.body_points[0]
    return DetectorModel(
        name=str(_need(spec, "name", where)),
        split=SubspaceSplit.from_indices(2, [0]),
        self_h=h,
        currents={family: {tuple(body): sx}},
        omega=np.array([1.0, 0.0], dtype=complex),
        pointer_other={"click": excited},
        tube=tube,
    )


def _explicit_detector(spec: dict, where: str, base_dir: str) -> DetectorModel:
    self_h = _matrix(_need(spec, "self_h", where), f"{where}.self_h")
    dim = self_h.shape[0]
    omega = _vector(_need(spec, "omega", where), f"{where}.omega")
    record = _need(spec, "record_indices", where)
    if not isinstance(record, list) or not record:
        _fail(f"{where}.record_indices", "expected a list of basis indices")
    minus = [i for i in range(dim) if i not in set(int(r) for r in record)]
    split = SubspaceSplit.from_indices(dim, minus)

    tube = _build_tube(spec, where, base_dir)
    currents_spec = _need(spec, "currents", where)
    currents: dict = {}
    if not isinstance(currents_spec, dict) or not currents_spec:
        _fail(f"{where}.currents", "expected a map of coupling index -> entries")
    for a_idx, entries in currents_spec.items():
        here = f"{where}.currents.{a_idx}"
        if isinstance(entries, list) and entries and isinstance(entries[0], dict):
            fam = {}
            for k, ent in enumerate(entries):
                pos = _position(_need(ent, "position", f"{here}[{k}]"),
                                f"{here}[{k}].position")
                fam[pos] = _matrix(_need(ent, "matrix", f"{here}[{k}]"),
                                   f"{here}[{k}].matrix")
        else:
            # single-body shorthand: the matrix couples at the body point
            fam = {tuple(tube.body_points[0]): _matrix(entries, here)}
        currents[str(a_idx)] = fam

    outcomes_spec = _need(spec, "outcomes", where)
    if not isinstance(outcomes_spec, dict) or not outcomes_spec:
        _fail(f"{where}.outcomes", "expected a map of outcome -> matrix")
    pointer_other = {str(mu): _matrix(m, f"{where}.outcomes.{mu}")
                     for mu, m in outcomes_spec.items()}

    pointer_position = None
    if "pointer_position" in spec and spec["pointer_position"] is not None:
        pp = spec["pointer_position"]
        if not isinstance(pp, list) or not pp:
            _fail(f"{where}.pointer_position", "expected a list of entries")
        pointer_position = {}
        for k, ent in enumerate(pp):
            here = f"{where}.pointer_position[{k}]"
            pos = _position(_need(ent, "position", here), f"{here}.position")
            pointer_position[pos] = _matrix(_need(ent, "matrix", here),
                                            f"{here}.matrix")

    delta = spec.get("delta")
    return DetectorModel(
        name=str(_need(spec, "name", where)),
        split=split,
        self_h=self_h,
        currents=currents,
        omega=omega,
        pointer_other=pointer_other,
        tube=tube,
        pointer_position=pointer_position,
        delta=None if delta is None else _number(delta, f"{where}.delta"),
    )


def _build_detector(spec: dict, where: str, base_dir: str,
                    gap_override: float | None = None) -> DetectorModel:
    if not isinstance(spec, dict):
        _fail(where, "expected a mapping")
    kind = spec.get("kind", "two_level")
    if gap_override is not None:
        if kind != "two_level":
            _fail(where, "gap overrides apply to two_level detectors only")
        spec = dict(spec)
        spec["gap"] = gap_override
    if kind == "two_level":
        return _two_level_detector(spec, where, base_dir)
    if kind == "explicit":
        return _explicit_detector(spec, where, base_dir)
    _fail(f"{where}.kind", f"unknown detector kind {kind!r}")


# -- scenario ----------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class TauGrid:
    lo: float
    hi: float
    points: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)


@dataclasses.dataclass
class Scenario:
    """Parsed scenario document plus everything needed to rebuild it."""

    name: str
    description: str
    field_spec: dict
    detector_specs: list
    smearing: SmearingConfig
    tau_grid: TauGrid
    tasks: tuple[str, ...]
    nodes_time: int
    nodes_space: int
    seed: int | None
    gap_sweep: tuple[float, ...] | None
    path: str
    content_hash: str
    base_dir: str
    _field_cache: FieldModel | None = None

    def field(self) -> FieldModel:
        """The field model, built once and shared across detector variants."""
        if self._field_cache is None:
            self._field_cache = _build_field(self.field_spec, "field",
                                             self.base_dir)
        return self._field_cache

    def detectors(self, gap: float | None = None) -> list[DetectorCoupling]:
        out = []
        for k, spec in enumerate(self.detector_specs):
            det = _build_detector(spec, f"detectors[{k}]", self.base_dir,
                                  gap_override=gap)
            coupling = _number(_need(spec, "coupling", f"detectors[{k}]"),
                               f"detectors[{k}].coupling")
            fam_map = spec.get("family_map")
            out.append(DetectorCoupling(detector=det, coupling=coupling,
                                        family_map=fam_map))
        return out

    def assembly(self, gap: float | None = None) -> Assembly:
        return Assembly(field=self.field(), couplings=tuple(self.detectors(gap)))

    def provenance(self) -> dict:
        return {
            "scenario": self.name,
            "scenario_hash": self.content_hash,
            "sigma": self.smearing.sigma,
            "window": self.smearing.window,
            "delta": self.smearing.delta,
            "tau_grid": [self.tau_grid.lo, self.tau_grid.hi,
                         self.tau_grid.points],
            "nodes_time": self.nodes_time,
            "nodes_space": self.nodes_space,
        }


def load_scenario(path) -> Scenario:
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not parseable: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")

    name = str(doc.get("name") or os.path.splitext(os.path.basename(path))[0])
    field_spec = _need(doc, "field", "scenario")
    det_specs = _need(doc, "detectors", "scenario")
    if not isinstance(det_specs, list) or not det_specs:
        _fail("detectors", "expected a nonempty list")

    sm = _need(doc, "smearing", "scenario")
    smearing = SmearingConfig(
        sigma=_number(_need(sm, "sigma", "smearing"), "smearing.sigma"),
        window=_number(_need(sm, "window", "smearing"), "smearing.window"),
        delta=(None if sm.get("delta") is None
               else _number(sm["delta"], "smearing.delta")),
    )

    grids = doc.get("grids") or {}
    tau_spec = grids.get("tau") or {}
    tau_grid = TauGrid(
        lo=_number(tau_spec.get("min", 0.0), "grids.tau.min"),
        hi=_number(tau_spec.get("max", smearing.window), "grids.tau.max"),
        points=int(_number(tau_spec.get("points", 33), "grids.tau.points")),
    )
    if tau_grid.points < 1 or tau_grid.hi < tau_grid.lo:
        _fail("grids.tau", "need points >= 1 and max >= min")

    run = doc.get("run") or {}
    tasks = tuple(run.get("tasks") or ("density",))
    for t in tasks:
        if t not in KNOWN_TASKS:
            _fail("run.tasks", f"unknown task {t!r}; known: {KNOWN_TASKS}")
    nodes_time = int(_number(run.get("nodes_time", 64), "run.nodes_time"))
    nodes_space = int(_number(run.get("nodes_space", 16), "run.nodes_space"))
    seed = run.get("seed")
    if seed is not None:
        seed = int(_number(seed, "run.seed"))

    sweep = None
    sweeps = [spec.get("gap_sweep") for spec in det_specs
              if isinstance(spec, dict) and spec.get("gap_sweep")]
    if sweeps:
        if len(det_specs) != 1:
            _fail("detectors", "gap sweeps are single-detector")
        sweep = tuple(_number(v, "detectors[0].gap_sweep")
                      for v in sweeps[0])

    return Scenario(
        name=name,
        description=str(doc.get("description", "")),
        field_spec=field_spec,
        detector_specs=list(det_specs),
        smearing=smearing,
        tau_grid=tau_grid,
        tasks=tasks,
        nodes_time=nodes_time,
        nodes_space=nodes_space,
        seed=seed,
        gap_sweep=sweep,
        path=path,
        content_hash=hashlib.sha256(raw).hexdigest(),
        base_dir=os.path.dirname(os.path.abspath(path)),
    )


def bundled_scenario_path(name: str) -> str:
    """Filesystem path of a scenario shipped with the package."""
    pkg = importlib.resources.files("qmeas") / "scenarios" / f"{name}.yaml"
    if not pkg.is_file():
        raise ScenarioError(f"no bundled scenario {name!r}; "
                            f"available: {', '.join(list_bundled())}")
    return str(pkg)


def list_bundled() -> list[str]:
    root = importlib.resources.files("qmeas") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".yaml"))


def resolve_scenario(ref: str) -> Scenario:
    """Load a scenario from a path, or by bundled name when no file exists."""
    if os.path.exists(ref):
        return load_scenario(ref)
    return load_scenario(bundled_scenario_path(ref))


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything one orchestrated run needs."""

    scenario: Scenario
    out_dir: str
    tasks: tuple[str, ...]
    nodes_time: int
    nodes_space: int
    sigma: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if not self.tasks:
            raise ScenarioError("no tasks requested")
        for t in self.tasks:
            if t not in KNOWN_TASKS:
                raise ScenarioError(f"unknown task {t!r}; known: {KNOWN_TASKS}")

    def smearing(self) -> SmearingConfig:
        base = self.scenario.smearing
        if self.sigma is None:
            return base
        return SmearingConfig(sigma=self.sigma, window=base.window,
                              delta=base.delta)
