"""Detectors: world-tube kinematics, internal structure, and the validity
checks that decide which kernel construction a scenario may use.

Geometry conventions: metric signature (-,+,+,+), c = 1.  A world tube is
an embedding E^mu(tau, q) of body coordinates q and proper time tau into
Minkowski coordinates; its center worldline must be normalized,
eta(dE/dtau, dE/dtau) = -1.

Two tube kinds are supported.  Inertial tubes carry an exact four-velocity
and spatial frame triad, and may have extended bodies.  Tabulated tubes are
sampled worldlines read from tables (single body point); their normalization
is verified with fourth-order finite differences, which resolves 1e-8 for
tables sampled at a few hundred points per curvature scale.
"""

from __future__ import annotations

import dataclasses
from typing import Hashable, Mapping, Sequence

import numpy as np

from .evolution import MonotoneMap, unitary_family
from .operators import SubspaceSplit, _as_matrix, herm_eig, is_hermitian

ETA = np.diag([-1.0, 1.0, 1.0, 1.0])

#: eta(u, u) = -1 enforced to this tolerance on worldlines.
NORMALIZATION_TOL = 1e-8

#: Both nonsimultaneity ratios must stay at or below this.
NONSIMULTANEITY_LIMIT = 0.1

#: Worst-case stationarity residual allowed for the stationary kernel path.
STATIONARITY_TOL = 1e-8

#: Pointer factorization: max Tr|[F1,F2]| / (Tr|F1| Tr|F2|) allowed.
FACTORIZATION_LIMIT = 0.01

#: Initial detector state must be annihilated by the record projector.
GROUND_SUPPORT_TOL = 1e-12


def boost_matrix(velocity: Sequence[float]) -> np.ndarray:
    """Proper orthochronous boost taking the rest frame to velocity v."""
    v = np.asarray(velocity, dtype=float)
    v2 = float(v @ v)
    if v2 >= 1.0:
        raise ValueError("speed must be below 1")
    gamma = 1.0 / np.sqrt(1.0 - v2)
    lam = np.eye(4)
    lam[0, 0] = gamma
    lam[0, 1:] = gamma * v
    lam[1:, 0] = gamma * v
    if v2 > 0.0:
        lam[1:, 1:] += (gamma - 1.0) * np.outer(v, v) / v2
    return lam


def _check_lorentz(lam: np.ndarray) -> None:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (4, 4):
        raise ValueError("Lorentz matrix must be 4x4")
    if np.abs(lam.T @ ETA @ lam - ETA).max() > 1e-10:
        raise ValueError("matrix does not preserve the metric")
    if lam[0, 0] < 1.0 - 1e-12:
        raise ValueError("transformation is not orthochronous")
    if np.linalg.det(lam) < 0.0:
        raise ValueError("transformation is not proper (det < 0)")


@dataclasses.dataclass(frozen=True)
class WorldTube:
    """Embedding of a detector body into Minkowski spacetime.

    ``body_points`` samples the body set S in body coordinates (n, 3).
    Inertial tubes have E(tau, q) = origin + u tau + q^i e_i with exact
    frame data; tabulated tubes interpolate a sampled center worldline and
    are restricted to pointlike bodies.
    """

    kind: str
    body_points: np.ndarray
    four_velocity: np.ndarray | None = None
    triad: np.ndarray | None = None
    origin: np.ndarray | None = None
    tau_samples: np.ndarray | None = None
    worldline: np.ndarray | None = None

    def __post_init__(self):
        bp = np.array(self.body_points, dtype=float).reshape(-1, 3)
        bp.flags.writeable = False
        object.__setattr__(self, "body_points", bp)
        if self.kind == "inertial":
            u = np.array(self.four_velocity, dtype=float)
            tri = np.array(self.triad, dtype=float).reshape(3, 4)
            org = np.array(self.origin, dtype=float)
            if abs(u @ ETA @ u + 1.0) > NORMALIZATION_TOL:
                raise ValueError("four-velocity is not normalized to eta(u,u) = -1")
            if u[0] <= 0.0:
                raise ValueError("four-velocity must be future directed")
            h = tri @ ETA @ tri.T
            w = np.linalg.eigvalsh(h)
            if w[0] <= 0.0:
                raise ValueError("frame triad must be spacelike (h positive definite)")
            for a in (u, tri, org):
                a.flags.writeable = False
            object.__setattr__(self, "four_velocity", u)
            object.__setattr__(self, "triad", tri)
            object.__setattr__(self, "origin", org)
        elif self.kind == "tabulated":
            if bp.shape[0] != 1:
                raise ValueError("tabulated tubes support a single body point")
            taus = np.array(self.tau_samples, dtype=float)
            wl = np.array(self.worldline, dtype=float)
            if taus.ndim != 1 or wl.shape != (taus.size, 4) or taus.size < 5:
                raise ValueError("need >= 5 worldline samples of shape (m, 4)")
            d = np.diff(taus)
            if np.any(d <= 0.0):
                raise ValueError("tau samples must be strictly increasing")
            if np.abs(d - d[0]).max() > 1e-8 * abs(d[0]):
                raise ValueError("tau samples must be uniformly spaced")
            defect = _normalization_defect(taus, wl)
            if defect > NORMALIZATION_TOL:
                raise ValueError(
                    f"worldline normalization defect {defect:.3e} exceeds "
                    f"{NORMALIZATION_TOL:g}; check the table or sample it more densely")
            taus.flags.writeable = False
            wl.flags.writeable = False
            object.__setattr__(self, "tau_samples", taus)
            object.__setattr__(self, "worldline", wl)
        else:
            raise ValueError(f"unknown tube kind {self.kind!r}")

    # -- constructors ----------------------------------------------------

    @classmethod
    def static(cls, position: Sequence[float] = (0.0, 0.0, 0.0),
               body_points: Sequence[Sequence[float]] = ((0.0, 0.0, 0.0),),
               start_time: float = 0.0) -> "WorldTube":
        origin = np.array([start_time, *position], dtype=float)
        return cls(kind="inertial", body_points=np.asarray(body_points, dtype=float),
                   four_velocity=np.array([1.0, 0.0, 0.0, 0.0]),
                   triad=np.eye(4)[1:], origin=origin)

    @classmethod
    def inertial(cls, velocity: Sequence[float],
                 position: Sequence[float] = (0.0, 0.0, 0.0),
                 body_points: Sequence[Sequence[float]] = ((0.0, 0.0, 0.0),),
                 start_time: float = 0.0) -> "WorldTube":
        """Tube moving at constant velocity, frame = boosted rest axes."""
        lam = boost_matrix(velocity)
        u = lam @ np.array([1.0, 0.0, 0.0, 0.0])
        triad = (lam @ np.eye(4)[:, 1:]).T
        origin = np.array([start_time, *position], dtype=float)
        return cls(kind="inertial", body_points=np.asarray(body_points, dtype=float),
                   four_velocity=u, triad=triad, origin=origin)

    @classmethod
    def tabulated(cls, tau_samples, worldline) -> "WorldTube":
        return cls(kind="tabulated", body_points=np.zeros((1, 3)),
                   tau_samples=tau_samples, worldline=worldline)

    @classmethod
    def from_table(cls, path) -> "WorldTube":
        """Read a tabulated tube from a whitespace-delimited text file.

        Each non-comment row holds 8 numbers: tau, q1, q2, q3, E0, E1, E2,
        E3, with tau strictly increasing.  All rows must share one body
        point (worldline tables).
        """
        taus, qs, es = [], [], []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                parts = stripped.split()
                if len(parts) != 8:
                    raise ValueError(
                        f"{path}:{lineno}: expected 8 columns "
                        f"(tau q1 q2 q3 E0 E1 E2 E3), got {len(parts)}")
                vals = [float(p) for p in parts]
                taus.append(vals[0])
                qs.append(vals[1:4])
                es.append(vals[4:8])
        if not taus:
            raise ValueError(f"{path}: no data rows")
        q = np.asarray(qs)
        if np.abs(q - q[0]).max() > 0.0:
            raise ValueError(
                f"{path}: multiple body points found; tabulated tubes must be "
                "worldlines (a single body point per file)")
        tube = cls(kind="tabulated", body_points=q[:1],
                   tau_samples=np.asarray(taus), worldline=np.asarray(es))
        return tube

    # -- geometry --------------------------------------------------------

    @property
    def extent(self) -> float:
        """Largest body-coordinate separation L = sup |q - q'|."""
        bp = self.body_points
        if bp.shape[0] < 2:
            return 0.0
        diff = bp[:, None, :] - bp[None, :, :]
        return float(np.sqrt((diff * diff).sum(axis=-1)).max())

    def embedding(self, tau: float, q: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
        """E^mu(tau, q)."""
        q = np.asarray(q, dtype=float)
        if self.kind == "inertial":
            return self.origin + self.four_velocity * float(tau) + q @ self.triad
        if np.abs(q - self.body_points[0]).max() > 0.0:
            raise ValueError("tabulated tubes are worldlines; q must be the body point")
        t = self.tau_samples
        out = np.empty(4)
        for mu in range(4):
            out[mu] = np.interp(float(tau), t, self.worldline[:, mu])
        return out

    def body_metric(self) -> np.ndarray:
        """h_ij = eta(e_i, e_j); pointlike tabulated tubes have no extent,
        so an empty matrix is returned for them."""
        if self.kind == "inertial":
            return self.triad @ ETA @ self.triad.T
        return np.zeros((0, 0))

    def velocity_normalization_defect(self) -> float:
        """max |eta(dE/dtau, dE/dtau) + 1| along the center line."""
        if self.kind == "inertial":
            u = self.four_velocity
            return abs(float(u @ ETA @ u) + 1.0)
        return _normalization_defect(self.tau_samples, self.worldline)

    def coordinate_time_map(self, tau_min: float | None = None,
                            tau_max: float | None = None,
                            samples: int = 513) -> MonotoneMap:
        """The map tau -> E^0(tau, 0), invertible by bisection.

        For tabulated tubes the sampled range is used; inertial tubes need
        the range arguments.
        """
        if self.kind == "tabulated":
            return MonotoneMap(self.tau_samples, self.worldline[:, 0])
        if tau_min is None or tau_max is None:
            raise ValueError("inertial tubes need an explicit tau range")
        ts = np.linspace(tau_min, tau_max, samples)
        e0 = self.origin[0] + self.four_velocity[0] * ts
        return MonotoneMap(ts, e0)

    def proper_time_of(self, t: float, tau_min: float | None = None,
                       tau_max: float | None = None) -> float:
        """Invert E^0(tau, 0) = t."""
        if self.kind == "inertial":
            return (float(t) - self.origin[0]) / self.four_velocity[0]
        return self.coordinate_time_map().inverse(float(t))


def _normalization_defect(taus: np.ndarray, worldline: np.ndarray) -> float:
    """Fourth-order interior finite-difference check of eta(u, u) = -1."""
    h = taus[1] - taus[0]
    x = worldline
    # 5-point central stencil, interior points only.
    du = (x[:-4] - 8.0 * x[1:-3] + 8.0 * x[3:-1] - x[4:]) / (12.0 * h)
    uu = np.einsum("ka,ab,kb->k", du, ETA, du)
    return float(np.abs(uu + 1.0).max())


def embedding_eval(tube: WorldTube, tau: float,
                   q: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Evaluate the embedding map; thin functional wrapper over the tube."""
    return tube.embedding(tau, q)


def boost_embedding(tube: WorldTube, lam: np.ndarray,
                    shift: Sequence[float] = (0.0, 0.0, 0.0, 0.0)) -> WorldTube:
    """Poincare-transform a tube: E -> Lam E + a.

    ``lam`` must be proper orthochronous.  Pure translations shift the
    worldline and leave frame data untouched.
    """
    lam = np.asarray(lam, dtype=float)
    _check_lorentz(lam)
    a = np.asarray(shift, dtype=float)
    if tube.kind == "inertial":
        return WorldTube(kind="inertial", body_points=tube.body_points.copy(),
                         four_velocity=lam @ tube.four_velocity,
                         triad=(lam @ tube.triad.T).T,
                         origin=lam @ tube.origin + a)
    wl = (lam @ tube.worldline.T).T + a
    return WorldTube(kind="tabulated", body_points=tube.body_points.copy(),
                     tau_samples=tube.tau_samples.copy(), worldline=wl)


@dataclasses.dataclass(frozen=True)
class CheckReport:
    """Outcome of a named validity check; ``detail`` is human-readable and
    names the violated condition on failure."""

    name: str
    passed: bool
    values: dict
    detail: str


def nonsimultaneity_check(tube: WorldTube, sigma: float) -> CheckReport:
    """Can the body be treated as sharp on the detector's time resolution?

    Two ratios, both required at or below ``NONSIMULTANEITY_LIMIT``:
    nons1 = L / sigma and nons2 = |h| L^2 / (|eta(u,u)| sigma^2), with |h|
    the spectral norm of the body metric.
    """
    ell = tube.extent
    r1 = ell / sigma
    h = tube.body_metric()
    hnorm = float(np.linalg.norm(h, ord=2)) if h.size else 0.0
    uu = 1.0  # |eta(u, u)| after the normalization check
    r2 = hnorm * ell * ell / (uu * sigma * sigma)
    ok1 = r1 <= NONSIMULTANEITY_LIMIT
    ok2 = r2 <= NONSIMULTANEITY_LIMIT
    if ok1 and ok2:
        detail = f"nons1 ratio {r1:.3g}, nons2 ratio {r2:.3g}; both within {NONSIMULTANEITY_LIMIT}"
    elif not ok1:
        detail = f"nons1 ratio {r1:.3g} > {NONSIMULTANEITY_LIMIT}"
    else:
        detail = f"nons2 ratio {r2:.3g} > {NONSIMULTANEITY_LIMIT}"
    return CheckReport(name="nonsimultaneity", passed=ok1 and ok2,
                       values={"nons1": r1, "nons2": r2}, detail=detail)


def _body_key(q) -> tuple:
    return tuple(round(float(x), 12) for x in np.asarray(q, dtype=float).reshape(3))


@dataclasses.dataclass
class DetectorModel:
    """Internal structure of one detector.

    * ``split``: K = K_minus + K_plus; the record projector E is the
      projector onto K_plus.
    * ``self_h``: the detector Hamiltonian h.
    * ``currents``: family J^A(q), one hermitian matrix per coupling index A
      and body point q (every A must cover every body point of the tube).
      For pointlike tubes the single body-point current doubles as the
      position-space current along the worldline.
    * ``omega``: initial vector, annihilated by the record projector.
    * ``pointer_other``: record POVM F2(mu), positive, summing to E.
    * ``pointer_position``: pointer-position POVM F1(Q) over body points,
      summing to E in the counting measure; None means pointlike-trivial
      (single body point, F1 = E).
    * ``delta``: pointer position width for the spatial kernel.
    """

    name: str
    split: SubspaceSplit
    self_h: np.ndarray
    currents: Mapping[str, Mapping[tuple, np.ndarray]]
    omega: np.ndarray
    pointer_other: Mapping[Hashable, np.ndarray]
    tube: WorldTube
    pointer_position: Mapping[tuple, np.ndarray] | None = None
    delta: float | None = None
    omega_prime: np.ndarray | None = None

    def __post_init__(self):
        dim = self.split.dim
        h = _as_matrix(self.self_h)
        if h.shape[0] != dim or not is_hermitian(h, rtol=1e-10):
            raise ValueError(f"detector {self.name}: self Hamiltonian must be "
                             f"hermitian of dimension {dim}")
        self.self_h = h
        e_hat = self.split.projector_plus
        omega = np.asarray(self.omega, dtype=complex).reshape(-1)
        if omega.shape[0] != dim:
            raise ValueError(f"detector {self.name}: omega has wrong dimension")
        nrm = np.linalg.norm(omega)
        if abs(nrm - 1.0) > 1e-10:
            raise ValueError(f"detector {self.name}: omega must be normalized")
        if np.linalg.norm(e_hat @ omega) > GROUND_SUPPORT_TOL:
            raise ValueError(f"detector {self.name}: omega is not annihilated by "
                             "the record projector")
        self.omega = omega

        body_keys = [_body_key(q) for q in self.tube.body_points]
        cur: dict[str, dict[tuple, np.ndarray]] = {}
        for a_idx, fam in self.currents.items():
            fam_out: dict[tuple, np.ndarray] = {}
            for q, j in fam.items():
                jm = _as_matrix(j)
                if jm.shape[0] != dim or not is_hermitian(jm, rtol=1e-10):
                    raise ValueError(
                        f"detector {self.name}: current {a_idx!r} at {q} must be "
                        "hermitian of the detector dimension")
                fam_out[_body_key(q)] = jm
            missing = [k for k in body_keys if k not in fam_out]
            if missing:
                raise ValueError(
                    f"detector {self.name}: current {a_idx!r} missing body points "
                    f"{missing}")
            cur[str(a_idx)] = fam_out
        if not cur:
            raise ValueError(f"detector {self.name}: needs at least one current")
        self.currents = cur

        f2: dict[Hashable, np.ndarray] = {}
        total2 = np.zeros((dim, dim), dtype=complex)
        for mu, f in self.pointer_other.items():
            fm = _as_matrix(f)
            if not is_hermitian(fm, rtol=1e-10):
                raise ValueError(f"detector {self.name}: F2({mu!r}) must be hermitian")
            w, _ = herm_eig(fm)
            if w[0] < -1e-10 * max(abs(w[-1]), 1e-300):
                raise ValueError(f"detector {self.name}: F2({mu!r}) is not positive")
            f2[mu] = fm
            total2 = total2 + fm
        if np.abs(total2 - e_hat).max() > 1e-8:
            raise ValueError(f"detector {self.name}: record POVM does not sum to "
                             "the record projector")
        self.pointer_other = f2

        if self.pointer_position is None:
            if len(body_keys) > 1:
                raise ValueError(
                    f"detector {self.name}: extended bodies need an explicit "
                    "pointer-position POVM")
        else:
            f1: dict[tuple, np.ndarray] = {}
            total1 = np.zeros((dim, dim), dtype=complex)
            for q, f in self.pointer_position.items():
                fm = _as_matrix(f)
                key = _body_key(q)
                if key not in body_keys:
                    raise ValueError(
                        f"detector {self.name}: F1 defined at {q}, not a body point")
                if not is_hermitian(fm, rtol=1e-10):
                    raise ValueError(f"detector {self.name}: F1({q}) must be hermitian")
                w, _ = herm_eig(fm)
                if w[0] < -1e-10 * max(abs(w[-1]), 1e-300):
                    raise ValueError(f"detector {self.name}: F1({q}) is not positive")
                f1[key] = fm
                total1 = total1 + fm
            if np.abs(total1 - e_hat).max() > 1e-8:
                raise ValueError(f"detector {self.name}: pointer-position POVM does "
                                 "not sum to the record projector (counting measure)")
            self.pointer_position = f1
        if self.tube.extent > 0.0 and self.delta is None:
            raise ValueError(f"detector {self.name}: extended bodies need delta")

    @property
    def dim(self) -> int:
        return self.split.dim

    @property
    def record_projector(self) -> np.ndarray:
        return self.split.projector_plus

    @property
    def pointlike(self) -> bool:
        return self.tube.body_points.shape[0] == 1

    def body_keys(self) -> list[tuple]:
        return [_body_key(q) for q in self.tube.body_points]

    def position_element(self, q) -> np.ndarray:
        """F1(Q); the trivial record projector for pointlike detectors."""
        if self.pointer_position is None:
            return self.record_projector
        return self.pointer_position[_body_key(q)]


def sqrt_psd(m: np.ndarray, what: str = "operator") -> np.ndarray:
    """Hermitian square root of a positive matrix.

    Eigenvalues below -1e-10 (relative) raise; roundoff negatives inside
    the tolerance are treated as zero for the root only, which is not a
    clipped POVM but the definition of the root of a numerically positive
    matrix.
    """
    w, v = herm_eig(m)
    if w[0] < -1e-10 * max(abs(float(w[-1])), 1e-300):
        raise ValueError(f"{what}: negative eigenvalue {w[0]:.3e}, no real root")
    w = np.where(w > 0.0, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def stationarity_check(det: DetectorModel, tau_grid: Sequence[float]) -> CheckReport:
    """Fit the single dressed vector omega' and report the worst residual.

    Stationarity means J^A(q) exp(-i h tau)|omega> is tau-independent up to
    content invisible to every current; the fit minimizes the summed square
    deviation over all sampled tau, currents, and body points.  On success
    the fitted vector is stored on the model for kernel construction.
    """
    u = unitary_family(det.self_h)
    blocks = []
    for a_idx in sorted(det.currents.keys()):
        for key in det.body_keys():
            blocks.append(det.currents[a_idx][key])
    jstack = np.vstack(blocks)
    vs = [u(float(tau)) @ det.omega for tau in tau_grid]
    vbar = np.mean(vs, axis=0)
    omega_prime, *_ = np.linalg.lstsq(jstack, jstack @ vbar, rcond=None)
    resid = 0.0
    scale = max(float(np.linalg.norm(jstack, ord=2)), 1e-300)
    for v in vs:
        r = float(np.linalg.norm(jstack @ (v - omega_prime)))
        resid = max(resid, r)
    resid_rel = resid / scale
    passed = resid_rel <= STATIONARITY_TOL
    if passed:
        det.omega_prime = omega_prime
        detail = f"stationarity residual {resid_rel:.3e} within {STATIONARITY_TOL:g}"
    else:
        detail = f"stationarity residual {resid_rel:.3e} > {STATIONARITY_TOL:g}"
    return CheckReport(name="stationarity", passed=passed,
                       values={"residual": resid_rel}, detail=detail)


def _nuclear_norm(m: np.ndarray) -> float:
    return float(np.linalg.svd(m, compute_uv=False).sum())


def pointer_factorization_check(det: DetectorModel) -> CheckReport:
    """Worst-case commutator size between position and record pointers.

    ratio = Tr|[F1(Q), F2(mu)]| / (Tr|F1(Q)| Tr|F2(mu)|), maximized over the
    grids; must not exceed ``FACTORIZATION_LIMIT`` for the factorized
    pointer used by the kernel construction to make sense.
    """
    worst = 0.0
    positions = (det.pointer_position.values() if det.pointer_position is not None
                 else [det.record_projector])
    for f1 in positions:
        n1 = _nuclear_norm(f1)
        for f2 in det.pointer_other.values():
            n2 = _nuclear_norm(f2)
            if n1 <= 0.0 or n2 <= 0.0:
                continue
            comm = f1 @ f2 - f2 @ f1
            worst = max(worst, _nuclear_norm(comm) / (n1 * n2))
    passed = worst <= FACTORIZATION_LIMIT
    detail = (f"pointer commutator ratio {worst:.3g} "
              + ("within" if passed else ">") + f" {FACTORIZATION_LIMIT}")
    return CheckReport(name="pointer_factorization", passed=passed,
                       values={"ratio": worst}, detail=detail)
