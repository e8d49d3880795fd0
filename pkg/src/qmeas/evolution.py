"""Propagators: unitary evolution, subspace-restricted evolution, and the
free evolution of field-plus-detector composites.

The restricted propagator S_t describes evolution conditioned on staying
inside a subspace H_minus with projector Q.  Its closed form is

    S_t = exp(-i (Q H Q) t) Q

which is the N -> infinity limit of the product (Q exp(-i H t / N) Q)^N.
S_t is a partial isometry, S_t S_t^dagger = Q, and composes as a semigroup
inside H_minus.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

from .operators import Operator, SubspaceSplit, _as_matrix, herm_eig, tensor_product

#: Iterations for bisection inversion of monotone tables; 60 halvings of any
#: practical bracket land far below 1e-12 in relative terms.
_BISECTION_STEPS = 60


class BoundedCache(dict):
    """Insertion-ordered memo that sheds its oldest quarter when full.

    Values must be pure functions of their keys; eviction then only costs
    recomputation, never correctness or determinism.
    """

    def __init__(self, cap: int = 16384):
        super().__init__()
        self.cap = int(cap)

    def put(self, key, value):
        if len(self) >= self.cap:
            for k in list(self)[:max(1, self.cap // 4)]:
                del self[k]
        self[key] = value
        return value


def unitary_family(h) -> Callable[[float], np.ndarray]:
    """Return t -> exp(-i h t) for hermitian h, with cached spectral data.

    The eigendecomposition is computed once; repeated evaluations at the
    same t are served from a bounded memo, which keeps quadrature loops
    cheap without letting dense time grids hoard memory.  For exp(+i h t),
    evaluate at -t.
    """
    w, v = herm_eig(h)
    vh = v.conj().T
    cache = BoundedCache()

    def u(t: float) -> np.ndarray:
        t = float(t)
        got = cache.get(t)
        if got is None:
            got = cache.put(t, (v * np.exp(-1j * w * t)) @ vh)
        return got

    return u


def restricted_propagator(h, split: SubspaceSplit, t: float) -> Operator:
    """Closed-form restricted propagator exp(-i (QHQ) t) Q."""
    m = _as_matrix(h)
    q = split.projector_minus
    a = q @ m @ q
    w, v = herm_eig(a)
    s = (v * np.exp(-1j * w * t)) @ v.conj().T @ q
    return Operator(s)


def restricted_propagator_family(h, split: SubspaceSplit) -> Callable[[float], np.ndarray]:
    """t -> S_t with the spectral work hoisted out of the loop."""
    m = _as_matrix(h)
    q = split.projector_minus
    a = q @ m @ q
    w, v = herm_eig(a)
    vh = v.conj().T
    cache = BoundedCache()

    def s(t: float) -> np.ndarray:
        t = float(t)
        got = cache.get(t)
        if got is None:
            got = cache.put(t, (v * np.exp(-1j * w * t)) @ vh @ q)
        return got

    return s


def restricted_propagator_trotter(h, split: SubspaceSplit, t: float, n: int) -> Operator:
    """Product-formula approximation (Q exp(-i H t / n) Q)^n.

    Converges to the closed form at first order in 1/n; used as an
    independent check on ``restricted_propagator``, not as a production path.
    """
    if n < 1:
        raise ValueError("need at least one Trotter step")
    m = _as_matrix(h)
    q = split.projector_minus
    w, v = herm_eig(m)
    step_u = (v * np.exp(-1j * w * (t / n))) @ v.conj().T
    step = q @ step_u @ q
    return Operator(np.linalg.matrix_power(step, n))


@dataclasses.dataclass(frozen=True)
class MonotoneMap:
    """A strictly increasing sampled map with linear interpolation.

    Used for proper-time reparametrizations tau(t) and for inverting
    embedding time components.  ``inverse`` brackets on the sampled range
    and bisects the interpolant.
    """

    arguments: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.array(self.arguments, dtype=float)
        y = np.array(self.values, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("need matching 1D sample arrays with >= 2 points")
        if np.any(np.diff(x) <= 0.0) or np.any(np.diff(y) <= 0.0):
            raise ValueError("map samples must be strictly increasing")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "arguments", x)
        object.__setattr__(self, "values", y)

    @classmethod
    def from_function(cls, fn: Callable[[float], float], a: float, b: float,
                      samples: int = 257) -> "MonotoneMap":
        x = np.linspace(a, b, samples)
        y = np.array([float(fn(xi)) for xi in x])
        return cls(x, y)

    @classmethod
    def identity(cls, a: float, b: float) -> "MonotoneMap":
        x = np.array([a, b])
        return cls(x, x.copy())

    def __call__(self, t):
        return np.interp(t, self.arguments, self.values)

    def inverse(self, value: float) -> float:
        """Argument x with map(x) = value, by bisection on the interpolant."""
        lo = float(self.arguments[0])
        hi = float(self.arguments[-1])
        flo = float(self.values[0])
        fhi = float(self.values[-1])
        if not (flo <= value <= fhi):
            raise ValueError(f"value {value} outside sampled range [{flo}, {fhi}]")
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if float(self(mid)) < value:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def free_evolution(field_h, detector_hs: Sequence[tuple], t: float,
                   dim_cap: int | None = None) -> Operator:
    """Free propagator of a field-detector composite at coordinate time t.

    ``detector_hs`` lists (h_i, tau_map_i) pairs in slot order after the
    field; tau_map_i is a callable (or MonotoneMap) giving detector i's
    proper time as a function of coordinate time, or None for tau = t.
    Returns exp(-i H_field t) (x) prod_i exp(-i h_i tau_i(t)), slot-major.
    """
    factors = []
    wf, vf = herm_eig(field_h)
    factors.append(Operator((vf * np.exp(-1j * wf * t)) @ vf.conj().T))
    for h_i, tau_map in detector_hs:
        tau = float(t) if tau_map is None else float(tau_map(t))
        wi, vi = herm_eig(h_i)
        factors.append(Operator((vi * np.exp(-1j * wi * tau)) @ vi.conj().T))
    if len(factors) == 1:
        return factors[0]
    from .operators import DEFAULT_DIMENSION_CAP
    cap = DEFAULT_DIMENSION_CAP if dim_cap is None else dim_cap
    return tensor_product(*factors, dim_cap=cap)
