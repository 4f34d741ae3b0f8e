"""Distances between empirical laws and weak-error evaluation.

In one dimension the order-1 transport distance is computed exactly from
the merged CDFs.  A linear-program oracle covers small discrete measures
in any dimension.  The bounded-Lipschitz (Fortet-Mourier) distance has no
finite-sample closed form, so it is bracketed: a certified lower bound
from a finite dual dictionary of feasible test functions, and an upper
companion from the order-1 distance (whose dual ball is larger) capped at
the diameter bound 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import EmpiricalMeasure
from .girsanov import weighted_expectation


# ---------------------------------------------------------------------------
# dual test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """A map R^d -> R with certified sup and Lipschitz constants."""

    __test__ = False      # not a pytest class, despite the name

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    sup_norm: float
    lip_norm: float

    def __call__(self, x):
        return np.asarray(self.fn(np.atleast_2d(x)), dtype=float)


@dataclass(frozen=True)
class TestFunctionFamily:
    """A finite dictionary of functions feasible for the bounded-Lipschitz
    dual problem: every member satisfies ``lip + sup <= 1``."""

    __test__ = False      # not a pytest class, despite the name

    members: tuple

    def __post_init__(self):
        for m in self.members:
            if m.lip_norm + m.sup_norm > 1.0 + 1e-12:
                raise ValueError(f"member '{m.name}' violates the dual budget: "
                                 f"lip + sup = {m.lip_norm + m.sup_norm:.6f}")

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)


def tent_function(center: float, width: float, coord: int = 0) -> TestFunction:
    """Tent profile on one coordinate with the budget saturated:
    height w/(1+w), slope 1/(1+w), so lip + sup = 1."""
    h = width / (1.0 + width)

    def fn(x):
        return h * np.maximum(0.0, 1.0 - np.abs(x[:, coord] - center) / width)

    return TestFunction(name=f"tent(c={center:.4g},w={width:.4g},x{coord})",
                        fn=fn, sup_norm=h, lip_norm=h / width)


def ramp_function(center: float, width: float, coord: int = 0) -> TestFunction:
    """Clamped ramp on one coordinate with the budget saturated."""
    h = width / (1.0 + width)

    def fn(x):
        return h * np.clip((x[:, coord] - center) / width, -1.0, 1.0)

    return TestFunction(name=f"ramp(c={center:.4g},w={width:.4g},x{coord})",
                        fn=fn, sup_norm=h, lip_norm=h / width)


def bl_dictionary(samples: np.ndarray, n_centers: int = 9,
                  width_factors: Sequence[float] = (0.5, 1.0, 2.0)) -> TestFunctionFamily:
    """Data-driven dual dictionary: tents and ramps at pooled quantile
    centers, widths scaled by the pooled spread, per coordinate."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    members = []
    qs = np.linspace(0.05, 0.95, n_centers)
    for coord in range(samples.shape[1]):
        col = samples[:, coord]
        scale = max(float(col.std()), 1e-8)
        centers = np.quantile(col, qs)
        for c in centers:
            for f in width_factors:
                members.append(tent_function(float(c), f * scale, coord))
                members.append(ramp_function(float(c), f * scale, coord))
    return TestFunctionFamily(members=tuple(members))


@dataclass(frozen=True)
class BoundedObservable:
    """A bounded test function for weak-error evaluation (sup norm only)."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    sup_norm: float

    def __call__(self, x):
        return np.asarray(self.fn(np.atleast_2d(x)), dtype=float)


def default_observables(dim: int = 1) -> list:
    """Shipped bounded observables: tanh and a clamped ramp per coordinate."""
    obs = []
    for coord in range(dim):
        suffix = "" if dim == 1 else f"_x{coord}"
        obs.append(BoundedObservable(
            name=f"tanh{suffix}",
            fn=lambda x, c=coord: np.tanh(x[:, c]), sup_norm=1.0))
        obs.append(BoundedObservable(
            name=f"ramp{suffix}",
            fn=lambda x, c=coord: np.clip(x[:, c], -1.0, 1.0), sup_norm=1.0))
    return obs


OBSERVABLE_SETS = {
    "tanh_ramp": default_observables,
}


# ---------------------------------------------------------------------------
# order-1 transport distances
# ---------------------------------------------------------------------------

def w1_exact_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact order-1 transport distance between weighted 1-d samples,
    computed as the area between the two CDFs."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("exact quantile distance requires dimension 1")
    pts = np.concatenate([mu.samples[:, 0], nu.samples[:, 0]])
    signed = np.concatenate([mu.weights(), -nu.weights()])
    order = np.argsort(pts, kind="stable")
    pts = pts[order]
    cdf_gap = np.cumsum(signed[order])
    return float(np.sum(np.abs(cdf_gap[:-1]) * np.diff(pts)))


MAX_LP_SUPPORT = 64


def w1_lp_oracle(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Order-1 transport distance of small discrete measures by solving the
    primal coupling linear program exactly (any dimension, supports <= 64)."""
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    n, m = mu.n, nu.n
    if n > MAX_LP_SUPPORT or m > MAX_LP_SUPPORT:
        raise ValueError(f"supports must be <= {MAX_LP_SUPPORT} points")
    cost = np.linalg.norm(mu.samples[:, None, :] - nu.samples[None, :, :],
                          axis=2).ravel()
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([mu.weights(), nu.weights()])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def w1_coupling_upper(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Cost of the comonotone coupling in lexicographic sample order.

    A feasible coupling, so always an upper bound of the transport
    distance; in one dimension it is the optimal coupling and the bound is
    tight.
    """
    ix = np.lexsort(mu.samples.T[::-1])
    iy = np.lexsort(nu.samples.T[::-1])
    xs, wx = mu.samples[ix], mu.weights()[ix]
    ys, wy = nu.samples[iy], nu.weights()[iy]
    cum_x, cum_y = np.cumsum(wx), np.cumsum(wy)
    levels = np.union1d(cum_x, cum_y)
    levels = levels[(levels > 0) & (levels <= 1.0 + 1e-15)]
    d_mass = np.diff(np.concatenate([[0.0], levels]))
    pos_x = np.searchsorted(cum_x, levels - 1e-15)
    pos_y = np.searchsorted(cum_y, levels - 1e-15)
    pos_x = np.clip(pos_x, 0, xs.shape[0] - 1)
    pos_y = np.clip(pos_y, 0, ys.shape[0] - 1)
    gaps = np.linalg.norm(xs[pos_x] - ys[pos_y], axis=1)
    return float(np.sum(d_mass * gaps))


def w1_marginal_max(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Largest exact 1-d distance over coordinate marginals: a certified
    lower bound of the joint transport distance (projections are
    1-Lipschitz)."""
    vals = []
    for coord in range(mu.dim):
        vals.append(w1_exact_1d(
            EmpiricalMeasure(mu.samples[:, coord:coord + 1], mu.log_weights),
            EmpiricalMeasure(nu.samples[:, coord:coord + 1], nu.log_weights)))
    return max(vals)


# ---------------------------------------------------------------------------
# bounded-Lipschitz bracket and weak error
# ---------------------------------------------------------------------------

@dataclass
class BlBracket:
    lower_bound: float
    companion_upper: float
    best_member: str


def wbl_estimate(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                 family: Optional[TestFunctionFamily] = None) -> BlBracket:
    """Bracket the bounded-Lipschitz distance between two empirical laws.

    The lower bound maximizes ``|mu(phi) - nu(phi)|`` over the dual
    dictionary (every member is feasible, so this is certified).  The
    upper companion is the order-1 distance (exact in d = 1, comonotone
    coupling otherwise) capped at 2, since the bounded-Lipschitz dual ball
    is contained in the Lipschitz ball and member values cannot differ by
    more than twice the sup bound.
    """
    if family is None:
        family = bl_dictionary(np.vstack([mu.samples, nu.samples]))
    if len(family) == 0:
        raise ValueError("empty test function family")
    best, best_name = 0.0, ""
    for member in family:
        gap = abs(mu.expectation(member.fn) - nu.expectation(member.fn))
        if gap > best:
            best, best_name = gap, member.name
    if mu.dim == 1:
        upper = w1_exact_1d(mu, nu)
    else:
        upper = w1_coupling_upper(mu, nu)
    return BlBracket(lower_bound=best, companion_upper=min(upper, 2.0),
                     best_member=best_name)


@dataclass
class WeakErrorResult:
    diff: float
    std_error: float


def weak_error(law_a: EmpiricalMeasure, law_b: EmpiricalMeasure,
               f) -> WeakErrorResult:
    """Absolute difference of the two weighted means of a bounded test
    function, with the combined Monte Carlo standard error."""
    ra = weighted_expectation(law_a.log_weights, f(law_a.samples))
    rb = weighted_expectation(law_b.log_weights, f(law_b.samples))
    return WeakErrorResult(diff=abs(ra.estimate - rb.estimate),
                           std_error=math.hypot(ra.std_error, rb.std_error))
