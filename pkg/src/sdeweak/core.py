"""Shared data model: diffusion matrices, drift fields, reference systems,
time grids, the seeded noise source, and path/measure containers.

Conventions used throughout the package:

* states are arrays of shape ``(n, d)`` (``n`` points in d dimensions);
  drift callables accept ``(t, x)`` with ``x`` of shape ``(n, d)`` and
  return an array of the same shape,
* time is a plain float, grids are uniform except for a possibly
  shortened final step so the horizon is hit exactly,
* randomness is counter-based: every ``(seed, path, step)`` triple maps
  to the same Gaussian draw no matter how the work is partitioned.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np


class EllipticityError(ValueError):
    """Raised when a diffusion matrix is singular or badly scaled."""


class SingularDriftError(ValueError):
    """Raised when a drift is evaluated exactly on one of its singular points.

    The ``mask`` attribute (when present) marks the offending rows of the
    batched input, so callers that can tolerate rejected samples may recover.
    """

    def __init__(self, message, mask=None):
        super().__init__(message)
        self.mask = mask


def _as_points(x, dim):
    """Coerce ``x`` to an ``(n, dim)`` float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and dim == 1:
        x = x[:, None]
    elif x.ndim == 1 and x.shape[0] == dim:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of shape (n, {dim}), got {x.shape}")
    return x


@dataclass(frozen=True)
class DiffusionMatrix:
    """Constant diffusion coefficient with its derived quantities.

    ``ellipticity`` is the smallest constant ``lam`` such that
    ``lam**-1 |x|^2 <= |sigma x|^2 <= lam |x|^2`` for all x, computed from
    the extreme singular values of ``sigma``.
    """

    sigma: np.ndarray
    dim: int
    ellipticity: float
    a: np.ndarray          # sigma @ sigma.T
    sigma_inv: np.ndarray

    @classmethod
    def from_matrix(cls, sigma) -> "DiffusionMatrix":
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if sigma.shape[0] != sigma.shape[1]:
            raise EllipticityError(f"sigma must be square, got {sigma.shape}")
        if not np.all(np.isfinite(sigma)):
            raise EllipticityError("sigma has non-finite entries")
        svals = np.linalg.svd(sigma, compute_uv=False)
        s_min, s_max = float(svals.min()), float(svals.max())
        if s_min <= 0.0:
            raise EllipticityError("sigma is singular; uniform ellipticity fails")
        lam = max(s_max**2, 1.0 / s_min**2)
        return cls(
            sigma=sigma,
            dim=sigma.shape[0],
            ellipticity=lam,
            a=sigma @ sigma.T,
            sigma_inv=np.linalg.inv(sigma),
        )

    @classmethod
    def isotropic(cls, scale: float, dim: int = 1) -> "DiffusionMatrix":
        return cls.from_matrix(np.eye(dim) * float(scale))

    def __post_init__(self):
        err = np.abs(self.sigma_inv @ self.sigma - np.eye(self.dim)).max()
        if err > 1e-12:
            raise EllipticityError(f"sigma_inv @ sigma deviates from identity by {err:.3g}")


@dataclass
class DriftField:
    """A time-dependent vector field ``fn(t, x)`` with optional regularity metadata.

    ``fn`` is vectorized over points: it maps ``(t, (n, dim))`` to ``(n, dim)``.
    ``growth`` carries local-Lipschitz metadata ``(K, m)`` meaning
    ``|b(t,x)-b(t,y)| <= K (1 + |x|^m + |y|^m) |x-y|``; ``time_alpha`` is the
    Hoelder exponent of ``t -> b(t, x)``.  ``singular_points`` lists isolated
    points where the field is undefined.
    """

    dim: int
    fn: Callable[[float, np.ndarray], np.ndarray]
    time_alpha: Optional[float] = None
    growth: Optional[tuple] = None
    singular_points: Optional[np.ndarray] = None

    def __call__(self, t, x):
        x = _as_points(x, self.dim)
        out = np.asarray(self.fn(t, x), dtype=float)
        if out.shape != x.shape:
            raise ValueError(f"drift returned shape {out.shape}, expected {x.shape}")
        return out

    def at(self, t, x):
        """Evaluate at a single point, returning a (dim,) vector."""
        return self(t, np.asarray(x, dtype=float).reshape(1, self.dim))[0]


@dataclass(frozen=True)
class PotentialSpec:
    """Descriptor of a potential: the scalar function, its gradient, and
    optionally a constant Hessian (enables exact Lipschitz constants)."""

    dim: int
    potential: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[np.ndarray] = None   # constant Hessian matrix, if known
    name: str = "custom"


def gaussian_potential(dim: int = 1) -> PotentialSpec:
    """Standard Gaussian potential ``|x|^2/2 + (dim/2) log(2 pi)``.

    The additive constant makes ``exp(-V)`` a probability density, so the
    associated reference measure is exactly the standard normal law.
    """
    const = 0.5 * dim * math.log(2.0 * math.pi)

    def potential(x):
        x = _as_points(x, dim)
        return 0.5 * np.sum(x * x, axis=1) + const

    def grad(x):
        return _as_points(x, dim).copy()

    return PotentialSpec(dim=dim, potential=potential, grad=grad,
                         hessian=np.eye(dim), name="gaussian")


@dataclass
class ReferenceSystem:
    """Tractable auxiliary dynamics derived from a confining potential.

    The reference drift is ``-a grad V`` where ``a = sigma sigma^T``; its
    invariant measure has density proportional to ``exp(-V)``.
    ``lipschitz_const`` is a global Lipschitz constant for the drift.
    """

    dim: int
    potential: Callable
    grad_potential: Callable
    diffusion: DiffusionMatrix
    drift: Callable            # x (n, d) -> (n, d), time-homogeneous
    lipschitz_const: float
    name: str = "custom"

    def log_density(self, x):
        """Log of the reference density, equal to ``-V(x)``."""
        return -self.potential(x)

    def drift_field(self) -> DriftField:
        return DriftField(dim=self.dim, fn=lambda t, x: self.drift(x))


def _check_normalization(spec: PotentialSpec, half_width=8.0, n_points=4096):
    """Quadrature check that exp(-V) integrates to 1 over a centered box."""
    d = spec.dim
    h = 2.0 * half_width / n_points
    axis = -half_width + (np.arange(n_points) + 0.5) * h
    if d == 1:
        pts = axis[:, None]
        cell = h
    elif d == 2:
        # coarser per-axis resolution keeps the tensor grid affordable
        n_ax = int(math.isqrt(n_points)) * 4
        h = 2.0 * half_width / n_ax
        ax = -half_width + (np.arange(n_ax) + 0.5) * h
        g0, g1 = np.meshgrid(ax, ax, indexing="ij")
        pts = np.column_stack([g0.ravel(), g1.ravel()])
        cell = h * h
    else:
        return None
    mass = float(np.sum(np.exp(-spec.potential(pts))) * cell)
    return mass


def make_reference_system(spec: PotentialSpec, diffusion: DiffusionMatrix,
                          sample_box: float = 6.0, n_sample_pairs: int = 10_000,
                          seed: int = 0) -> ReferenceSystem:
    """Build the reference system for a potential and a diffusion matrix.

    The drift is ``-a grad V``.  When the potential declares a constant
    Hessian H the Lipschitz constant is the exact spectral norm of ``a H``;
    otherwise it is estimated as the largest difference quotient over
    ``n_sample_pairs`` random pairs in ``[-sample_box, sample_box]^d``,
    inflated by 10%.
    """
    if spec.grad is None:
        raise ValueError("potential descriptor must provide a gradient")
    if diffusion.dim != spec.dim:
        raise ValueError("diffusion and potential dimensions differ")
    a = diffusion.a

    def drift(x):
        x = _as_points(x, spec.dim)
        return -spec.grad(x) @ a.T

    if spec.hessian is not None:
        lip = float(np.linalg.norm(a @ spec.hessian, 2))
    else:
        rng = np.random.default_rng(seed)
        xs = rng.uniform(-sample_box, sample_box, size=(n_sample_pairs, spec.dim))
        ys = rng.uniform(-sample_box, sample_box, size=(n_sample_pairs, spec.dim))
        num = np.linalg.norm(drift(xs) - drift(ys), axis=1)
        den = np.linalg.norm(xs - ys, axis=1)
        keep = den > 1e-12
        lip = float(np.max(num[keep] / den[keep])) * 1.1

    mass = _check_normalization(spec)
    if mass is None:
        warnings.warn(f"potential '{spec.name}' in dimension {spec.dim} > 2: "
                      "normalization of exp(-V) not checked", stacklevel=2)
    elif abs(mass - 1.0) > 1e-3:
        raise ValueError(f"exp(-V) integrates to {mass:.6f}, not 1 within 1e-3; "
                         "absorb the normalizing constant into the potential")

    return ReferenceSystem(dim=spec.dim, potential=spec.potential,
                           grad_potential=spec.grad, diffusion=diffusion,
                           drift=drift, lipschitz_const=lip, name=spec.name)


def gaussian_reference(scale: float = 1.0, dim: int = 1) -> ReferenceSystem:
    """Shipped Gaussian reference: standard normal potential, sigma = scale * I."""
    return make_reference_system(gaussian_potential(dim),
                                 DiffusionMatrix.isotropic(scale, dim))


def t_floor(s: float, delta: float) -> float:
    """Largest grid time ``k * delta <= s``, robust to float division noise.

    Quotients within a relative 1e-9 of the next integer snap upward, so
    grid points map to themselves even when ``s/delta`` rounds just below
    an integer.
    """
    if s < 0 or delta <= 0:
        raise ValueError("need s >= 0 and delta > 0")
    q = s / delta
    k = math.floor(q)
    if q - k > 1.0 - 1e-9:
        k += 1
    return k * delta


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of step ``delta`` over ``[0, T]``; the last step may be
    shorter so the final knot equals ``T`` exactly."""

    T: float
    delta: float
    n_steps: int = field(init=False)
    knots: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.T <= 0 or self.delta <= 0:
            raise ValueError("need T > 0 and delta > 0")
        n = int(math.ceil(self.T / self.delta - 1e-12))
        knots = np.minimum(np.arange(n + 1) * self.delta, self.T)
        knots[-1] = self.T
        if np.any(np.diff(knots) <= 0):
            raise ValueError("grid knots are not strictly increasing")
        object.__setattr__(self, "n_steps", n)
        object.__setattr__(self, "knots", knots)

    @property
    def step_sizes(self) -> np.ndarray:
        return np.diff(self.knots)

    def refinement_factor(self, coarse_delta: float) -> int:
        """Integer ratio ``coarse_delta / delta``; errors if not integral."""
        ratio = coarse_delta / self.delta
        m = int(round(ratio))
        if m < 1 or abs(ratio - m) > 1e-9:
            raise ValueError(f"{coarse_delta} is not an integer multiple of {self.delta}")
        return m


_CHANNEL_SHIFT = 192   # counter word 3: stream channel
_PATH_SHIFT = 128      # counter word 2: path index


@dataclass(frozen=True)
class NoiseSource:
    """Counter-based Gaussian noise keyed by ``(master_seed, path, step)``.

    Each ``(channel, path)`` pair owns a disjoint 2^128-draw counter block
    of a Philox stream, so draws are reproducible bit-for-bit regardless of
    evaluation order, path partitioning, or worker count.  Channel 0 carries
    the Brownian increments; other channels are free for auxiliary sampling
    (exact transition oracles) without perturbing the increments.
    """

    master_seed: int

    def _generator(self, path: int, channel: int = 0) -> np.random.Generator:
        counter = (int(channel) << _CHANNEL_SHIFT) + (int(path) << _PATH_SHIFT)
        return np.random.Generator(np.random.Philox(key=self.master_seed,
                                                    counter=counter))

    def normals(self, path: int, n: int, dim: int, channel: int = 0) -> np.ndarray:
        """First ``n`` standard normal d-vectors of the (channel, path) stream."""
        return self._generator(path, channel).standard_normal((n, dim))

    def stream(self, path: int, step: int, dim: int) -> np.ndarray:
        """The step-th standard normal vector of a path's increment stream."""
        return self.normals(path, step + 1, dim)[-1]

    def increments(self, grid: TimeGrid, path: int, dim: int) -> np.ndarray:
        """Brownian increments over the grid steps: N(0, step_size * I)."""
        z = self.normals(path, grid.n_steps, dim)
        return z * np.sqrt(grid.step_sizes)[:, None]

    def ensemble_increments(self, grid: TimeGrid, n_paths: int, dim: int,
                            path_offset: int = 0) -> np.ndarray:
        """Increments for paths ``path_offset .. path_offset + n_paths - 1``."""
        out = np.empty((n_paths, grid.n_steps, dim))
        scale = np.sqrt(grid.step_sizes)[:, None]
        for i in range(n_paths):
            out[i] = self.normals(path_offset + i, grid.n_steps, dim) * scale
        return out


def coarsen_increments(fine_increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum blocks of ``factor`` fine increments into coarse ones.

    This is the common-random-numbers coupling: the coarse Brownian
    increment over a merged step equals the sum of its fine pieces exactly
    (fixed reduction order, hence bit-reproducible).
    """
    n_paths, n_fine, dim = fine_increments.shape
    if n_fine % factor != 0:
        raise ValueError(f"{n_fine} fine steps do not split into blocks of {factor}")
    return fine_increments.reshape(n_paths, n_fine // factor, factor, dim).sum(axis=2)


class SchemeTag(Enum):
    EM = "em"
    REFERENCE = "reference"
    EM_DEGENERATE = "em_degenerate"
    REFERENCE_DEGENERATE = "reference_degenerate"


@dataclass
class PathEnsemble:
    """Discretized trajectories with the Brownian increments that drove them.

    ``states`` has shape (n_paths, n_steps + 1, dim) and ``increments``
    (n_paths, n_steps, dim).  ``diverged_at[p]`` is the step index at which
    path p blew up (-1 if it never did); a diverged path is frozen at its
    last finite state.  ``path_offset`` records the absolute index of the
    first path in the noise source, so block-wise simulation reproduces a
    monolithic run exactly.
    """

    grid: TimeGrid
    states: np.ndarray
    increments: np.ndarray
    scheme_tag: SchemeTag
    diverged_at: np.ndarray
    path_offset: int = 0

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def alive(self) -> np.ndarray:
        return self.diverged_at < 0

    def terminal_measure(self, exclude_diverged: bool = True) -> "EmpiricalMeasure":
        keep = self.alive if exclude_diverged else np.ones(self.n_paths, bool)
        samples = self.states[keep, -1, :]
        return EmpiricalMeasure(samples=samples,
                                log_weights=np.zeros(samples.shape[0]))


@dataclass
class EmpiricalMeasure:
    """Weighted terminal-time samples: the carrier of simulated laws.

    ``log_weights`` are unnormalized; uniform (all-zero) for plain laws.
    """

    samples: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] == 1 and self.samples.shape[1] > 1 and \
                np.asarray(self.log_weights).size == self.samples.shape[1]:
            self.samples = self.samples.T
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.log_weights.shape != (self.samples.shape[0],):
            raise ValueError("log_weights must have one entry per sample")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def weights(self) -> np.ndarray:
        """Normalized weights, positive and summing to one."""
        shifted = self.log_weights - self.log_weights.max()
        w = np.exp(shifted)
        return w / w.sum()

    def ess(self) -> float:
        """Effective sample size (sum w)^2 / sum w^2 of the normalized weights."""
        w = self.weights()
        return float(1.0 / np.sum(w * w))

    def mean(self) -> np.ndarray:
        return self.weights() @ self.samples

    def var(self) -> np.ndarray:
        w = self.weights()
        m = w @ self.samples
        return w @ (self.samples - m) ** 2

    def expectation(self, f) -> float:
        """Weighted mean of ``f(samples)`` for a scalar-valued ``f``."""
        return float(self.weights() @ np.asarray(f(self.samples), dtype=float))
