"""Time-stepping schemes and exact Gaussian oracles.

Four dynamics are simulated on a shared grid: the explicit scheme for a
general drift, the same scheme for the tractable reference drift (kept
with its Brownian increments so the paths can later be reweighted), and
the two degenerate position/velocity variants where noise enters only the
velocity.  Exact samplers for linear SDEs provide ground-truth laws; the
coupled variant consumes the same increments as a simulated ensemble so
that per-path differences, not just ensemble statistics, are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import expm

from .core import (
    DiffusionMatrix,
    DriftField,
    EmpiricalMeasure,
    NoiseSource,
    PathEnsemble,
    ReferenceSystem,
    SchemeTag,
    TimeGrid,
)

DIVERGENCE_THRESHOLD = 1e12


class SchemeMode(Enum):
    NONDEGENERATE = "nondegenerate"
    DEGENERATE = "degenerate"


@dataclass
class SchemeConfig:
    """Everything a simulation run needs.

    In degenerate mode the state is (position, velocity) of dimension
    ``2 * diffusion.dim`` and the drift must be a kinetic field returning
    ``(velocity, forcing)``.
    """

    grid: TimeGrid
    n_paths: int
    initial: np.ndarray
    drift: DriftField
    diffusion: DiffusionMatrix
    noise: NoiseSource
    mode: SchemeMode = SchemeMode.NONDEGENERATE
    path_offset: int = 0

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float).ravel()
        d = self.diffusion.dim
        state_dim = d if self.mode is SchemeMode.NONDEGENERATE else 2 * d
        if self.initial.size != state_dim:
            raise ValueError(f"initial state has size {self.initial.size}, "
                             f"expected {state_dim}")
        if self.drift.dim != state_dim:
            raise ValueError(f"drift dimension {self.drift.dim} does not match "
                             f"state dimension {state_dim}")


def _mark_divergence(x_new, alive, diverged_at, step):
    bad = alive & (~np.all(np.isfinite(x_new), axis=1)
                   | (np.max(np.abs(x_new), axis=1) > DIVERGENCE_THRESHOLD))
    if np.any(bad):
        diverged_at[bad] = step
        alive = alive & ~bad
    return alive


def _run_nondegenerate(drift_fn, cfg: SchemeConfig, tag: SchemeTag,
                       increments=None) -> PathEnsemble:
    grid, d = cfg.grid, cfg.diffusion.dim
    if increments is None:
        increments = cfg.noise.ensemble_increments(grid, cfg.n_paths, d,
                                                   cfg.path_offset)
    sigma_t = cfg.diffusion.sigma.T
    steps = grid.step_sizes
    states = np.empty((cfg.n_paths, grid.n_steps + 1, d))
    states[:, 0, :] = cfg.initial
    x = np.tile(cfg.initial, (cfg.n_paths, 1))
    alive = np.ones(cfg.n_paths, dtype=bool)
    diverged_at = np.full(cfg.n_paths, -1, dtype=np.int64)
    for k in range(grid.n_steps):
        b = drift_fn(grid.knots[k], x)
        x_new = x + b * steps[k] + increments[:, k, :] @ sigma_t
        alive = _mark_divergence(x_new, alive, diverged_at, k)
        x = np.where(alive[:, None], x_new, x)
        states[:, k + 1, :] = x
    return PathEnsemble(grid=grid, states=states, increments=increments,
                        scheme_tag=tag, diverged_at=diverged_at,
                        path_offset=cfg.path_offset)


def simulate_em(cfg: SchemeConfig, increments=None) -> PathEnsemble:
    """Explicit scheme ``X_{k+1} = X_k + b(t_k, X_k) dt_k + sigma dW_k``.

    The drift argument is frozen at the left knot of every step (the final,
    possibly shortened, step freezes at its own left knot).  Paths whose
    state overflows or leaves ``|x| <= 1e12`` are frozen at their last
    finite state and flagged in ``diverged_at``.  Pass ``increments`` to
    override the noise source, e.g. with coarsened common increments.
    """
    if cfg.mode is not SchemeMode.NONDEGENERATE:
        raise ValueError("use simulate_em_degenerate for degenerate configs")
    return _run_nondegenerate(cfg.drift, cfg, SchemeTag.EM, increments)


def simulate_reference(ref: ReferenceSystem, grid: TimeGrid, n_paths: int,
                       initial, noise: NoiseSource, path_offset: int = 0,
                       increments=None) -> PathEnsemble:
    """Simulate the tractable reference dynamics on the given grid,
    retaining the Brownian increments for later reweighting."""
    cfg = SchemeConfig(grid=grid, n_paths=n_paths, initial=initial,
                       drift=ref.drift_field(), diffusion=ref.diffusion,
                       noise=noise, path_offset=path_offset)
    return _run_nondegenerate(lambda t, x: ref.drift(x), cfg,
                              SchemeTag.REFERENCE, increments)


def simulate_em_degenerate(cfg: SchemeConfig, increments=None) -> PathEnsemble:
    """Degenerate scheme: position integrates the frozen velocity, the
    velocity receives drift and noise.

    ``X1_{k+1} = X1_k + X2_k dt``; ``X2_{k+1} = X2_k + b(t_k, X1_k, X2_k) dt
    + sigma dW_k``.  The position update never reads the drift and receives
    exactly zero noise.
    """
    if cfg.mode is not SchemeMode.DEGENERATE:
        raise ValueError("config is not in degenerate mode")
    grid, d = cfg.grid, cfg.diffusion.dim
    if increments is None:
        increments = cfg.noise.ensemble_increments(grid, cfg.n_paths, d,
                                                   cfg.path_offset)
    sigma_t = cfg.diffusion.sigma.T
    steps = grid.step_sizes
    states = np.empty((cfg.n_paths, grid.n_steps + 1, 2 * d))
    states[:, 0, :] = cfg.initial
    x = np.tile(cfg.initial, (cfg.n_paths, 1))
    alive = np.ones(cfg.n_paths, dtype=bool)
    diverged_at = np.full(cfg.n_paths, -1, dtype=np.int64)
    for k in range(grid.n_steps):
        forcing = cfg.drift(grid.knots[k], x)[:, d:]
        x_new = np.empty_like(x)
        x_new[:, :d] = x[:, :d] + x[:, d:] * steps[k]
        x_new[:, d:] = x[:, d:] + forcing * steps[k] + increments[:, k, :] @ sigma_t
        alive = _mark_divergence(x_new, alive, diverged_at, k)
        x = np.where(alive[:, None], x_new, x)
        states[:, k + 1, :] = x
    return PathEnsemble(grid=grid, states=states, increments=increments,
                        scheme_tag=SchemeTag.EM_DEGENERATE,
                        diverged_at=diverged_at, path_offset=cfg.path_offset)


def simulate_reference_degenerate(ref: ReferenceSystem, grid: TimeGrid,
                                  n_paths: int, initial, noise: NoiseSource,
                                  path_offset: int = 0,
                                  increments=None) -> PathEnsemble:
    """Degenerate auxiliary pair: position integrates the velocity, the
    velocity follows the reference dynamics."""
    d = ref.dim
    drift = DriftField(dim=2 * d,
                       fn=lambda t, x: np.concatenate([x[:, d:],
                                                       ref.drift(x[:, d:])], axis=1))
    cfg = SchemeConfig(grid=grid, n_paths=n_paths, initial=initial,
                       drift=drift, diffusion=ref.diffusion, noise=noise,
                       mode=SchemeMode.DEGENERATE, path_offset=path_offset)
    out = simulate_em_degenerate(cfg, increments)
    out.scheme_tag = SchemeTag.REFERENCE_DEGENERATE
    return out


# ---------------------------------------------------------------------------
# exact Gaussian oracles
# ---------------------------------------------------------------------------

def exact_ou_sampler(theta: float, sigma: DiffusionMatrix, x0, T: float,
                     n: int, noise: NoiseSource) -> EmpiricalMeasure:
    """I.i.d. samples from the exact mean-reverting Gaussian law
    ``N(x0 e^(-theta T), a (1 - e^(-2 theta T)) / (2 theta))``."""
    if theta <= 0 or T <= 0:
        raise ValueError("need theta > 0 and T > 0")
    d = sigma.dim
    x0 = np.asarray(x0, dtype=float).ravel()
    mean = x0 * np.exp(-theta * T)
    scale = np.sqrt((1.0 - np.exp(-2.0 * theta * T)) / (2.0 * theta))
    z = noise.normals(0, n, d, channel=1)
    samples = mean + scale * (z @ sigma.sigma.T)
    return EmpiricalMeasure(samples=samples, log_weights=np.zeros(n))


def _vanloan_blocks(F: np.ndarray, L: np.ndarray, h: float):
    """One-step quantities of the linear SDE ``dX = F X dt + L dW``:

    transition matrix ``Phi = e^(F h)``, step noise covariance
    ``Q = int_0^h e^(F u) L L^T e^(F^T u) du``, and the cross block
    ``C = (int_0^h e^(F u) du) L = Cov(step noise, dW)``.
    """
    m = F.shape[0]
    phi = expm(F * h)
    top = np.zeros((2 * m, 2 * m))
    top[:m, :m] = F
    top[:m, m:] = L @ L.T
    top[m:, m:] = -F.T
    q = expm(top * h)[:m, m:] @ phi.T
    q = 0.5 * (q + q.T)
    blk = np.zeros((2 * m, 2 * m))
    blk[:m, :m] = F
    blk[:m, m:] = np.eye(m)
    g = expm(blk * h)[:m, m:]
    return phi, q, g @ L


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(mat)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


def exact_linear_sde_sampler(F: np.ndarray, L: np.ndarray, x0, T: float,
                             n: int, noise: NoiseSource) -> EmpiricalMeasure:
    """I.i.d. samples of the exact time-T law of ``dX = F X dt + L dW``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    phi, q, _ = _vanloan_blocks(F, L, T)
    mean = phi @ np.asarray(x0, dtype=float).ravel()
    root = _psd_sqrt(q)
    z = noise.normals(0, n, F.shape[0], channel=1)
    return EmpiricalMeasure(samples=mean + z @ root.T,
                            log_weights=np.zeros(n))


def exact_linear_terminal_coupled(F: np.ndarray, L: np.ndarray, x0,
                                  grid: TimeGrid, increments: np.ndarray,
                                  noise: NoiseSource, path_offset: int = 0,
                                  channel: int = 2) -> np.ndarray:
    """Exact time-T samples of ``dX = F X dt + L dW`` driven by the SAME
    Brownian increments as a simulated ensemble.

    Within each step the stochastic convolution splits into its projection
    onto the step's increment plus an independent Gaussian residual drawn
    from a dedicated noise channel.  The output is exact in law and highly
    correlated with any scheme using these increments, so paired weak-error
    estimates sit far below the independent-sampling noise floor.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    m = F.shape[0]
    steps = grid.step_sizes
    if not np.allclose(steps, steps[0], rtol=0, atol=1e-12):
        raise ValueError("coupled exact sampling needs a uniform grid")
    h = float(steps[0])
    phi, q, c = _vanloan_blocks(F, L, h)
    resid = _psd_sqrt(q - c @ c.T / h)
    gain = c / h
    n_paths, n_steps, _ = increments.shape
    x = np.tile(np.asarray(x0, dtype=float).ravel(), (n_paths, 1))
    xi = np.empty((n_paths, n_steps, m))
    for p in range(n_paths):
        xi[p] = noise.normals(path_offset + p, n_steps, m, channel=channel)
    for k in range(n_steps):
        j = increments[:, k, :] @ gain.T + xi[:, k, :] @ resid.T
        x = x @ phi.T + j
    return x


def ou_generator_matrices(theta: float, sigma: DiffusionMatrix):
    """(F, L) of the mean-reverting linear SDE ``dX = -theta X dt + sigma dW``."""
    d = sigma.dim
    return -theta * np.eye(d), sigma.sigma.copy()


def kinetic_ou_generator_matrices(theta: float, sigma: DiffusionMatrix):
    """(F, L) of the damped oscillator pair ``dX1 = X2 dt,
    dX2 = (-theta X1 - X2) dt + sigma dW``."""
    d = sigma.dim
    F = np.zeros((2 * d, 2 * d))
    F[:d, d:] = np.eye(d)
    F[d:, :d] = -theta * np.eye(d)
    F[d:, d:] = -np.eye(d)
    L = np.zeros((2 * d, d))
    L[d:, :] = sigma.sigma
    return F, L
