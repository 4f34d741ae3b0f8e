"""Change-of-measure weights along reference paths.

A reference ensemble together with its stored Brownian increments can be
reweighted so that its terminal samples represent either the target SDE
law or the law of the explicit scheme at some step size.  The weights are
left-point discretizations of the exponential-martingale density

    ``log w = M_T - 1/2 <M>_T``,

which for the simulated chains coincides with the exact likelihood ratio
between two Gaussian transition kernels, so the unnormalized weight mean
is exactly one in expectation whenever the exponential moment is finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Optional

import numpy as np

from .core import (
    DiffusionMatrix,
    DriftField,
    EmpiricalMeasure,
    PathEnsemble,
    ReferenceSystem,
    SchemeTag,
    SingularDriftError,
)


class DataQualityError(RuntimeError):
    """Too many paths were rejected for the weights to be trustworthy."""


class WeightKind(Enum):
    TARGET = "target"                       # reference -> target SDE
    SCHEME = "scheme"                       # reference -> explicit scheme
    KINETIC_TARGET = "kinetic_target"       # degenerate pair -> target
    KINETIC_TARGET_ALT = "kinetic_target_alt"
    KINETIC_SCHEME = "kinetic_scheme"       # degenerate pair -> scheme


@dataclass
class GirsanovAccumulator:
    """Running stochastic integral and quadratic variation per path.

    ``martingale`` holds ``M_t = sum_k <u_k, dW_k>`` and
    ``quadratic_variation`` holds ``<M>_t = sum_k |u_k|^2 dt_k`` for the
    signed integrand ``u``.  Rejected paths (a singular drift hit or a
    diverged reference path) keep zero sums and are reported separately.
    """

    kind: WeightKind
    martingale: np.ndarray
    quadratic_variation: np.ndarray
    rejected: np.ndarray
    steps_done: int = 0

    @classmethod
    def empty(cls, kind: WeightKind, n_paths: int) -> "GirsanovAccumulator":
        return cls(kind=kind, martingale=np.zeros(n_paths),
                   quadratic_variation=np.zeros(n_paths),
                   rejected=np.zeros(n_paths, dtype=bool))

    def add_step(self, u: np.ndarray, dw: np.ndarray, dt: float):
        """Accumulate one left-point step of the signed integrand."""
        active = ~self.rejected
        self.martingale[active] += np.sum(u[active] * dw[active], axis=1)
        self.quadratic_variation[active] += np.sum(u[active] ** 2, axis=1) * dt
        self.steps_done += 1

    def log_weights(self) -> np.ndarray:
        """Finalized ``M_T - 1/2 <M>_T``; rejected paths get ``-inf``."""
        out = self.martingale - 0.5 * self.quadratic_variation
        out[self.rejected] = -np.inf
        return out

    def weighted_measure(self, samples: np.ndarray) -> EmpiricalMeasure:
        return EmpiricalMeasure(samples=samples, log_weights=self.log_weights())


def _require_tag(paths: PathEnsemble, *tags: SchemeTag):
    if paths.scheme_tag not in tags:
        names = " or ".join(t.value for t in tags)
        raise ValueError(f"expected {names} paths, got {paths.scheme_tag.value}")


def _accumulate(paths: PathEnsemble, integrand, kind: WeightKind,
                max_rejected_fraction: float = 0.01) -> GirsanovAccumulator:
    """Run the left-point accumulation; ``integrand(k, states_k)`` returns
    the signed ``u`` values at step ``k`` and may raise
    :class:`SingularDriftError` with a row mask."""
    acc = GirsanovAccumulator.empty(kind, paths.n_paths)
    acc.rejected |= ~paths.alive
    steps = paths.grid.step_sizes
    for k in range(paths.grid.n_steps):
        states_k = paths.states[:, k, :]
        try:
            u = integrand(k, states_k)
        except SingularDriftError as err:
            if err.mask is None:
                raise
            acc.rejected |= err.mask
            safe = states_k.copy()
            safe[err.mask] += 1e-9
            u = integrand(k, safe)
        acc.add_step(u, paths.increments[:, k, :], steps[k])
    frac = float(acc.rejected.mean())
    if frac > max_rejected_fraction:
        raise DataQualityError(
            f"{frac:.1%} of paths rejected (> {max_rejected_fraction:.0%})")
    return acc


def weights_to_target(ref_paths: PathEnsemble, perturbation: DriftField,
                      diffusion: DiffusionMatrix) -> GirsanovAccumulator:
    """Log-weights turning the reference law into the target SDE law.

    ``perturbation`` is the drift difference (target drift minus reference
    drift).  Per path, ``log w = sum_k <s^-1 Z(t_k, Y_k), dW_k>
    - 1/2 sum_k |s^-1 Z(t_k, Y_k)|^2 dt_k``; reweighted expectations of
    terminal functionals estimate the corresponding target expectations.
    """
    _require_tag(ref_paths, SchemeTag.REFERENCE)
    s_inv_t = diffusion.sigma_inv.T
    knots = ref_paths.grid.knots

    def integrand(k, states):
        return perturbation(knots[k], states) @ s_inv_t

    return _accumulate(ref_paths, integrand, WeightKind.TARGET)


def weights_to_scheme(ref_paths: PathEnsemble, drift: DriftField,
                      ref: ReferenceSystem,
                      scheme_grid) -> GirsanovAccumulator:
    """Log-weights turning the reference law into the law of the explicit
    scheme with step ``scheme_grid.delta``.

    The signed integrand is ``-s^-1 (Z0(Y_s) - b(s_floor, Y(s_floor)))``
    evaluated left-point on the (finer) grid of ``ref_paths``; the scheme
    step must be an integer multiple of the path step.
    """
    _require_tag(ref_paths, SchemeTag.REFERENCE)
    fine = ref_paths.grid
    if abs(fine.T - scheme_grid.T) > 1e-12:
        raise ValueError("scheme grid horizon differs from the path horizon")
    m = fine.refinement_factor(scheme_grid.delta)
    s_inv_t = ref.diffusion.sigma_inv.T
    knots = fine.knots
    frozen: dict = {}

    def integrand(k, states):
        block = (k // m) * m
        if block not in frozen:
            frozen[block] = drift(knots[block],
                                  ref_paths.states[:, block, :])
        g = (ref.drift(states) - frozen[block]) @ s_inv_t
        return -g

    return _accumulate(ref_paths, integrand, WeightKind.SCHEME)


def weights_degenerate(kind: WeightKind, ref_paths: PathEnsemble,
                       field: DriftField, ref: ReferenceSystem,
                       scheme_grid=None) -> GirsanovAccumulator:
    """Degenerate counterparts of the two reweightings.

    ``field`` is a kinetic drift on the (position, velocity) pair whose
    second block is the forcing.  The target kinds use the integrand
    ``s^-1 (forcing(t, X, Y) - Z0(Y))``; the scheme kind uses
    ``-s^-1 (Z0(Y_s) - forcing(s_floor, X(s_floor), Y(s_floor)))`` and
    needs ``scheme_grid``.
    """
    _require_tag(ref_paths, SchemeTag.REFERENCE_DEGENERATE)
    d = ref.dim
    s_inv_t = ref.diffusion.sigma_inv.T
    knots = ref_paths.grid.knots

    if kind in (WeightKind.KINETIC_TARGET, WeightKind.KINETIC_TARGET_ALT):
        def integrand(k, states):
            forcing = field(knots[k], states)[:, d:]
            return (forcing - ref.drift(states[:, d:])) @ s_inv_t

        return _accumulate(ref_paths, integrand, kind)

    if kind is WeightKind.KINETIC_SCHEME:
        if scheme_grid is None:
            raise ValueError("scheme kind needs scheme_grid")
        m = ref_paths.grid.refinement_factor(scheme_grid.delta)
        frozen: dict = {}

        def integrand(k, states):
            block = (k // m) * m
            if block not in frozen:
                frozen[block] = field(knots[block],
                                      ref_paths.states[:, block, :])[:, d:]
            g = (ref.drift(states[:, d:]) - frozen[block]) @ s_inv_t
            return -g

        return _accumulate(ref_paths, integrand, WeightKind.KINETIC_SCHEME)

    raise ValueError(f"{kind} is not a degenerate weight kind")


# ---------------------------------------------------------------------------
# estimators and diagnostics
# ---------------------------------------------------------------------------

ESS_WARNING_THRESHOLD = 30.0


@dataclass
class ExpectationResult:
    estimate: float
    std_error: float
    ess: float
    reliable: bool


def weighted_expectation(log_weights: np.ndarray, values: np.ndarray,
                         normalize: bool = True) -> ExpectationResult:
    """Importance-sampling estimate of a bounded functional.

    Self-normalized (default): ``sum w f / sum w`` with a delta-method
    standard error.  Unnormalized: ``mean(w f)`` using the absolute weight
    scale, which is what the exponential-martingale mean test needs.
    An effective sample size below 30 marks the result unreliable.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    values = np.asarray(values, dtype=float)
    if log_weights.shape != values.shape:
        raise ValueError("log_weights and values must have equal length")
    n = log_weights.size
    finite = np.isfinite(log_weights)
    if not np.any(finite):
        raise ValueError("all paths carry zero weight")
    shift = log_weights[finite].max()
    w_shifted = np.where(finite, np.exp(log_weights - shift), 0.0)
    ess = float(w_shifted.sum() ** 2 / np.sum(w_shifted**2))
    if normalize:
        wn = w_shifted / w_shifted.sum()
        est = float(wn @ values)
        se = float(np.sqrt(np.sum(wn**2 * (values - est) ** 2)))
    else:
        w = np.where(finite, np.exp(log_weights), 0.0)
        prod = w * values
        est = float(prod.mean())
        se = float(prod.std(ddof=1) / math.sqrt(n))
    return ExpectationResult(estimate=est, std_error=se, ess=ess,
                             reliable=ess >= ESS_WARNING_THRESHOLD)


@dataclass
class NovikovReport:
    mc_estimate: float
    tail_index_hint: float
    top_path_share: float
    running_max_growth: float
    suspicious: bool


def novikov_diagnostic(accumulator: GirsanovAccumulator,
                       half: bool = True) -> NovikovReport:
    """Monte Carlo check of the exponential-moment condition
    ``E exp(c <M>_T) < infty`` with ``c = 1/2`` (or 1).

    Since only samples are available the report is a hint, not a proof: it
    returns the estimate (``inf`` on overflow), a log-log slope of the
    upper tail of the ``<M>_T`` sample distribution (smaller means
    heavier), the share of the estimate carried by the single largest
    path, and the growth of the running maximum over the path order.  An
    estimate that is infinite or dominated by one path is flagged: more
    sampling would keep moving it, the signature of a failing condition.
    """
    qv = accumulator.quadratic_variation[~accumulator.rejected]
    if qv.size == 0:
        raise ValueError("no accepted paths")
    c = 0.5 if half else 1.0
    scaled = c * qv
    peak = float(scaled.max())
    if peak > 700.0:
        estimate = math.inf
    else:
        estimate = float(np.exp(scaled).mean())
    # share of sum exp(scaled) carried by the largest sample, shift-stable
    rel = np.exp(scaled - peak)
    top_share = float(1.0 / rel.sum())

    srt = np.sort(qv)
    n = srt.size
    k = max(n // 10, 2)
    tail = srt[-k:]
    tail_probs = 1.0 - (np.arange(n - k, n) + 0.5) / n
    pos = tail > 0
    if pos.sum() >= 2 and np.ptp(np.log(tail[pos])) > 1e-12:
        slope = np.polyfit(np.log(tail[pos]), np.log(tail_probs[pos]), 1)[0]
        tail_index = float(-slope)
    else:
        tail_index = math.inf

    half_max = float(scaled[: max(n // 2, 1)].max())
    growth = peak / half_max if half_max > 0 else 1.0
    suspicious = (not math.isfinite(estimate)) or top_share > 0.5
    return NovikovReport(mc_estimate=estimate, tail_index_hint=tail_index,
                         top_path_share=top_share, running_max_growth=growth,
                         suspicious=suspicious)
