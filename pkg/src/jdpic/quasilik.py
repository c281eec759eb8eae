"""Threshold quasi-likelihood: increment classification, H1, H2 and the
closed-form intensity profile.

In one dimension the diffusion matrix ``S = b^2`` is a scalar, so
``log det S`` is ``log S`` and the quadratic form ``S^{-1}[v^2]`` is
``v^2 / S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate

from .model import JumpDensityFamily, ModelSpec
from .simulate import Observations


class LikelihoodError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdRule:
    """Increments with ``|dX| <= scale * h**rho`` are treated as jump-free."""

    rho: float = 0.4
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.375 < self.rho < 0.5:
            raise ValueError(f"rho={self.rho} must lie strictly inside (3/8, 1/2)")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("threshold scale must be positive")

    def cutoff(self, h: float) -> float:
        return self.scale * float(h) ** self.rho


@dataclass(frozen=True)
class IncrementClassification:
    continuous_mask: np.ndarray
    jump_values: np.ndarray

    @property
    def n(self) -> int:
        return self.continuous_mask.size

    @property
    def n_jumps(self) -> int:
        return self.jump_values.size


def classify(obs: Observations, rule: ThresholdRule) -> IncrementClassification:
    dx = obs.increments
    mask = np.abs(dx) <= rule.cutoff(obs.h)
    mask.setflags(write=False)
    jumps = dx[~mask]
    jumps.setflags(write=False)
    return IncrementClassification(mask, jumps)


@dataclass(frozen=True)
class TruncationFunction:
    """Weight ``phi(z)`` in [0, 1] applied to detected jumps.

    ``integral`` optionally gives ``int F(z) phi(z) dz`` in closed form;
    otherwise it is computed by adaptive quadrature.
    """

    phi: Callable[[np.ndarray], np.ndarray]
    integral: Optional[Callable[[JumpDensityFamily, np.ndarray], float]] = None
    identity: bool = False

    def __call__(self, z):
        return self.phi(z)

    def integral_against(self, family: JumpDensityFamily, params: Sequence[float]) -> float:
        p = np.asarray(params, dtype=float)
        if self.integral is not None:
            return float(self.integral(family, p))
        val, _ = integrate.quad(
            lambda z: float(family.density(z, p) * self.phi(z)),
            -np.inf,
            np.inf,
            points=None,
            limit=200,
            epsabs=1e-13,
        )
        return float(val)


NO_TRUNCATION = TruncationFunction(
    phi=lambda z: np.ones_like(np.asarray(z, dtype=float)),
    integral=lambda family, params: family.normalizer(params),
    identity=True,
)


def smooth_cutoff(r_inner: float = 40.0, r_outer: float = 50.0) -> TruncationFunction:
    """``phi = 1`` for ``|z| <= r_inner``, 0 beyond ``r_outer``, C^1 in between."""
    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")

    def phi(z):
        s = np.clip((np.abs(np.asarray(z, dtype=float)) - r_inner) / (r_outer - r_inner), 0.0, 1.0)
        return 1.0 - s * s * (3.0 - 2.0 * s)

    def integral(family, params):
        f = lambda z: float(family.density(z, params) * phi(z))
        total = 0.0
        for a, b in ((-r_outer, -r_inner), (-r_inner, r_inner), (r_inner, r_outer)):
            total += integrate.quad(f, a, b, limit=200, epsabs=1e-14)[0]
        return total

    return TruncationFunction(phi=phi, integral=integral)


def _continuous_terms(obs: Observations, cls: IncrementClassification):
    x_prev = obs.values[:-1][cls.continuous_mask]
    dx = obs.increments[cls.continuous_mask]
    return x_prev, dx


def h1_terms(
    x_prev: np.ndarray,
    dx: np.ndarray,
    h: float,
    model: ModelSpec,
    drift_params: Sequence[float],
    diff_params: Sequence[float],
) -> np.ndarray:
    """Per-increment contributions to H1 (continuous increments only)."""
    a = model.drift(x_prev, drift_params)
    S = model.diffusion(x_prev, diff_params) ** 2
    resid = dx - h * a
    return -0.5 * (np.log(S) + resid * resid / (h * S))


def h1(
    obs: Observations,
    drift_params: Sequence[float],
    diff_params: Sequence[float],
    model: ModelSpec,
    cls: IncrementClassification,
) -> float:
    """Gaussian contrast over the increments classified as continuous.

    The drift is evaluated at the left endpoint of each interval.
    """
    x_prev, dx = _continuous_terms(obs, cls)
    S = model.diffusion(x_prev, diff_params) ** 2
    bad = np.flatnonzero(~(S > 0))
    if bad.size:
        k = int(np.flatnonzero(cls.continuous_mask)[bad[0]]) + 1
        raise LikelihoodError(f"non-positive diffusion S at increment k={k}")
    return float(np.sum(h1_terms(x_prev, dx, obs.h, model, drift_params, diff_params)))


def h2(
    obs: Observations,
    jump_params: Sequence[float],
    lam: float,
    model: ModelSpec,
    cls: IncrementClassification,
    trunc: TruncationFunction = NO_TRUNCATION,
) -> float:
    """Jump contrast: log-intensity plus log-density over detected jumps,
    minus the compensator ``lam * n * h * int F phi``."""
    if not lam > 0:
        raise LikelihoodError("lambda must be positive")
    z = cls.jump_values
    logf = model.jump.log_density(z, np.asarray(jump_params, dtype=float))
    w = trunc(z)
    # phi = 0 entries contribute nothing even where log F = -inf
    active = w > 0
    if np.any(~np.isfinite(logf[active])):
        bad = z[active][~np.isfinite(logf[active])][0]
        raise LikelihoodError(f"jump density vanishes at detected jump {bad}")
    s = float(np.sum((math.log(lam) + logf[active]) * w[active]))
    return s - lam * cls.n * obs.h * trunc.integral_against(model.jump, jump_params)


class LambdaProfile(NamedTuple):
    value: float
    no_jumps: bool


def profile_lambda(
    obs: Observations,
    jump_params: Sequence[float],
    model: ModelSpec,
    cls: IncrementClassification,
    trunc: TruncationFunction = NO_TRUNCATION,
) -> LambdaProfile:
    """Maximizer of H2 in lambda, clamped to the model's lambda bounds."""
    lo, hi = model.lambda_bounds
    J = float(np.sum(trunc(cls.jump_values))) if cls.n_jumps else 0.0
    if J <= 0.0:
        return LambdaProfile(lo, True)
    mass = trunc.integral_against(model.jump, jump_params)
    if not mass > 0:
        raise LikelihoodError("truncated jump density has zero mass")
    lam = J / (cls.n * obs.h * mass)
    return LambdaProfile(min(max(lam, lo), hi), False)


def total(
    obs: Observations,
    params: Sequence[float],
    lam: float,
    model: ModelSpec,
    cls: IncrementClassification,
    trunc: TruncationFunction = NO_TRUNCATION,
) -> float:
    """``H = H1 + H2`` at stacked ``(drift, diffusion, jump)`` parameters."""
    d, s, j = model.split(params)
    return h1(obs, d, s, model, cls) + h2(obs, j, lam, model, cls, trunc)
