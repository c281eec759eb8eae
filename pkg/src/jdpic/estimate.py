"""Quasi-maximum likelihood fitting and the empirical information matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .model import ModelSpec, ParameterBox
from .quasilik import (
    NO_TRUNCATION,
    IncrementClassification,
    ThresholdRule,
    TruncationFunction,
    classify,
    h1,
    h2,
    profile_lambda,
)
from .simulate import Observations


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_evaluations: int = 2000  # per restart
    tolerance: float = 1e-8  # simplex diameter, in parameter units
    initial_step: float = 1.0  # simplex edge in logit coordinates
    corner_scale: float = 0.5
    trunc: TruncationFunction = NO_TRUNCATION


@dataclass(frozen=True)
class FitResult:
    drift_params: np.ndarray
    diff_params: np.ndarray
    jump_params: np.ndarray
    lambda_hat: float
    h1_value: float
    h2_value: float
    h_total: float
    converged: bool
    n_evaluations: int
    n_detected_jumps: int
    pic: Optional[float] = None
    no_jumps_detected: bool = False
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.drift_params, self.diff_params, self.jump_params])

    def with_pic(self, value: float) -> "FitResult":
        return replace(self, pic=float(value))


# -- box-constrained simplex search --------------------------------------


class LogitBox:
    """Bijection between R^p and the open box, coordinate-wise logistic."""

    def __init__(self, box: ParameterBox):
        self.lo = box.lo
        self.width = box.hi - box.lo

    def to_box(self, y: np.ndarray) -> np.ndarray:
        # 0.5 (1 + tanh(y/2)) is the logistic function without overflow
        return self.lo + self.width * 0.5 * (1.0 + np.tanh(0.5 * np.asarray(y, dtype=float)))

    def from_box(self, x: np.ndarray) -> np.ndarray:
        u = (np.asarray(x, dtype=float) - self.lo) / self.width
        u = np.clip(u, 1e-300, 1.0 - 1e-16)
        return np.log(u) - np.log1p(-u)


@dataclass
class SimplexResult:
    x: np.ndarray
    value: float
    converged: bool
    n_evaluations: int


def nelder_mead_max(
    objective: Callable[[np.ndarray], float],
    box: ParameterBox,
    start: np.ndarray,
    max_evaluations: int,
    tolerance: float,
    initial_step: float = 1.0,
) -> SimplexResult:
    """Maximize ``objective`` over ``box`` by Nelder-Mead in logit coordinates.

    Non-finite objective values count as ``-inf`` and are never accepted.
    Convergence means the simplex diameter, measured in the original
    parameter units, fell below ``tolerance`` within the budget.
    """
    tr = LogitBox(box)
    p = box.dim
    n_eval = 0

    def f(y):
        nonlocal n_eval
        n_eval += 1
        try:
            v = float(objective(tr.to_box(y)))
        except (ValueError, FloatingPointError, ZeroDivisionError):
            return math.inf
        return -v if math.isfinite(v) else math.inf

    y0 = tr.from_box(start)
    sim = np.vstack([y0] + [y0 + initial_step * e for e in np.eye(p)])
    fs = np.array([f(y) for y in sim])

    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        xs = tr.to_box(sim)
        diam = float(np.max(np.abs(xs[:, None, :] - xs[None, :, :])))
        if diam < tolerance:
            converged = True
            break
        if n_eval >= max_evaluations:
            break
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        sim[1:] = sim[0] + 0.5 * (sim[1:] - sim[0])
        fs[1:] = [f(y) for y in sim[1:]]

    best = tr.to_box(sim[0])
    return SimplexResult(best, -float(fs[0]), converged, n_eval)


def restart_points(box: ParameterBox, corner_scale: float = 0.5) -> list[np.ndarray]:
    """Box center plus four corners pulled toward the center."""
    c = box.center
    half = 0.5 * (box.hi - box.lo) * corner_scale
    p = box.dim
    alt = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(p)])
    signs = [np.ones(p), -np.ones(p), alt, -alt]
    return [c] + [c + s * half for s in signs]


def maximize_with_restarts(
    objective: Callable[[np.ndarray], float], box: ParameterBox, opts: FitOptions
) -> tuple[SimplexResult, int, list[str]]:
    best: Optional[SimplexResult] = None
    total = 0
    notes = []
    for i, start in enumerate(restart_points(box, opts.corner_scale)):
        res = nelder_mead_max(
            objective, box, start, opts.max_evaluations, opts.tolerance, opts.initial_step
        )
        total += res.n_evaluations
        if not math.isfinite(res.value):
            notes.append(f"restart {i}: no finite objective value")
            continue
        # a converged restart always beats an unconverged one
        if best is None or (res.converged, res.value) > (best.converged, best.value):
            best = res
    if best is None:
        raise FitError("all restarts failed to produce a finite objective")
    return best, total, notes


# -- objective builders ---------------------------------------------------


def h1_objective(model: ModelSpec, obs: Observations, cls: IncrementClassification):
    """Closure ``(drift, diffusion) stacked -> H1`` with the data pre-sliced."""
    x_prev = obs.values[:-1][cls.continuous_mask]
    dx = obs.increments[cls.continuous_mask]
    h = obs.h
    p = model.p_drift

    if model.drift.powers is not None and model.diffusion.powers is not None:
        Ga = np.ascontiguousarray(model.drift.basis(x_prev))
        Gb = np.ascontiguousarray(model.diffusion.basis(x_prev))

        def linear_objective(params):
            b = Gb @ params[p:]
            S = b * b
            if not np.all(S > 0):
                return -math.inf
            r = dx - h * (Ga @ params[:p])
            return -0.5 * float(np.sum(np.log(S) + r * r / (h * S)))

        return linear_objective

    def objective(params):
        a = model.drift(x_prev, params[:p])
        S = model.diffusion(x_prev, params[p:]) ** 2
        if not np.all(S > 0):
            return -math.inf
        r = dx - h * a
        return -0.5 * float(np.sum(np.log(S) + r * r / (h * S)))

    return objective


def _stacked_box(*boxes: ParameterBox) -> ParameterBox:
    return ParameterBox(
        tuple(v for b in boxes for v in b.lower), tuple(v for b in boxes for v in b.upper)
    )


@dataclass(frozen=True)
class StageResult:
    params: np.ndarray
    value: float
    converged: bool
    n_evaluations: int
    notes: tuple[str, ...] = ()


def fit_continuous(
    model: ModelSpec,
    obs: Observations,
    cls: IncrementClassification,
    opts: FitOptions = FitOptions(),
) -> StageResult:
    """Maximize H1 jointly over the stacked (drift, diffusion) parameters."""
    box = _stacked_box(model.drift_box, model.diffusion_box)
    res, n_eval, notes = maximize_with_restarts(h1_objective(model, obs, cls), box, opts)
    return StageResult(res.x, res.value, res.converged, n_eval, tuple(notes))


def fit_jumps(
    model: ModelSpec,
    obs: Observations,
    cls: IncrementClassification,
    opts: FitOptions = FitOptions(),
) -> StageResult:
    """Maximize H2 over the jump parameters with the intensity profiled."""
    trunc = opts.trunc

    def objective(jp):
        lam = profile_lambda(obs, jp, model, cls, trunc).value
        return h2(obs, jp, lam, model, cls, trunc)

    res, n_eval, notes = maximize_with_restarts(objective, model.jump_box, opts)
    return StageResult(res.x, res.value, res.converged, n_eval, tuple(notes))


def fit(
    model: ModelSpec,
    obs: Observations,
    rule: ThresholdRule,
    opts: FitOptions = FitOptions(),
    cls: IncrementClassification | None = None,
) -> FitResult:
    """Two-stage QMLE: (drift, diffusion) by H1, then the jump law by H2.

    The split is exact only because no builtin candidate shares
    parameters between the drift and the jump density; a model with
    shared parameters would need a joint search.
    """
    if cls is None:
        cls = classify(obs, rule)
    s1 = fit_continuous(model, obs, cls, opts)
    s2 = fit_jumps(model, obs, cls, opts)
    drift_p = s1.params[: model.p_drift]
    diff_p = s1.params[model.p_drift :]
    prof = profile_lambda(obs, s2.params, model, cls, opts.trunc)
    diag = [f"stage1 {n}" for n in s1.notes] + [f"stage2 {n}" for n in s2.notes]
    if prof.no_jumps:
        diag.append("no jumps detected; lambda set to its lower bound")

    v1 = h1(obs, drift_p, diff_p, model, cls)
    v2 = h2(obs, s2.params, prof.value, model, cls, opts.trunc)
    return FitResult(
        drift_params=drift_p,
        diff_params=diff_p,
        jump_params=s2.params,
        lambda_hat=prof.value,
        h1_value=v1,
        h2_value=v2,
        h_total=v1 + v2,
        converged=s1.converged and s2.converged,
        n_evaluations=s1.n_evaluations + s2.n_evaluations,
        n_detected_jumps=cls.n_jumps,
        no_jumps_detected=prof.no_jumps,
        diagnostics=tuple(diag),
    )


# -- information matrix ---------------------------------------------------


@dataclass(frozen=True)
class InformationEstimate:
    gamma_sigma: np.ndarray
    gamma_theta_star: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        ps, pt = self.gamma_sigma.shape[0], self.gamma_theta_star.shape[0]
        out = np.zeros((ps + pt, ps + pt))
        out[:ps, :ps] = self.gamma_sigma
        out[ps:, ps:] = self.gamma_theta_star
        return out


def _fd_param_gradient(fn, params: np.ndarray, rel_step: float) -> np.ndarray:
    """Central differences of ``fn(params)`` (an array over x) per parameter."""
    cols = []
    for i in range(params.size):
        step = rel_step * max(abs(params[i]), 1.0)
        up, dn = params.copy(), params.copy()
        up[i] += step
        dn[i] -= step
        cols.append((fn(up) - fn(dn)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def information_matrix(
    model: ModelSpec,
    obs: Observations,
    fit_result: FitResult,
    rule: ThresholdRule | None = None,
    rel_step: float = 1e-5,
) -> InformationEstimate:
    """Plug-in estimate of the asymptotic information at the fitted point.

    State averages use the empirical law of ``X_{t_{k-1}}``; the jump
    score integral is computed by adaptive quadrature.
    """
    x = obs.values[:-1]
    n = x.size
    sig = np.asarray(fit_result.diff_params, dtype=float)
    th = np.asarray(fit_result.drift_params, dtype=float)
    jp = np.asarray(fit_result.jump_params, dtype=float)
    lam = float(fit_result.lambda_hat)

    S = model.diffusion(x, sig) ** 2
    dS = _fd_param_gradient(lambda s: model.diffusion(x, s) ** 2, sig, rel_step)
    w = dS / S[:, None]
    g_sigma = 0.5 * (w.T @ w) / n

    da = _fd_param_gradient(lambda t: model.drift(x, t), th, rel_step)
    g_drift = (da / S[:, None]).T @ da / n

    # jump block over (jump params, lambda) with f = lambda * F
    def scores(z):
        dlogF = _fd_param_gradient(
            lambda q: model.jump.log_density(np.atleast_1d(z), q), jp, rel_step
        )[0]
        return np.append(dlogF, 1.0 / lam)

    def integrand(z, i, j):
        s = scores(z)
        return lam * float(model.jump.density(z, jp)) * s[i] * s[j]

    q = jp.size + 1
    g_jump = np.zeros((q, q))
    mid = float(jp[0]) if jp.size else 0.0  # Laplace kink sits at the location
    for i in range(q):
        for j in range(i, q):
            total = 0.0
            for a, b in ((-np.inf, mid), (mid, np.inf)):
                val, err, info = integrate.quad(
                    integrand, a, b, args=(i, j), limit=200, epsabs=1e-12, full_output=1
                )[:3]
                if not math.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
                    raise FitError(f"jump score quadrature did not converge for entry ({i}, {j})")
                total += val
            g_jump[i, j] = g_jump[j, i] = total

    pt = th.size
    g_theta = np.zeros((pt + q, pt + q))
    g_theta[:pt, :pt] = g_drift
    g_theta[pt:, pt:] = g_jump
    return InformationEstimate(
        gamma_sigma=0.5 * (g_sigma + g_sigma.T), gamma_theta_star=0.5 * (g_theta + g_theta.T)
    )
