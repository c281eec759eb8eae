"""Predictive information criterion and model selection.

``PIC = -2 H(alpha_hat, lambda_hat) + 2 dim(Theta)``. The intensity is
shared by every candidate, so its parameter is left out of ``dim``; the
constant would cancel in any comparison anyway.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .estimate import FitError, FitOptions, FitResult, fit
from .model import ModelSpec
from .quasilik import LikelihoodError, ThresholdRule, classify
from .simulate import Observations

log = logging.getLogger(__name__)


class SelectionError(RuntimeError):
    pass


def criterion(log_quasi_likelihood: float, dim: int) -> float:
    return -2.0 * float(log_quasi_likelihood) + 2.0 * int(dim)


def pic_value(fit_result: FitResult, model: ModelSpec) -> float:
    if not fit_result.converged:
        raise ValueError("PIC needs a converged fit")
    return criterion(fit_result.h_total, model.dim)


@dataclass(frozen=True)
class SelectionOutcome:
    chosen_index: int
    pic_values: np.ndarray  # NaN where the candidate failed to fit
    ties_broken: bool
    fits: tuple = field(default=(), compare=False)
    failures: dict = field(default_factory=dict, compare=False)


def argmin_with_ties(values: Sequence[float], dims: Sequence[int]) -> tuple[int, bool]:
    """Index of the smallest finite value; ties go to the smaller dimension,
    then to the smaller index."""
    vals = np.asarray(values, dtype=float)
    ok = np.flatnonzero(np.isfinite(vals))
    if ok.size == 0:
        raise SelectionError("no candidate has a finite criterion value")
    best = vals[ok].min()
    tied = [int(i) for i in ok if vals[i] == best]
    chosen = min(tied, key=lambda i: (dims[i], i))
    return chosen, len(tied) > 1


def select(
    candidates: Sequence[ModelSpec],
    obs: Observations,
    rule: ThresholdRule,
    opts: FitOptions = FitOptions(),
) -> SelectionOutcome:
    if not candidates:
        raise SelectionError("no candidates given")
    cls = classify(obs, rule)
    pics = np.full(len(candidates), np.nan)
    fits: list[FitResult | None] = []
    failures: dict[int, str] = {}
    for i, model in enumerate(candidates):
        try:
            res = fit(model, obs, rule, opts, cls=cls)
            value = pic_value(res, model)
        except (FitError, LikelihoodError, ValueError) as err:
            failures[i] = str(err)
            log.warning("candidate %d (%s) excluded: %s", i, model.name, err)
            fits.append(None)
            continue
        pics[i] = value
        fits.append(res.with_pic(value))
    if len(failures) == len(candidates):
        raise SelectionError(f"every candidate failed to fit: {failures}")
    chosen, tied = argmin_with_ties(pics, [m.dim for m in candidates])
    pics.setflags(write=False)
    return SelectionOutcome(chosen, pics, tied, tuple(fits), failures)


def chi2_tail(dof: int, x: float) -> float:
    """``P(chi2(dof) > x)`` through the regularized upper incomplete gamma."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * x))


def overfit_probability(p_big: int, p_small: int) -> float:
    """Limit probability that PIC prefers a redundant nested super-model."""
    if not p_big > p_small:
        raise ValueError("p_big must exceed p_small")
    k = p_big - p_small
    return chi2_tail(k, 2.0 * k)
