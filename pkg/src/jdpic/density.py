"""Transition-density terms of a constant-coefficient jump diffusion.

With zero drift and constant diffusion ``b`` the diffusion transition
density is Gaussian, so the k-jump term of the density expansion collapses
to

    q_k(x, y) = lambda^k h^k / k! * (G_{b^2 h} * F^{*k})(y - x),

where ``G_v`` is the centered normal density with variance ``v`` and ``*``
is convolution. Everything here is computed by adaptive Gauss-Kronrod
quadrature (QUADPACK) split at the kinks of the integrands.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .model import JumpDensityFamily

EPSABS = 1e-14
EPSREL = 1e-10
ROUNDING_SLACK = 1e-12  # relative exceedance attributable to floating point
GAUSS_WINDOW = 12.0  # standard deviations kept around a Gaussian kernel


class QuadratureError(RuntimeError):
    pass


class TailConditionError(ValueError):
    def __init__(self, z: float):
        self.z = z
        super().__init__(f"jump density tail exceeds C exp(-u|z|) at z={z:g}")


@dataclass(frozen=True)
class ConstCoeffModel:
    diff_const: float
    lam: float
    jump: JumpDensityFamily
    jump_params: tuple[float, ...]
    drift_const: float = 0.0

    def __post_init__(self) -> None:
        if not self.diff_const > 0:
            raise ValueError("diff_const must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.drift_const != 0.0:
            raise ValueError("only the zero-drift case is supported")
        object.__setattr__(self, "jump_params", tuple(float(v) for v in self.jump_params))

    def variance(self, h: float) -> float:
        return self.diff_const**2 * h

    def kinks(self) -> tuple[float, ...]:
        # location parameter: Laplace kink, Gaussian center
        return (self.jump_params[0],) if self.jump_params else ()


def _quad(f: Callable[[float], float], a: float, b: float, breaks: Sequence[float] = ()) -> float:
    """Adaptive quadrature on [a, b] (infinite ends allowed), split at breaks."""
    cuts = sorted({float(c) for c in breaks if a < c < b})
    edges = [a, *cuts, b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err, info = integrate.quad(
            f, lo, hi, epsabs=EPSABS, epsrel=EPSREL, limit=400, full_output=1
        )[:3]
        if not math.isfinite(val):
            raise QuadratureError(f"non-finite integral on [{lo}, {hi}]")
        if err > max(1e-12, 1e-7 * abs(val)):
            raise QuadratureError(f"quadrature error {err:.3g} too large on [{lo}, {hi}]")
        total += val
    return total


def _gauss(v: float) -> Callable[[float], float]:
    c = 1.0 / math.sqrt(2.0 * math.pi * v)
    return lambda z: c * math.exp(-0.5 * z * z / v)


def _laplace_scalar(loc: float, scale: float) -> Callable[[float], float]:
    c = 0.5 / scale
    return lambda z: c * math.exp(-abs(z - loc) / scale)


def _gauss_scalar(mu: float, sd: float) -> Callable[[float], float]:
    c = 1.0 / (sd * math.sqrt(2.0 * math.pi))
    return lambda z: c * math.exp(-0.5 * ((z - mu) / sd) ** 2)


# pure-math versions of the built-in families; numpy per call is ~10x slower
_SCALAR = {"jump2_laplace": _laplace_scalar, "jump1_gaussian": _gauss_scalar}


def _scalar_density(m: ConstCoeffModel) -> Callable[[float], float]:
    fast = _SCALAR.get(m.jump.family_id)
    if fast is not None:
        return fast(*m.jump_params)
    params = np.asarray(m.jump_params)
    logf = m.jump.log_density
    return lambda z: math.exp(float(logf(z, params)))


def _support(m: ConstCoeffModel, drop: float = 46.0) -> tuple[float, float]:
    """Interval outside which ``F`` is below ``exp(-drop)`` times its peak."""
    params = np.asarray(m.jump_params)
    c = m.kinks()[0] if m.kinks() else 0.0
    top = float(m.jump.log_density(c, params))
    ends = []
    for sign in (-1.0, 1.0):
        L = 1.0
        while float(m.jump.log_density(c + sign * L, params)) > top - drop:
            L *= 2.0
            if L > 1e6:
                raise QuadratureError("jump density tail too heavy to truncate")
        ends.append(c + sign * L)
    return ends[0], ends[1]


class _Convolutions:
    """Memoized self-convolutions ``F^{*k}(w)`` by nested quadrature."""

    def __init__(self, m: ConstCoeffModel):
        self.f = _scalar_density(m)
        self.kinks = m.kinks()
        self.support = _support(m)
        self._cache = {}

    def power(self, k: int) -> Callable[[float], float]:
        if k == 1:
            return self.f
        if k not in self._cache:
            prev = self.power(k - 1)
            f = self.f
            kinks = self.kinks
            lo, hi = self.support

            @lru_cache(maxsize=200_000)
            def conv(w: float) -> float:
                # F^{*k}(w) = int F(s) F^{*(k-1)}(w - s) ds
                breaks = list(kinks) + [w - (k - 1) * c for c in kinks]
                return _quad(lambda s: f(s) * prev(w - s), lo, hi, breaks)

            self._cache[k] = conv
        return self._cache[k]


@lru_cache(maxsize=64)
def _convolutions(m: ConstCoeffModel) -> _Convolutions:
    return _Convolutions(m)


def _smoothed_single(m: ConstCoeffModel, v: float, z: float) -> float:
    f = _convolutions(m).f
    g = _gauss(v)
    sd = math.sqrt(v)
    return _quad(lambda w: g(z - w) * f(w), z - GAUSS_WINDOW * sd, z + GAUSS_WINDOW * sd, m.kinks())


def gaussian_smoothed(m: ConstCoeffModel, k: int, v: float, z: float) -> float:
    """``(G_v * F^{*k})(z)``.

    For ``k >= 2`` this is ``int F^{*(k-1)}(t) (G_v * F)(z - t) dt``, which
    keeps the inner quadratures side by side rather than nested.
    """
    if k == 1:
        return _smoothed_single(m, v, z)
    conv = _convolutions(m)
    prev = conv.power(k - 1)
    lo, hi = conv.support
    breaks = [(k - 1) * c for c in m.kinks()] + [z - c for c in m.kinks()]
    return _quad(
        lambda t: prev(t) * _smoothed_single(m, v, z - t), (k - 1) * lo, (k - 1) * hi, breaks
    )


def self_convolution(m: ConstCoeffModel, k: int, w: float) -> float:
    """``F^{*k}(w)`` by iterated quadrature."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return _convolutions(m).power(k)(float(w))


def q1_density(m: ConstCoeffModel, h: float, x: float, y: float) -> float:
    """One-jump term: ``lambda h (G_{b^2 h} * F)(y - x)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    return m.lam * h * gaussian_smoothed(m, 1, m.variance(h), y - x)


def qk_density(m: ConstCoeffModel, h: float, k: int, x: float, y: float) -> float:
    """k-jump term: ``lambda^k h^k / k! (G_{b^2 h} * F^{*k})(y - x)``."""
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    if not h > 0:
        raise ValueError("h must be positive")
    return (m.lam * h) ** k / math.factorial(k) * gaussian_smoothed(m, k, m.variance(h), y - x)


def multi_jump_remainder(m: ConstCoeffModel, h: float, x: float, y: float, k_max: int = 3) -> float:
    """``exp(-lambda h) sum_{k=2}^{k_max} q_k``: the two-or-more-jump part."""
    return math.exp(-m.lam * h) * sum(qk_density(m, h, k, x, y) for k in range(2, k_max + 1))


# -- bound certificates ------------------------------------------------------


@dataclass(frozen=True)
class BoundCertificate:
    k: int
    h_values: tuple[float, ...]
    per_h_C: tuple[float, ...]
    empirical_C: float
    max_violation: float
    grid_spec: str
    stability_limit: float = 1.5

    @property
    def stability_ratio(self) -> float:
        return max(self.per_h_C) / min(self.per_h_C)

    @property
    def passed(self) -> bool:
        return (
            math.isfinite(self.empirical_C)
            and self.stability_ratio < self.stability_limit
            and self.max_violation <= ROUNDING_SLACK
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("k,h,empirical_C,max_violation\n")
        for h, c in zip(self.h_values, self.per_h_C):
            buf.write(f"{self.k},{h:.17g},{c:.17g},{self.max_violation:.17g}\n")
        return buf.getvalue()


def check_tail(
    m: ConstCoeffModel, u: float, z_max: float = 50.0, core: float = 10.0, n: int = 1001
) -> float:
    """Return ``log C_F`` with ``F(z) <= C_F exp(-u|z|)`` on a grid up to ``z_max``.

    ``C_F`` is read off the core region ``|z| <= core``; any grid point
    beyond it that needs a larger constant fails the check.
    """
    z = np.linspace(-z_max, z_max, n)
    g = np.asarray(m.jump.log_density(z, np.asarray(m.jump_params))) + u * np.abs(z)
    inner = np.abs(z) <= core
    log_c = float(np.max(g[inner]))
    bad = np.flatnonzero(g > log_c + 1e-9)
    if bad.size:
        raise TailConditionError(float(z[bad[0]]))
    return log_c


def _grid(half_width: float = 10.0, n: int = 201) -> np.ndarray:
    return np.linspace(-half_width, half_width, n)


def certify_ktesti_bound(
    m: ConstCoeffModel,
    k: int,
    h_values: Sequence[float],
    u: float,
    zeta: float,
    n_grid: int = 201,
    half_width: float = 10.0,
) -> BoundCertificate:
    """Empirical constant in ``q_k <= (C h)^k exp(-u zeta |y - x|)``.

    For each ``h`` the smallest admissible ``C`` on the grid is
    ``max_z (q_k e^{u zeta |z|})^{1/k} / h``; the bound is certified when
    that constant is stable across ``h``. ``max_violation`` is the largest
    relative exceedance ``q / bound - 1`` at that constant.
    """
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"zeta={zeta} must lie in (0, 1)")
    if not u > 0:
        raise ValueError("u must be positive")
    check_tail(m, u)
    z = _grid(half_width, n_grid)
    envelope = np.exp(-u * zeta * np.abs(z))
    per_h = []
    values = []
    for h in h_values:
        q = np.array([qk_density(m, h, k, 0.0, float(zi)) for zi in z])
        values.append(q)
        per_h.append(float(np.max((q / envelope) ** (1.0 / k)) / h))
    C = max(per_h)
    viol = max(float(np.max(q / ((C * h) ** k * envelope))) - 1.0 for q, h in zip(values, h_values))
    return BoundCertificate(
        k=k,
        h_values=tuple(float(h) for h in h_values),
        per_h_C=tuple(per_h),
        empirical_C=C,
        max_violation=viol,
        grid_spec=f"x=0, y in [-{half_width:g}, {half_width:g}], {n_grid} points",
    )


def certify_remainder_bound(
    m: ConstCoeffModel,
    h_values: Sequence[float],
    u: float,
    zeta: float,
    n_grid: int = 41,
    half_width: float = 10.0,
) -> BoundCertificate:
    """Same check for the two-or-more-jump remainder against ``C h^2``."""
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"zeta={zeta} must lie in (0, 1)")
    check_tail(m, u)
    z = _grid(half_width, n_grid)
    envelope = np.exp(-u * zeta * np.abs(z))
    per_h, values = [], []
    for h in h_values:
        q = np.array([multi_jump_remainder(m, h, 0.0, float(zi)) for zi in z])
        values.append(q)
        per_h.append(float(np.max(q / envelope)) / h**2)
    C = max(per_h)
    viol = max(float(np.max(q / (C * h**2 * envelope))) - 1.0 for q, h in zip(values, h_values))
    return BoundCertificate(
        k=2,
        h_values=tuple(float(h) for h in h_values),
        per_h_C=tuple(per_h),
        empirical_C=C,
        max_violation=viol,
        grid_spec=f"x=0, y in [-{half_width:g}, {half_width:g}], {n_grid} points, k=2..3",
    )


def scaling_slope(m: ConstCoeffModel, k: int, h_values: Sequence[float], n_grid: int = 201) -> float:
    """Least-squares slope of ``log max_y q_k`` against ``log h``."""
    z = _grid(10.0, n_grid)
    peaks = [max(qk_density(m, h, k, 0.0, float(zi)) for zi in z) for h in h_values]
    slope, _ = np.polyfit(np.log(h_values), np.log(peaks), 1)
    return float(slope)


# -- Gaussian-exponential convolution bound ------------------------------------


def lemma_ratio(a: float, u: float, z: float) -> float:
    """``a^{-1/2} int exp(-u|x|) exp(-(x - z)^2 / a) dx`` divided by ``exp(-u|z|)``."""
    if not a > 0:
        raise ValueError("a must be positive")
    w = GAUSS_WINDOW * math.sqrt(a)
    # factor exp(-u|z|) inside so the far tail stays representable
    f = lambda x: math.exp(-u * (abs(x) - abs(z)) - (x - z) ** 2 / a)
    return _quad(f, z - w, z + w, [0.0]) / math.sqrt(a)


def lemma_ratios(a_values: Sequence[float], u: float, z_grid: Sequence[float]) -> np.ndarray:
    return np.array([[lemma_ratio(a, u, float(z)) for z in z_grid] for a in a_values])


def convolution_lemma_check(a_values: Sequence[float], u: float, z_grid: Sequence[float]) -> float:
    """Largest ratio over all ``(a, z)`` pairs."""
    if any(not a > 0 for a in a_values):
        raise ValueError("a_values must be positive")
    return float(np.max(lemma_ratios(a_values, u, z_grid)))
