"""Parametric coefficient families, parameter boxes and candidate models.

All builtin coefficient families are rational in the state,

    c(x, p) = sum_j p_j * x**k_j / (1 + x**2),

which lets the simulator hand plain polynomial coefficients to a compiled
Euler loop. Jump densities are the Gaussian and the Laplace location-scale
families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ParameterBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("box bounds must have the same length")
        for a, b in zip(lo, hi):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError("box bounds must be finite")
            if not a < b:
                raise ValueError(f"box lower bound {a} is not below upper bound {b}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, dim: int, lo: float, hi: float) -> "ParameterBox":
        return cls((lo,) * dim, (hi,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, params: Sequence[float], closed: bool = True) -> bool:
        p = np.asarray(params, dtype=float)
        if p.shape != (self.dim,):
            return False
        if closed:
            return bool(np.all(p >= self.lo) and np.all(p <= self.hi))
        return bool(np.all(p > self.lo) and np.all(p < self.hi))

    def widened(self, eps: float) -> "ParameterBox":
        return ParameterBox(tuple(self.lo - eps), tuple(self.hi + eps))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lo, self.hi, size=shape)


@dataclass(frozen=True)
class CoefficientFamily:
    """Drift or diffusion coefficient family ``c(x, params)``.

    ``evaluator`` and ``derivative_evaluator`` must broadcast over ``x``.
    When ``powers`` is set, the family is the rational form
    ``sum_j p_j x**powers[j] / (1 + x**2)`` and the simulator can use the
    compiled path.
    """

    family_id: str
    param_dim: int
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    derivative_evaluator: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    powers: Optional[tuple[int, ...]] = None
    positive_lower_bound: Optional[float] = None

    def __call__(self, x, params):
        return self.evaluator(x, np.asarray(params, dtype=float))

    def basis(self, x: np.ndarray) -> np.ndarray:
        """Design matrix ``G`` with ``c(x, p) = G @ p`` for rational families."""
        if self.powers is None:
            raise TypeError(f"family {self.family_id!r} is not linear in its parameters")
        x = np.asarray(x, dtype=float)
        den = 1.0 + x * x
        return np.stack([x**k / den for k in self.powers], axis=-1)

    def rational_numerator(self, params: Sequence[float]) -> np.ndarray:
        """Coefficients ``(c0, c1, c2)`` of the numerator ``c0 + c1 x + c2 x^2``."""
        if self.powers is None:
            raise TypeError(f"family {self.family_id!r} is not rational")
        out = np.zeros(3)
        for p, k in zip(params, self.powers):
            out[k] += p
        return out


def rational_family(
    family_id: str, powers: Sequence[int], positive_lower_bound: float | None = None
) -> CoefficientFamily:
    powers = tuple(int(k) for k in powers)
    if any(k not in (0, 1, 2) for k in powers):
        raise ValueError("rational families use numerator powers 0, 1, 2")

    def evaluator(x, params):
        x = np.asarray(x, dtype=float)
        num = np.zeros_like(x)
        for p, k in zip(params, powers):
            num = num + p * x**k
        return num / (1.0 + x * x)

    def derivative(x, params):
        x = np.asarray(x, dtype=float)
        den = 1.0 + x * x
        num = np.zeros_like(x)
        dnum = np.zeros_like(x)
        for p, k in zip(params, powers):
            num = num + p * x**k
            if k > 0:
                dnum = dnum + p * k * x ** (k - 1)
        return (dnum * den - 2.0 * x * num) / (den * den)

    return CoefficientFamily(
        family_id=family_id,
        param_dim=len(powers),
        evaluator=evaluator,
        derivative_evaluator=derivative,
        powers=powers,
        positive_lower_bound=positive_lower_bound,
    )


@dataclass(frozen=True)
class JumpDensityFamily:
    """Location-scale jump-size density ``F(z; params)``.

    ``tail_rate(params)`` is the exponent ``c`` in ``log F(z) <= C - c|z|``;
    ``None`` marks a tail lighter than any exponential.
    """

    family_id: str
    param_dim: int
    log_density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, np.random.Generator, int], np.ndarray]
    normalizer: Callable[[np.ndarray], float]
    tail_rate: Callable[[np.ndarray], Optional[float]] = lambda params: None

    def density(self, z, params):
        return np.exp(self.log_density(z, np.asarray(params, dtype=float)))


_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _gauss_logpdf(z, params):
    mu, sd = params[0], params[1]
    u = (np.asarray(z, dtype=float) - mu) / sd
    return -0.5 * u * u - math.log(sd) - _LOG_SQRT_2PI


def _laplace_logpdf(z, params):
    loc, scale = params[0], params[1]
    return -np.abs(np.asarray(z, dtype=float) - loc) / scale - math.log(2.0 * scale)


GAUSSIAN_JUMP = JumpDensityFamily(
    family_id="jump1_gaussian",
    param_dim=2,
    log_density=_gauss_logpdf,
    sampler=lambda params, rng, size: rng.normal(params[0], params[1], size=size),
    normalizer=lambda params: 1.0,
)

# Laplace(loc, scale) normalized as (1/(2 s)) exp(-|z - loc| / s).
LAPLACE_JUMP = JumpDensityFamily(
    family_id="jump2_laplace",
    param_dim=2,
    log_density=_laplace_logpdf,
    sampler=lambda params, rng, size: rng.laplace(params[0], params[1], size=size),
    normalizer=lambda params: 1.0,
    tail_rate=lambda params: 1.0 / float(params[1]),
)

DRIFT_FAMILIES: dict[int, CoefficientFamily] = {
    1: rational_family("drift1", (2, 1, 0)),
    2: rational_family("drift2", (2, 0)),
    3: rational_family("drift3", (2,)),
}

# Diffusion 1 keeps |b12| <= 0.1 so that, with b11, b13 >= 0.1, the numerator
# minus 0.05 (1 + x^2) has non-positive discriminant: b >= 0.05 everywhere.
DIFFUSION_FAMILIES: dict[int, CoefficientFamily] = {
    1: rational_family("diffusion1", (2, 1, 0), positive_lower_bound=0.05),
    2: rational_family("diffusion2", (2, 0), positive_lower_bound=0.1),
}

JUMP_FAMILIES: dict[int, JumpDensityFamily] = {1: GAUSSIAN_JUMP, 2: LAPLACE_JUMP}

DRIFT_BOXES: dict[int, ParameterBox] = {
    k: ParameterBox.uniform(f.param_dim, -10.0, 10.0) for k, f in DRIFT_FAMILIES.items()
}
DIFFUSION_BOXES: dict[int, ParameterBox] = {
    1: ParameterBox((0.1, -0.1, 0.1), (10.0, 0.1, 10.0)),
    2: ParameterBox((0.1, 0.1), (10.0, 10.0)),
}
JUMP_BOXES: dict[int, ParameterBox] = {
    1: ParameterBox((-5.0, 0.1), (5.0, 10.0)),
    2: ParameterBox((-5.0, 0.1), (5.0, 10.0)),
}
LAMBDA_BOUNDS = (0.1, 10.0)


@dataclass(frozen=True)
class ModelSpec:
    drift: CoefficientFamily
    drift_box: ParameterBox
    diffusion: CoefficientFamily
    diffusion_box: ParameterBox
    jump: JumpDensityFamily
    jump_box: ParameterBox
    lambda_bounds: tuple[float, float] = LAMBDA_BOUNDS
    # (drift, diffusion, jump) indices within the builtin candidate set
    label: tuple[int, int, int] = field(default=(0, 0, 0))

    def __post_init__(self) -> None:
        lo, hi = (float(v) for v in self.lambda_bounds)
        if not (0.0 < lo < hi < math.inf):
            raise ValueError("lambda bounds must satisfy 0 < low < high < inf")
        object.__setattr__(self, "lambda_bounds", (lo, hi))
        for fam, box in (
            (self.drift, self.drift_box),
            (self.diffusion, self.diffusion_box),
            (self.jump, self.jump_box),
        ):
            if fam.param_dim != box.dim:
                raise ValueError(f"box dimension does not match family {fam.family_id!r}")

    @property
    def p_drift(self) -> int:
        return self.drift.param_dim

    @property
    def p_diffusion(self) -> int:
        return self.diffusion.param_dim

    @property
    def p_jump(self) -> int:
        return self.jump.param_dim

    @property
    def dim(self) -> int:
        return self.p_drift + self.p_diffusion + self.p_jump

    @property
    def name(self) -> str:
        return "drift{}+diffusion{}+jump{}".format(*self.label)

    def split(self, params: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split a stacked (drift, diffusion, jump) vector into its blocks."""
        p = np.asarray(params, dtype=float)
        if p.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {p.shape}")
        i, j = self.p_drift, self.p_drift + self.p_diffusion
        return p[:i], p[i:j], p[j:]


def candidate(drift: int, diffusion: int, jump: int) -> ModelSpec:
    return ModelSpec(
        drift=DRIFT_FAMILIES[drift],
        drift_box=DRIFT_BOXES[drift],
        diffusion=DIFFUSION_FAMILIES[diffusion],
        diffusion_box=DIFFUSION_BOXES[diffusion],
        jump=JUMP_FAMILIES[jump],
        jump_box=JUMP_BOXES[jump],
        label=(drift, diffusion, jump),
    )


TRUE_PARAMS = np.array([-1.0, 2.0, 3.0, 0.0, 2.0])
TRUE_LAMBDA = 1.0


def builtin_true_model() -> tuple[ModelSpec, np.ndarray, float]:
    """Data-generating model: drift 3, diffusion 2, Laplace jumps.

    Returns the model, the stacked parameter vector
    ``(theta31, beta21, beta22, loc, scale)`` and the jump intensity.
    """
    return candidate(3, 2, 2), TRUE_PARAMS.copy(), TRUE_LAMBDA


def builtin_candidates() -> list[ModelSpec]:
    """All 3 x 2 x 2 builtin combinations, ordered drift, diffusion, jump."""
    return [
        candidate(d, s, j)
        for d in sorted(DRIFT_FAMILIES)
        for s in sorted(DIFFUSION_FAMILIES)
        for j in sorted(JUMP_FAMILIES)
    ]


@dataclass(frozen=True)
class NestedMap:
    """Affine embedding ``big = F @ small + c`` with orthonormal columns."""

    embed_matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        F = np.atleast_2d(np.asarray(self.embed_matrix, dtype=float))
        c = np.asarray(self.offset, dtype=float).reshape(-1)
        if F.shape[0] != c.shape[0]:
            raise ValueError("offset length must match embed_matrix rows")
        if not F.shape[1] < F.shape[0]:
            raise ValueError("embedding must strictly increase the dimension")
        if np.max(np.abs(F.T @ F - np.eye(F.shape[1]))) >= 1e-12:
            raise ValueError("embed_matrix columns are not orthonormal")
        F.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "embed_matrix", F)
        object.__setattr__(self, "offset", c)

    @property
    def small_dim(self) -> int:
        return self.embed_matrix.shape[1]

    @property
    def big_dim(self) -> int:
        return self.embed_matrix.shape[0]


def embed_params(nested: NestedMap | None, small_params: Sequence[float]) -> np.ndarray:
    """Map parameters of the smaller family into the bigger one.

    ``nested=None`` is the identity map between a family and itself.
    """
    p = np.asarray(small_params, dtype=float).reshape(-1)
    if nested is None:
        return p.copy()
    if p.shape[0] != nested.small_dim:
        raise ValueError(
            f"expected {nested.small_dim} small-model parameters, got {p.shape[0]}"
        )
    return nested.embed_matrix @ p + nested.offset


def _selector(rows: int, picks: Sequence[int]) -> NestedMap:
    F = np.zeros((rows, len(picks)))
    for col, row in enumerate(picks):
        F[row, col] = 1.0
    return NestedMap(F, np.zeros(rows))


# keys are (kind, small index, big index)
NESTED_MAPS: dict[tuple[str, int, int], NestedMap] = {
    ("drift", 3, 2): _selector(2, [0]),
    ("drift", 2, 1): _selector(3, [0, 2]),
    ("drift", 3, 1): _selector(3, [0]),
    ("diffusion", 2, 1): _selector(3, [0, 2]),
}
