"""Euler-Maruyama simulation of the jump diffusion with exact jump placement.

Randomness comes from numpy's counter-based ``Philox`` bit generator keyed by
the 64-bit seed, so paths are reproducible across platforms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .model import ModelSpec


class SimulationError(RuntimeError):
    """A simulated path left the finite reals."""

    def __init__(self, step: int, replication: int | None = None):
        self.step = step
        self.replication = replication
        where = f" in replication {replication}" if replication is not None else ""
        super().__init__(f"non-finite state at fine step {step}{where}")


@dataclass(frozen=True)
class PathConfig:
    n_obs: int
    h: float
    substeps: int = 16
    burn_in_time: float = 0.0
    seed: int = 0
    x0: float = 0.0

    def __post_init__(self) -> None:
        if self.n_obs < 1:
            raise ValueError("n_obs must be positive")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("h must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.burn_in_time < 0:
            raise ValueError("burn_in_time must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_horizon(cls, T: float, h: float, **kw) -> "PathConfig":
        n = round(T / h)
        if abs(n * h - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"T/h = {T / h} is not a whole number")
        return cls(n_obs=n, h=h, **kw)

    @property
    def T(self) -> float:
        return self.n_obs * self.h

    @property
    def n_burn(self) -> int:
        """Burn-in length in whole observation intervals."""
        return int(round(self.burn_in_time / self.h))


@dataclass(frozen=True)
class Observations:
    h: float
    values: np.ndarray
    seed_used: Optional[int] = None
    # jump times within the observed window; None for loaded data
    jump_times: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("need at least two observations")
        if not np.all(np.isfinite(v)):
            raise ValueError("observations must be finite")
        if not self.h > 0:
            raise ValueError("h must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def T(self) -> float:
        return self.n * self.h

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.values.size)

    @property
    def true_jump_count(self) -> Optional[int]:
        return None if self.jump_times is None else int(self.jump_times.size)


@njit(cache=True)
def _rational(c, x):
    return (c[0] + x * (c[1] + x * c[2])) / (1.0 + x * x)


@njit(cache=True)
def _euler_rational(x0, dt, n_steps, stride, drift_c, diff_c, jump_step, jump_frac, marks, normals):
    out = np.empty(n_steps // stride + 1)
    out[0] = x0
    x = x0
    ji = 0
    zi = 0
    n_jumps = jump_step.shape[0]
    for i in range(n_steps):
        done = 0.0
        while ji < n_jumps and jump_step[ji] == i:
            sub = (jump_frac[ji] - done) * dt
            x += _rational(drift_c, x) * sub + _rational(diff_c, x) * math.sqrt(sub) * normals[zi]
            zi += 1
            x += marks[ji]
            done = jump_frac[ji]
            ji += 1
        sub = (1.0 - done) * dt
        x += _rational(drift_c, x) * sub + _rational(diff_c, x) * math.sqrt(sub) * normals[zi]
        zi += 1
        if not math.isfinite(x):
            return out, i
        if (i + 1) % stride == 0:
            out[(i + 1) // stride] = x
    return out, -1


def _euler_generic(x0, dt, n_steps, stride, drift, diffusion, jump_step, jump_frac, marks, normals):
    out = np.empty(n_steps // stride + 1)
    out[0] = x0
    x = float(x0)
    ji = zi = 0
    for i in range(n_steps):
        done = 0.0
        while ji < len(jump_step) and jump_step[ji] == i:
            sub = (jump_frac[ji] - done) * dt
            x += float(drift(x)) * sub + float(diffusion(x)) * math.sqrt(sub) * normals[zi]
            zi += 1
            x += marks[ji]
            done = jump_frac[ji]
            ji += 1
        sub = (1.0 - done) * dt
        x += float(drift(x)) * sub + float(diffusion(x)) * math.sqrt(sub) * normals[zi]
        zi += 1
        if not math.isfinite(x):
            return out, i
        if (i + 1) % stride == 0:
            out[(i + 1) // stride] = x
    return out, -1


def euler_maruyama(
    model: ModelSpec,
    drift_params: Sequence[float],
    diff_params: Sequence[float],
    x0: float,
    dt: float,
    normals: np.ndarray,
    stride: int = 1,
    jump_step: np.ndarray | None = None,
    jump_frac: np.ndarray | None = None,
    marks: np.ndarray | None = None,
) -> np.ndarray:
    """Run the Euler scheme on a fine grid, returning every ``stride``-th state.

    ``normals`` holds one standard normal per fine step plus one per jump
    (a jump splits its fine step in two). Jump ``j`` happens at fraction
    ``jump_frac[j]`` of fine step ``jump_step[j]``.
    """
    if jump_step is None:
        jump_step = np.empty(0, dtype=np.int64)
        jump_frac = np.empty(0)
        marks = np.empty(0)
    n_steps = normals.size - jump_step.size
    if n_steps % stride:
        raise ValueError("stride must divide the number of fine steps")
    args = (float(x0), float(dt), int(n_steps), int(stride))
    jumps = (
        np.ascontiguousarray(jump_step, dtype=np.int64),
        np.ascontiguousarray(jump_frac, dtype=float),
        np.ascontiguousarray(marks, dtype=float),
        np.ascontiguousarray(normals, dtype=float),
    )
    if model.drift.powers is not None and model.diffusion.powers is not None:
        out, bad = _euler_rational(
            *args,
            model.drift.rational_numerator(drift_params),
            model.diffusion.rational_numerator(diff_params),
            *jumps,
        )
    else:
        dp = np.asarray(drift_params, dtype=float)
        sp = np.asarray(diff_params, dtype=float)
        out, bad = _euler_generic(
            *args, lambda x: model.drift(x, dp), lambda x: model.diffusion(x, sp), *jumps
        )
    if bad >= 0:
        raise SimulationError(int(bad))
    return out


def _check_inputs(model: ModelSpec, params, lam: float) -> tuple[np.ndarray, ...]:
    drift_p, diff_p, jump_p = model.split(params)
    for name, box, p in (
        ("drift", model.drift_box, drift_p),
        ("diffusion", model.diffusion_box, diff_p),
        ("jump", model.jump_box, jump_p),
    ):
        if not box.contains(p):
            raise ValueError(f"{name} parameters {p} outside their box")
    lo, hi = model.lambda_bounds
    # lambda == 0 switches jumps off entirely
    if lam != 0.0 and not lo <= lam <= hi:
        raise ValueError(f"lambda={lam} outside [{lo}, {hi}]")
    return drift_p, diff_p, jump_p


def simulate_path(
    model: ModelSpec, true_params: Sequence[float], lam: float, cfg: PathConfig
) -> Observations:
    """Simulate one path and return the observations at multiples of ``h``.

    The jump count over burn-in plus horizon is Poisson, jump times are
    uniform order statistics, and every jump time becomes a node of the
    fine Euler grid.
    """
    drift_p, diff_p, jump_p = _check_inputs(model, true_params, lam)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    n_total = cfg.n_burn + cfg.n_obs
    horizon = n_total * cfg.h
    dt = cfg.h / cfg.substeps
    n_steps = n_total * cfg.substeps

    n_jumps = int(rng.poisson(lam * horizon)) if lam > 0 else 0
    times = np.sort(rng.uniform(0.0, horizon, size=n_jumps))
    marks = np.asarray(model.jump.sampler(jump_p, rng, n_jumps), dtype=float)
    normals = rng.standard_normal(n_steps + n_jumps)

    pos = times / dt
    step = np.minimum(np.floor(pos).astype(np.int64), n_steps - 1)
    frac = np.clip(pos - step, 0.0, 1.0)

    out = euler_maruyama(
        model, drift_p, diff_p, cfg.x0, dt, normals, cfg.substeps, step, frac, marks
    )
    burn_t = cfg.n_burn * cfg.h
    observed_jumps = times[times >= burn_t] - burn_t
    return Observations(
        h=cfg.h,
        values=out[cfg.n_burn :],
        seed_used=cfg.seed,
        jump_times=observed_jumps,
    )


def simulate_replications(
    model: ModelSpec,
    params: Sequence[float],
    lam: float,
    cfg: PathConfig,
    n_rep: int,
) -> list[Observations]:
    """Replication ``r`` (1-based) is simulated with seed ``cfg.seed + r``."""
    if n_rep < 1:
        raise ValueError("n_rep must be >= 1")
    paths = []
    for r in range(1, n_rep + 1):
        try:
            paths.append(simulate_path(model, params, lam, replication_config(cfg, r)))
        except SimulationError as err:
            raise SimulationError(err.step, replication=r) from err
    return paths


def replication_config(cfg: PathConfig, r: int) -> PathConfig:
    return PathConfig(
        n_obs=cfg.n_obs,
        h=cfg.h,
        substeps=cfg.substeps,
        burn_in_time=cfg.burn_in_time,
        seed=(cfg.seed + r) % 2**64,
        x0=cfg.x0,
    )


def format_path_csv(obs: Observations) -> str:
    buf = io.StringIO()
    buf.write("t,x\n")
    for t, x in zip(obs.times, obs.values):
        buf.write(f"{t:.17g},{x:.17g}\n")
    return buf.getvalue()


def write_path_csv(obs: Observations, path: str | Path) -> None:
    Path(path).write_text(format_path_csv(obs))


def read_path_csv(path: str | Path) -> Observations:
    """Load a ``t,x`` CSV; the grid must be equally spaced."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["t", "x"]:
            raise ValueError(f"{path}: expected header 't,x'")
        rows = [(float(t), float(x)) for t, x in reader]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two rows")
    t = np.array([r[0] for r in rows])
    x = np.array([r[1] for r in rows])
    steps = np.diff(t)
    h = float((t[-1] - t[0]) / (t.size - 1))
    if not h > 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(t[-1])):
        raise ValueError(f"{path}: observation times are not equally spaced")
    return Observations(h=h, values=x)
