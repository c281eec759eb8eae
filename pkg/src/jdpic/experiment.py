"""Monte Carlo reproduction of the model-selection study.

Each replication simulates one path of the true model, fits the six
drift/diffusion combinations on H1 and the two jump laws on H2, and records
which candidate minimizes the corresponding criterion.
"""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimate import FitError, FitOptions, fit_continuous, fit_jumps
from .model import (
    DIFFUSION_FAMILIES,
    DRIFT_FAMILIES,
    JUMP_FAMILIES,
    builtin_true_model,
    candidate,
)
from .pic import argmin_with_ties, criterion
from .quasilik import LikelihoodError, ThresholdRule, classify
from .simulate import PathConfig, SimulationError, simulate_path

log = logging.getLogger(__name__)

CONFIG_KEYS = ("scenarios", "n_rep", "rho", "seed", "candidates", "output")
DEFAULT_SCENARIOS = ((30.0, 0.05), (50.0, 0.025), (100.0, 0.01))
# keep per-scenario seed streams disjoint
SCENARIO_SEED_STRIDE = 2**32


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple[tuple[float, float], ...] = DEFAULT_SCENARIOS
    n_rep: int = 1000
    rho: float = 0.4
    seed: int = 0
    candidate_set: str = "section3"
    output_path: Optional[str] = None
    threshold_scale: float = 1.0
    burn_in_time: float = 0.0
    substeps: int = 16
    joint: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_rep < 1:
            raise ValueError("n_rep must be >= 1")
        if self.candidate_set != "section3":
            raise ValueError(f"unknown candidate set {self.candidate_set!r}")
        scen = tuple((float(T), float(h)) for T, h in self.scenarios)
        if not scen:
            raise ValueError("at least one scenario is required")
        for T, h in scen:
            if not (T > 0 and h > 0):
                raise ValueError(f"scenario ({T}, {h}) must be positive")
            if abs(T / h - round(T / h)) > 1e-9 * max(1.0, T / h):
                raise ValueError(f"scenario ({T}, {h}): T/h is not a whole number")
        object.__setattr__(self, "scenarios", scen)
        ThresholdRule(self.rho, self.threshold_scale)

    @property
    def rule(self) -> ThresholdRule:
        return ThresholdRule(self.rho, self.threshold_scale)


@dataclass(frozen=True)
class SelectionTable:
    scenario: tuple[float, float]
    drift_diffusion_counts: np.ndarray  # (3, 2): drift 1..3 x diffusion 1..2
    jump_counts: np.ndarray  # (2,): jump 1..2
    n_rep: int
    drift_diffusion_failures: int = 0
    jump_failures: int = 0
    joint_counts: Optional[np.ndarray] = None  # (3, 2, 2)
    joint_failures: int = 0

    @property
    def degraded(self) -> bool:
        worst = max(self.drift_diffusion_failures, self.jump_failures)
        return worst > 0.05 * self.n_rep


@dataclass(frozen=True)
class ReplicationOutcome:
    drift_diffusion: Optional[tuple[int, int]]
    jump: Optional[int]
    joint: Optional[tuple[int, int, int]]
    notes: tuple[str, ...] = field(default=())


DD_GRID = [(d, s) for d in sorted(DRIFT_FAMILIES) for s in sorted(DIFFUSION_FAMILIES)]
JUMP_GRID = sorted(JUMP_FAMILIES)


def run_replication(
    T: float, h: float, seed: int, cfg: ExperimentConfig, opts: FitOptions = FitOptions()
) -> ReplicationOutcome:
    model, params, lam = builtin_true_model()
    path_cfg = PathConfig.from_horizon(
        T, h, substeps=cfg.substeps, burn_in_time=cfg.burn_in_time, seed=seed
    )
    notes: list[str] = []
    try:
        obs = simulate_path(model, params, lam, path_cfg)
    except SimulationError as err:
        return ReplicationOutcome(None, None, None, (f"simulation: {err}",))
    cls = classify(obs, cfg.rule)

    h1_vals, dd_dims = [], []
    for d, s in DD_GRID:
        m = candidate(d, s, JUMP_GRID[-1])
        try:
            r = fit_continuous(m, obs, cls, opts)
            ok = r.converged
            if not ok:
                notes.append(f"drift{d}+diffusion{s}: simplex did not converge")
        except (FitError, LikelihoodError) as err:
            notes.append(f"drift{d}+diffusion{s}: {err}")
            ok = False
        h1_vals.append(r.value if ok else math.nan)
        dd_dims.append(m.p_drift + m.p_diffusion)

    h2_vals, j_dims = [], []
    for j in JUMP_GRID:
        m = candidate(3, 2, j)
        try:
            r = fit_jumps(m, obs, cls, opts)
            ok = r.converged
            if not ok:
                notes.append(f"jump{j}: simplex did not converge")
        except (FitError, LikelihoodError) as err:
            notes.append(f"jump{j}: {err}")
            ok = False
        h2_vals.append(r.value if ok else math.nan)
        j_dims.append(m.p_jump)

    dd_choice = jump_choice = joint_choice = None
    if all(math.isfinite(v) for v in h1_vals):
        pics = [criterion(v, p) for v, p in zip(h1_vals, dd_dims)]
        dd_choice = DD_GRID[argmin_with_ties(pics, dd_dims)[0]]
    if all(math.isfinite(v) for v in h2_vals):
        pics = [criterion(v, p) for v, p in zip(h2_vals, j_dims)]
        jump_choice = JUMP_GRID[argmin_with_ties(pics, j_dims)[0]]
    if cfg.joint and dd_choice is not None and jump_choice is not None:
        combos, pics, dims = [], [], []
        for (d, s), v1, p1 in zip(DD_GRID, h1_vals, dd_dims):
            for j, v2, p2 in zip(JUMP_GRID, h2_vals, j_dims):
                combos.append((d, s, j))
                pics.append(criterion(v1 + v2, p1 + p2))
                dims.append(p1 + p2)
        joint_choice = combos[argmin_with_ties(pics, dims)[0]]
    return ReplicationOutcome(dd_choice, jump_choice, joint_choice, tuple(notes))


def _replication_task(args):
    T, h, seed, cfg = args
    return run_replication(T, h, seed, cfg)


def scenario_seed(cfg: ExperimentConfig, scenario_index: int, r: int) -> int:
    """Seed of replication ``r`` (1-based) in scenario ``scenario_index``."""
    return (cfg.seed + scenario_index * SCENARIO_SEED_STRIDE + r) % 2**64


def run_experiment(cfg: ExperimentConfig) -> list[SelectionTable]:
    tables = []
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for i, (T, h) in enumerate(cfg.scenarios):
            tasks = [(T, h, scenario_seed(cfg, i, r), cfg) for r in range(1, cfg.n_rep + 1)]
            if pool is None:
                outcomes = [_replication_task(t) for t in tasks]
            else:
                outcomes = list(pool.map(_replication_task, tasks, chunksize=4))
            tables.append(_aggregate((T, h), outcomes, cfg))
            log.info("scenario T=%g h=%g done", T, h)
    finally:
        if pool is not None:
            pool.shutdown()
    return tables


def _aggregate(scenario, outcomes: Sequence[ReplicationOutcome], cfg) -> SelectionTable:
    dd = np.zeros((len(DRIFT_FAMILIES), len(DIFFUSION_FAMILIES)), dtype=int)
    jc = np.zeros(len(JUMP_FAMILIES), dtype=int)
    joint = np.zeros((len(DRIFT_FAMILIES), len(DIFFUSION_FAMILIES), len(JUMP_FAMILIES)), dtype=int)
    dd_fail = j_fail = joint_fail = 0
    for r, out in enumerate(outcomes, start=1):
        for note in out.notes:
            log.warning("T=%g h=%g replication %d: %s", *scenario, r, note)
        if out.drift_diffusion is None:
            dd_fail += 1
        else:
            dd[out.drift_diffusion[0] - 1, out.drift_diffusion[1] - 1] += 1
        if out.jump is None:
            j_fail += 1
        else:
            jc[out.jump - 1] += 1
        if out.joint is None:
            joint_fail += 1
        else:
            joint[tuple(k - 1 for k in out.joint)] += 1
    table = SelectionTable(
        scenario=scenario,
        drift_diffusion_counts=dd,
        jump_counts=jc,
        n_rep=len(outcomes),
        drift_diffusion_failures=dd_fail,
        jump_failures=j_fail,
        joint_counts=joint if cfg.joint else None,
        joint_failures=joint_fail if cfg.joint else 0,
    )
    if table.degraded:
        log.warning("scenario T=%g h=%g is degraded: more than 5%% fit failures", *scenario)
    return table


# -- output ----------------------------------------------------------------


def _num(v: float) -> str:
    return f"{v:g}"


def emit_tables(tables: Sequence[SelectionTable], fmt: str = "csv") -> str:
    if not tables:
        raise ValueError("no tables to emit")
    if fmt == "csv":
        return _emit_csv(tables)
    if fmt == "markdown":
        return _emit_markdown(tables)
    raise ValueError(f"unknown format {fmt!r}")


def _emit_csv(tables) -> str:
    out = io.StringIO()
    out.write("T,h,drift,diffusion,count\n")
    for t in tables:
        T, h = map(_num, t.scenario)
        for d in range(t.drift_diffusion_counts.shape[0]):
            for s in range(t.drift_diffusion_counts.shape[1]):
                out.write(f"{T},{h},{d + 1},{s + 1},{t.drift_diffusion_counts[d, s]}\n")
    out.write("\nT,h,jump,count\n")
    for t in tables:
        T, h = map(_num, t.scenario)
        for j, c in enumerate(t.jump_counts):
            out.write(f"{T},{h},{j + 1},{c}\n")
    if all(t.joint_counts is not None for t in tables):
        out.write("\nT,h,drift,diffusion,jump,count\n")
        for t in tables:
            T, h = map(_num, t.scenario)
            for (d, s, j), c in np.ndenumerate(t.joint_counts):
                out.write(f"{T},{h},{d + 1},{s + 1},{j + 1},{c}\n")
    return out.getvalue()


def _bold_if(value: int, flag: bool) -> str:
    return f"**{value}**" if flag else str(value)


def _emit_markdown(tables) -> str:
    out = io.StringIO()
    out.write("Selection result for the drift and diffusion coefficients\n\n")
    out.write("| T_n | h_n | | Diffusion 1 | Diffusion 2 |\n")
    out.write("|---|---|---|---|---|\n")
    for t in tables:
        counts = t.drift_diffusion_counts
        modal = np.unravel_index(int(np.argmax(counts)), counts.shape)
        for d in range(counts.shape[0]):
            lead = f"| {_num(t.scenario[0])} | {_num(t.scenario[1])} " if d == 0 else "| | "
            cells = " | ".join(
                _bold_if(int(counts[d, s]), (d, s) == modal) for s in range(counts.shape[1])
            )
            out.write(f"{lead}| Drift {d + 1} | {cells} |\n")
    out.write("\nSelection result for the jump density\n\n")
    out.write("| T_n | h_n | Jump 1 | Jump 2 |\n")
    out.write("|---|---|---|---|\n")
    for t in tables:
        modal = int(np.argmax(t.jump_counts))
        cells = " | ".join(_bold_if(int(c), j == modal) for j, c in enumerate(t.jump_counts))
        out.write(f"| {_num(t.scenario[0])} | {_num(t.scenario[1])} | {cells} |\n")
    failures = [
        (t.scenario, t.drift_diffusion_failures, t.jump_failures)
        for t in tables
        if t.drift_diffusion_failures or t.jump_failures
    ]
    if failures:
        out.write("\nFit failures excluded from the counts:\n\n")
        for (T, h), a, b in failures:
            out.write(f"- T={_num(T)}, h={_num(h)}: drift/diffusion {a}, jump {b}\n")
    return out.getvalue()


# -- config files ------------------------------------------------------------


def parse_scenarios(text: str) -> tuple[tuple[float, float], ...]:
    """``"30:0.05, 50:0.025"`` -> ``((30.0, 0.05), (50.0, 0.025))``."""
    out = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        try:
            T, h = item.split(":")
            out.append((float(T), float(h)))
        except ValueError:
            raise ValueError(f"bad scenario {item!r}; expected T:h") from None
    return tuple(out)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def config_from_mapping(values: dict[str, str], **extra) -> ExperimentConfig:
    kw: dict = {}
    if "scenarios" in values:
        kw["scenarios"] = parse_scenarios(values["scenarios"])
    if "n_rep" in values:
        kw["n_rep"] = int(values["n_rep"])
    if "rho" in values:
        kw["rho"] = float(values["rho"])
    if "seed" in values:
        kw["seed"] = int(values["seed"])
    if "candidates" in values:
        kw["candidate_set"] = values["candidates"]
    if "output" in values:
        kw["output_path"] = values["output"]
    kw.update(extra)
    return ExperimentConfig(**kw)
