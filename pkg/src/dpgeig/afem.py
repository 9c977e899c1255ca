"""Adaptive loop: solve, estimate, mark, refine."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import Formulation, condense_and_assemble, recover_residual
from .eigensolve import CapacityError, EigenPair, SolverConfig, SolverError, smallest_eigenpairs
from .estimators import (EstimatorKind, IndicatorField, ReferenceSolution, energy_error, estimate,
                         eta_natural, higher_order_term, jump_estimator)
from .mesh import DomainSpec, Mesh, build_domain, refine_adaptive, refine_uniform

log = logging.getLogger(__name__)


class AfemAborted(RuntimeError):
    """The loop stopped early; ``records`` holds what was computed before."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def dorfler_mark(indicators, theta: float) -> np.ndarray:
    """Minimal set carrying a ``theta`` fraction of the squared estimator.

    Triangles are taken by decreasing indicator, ties by increasing id.
    Returns an empty array when every indicator is zero; callers treat that
    as stagnation.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    eta = indicators.values if isinstance(indicators, IndicatorField) else np.asarray(indicators, float)
    sq = eta ** 2
    total = sq.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(sq)), -sq))
    csum = np.cumsum(sq[order])
    # guard against round-off in the last partial sum when theta = 1
    n = int(np.searchsorted(csum, theta * total * (1.0 - 1e-14), side="left")) + 1
    marked = order[:min(n, len(order))]
    if theta == 1.0:
        marked = order[sq[order] > 0]
    return np.sort(marked)


@dataclass(frozen=True)
class AfemConfig:
    """Parameters of one adaptive (or, with ``uniform=True``, uniform) run.

    ``track`` is the 0-based index of the eigenpair that drives marking;
    ``lam_ref`` is the exact value of that eigenvalue, if known.
    """

    formulation: Formulation
    domain: DomainSpec
    estimator: EstimatorKind = EstimatorKind.NATURAL
    theta: float = 0.5
    m: int = 1
    track: int = 0
    budget: int = 10_000
    initial_sweeps: int | None = None
    uniform: bool = False
    lam_ref: float | None = None
    solver: SolverConfig | None = None

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if not 0 <= self.track < self.m:
            raise ValueError("track must index one of the m computed eigenpairs")

    @property
    def solver_config(self) -> SolverConfig:
        if self.solver is not None:
            return self.solver
        return SolverConfig(m=self.m)

    @property
    def sweeps(self) -> int:
        if self.initial_sweeps is not None:
            return self.initial_sweeps
        return 2 if self.domain is DomainSpec.UNIT_SQUARE else 1


@dataclass
class ConvergenceRecord:
    iteration: int
    dof: int
    n_triangles: int
    h_max: float
    lam: tuple
    abserror1: float
    eta: float
    eta_jump: float = float("nan")
    eta_jump_alt: float = float("nan")
    energy_error: float = float("nan")
    hot: float = float("nan")
    n_marked: int = 0
    seconds: float = 0.0
    track: int = 0

    @property
    def lam_tracked(self) -> float:
        return self.lam[self.track] if self.lam else float("nan")


@dataclass
class StepState:
    """Everything known at the end of one solve/estimate stage."""

    mesh: Mesh
    pairs: list
    pair: EigenPair
    indicators: IndicatorField
    record: ConvergenceRecord = field(repr=False)


def initial_mesh(config: AfemConfig) -> Mesh:
    """Coarse mesh plus initial sweeps, refined until the trial space is large enough."""
    mesh = build_domain(config.domain)
    for _ in range(config.sweeps):
        mesh = refine_uniform(mesh)
    p = config.solver_config.p
    while True:
        pencil = condense_and_assemble(mesh, config.formulation)
        n_u = pencil.dofmaps["u"].n_global
        if pencil.n_trial >= p and n_u >= p:
            return mesh
        mesh = refine_uniform(mesh)


def run_afem(config: AfemConfig, reference: ReferenceSolution | None = None,
             callback=None) -> list[ConvergenceRecord]:
    """Adaptive loop until the trial dimension reaches ``config.budget``.

    Every iteration appends one record; the loop ends after the first
    iteration whose DoF count is at least the budget (so a budget below
    the initial DoF count gives a single record).  ``callback(state)`` is
    called after each estimate stage.
    """
    records: list[ConvergenceRecord] = []
    mesh = initial_mesh(config)
    scfg = config.solver_config
    it = 0
    while True:
        t0 = time.perf_counter()
        pencil = condense_and_assemble(mesh, config.formulation)
        try:
            pairs = smallest_eigenpairs(pencil, scfg)
        except (SolverError, CapacityError) as exc:
            raise AfemAborted(f"eigensolver failed at iteration {it}: {exc}", records) from exc
        pair = pairs[config.track]
        residual = recover_residual(pencil, pair.y, pair.lam)
        eta = eta_natural(residual)
        jump = jump_estimator(residual)
        driver = eta if config.estimator is EstimatorKind.NATURAL else estimate(residual, config.estimator)
        lam = tuple(p.lam for p in pairs)
        abserr = abs(pair.lam - config.lam_ref) if config.lam_ref is not None else float("nan")
        rec = ConvergenceRecord(
            iteration=it, dof=pencil.n_trial, n_triangles=mesh.n_triangles, h_max=mesh.h_max,
            lam=lam, abserror1=abserr, track=config.track, eta=eta.global_value,
            eta_jump=jump.global_value if jump is not None else float("nan"),
            eta_jump_alt=jump.alternative_global if jump is not None else float("nan"))
        if reference is not None:
            rec.energy_error = energy_error(pair, reference)
            rec.hot = higher_order_term(pair, reference)
        state = StepState(mesh, pairs, pair, driver, rec)
        done = pencil.n_trial >= config.budget
        if not done:
            marked = np.arange(mesh.n_triangles) if config.uniform else dorfler_mark(driver, config.theta)
            if marked.size == 0:
                rec.seconds = time.perf_counter() - t0
                records.append(rec)
                raise AfemAborted(f"stagnation at iteration {it}: all indicators vanish", records)
            rec.n_marked = int(marked.size)
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
        log.info("it %d dof %d lam %s eta %.4e", it, rec.dof, lam[config.track], rec.eta)
        if callback is not None:
            callback(state)
        if done:
            return records
        mesh = refine_adaptive(mesh, marked)
        it += 1


def estimate_rate(records, y="abserror1", x="dof", tail: int | None = None) -> float:
    """Least-squares slope of ``log y`` against ``log x`` over the last records.

    Uses the last ``max(3, ceil(n / 2))`` records unless ``tail`` is given.
    ``records`` may be ConvergenceRecord objects or ``(x, y)`` pairs.
    """
    pts = []
    for r in records:
        if isinstance(r, ConvergenceRecord):
            pts.append((getattr(r, x), getattr(r, y)))
        else:
            pts.append(tuple(r))
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    if n < 3:
        raise ValueError("a rate needs at least three records")
    use = tail if tail is not None else max(3, math.ceil(n / 2))
    pts = pts[-use:]
    if np.any(~(pts > 0)):
        raise ValueError("rates need positive data")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope = np.polyfit(lx, ly, 1)[0]
    return float(slope)


def with_budget(config: AfemConfig, budget: int) -> AfemConfig:
    return replace(config, budget=budget)


__all__ = ["AfemAborted", "AfemConfig", "ConvergenceRecord", "StepState",
           "dorfler_mark", "estimate_rate", "initial_mesh", "run_afem", "with_budget"]
