"""Desk-scale reproductions of the convergence studies with pass/fail checks."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .afem import estimate_rate
from .assembly import Primal, PrimalLowest, Ultraweak, UltraweakLowestRT
from .estimators import EstimatorKind
from .mesh import DomainSpec
from .studies import (LAMBDA_LSHAPE_1, LAMBDA_LSHAPE_5, LAMBDA_SLIT_1, LAMBDA_SQUARE, StudyConfig,
                      run_study)

log = logging.getLogger(__name__)

SUITES = ("square", "lshape_ev1", "lshape_ev5", "slit", "hot", "efficiency")

NAT, BAR, TIL = EstimatorKind.NATURAL, EstimatorKind.JUMP_PRIMAL, EstimatorKind.JUMP_ULTRAWEAK


@dataclass
class Criterion:
    name: str
    value: float
    lo: float
    hi: float
    info_only: bool = False

    @property
    def passed(self) -> bool:
        return self.info_only or (math.isfinite(self.value) and self.lo <= self.value <= self.hi)

    def line(self) -> str:
        tag = "INFO" if self.info_only else ("PASS" if self.passed else "FAIL")
        return f"{tag} {self.name}: {self.value:.6g} (target [{self.lo:.6g}, {self.hi:.6g}])"


def _cfg(name, domain, form, study="adaptive", estimator=NAT, budget=100_000, **kw):
    return StudyConfig(name=name, domain=domain, formulation=form, study=study,
                       estimator=estimator, budget=budget, **kw)


def _run(cfg: StudyConfig, out: Path, scale: float):
    budget = max(int(cfg.budget * scale), 50)
    ref = int(cfg.reference_dof * scale) if cfg.reference_dof else 0
    return run_study(replace(cfg, budget=budget, reference_dof=ref), out)[0].records


def _slope_h(records, sweeps=3):
    """Slope of the error against h over the last ``sweeps`` full sweeps.

    One uniform NVB step bisects each triangle once, so h halves only every
    second step and the error alternates between steps; only records of the
    same parity as the last one are used.
    """
    same = records[::-1][::2][::-1]
    return estimate_rate(same[-(sweeps + 1):], x="h_max", tail=sweeps + 1)


def _equivalence(records, name):
    ratio = np.array([r.eta_jump / r.eta for r in records[1:] if r.eta > 0])
    return [Criterion(f"{name} jump/eta ratio min", float(ratio.min()), 0.1, 10.0),
            Criterion(f"{name} jump/eta ratio max", float(ratio.max()), 0.1, 10.0),
            Criterion(f"{name} jump/eta max/min", float(ratio.max() / ratio.min()), 1.0, 20.0)]


def suite_square(out: Path, scale: float = 1.0) -> list[Criterion]:
    sq = DomainSpec.UNIT_SQUARE
    res = []
    r1 = _run(_cfg("square_primal_k1", sq, Primal(1), "uniform", budget=50_000), out, scale)
    res.append(Criterion("square primal k=1 slope vs h", _slope_h(r1), 1.85, 2.15))
    res.append(Criterion("square primal k=1 final |lam - 2 pi^2|", r1[-1].abserror1, 0.0, 1e-3))
    r2 = _run(_cfg("square_primal_k2", sq, Primal(2), "uniform", budget=20_000), out, scale)
    res.append(Criterion("square primal k=2 slope vs h", _slope_h(r2), 3.7, 4.3))
    r0 = _run(_cfg("square_ultraweak_k0", sq, Ultraweak(0), "uniform", budget=50_000), out, scale)
    res.append(Criterion("square ultraweak k=0 slope vs h", _slope_h(r0), 1.8, 2.2))
    return res


def _adaptive_four(domain, tag, out, scale, budget, extra_checks):
    res = []
    drivers = [("primal_eta", PrimalLowest(), NAT), ("primal_etabar", PrimalLowest(), BAR),
               ("ultraweak_eta", Ultraweak(0), NAT), ("ultraweak_etatilde", UltraweakLowestRT(), TIL)]
    for name, form, est in drivers:
        recs = _run(_cfg(f"{tag}_{name}", domain, form, estimator=est, budget=budget), out, scale)
        res.append(Criterion(f"{tag} adaptive {name} slope", estimate_rate(recs), -1.15, -0.85))
        if scale >= 1.0:
            res.append(Criterion(f"{tag} adaptive {name} final DoF", recs[-1].dof, budget, math.inf))
        if est is not NAT:
            res.extend(_equivalence(recs, f"{tag} {name}"))
        res.extend(extra_checks(name, recs))
    return res


def suite_lshape_ev1(out: Path, scale: float = 1.0) -> list[Criterion]:
    L = DomainSpec.LSHAPE
    res = []
    up = _run(_cfg("lshape_primal_uniform", L, PrimalLowest(), "uniform", budget=100_000), out, scale)
    uw = _run(_cfg("lshape_ultraweak_uniform", L, Ultraweak(0), "uniform", budget=100_000), out, scale)
    res.append(Criterion("lshape uniform primal slope", estimate_rate(up), -0.75, -0.59))
    res.append(Criterion("lshape uniform ultraweak slope", estimate_rate(uw), -0.75, -0.59))
    gaps = [abs(a.lam_tracked - b.lam_tracked) for a, b in zip(up, uw)]
    res.append(Criterion("lshape primal/ultraweak gap decreasing",
                         float(np.all(np.diff(gaps[1:]) < 0)), 1.0, 1.0))
    res.extend(_adaptive_four(L, "lshape", out, scale, 100_000, lambda n, r: []))
    k2 = _run(_cfg("lshape_primal_k2_adaptive", L, Primal(2), budget=60_000, tol_eig=1e-12), out, scale)
    res.append(Criterion("lshape adaptive primal k=2 slope", estimate_rate(k2), -2.3, -1.7))
    k3 = _run(_cfg("lshape_primal_k3_adaptive", L, Primal(3), budget=30_000, tol_eig=1e-12), out, scale)
    good = [r for r in k3 if r.abserror1 > 1e-11]
    slope3 = estimate_rate(good) if len(good) >= 3 else float("nan")
    res.append(Criterion("lshape adaptive primal k=3 slope (logged)", slope3, -3.0, -3.0, info_only=True))
    return res


def suite_lshape_ev5(out: Path, scale: float = 1.0) -> list[Criterion]:
    L = DomainSpec.LSHAPE
    kw = dict(m=5, eigenvalue=5, lam_ref=LAMBDA_LSHAPE_5)
    uni = _run(_cfg("lshape_ev5_primal_uniform", L, PrimalLowest(), "uniform", budget=100_000, **kw),
               out, scale)
    ada = _run(_cfg("lshape_ev5_primal_eta", L, PrimalLowest(), budget=100_000, **kw), out, scale)
    return [Criterion("lshape lambda5 uniform slope", estimate_rate(uni), -0.85, -0.6),
            Criterion("lshape lambda5 adaptive slope", estimate_rate(ada), -1.2, -0.8)]


def suite_slit(out: Path, scale: float = 1.0) -> list[Criterion]:
    S = DomainSpec.SLIT
    res = []
    up = _run(_cfg("slit_primal_uniform", S, PrimalLowest(), "uniform", budget=100_000), out, scale)
    uw = _run(_cfg("slit_ultraweak_uniform", S, Ultraweak(0), "uniform", budget=100_000), out, scale)
    res.append(Criterion("slit uniform primal slope", estimate_rate(up), -0.58, -0.42))
    res.append(Criterion("slit uniform ultraweak slope", estimate_rate(uw), -0.58, -0.42))

    def final_error(name, recs):
        return [Criterion(f"slit adaptive {name} final |lam - {LAMBDA_SLIT_1}|", recs[-1].abserror1,
                          0.0, 5e-3)]
    res.extend(_adaptive_four(S, "slit", out, scale, 100_000, final_error))
    return res


def suite_hot(out: Path, scale: float = 1.0) -> list[Criterion]:
    res = []
    for tag, dom in (("lshape", DomainSpec.LSHAPE), ("slit", DomainSpec.SLIT)):
        recs = _run(_cfg(f"{tag}_primal_etabar_hot", dom, PrimalLowest(), estimator=BAR,
                         budget=20_000, reference_dof=200_000), out, scale)
        res.append(Criterion(f"{tag} higher-order term slope",
                             estimate_rate(recs, y="hot"), -1.2, -0.8))
        res.append(Criterion(f"{tag} eigenfunction error slope (logged)",
                             estimate_rate(recs, y="energy_error"), -0.5, -0.5, info_only=True))
    return res


def suite_efficiency(out: Path, scale: float = 1.0) -> list[Criterion]:
    res = []
    bands = {"lshape": (5.0, 20.0), "slit": (8.0, 30.0)}
    for tag, dom in (("lshape", DomainSpec.LSHAPE), ("slit", DomainSpec.SLIT)):
        recs = _run(_cfg(f"{tag}_primal_eta_eff", dom, PrimalLowest(), estimator=NAT,
                         budget=20_000, reference_dof=200_000), out, scale)
        ratios = np.array([r.eta / r.energy_error for r in recs[-5:]])
        lo, hi = bands[tag]
        res.append(Criterion(f"{tag} efficiency ratio max/min (last 5)",
                             float(ratios.max() / ratios.min()), 1.0, 2.0))
        res.append(Criterion(f"{tag} efficiency ratio min (last 5)", float(ratios.min()), lo, hi))
        res.append(Criterion(f"{tag} efficiency ratio max (last 5)", float(ratios.max()), lo, hi))
        diff = estimate_rate(recs, y="eta") - estimate_rate(recs, y="energy_error")
        res.append(Criterion(f"{tag} eta vs error slope difference", abs(diff), 0.0, 0.25))
    return res


_RUNNERS = {"square": suite_square, "lshape_ev1": suite_lshape_ev1, "lshape_ev5": suite_lshape_ev5,
            "slit": suite_slit, "hot": suite_hot, "efficiency": suite_efficiency}


def reproduce(suite: str, out: str | Path = "results", scale: float = 1.0) -> list[Criterion]:
    """Run one suite; ``scale`` multiplies every DoF budget (use < 1 for smoke runs)."""
    if suite not in _RUNNERS:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    out = Path(out) / suite
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = _RUNNERS[suite](out, scale)
    log.info("suite %s finished in %.1fs", suite, time.perf_counter() - t0)
    return results


__all__ = ["Criterion", "SUITES", "reproduce", "LAMBDA_SQUARE", "LAMBDA_LSHAPE_1"]
