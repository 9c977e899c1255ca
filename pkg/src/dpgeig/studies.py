"""Configuration-driven convergence studies, output tables and summaries."""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .afem import AfemConfig, ConvergenceRecord, estimate_rate, run_afem
from .assembly import Formulation, Kind, parse_formulation
from .eigensolve import SolverConfig
from .estimators import (EstimatorKind, ReferenceSolution, efficiency_ratio, energy_error,
                         higher_order_term)
from .mesh import DomainSpec

log = logging.getLogger(__name__)

LAMBDA_SQUARE = 2.0 * math.pi ** 2
LAMBDA_LSHAPE_1 = 9.639723844871536
LAMBDA_LSHAPE_5 = 31.91263
LAMBDA_SLIT_1 = 8.371329711

REFERENCE_VALUES = {
    (DomainSpec.UNIT_SQUARE, 1): LAMBDA_SQUARE,
    (DomainSpec.LSHAPE, 1): LAMBDA_LSHAPE_1,
    (DomainSpec.LSHAPE, 5): LAMBDA_LSHAPE_5,
    (DomainSpec.SLIT, 1): LAMBDA_SLIT_1,
}

COLUMNS = ("dof", "abserror1", "eta", "etabar", "energyerr", "hoterm")
STUDY_KINDS = ("uniform", "adaptive", "higher_order_sweep")


class ConfigError(ValueError):
    """Invalid study configuration; the message cites the offending line."""


# -- configuration -------------------------------------------------------------------
@dataclass(frozen=True)
class StudyConfig:
    name: str
    domain: DomainSpec
    formulation: Formulation
    study: str = "adaptive"
    estimator: EstimatorKind = EstimatorKind.NATURAL
    theta: float = 0.5
    m: int = 1
    eigenvalue: int = 1
    budget: int = 10_000
    initial_sweeps: int | None = None
    lam_ref: float | None = None
    reference_dof: int = 0
    orders: tuple = ()
    seed: int = 20240101
    tol_eig: float = 1e-10
    block_size: int | None = None
    out: str = "."
    svg: bool = False

    @property
    def lam_exact(self) -> float | None:
        if self.lam_ref is not None:
            return self.lam_ref
        return REFERENCE_VALUES.get((self.domain, self.eigenvalue))

    def afem_config(self, formulation: Formulation | None = None, budget: int | None = None) -> AfemConfig:
        solver = SolverConfig(m=self.m, block_size=self.block_size, tol_eig=self.tol_eig, seed=self.seed)
        return AfemConfig(formulation=formulation or self.formulation, domain=self.domain,
                          estimator=self.estimator, theta=self.theta, m=self.m,
                          track=self.eigenvalue - 1, budget=budget or self.budget,
                          initial_sweeps=self.initial_sweeps, uniform=self.study == "uniform",
                          lam_ref=self.lam_exact, solver=solver)

    def debug_dump(self) -> str:
        d = asdict(self)
        d["domain"] = self.domain.value
        d["formulation"] = str(self.formulation)
        d["estimator"] = self.estimator.value
        d["orders"] = list(self.orders)
        return json.dumps(d, sort_keys=True, indent=1)


# (section, key) -> converter
_KEYS = {
    ("domain", "name"): "str",
    ("formulation", "kind"): "str",
    ("formulation", "k"): "int",
    ("formulation", "test_order"): "int",
    ("afem", "study"): "str",
    ("afem", "estimator"): "str",
    ("afem", "theta"): "float",
    ("afem", "m"): "int",
    ("afem", "eigenvalue"): "int",
    ("afem", "budget"): "int",
    ("afem", "initial_sweeps"): "int",
    ("afem", "lambda_ref"): "float",
    ("afem", "reference_dof"): "int",
    ("afem", "orders"): "ints",
    ("afem", "seed"): "int",
    ("afem", "tol_eig"): "float",
    ("afem", "block_size"): "int",
    ("output", "name"): "str",
    ("output", "directory"): "str",
    ("output", "svg"): "bool",
}
_SECTIONS = ("domain", "formulation", "afem", "output")


def _line_numbers(text: str) -> dict:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            lines.setdefault((section, None), no)
            continue
        for sep in ("=", ":"):
            if sep in line:
                lines[(section, line.split(sep, 1)[0].strip().lower())] = no
                break
    return lines


def parse_config(text: str) -> StudyConfig:
    """Parse an INI study description.

    Sections ``[domain]``, ``[formulation]``, ``[afem]``, ``[output]``; see
    the README for the keys.  Errors raise :class:`ConfigError` with the
    line number.
    """
    where = _line_numbers(text)
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: key outside of a section") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.message if hasattr(exc, 'message') else exc}") from None
    except configparser.ParsingError as exc:
        no = exc.errors[0][0] if exc.errors else "?"
        raise ConfigError(f"line {no}: cannot parse") from None

    def fail(section, key, msg):
        no = where.get((section, key), where.get((section, None), "?"))
        raise ConfigError(f"line {no}: {msg}")

    values = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in _SECTIONS:
            fail(sec, None, f"unknown section [{section}]")
        for key, raw in parser.items(section):
            conv = _KEYS.get((sec, key))
            if conv is None:
                fail(sec, key, f"unknown key {key!r} in [{section}]")
            raw = raw.strip()
            try:
                if conv == "int":
                    val = int(raw)
                elif conv == "float":
                    val = float(raw)
                elif conv == "bool":
                    val = parser.getboolean(section, key)
                elif conv == "ints":
                    val = tuple(int(x) for x in raw.replace(",", " ").split())
                else:
                    val = raw
            except ValueError:
                fail(sec, key, f"bad value {raw!r} for {key}")
            values[(sec, key)] = val

    def get(key, default=None):
        for (sec, k), val in values.items():
            if k == key and sec != "output":
                return val
        return default

    if ("domain", "name") not in values:
        raise ConfigError(f"line {where.get(('domain', None), 1)}: missing name in [domain]")
    try:
        domain = DomainSpec.parse(values[("domain", "name")])
    except ValueError as exc:
        fail("domain", "name", str(exc))
    try:
        formulation = parse_formulation(get("kind", "primal"), get("k", 1), get("test_order"))
    except ValueError as exc:
        fail("formulation", "kind" if ("formulation", "kind") in values else "k", str(exc))
    study = get("study", "adaptive").lower()
    if study not in STUDY_KINDS:
        fail("afem", "study", f"study must be one of {', '.join(STUDY_KINDS)}")
    try:
        estimator = EstimatorKind(get("estimator", "eta").lower())
    except ValueError:
        fail("afem", "estimator", "estimator must be eta, etabar or etatilde")
    theta = get("theta", 0.5)
    if not 0.0 < theta <= 1.0:
        fail("afem", "theta", f"theta must lie in (0, 1], got {theta}")
    m = get("m", 1)
    eigenvalue = get("eigenvalue", 1)
    if m < 1:
        fail("afem", "m", "m must be positive")
    if not 1 <= eigenvalue <= m:
        fail("afem", "eigenvalue", f"eigenvalue must lie in 1..m (m = {m})")
    budget = get("budget", 10_000)
    if budget <= 0:
        fail("afem", "budget", "budget must be positive")
    if estimator is EstimatorKind.JUMP_PRIMAL and not (formulation.is_primal and formulation.order == 1):
        fail("afem", "estimator", "etabar needs the primal formulation with k = 1")
    if estimator is EstimatorKind.JUMP_ULTRAWEAK and formulation.kind is not Kind.ULTRAWEAK_RT:
        fail("afem", "estimator", "etatilde needs the ultraweak_rt formulation")
    block = get("block_size")
    if block is not None and block < m + 2:
        fail("afem", "block_size", "block_size must be at least m + 2")
    tol = get("tol_eig", 1e-10)
    if not tol > 0:
        fail("afem", "tol_eig", "tol_eig must be positive")
    orders = get("orders", ())
    if study == "higher_order_sweep" and not orders:
        fail("afem", "study", "a higher_order_sweep needs 'orders'")
    sweeps = get("initial_sweeps")
    if sweeps is not None and sweeps < 0:
        fail("afem", "initial_sweeps", "initial_sweeps must be nonnegative")
    name = values.get(("output", "name")) or f"{formulation.kind.value}_{domain.value}_{study}"
    return StudyConfig(name=name, domain=domain, formulation=formulation, study=study,
                       estimator=estimator, theta=theta, m=m, eigenvalue=eigenvalue, budget=budget,
                       initial_sweeps=sweeps, lam_ref=get("lambda_ref"),
                       reference_dof=get("reference_dof", 0), orders=orders, seed=get("seed", 20240101),
                       tol_eig=tol, block_size=block, out=values.get(("output", "directory"), "."),
                       svg=bool(values.get(("output", "svg"), False)))


def load_config(path) -> StudyConfig:
    return parse_config(Path(path).read_text())


# -- reference solutions ---------------------------------------------------------------
def _reference_key(cfg: AfemConfig) -> str:
    d = {"domain": cfg.domain.value, "form": str(cfg.formulation), "est": cfg.estimator.value,
         "theta": cfg.theta, "m": cfg.m, "track": cfg.track, "budget": cfg.budget,
         "sweeps": cfg.sweeps, "uniform": cfg.uniform,
         "solver": repr(cfg.solver_config)}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:20]


def _atomic_save(ref: ReferenceSolution, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        ref.save(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def run_with_reference(cfg: AfemConfig, reference_dof: int, cache_dir: Path | None = None):
    """Study records with energy errors against a continuation of the same run.

    The reference is the same adaptive (or uniform) loop carried on to
    ``reference_dof`` unknowns, so its mesh refines every study mesh.
    """
    ref_cfg = replace(cfg, budget=reference_dof)
    path = cache_dir / f"ref_{_reference_key(ref_cfg)}.npz" if cache_dir is not None else None
    if path is not None and path.exists():
        ref = ReferenceSolution.load(path)
        return run_afem(cfg, reference=ref), ref

    states, last = [], {}

    def keep(state):
        last["s"] = state
        if not states or states[-1].record.dof < cfg.budget:
            states.append(state)

    run_afem(ref_cfg, callback=keep)
    ref = ReferenceSolution.from_pair(last["s"].pair, cfg.lam_ref)
    if path is not None:
        _atomic_save(ref, path)
    records = []
    for s in states:
        rec = s.record
        rec.energy_error = energy_error(s.pair, ref)
        rec.hot = higher_order_term(s.pair, ref)
        records.append(rec)
    if ref.n_dof < 10 * records[-1].dof:
        log.warning("reference has %d DoF, less than 10x the finest study mesh (%d)",
                    ref.n_dof, records[-1].dof)
    return records, ref


# -- output -----------------------------------------------------------------------------
def _fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.17g}"


def format_table(records: list[ConvergenceRecord]) -> str:
    out = io.StringIO()
    out.write(" ".join(COLUMNS) + "\n")
    for r in records:
        row = (r.dof, r.abserror1, r.eta, r.eta_jump, r.energy_error, r.hot)
        out.write(" ".join([str(int(r.dof))] + [_fmt(v) for v in row[1:]]) + "\n")
    return out.getvalue()


def read_table(path) -> dict:
    """Columns of a ``.dat`` file as float arrays."""
    with open(path) as fh:
        header = fh.readline().split()
        data = np.loadtxt(fh, ndmin=2) if os.path.getsize(path) > 0 else np.zeros((0, len(header)))
    if data.size == 0:
        data = np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def column_rates(table: dict, tail: int | None = None) -> dict:
    """Slopes of every error column against ``dof`` (columns with < 3 positive values skipped)."""
    rates = {}
    x = table["dof"]
    for name in COLUMNS[1:]:
        y = table.get(name)
        if y is None:
            continue
        ok = np.isfinite(y) & (y > 0)
        if ok.sum() < 3:
            continue
        # rates use the trailing run of valid values
        idx = np.flatnonzero(ok)
        rates[name] = estimate_rate(list(zip(x[idx], y[idx])), tail=tail)
    return rates


def format_rates(records, extra: dict | None = None) -> str:
    table = {c: np.array([getattr(r, a) for r in records], dtype=float) for c, a in
             zip(COLUMNS, ("dof", "abserror1", "eta", "eta_jump", "energy_error", "hot"))}
    lines = [f"{name} {_fmt(v)}" for name, v in column_rates(table).items()]
    good = [r for r in records if r.abserror1 > 0]
    if len(good) >= 3:
        lines.append(f"abserror1_vs_h {_fmt(estimate_rate(good, x='h_max'))}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def format_ratio(records) -> str:
    rows = ["dof,ratio"]
    for r in records:
        if r.energy_error > 0 and math.isfinite(r.energy_error):
            rows.append(f"{int(r.dof)},{_fmt(efficiency_ratio(r.eta, r.energy_error))}")
    return "\n".join(rows) + "\n"


def write_svg(records, path, title="") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    dof = [r.dof for r in records if r.abserror1 > 0]
    err = [r.abserror1 for r in records if r.abserror1 > 0]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(dof, err, "o-", label="abserror1")
    eta = [r.eta for r in records]
    ax.loglog([r.dof for r in records], eta, "s--", label="eta")
    ax.set_xlabel("DoF")
    ax.set_ylabel("error")
    ax.grid(True, which="major")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _check_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")


@dataclass
class StudyResult:
    name: str
    records: list
    files: list = field(default_factory=list)
    reference: ReferenceSolution | None = None


def run_study(config: StudyConfig, out: str | Path | None = None, budget: int | None = None) -> list[StudyResult]:
    """Run a study and write ``<name>.dat``, ``_rates.txt``, ``_ratio.csv`` (and ``.svg``)."""
    out = Path(out if out is not None else config.out)
    _check_writable(out)
    if budget is not None:
        config = replace(config, budget=budget)
    if config.study == "higher_order_sweep":
        jobs = []
        for k in config.orders:
            form = Formulation(config.formulation.kind, k)
            jobs.append((f"{config.name}_k{k}", form))
    else:
        jobs = [(config.name, config.formulation)]
    results = []
    for name, form in jobs:
        t0 = time.perf_counter()
        afem_cfg = config.afem_config(form)
        ref = None
        if config.reference_dof > 0:
            records, ref = run_with_reference(afem_cfg, config.reference_dof, out / ".refcache")
        else:
            records = run_afem(afem_cfg)
        files = [out / f"{name}.dat", out / f"{name}_rates.txt", out / f"{name}_ratio.csv"]
        files[0].write_text(format_table(records))
        files[1].write_text(format_rates(records))
        files[2].write_text(format_ratio(records))
        if config.svg:
            files.append(out / f"{name}.svg")
            write_svg(records, files[-1], name)
        log.info("%s: %d iterations in %.1fs", name, len(records), time.perf_counter() - t0)
        results.append(StudyResult(name, records, files, ref))
    return results
