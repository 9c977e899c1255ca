import math
from pathlib import Path

import numpy as np
import pytest

from dpgeig import cli
from dpgeig.afem import estimate_rate
from dpgeig.assembly import Primal, PrimalLowest
from dpgeig.eigensolve import SolverError
from dpgeig.estimators import EstimatorKind
from dpgeig.mesh import DomainSpec, build_domain, load_mesh
from dpgeig.studies import (COLUMNS, LAMBDA_LSHAPE_1, LAMBDA_SQUARE, ConfigError, column_rates,
                            format_table, load_config, parse_config, read_table, run_study)

DATA = Path(__file__).parent / "data"

MINIMAL = """\
[domain]
name = square
[formulation]
kind = primal
"""


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.theta == 0.5
    assert cfg.m == 1 and cfg.eigenvalue == 1
    assert cfg.formulation == Primal(1)
    assert cfg.domain is DomainSpec.UNIT_SQUARE
    assert cfg.estimator is EstimatorKind.NATURAL
    assert cfg.study == "adaptive"
    assert cfg.lam_exact == LAMBDA_SQUARE


def _error(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return str(info.value)


def test_theta_rejected_with_line():
    msg = _error(MINIMAL + "[afem]\ntheta = 1.5\n")
    assert msg.startswith("line 6:")
    assert "theta" in msg


def test_unknown_key_rejected():
    msg = _error(MINIMAL + "[afem]\nbudget = 100\nthetta = 0.3\n")
    assert msg.startswith("line 7:") and "thetta" in msg


@pytest.mark.parametrize("extra, word", [
    ("[mesh]\nh = 0.1\n", "section"),
    ("[afem]\nestimator = zz\n", "estimator"),
    ("[afem]\nestimator = etatilde\n", "etatilde"),
    ("[afem]\nm = 2\neigenvalue = 3\n", "eigenvalue"),
    ("[afem]\nbudget = ten\n", "budget"),
    ("[afem]\nstudy = higher_order_sweep\n", "orders"),
    ("[afem]\nstudy = random\n", "study"),
])
def test_bad_values(extra, word):
    assert word in _error(MINIMAL + extra)


def test_bad_domain_and_missing_name():
    assert "line 2" in _error(MINIMAL.replace("square", "circle"))
    assert "name" in _error("[formulation]\nkind = primal\n")
    assert _error("theta = 0.5\n").startswith("line 1")


def test_etabar_needs_primal_k1():
    text = MINIMAL.replace("primal", "primal\nk = 2") + "[afem]\nestimator = etabar\n"
    assert "etabar" in _error(text)


def test_golden_dump():
    cfg = load_config(DATA / "lshape_etabar.ini")
    assert cfg.debug_dump() + "\n" == (DATA / "lshape_etabar.dump.json").read_text()
    assert cfg.afem_config().formulation == PrimalLowest()
    assert cfg.lam_exact == LAMBDA_LSHAPE_1


def _small(tmp_path, extra="", name="sq"):
    return parse_config(MINIMAL + f"[afem]\nstudy = uniform\nbudget = 400\n{extra}"
                        f"[output]\nname = {name}\ndirectory = {tmp_path}\n")


def test_run_study_files(tmp_path):
    (res,) = run_study(_small(tmp_path))
    names = sorted(p.name for p in res.files)
    assert names == ["sq.dat", "sq_rates.txt", "sq_ratio.csv"]
    lines = (tmp_path / "sq.dat").read_text().splitlines()
    assert lines[0] == "dof abserror1 eta etabar energyerr hoterm"
    assert len(lines) == len(res.records) + 1
    # no reference solution and no higher-order run: energy and hot terms are missing
    for row in lines[1:]:
        cols = row.split()
        assert len(cols) == len(COLUMNS)
        assert cols[4] == "nan" and cols[5] == "nan"
    # 17 significant digits round-trip exactly
    table = read_table(tmp_path / "sq.dat")
    assert list(table["abserror1"]) == [r.abserror1 for r in res.records]
    assert list(table["eta"]) == [r.eta for r in res.records]
    assert (tmp_path / "sq_ratio.csv").read_text() == "dof,ratio\n"


def test_run_study_deterministic(tmp_path):
    run_study(_small(tmp_path / "a"))
    run_study(_small(tmp_path / "b"))
    assert (tmp_path / "a" / "sq.dat").read_bytes() == (tmp_path / "b" / "sq.dat").read_bytes()


def test_unwritable_output(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    import dpgeig.studies as studies
    monkeypatch.setattr(studies, "run_afem", lambda *a, **k: pytest.fail("computed before I/O check"))
    with pytest.raises(OSError):
        run_study(_small(blocker / "sub"))


def test_square_uniform_slope(tmp_path):
    (res,) = run_study(_small(tmp_path, name="sqk1"), budget=20_000)
    rates = column_rates(read_table(tmp_path / "sqk1.dat"))
    assert rates["abserror1"] == pytest.approx(-1.0, abs=0.15)
    assert estimate_rate(res.records) == pytest.approx(rates["abserror1"], rel=1e-12)
    text = (tmp_path / "sqk1_rates.txt").read_text()
    assert text.startswith("abserror1 ")
    assert "abserror1_vs_h" in text


def test_higher_order_sweep_and_svg(tmp_path):
    cfg = parse_config(MINIMAL + "[afem]\nstudy = higher_order_sweep\norders = 1, 2\nbudget = 300\n"
                       f"[output]\nname = ho\ndirectory = {tmp_path}\nsvg = yes\n")
    res = run_study(cfg)
    assert [r.name for r in res] == ["ho_k1", "ho_k2"]
    assert (tmp_path / "ho_k2.svg").read_text().lstrip().startswith("<?xml")
    assert res[0].records[-1].dof < res[1].records[-1].dof * 10


def test_format_table_nan():
    from dpgeig.afem import ConvergenceRecord
    import dataclasses
    fields = {f.name: (1.0 if f.type in ("float", float) else 0) for f in dataclasses.fields(ConvergenceRecord)}
    rec = ConvergenceRecord(**fields)
    rec = dataclasses.replace(rec, dof=7, abserror1=0.1, eta=float("nan"))
    row = format_table([rec]).splitlines()[1].split()
    assert row[0] == "7" and row[1] == "0.10000000000000001" and row[2] == "nan"


# -- command line ---------------------------------------------------------------------
def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_run(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL + "[afem]\nbudget = 300\n[output]\nname = cl\n")
    assert cli.main(["run", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("cl: ") and "cl.dat" in out
    assert cli.main(["rates", str(tmp_path / "cl.dat")]) == 0
    lines = capsys.readouterr().out.split()
    assert lines[0] == "abserror1"
    assert math.isfinite(float(lines[1]))


def test_cli_config_errors(tmp_path, capsys):
    bad = _write(tmp_path, MINIMAL + "[afem]\ntheta = 1.5\n")
    assert cli.main(["run", bad, "--quiet"]) == 2
    assert "line 6" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main([]) == 2
    assert cli.main(["reproduce", "nosuch", "--out", str(tmp_path)]) == 2


def test_cli_numeric_error(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise SolverError("no convergence")
    monkeypatch.setattr(cli, "run_study", boom)
    cfg = _write(tmp_path, MINIMAL)
    assert cli.main(["run", cfg, "--quiet"]) == 1
    assert "no convergence" in capsys.readouterr().err


def test_cli_help_is_ok(capsys):
    assert cli.main(["--help"]) == 0


def test_cli_dump_mesh(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL.replace("square", "lshape"))
    assert cli.main(["dump-mesh", cfg, "--quiet"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("vertices\n")
    mesh = load_mesh(text)
    assert mesh.areas.sum() == pytest.approx(3.0, rel=1e-14)
    assert cli.main(["dump-mesh", cfg, "--budget", "200", "--out", str(tmp_path), "--quiet"]) == 0
    fine = load_mesh((tmp_path / "primal_lshape_adaptive.mesh").read_text())
    assert fine.n_triangles > build_domain("lshape").n_triangles
    assert np.isclose(fine.areas.sum(), 3.0)
