import numpy as np
import pytest

from dpgeig.assembly import (Primal, PrimalLowest, ResidualField, Ultraweak, UltraweakLowestRT,
                             condense_and_assemble, recover_residual)
from dpgeig.eigensolve import EigenPair, SolverConfig, smallest_eigenpairs
from dpgeig.estimators import (EstimatorKind, IndicatorField, ReferenceSolution, ancestor_map,
                               cr_lemma_terms, efficiency_ratio, energy_error, estimate, eta_bar,
                               eta_natural, eta_tilde, global_residual_norm, higher_order_term,
                               jump_estimator, project_cr_orthogonal)
from dpgeig.fespace import BrokenLagrange, build_dofmap, FEFunction, line_quadrature, quadrature
from dpgeig.mesh import build_domain, refine_adaptive, refine_uniform


def _solved(mesh, form, **kw):
    p = condense_and_assemble(mesh, form)
    pair = smallest_eigenpairs(p, SolverConfig(**kw))[0]
    return p, pair, recover_residual(p, pair.y, pair.lam)


def _linear_residual(pencil, grads):
    """Residual whose (P1) scalar part is g_T . x on each triangle."""
    mesh = pencil.mesh
    n_test = pencil.blocks.G.shape[1]
    coef = np.zeros((mesh.n_triangles, n_test))
    pts = mesh.vertices[mesh.triangles]
    coef[:, :3] = np.einsum("nvc,nc->nv", pts, grads)
    return ResidualField(coef, pencil)


def test_zero_residual():
    p = condense_and_assemble(refine_uniform(build_domain("lshape")), Primal(1))
    res = recover_residual(p, np.zeros(p.n_trial), 1.0)
    assert np.all(eta_natural(res).values == 0.0)


def test_constant_residual():
    p = condense_and_assemble(refine_uniform(build_domain("square")), PrimalLowest())
    coef = np.full((p.mesh.n_triangles, 3), 0.7)
    eta = eta_natural(ResidualField(coef, p))
    assert np.allclose(eta.squared, 0.49 * p.mesh.areas, rtol=1e-14)


def test_global_eta_vs_quadrature():
    mesh = refine_adaptive(refine_uniform(build_domain("slit")), [1, 4])
    p = condense_and_assemble(mesh, Primal(1))
    rng = np.random.default_rng(9)
    coef = rng.normal(size=(mesh.n_triangles, 6))
    eta = eta_natural(ResidualField(coef, p))
    # ||eps||_V^2 = sum_T int |grad eps|^2 + eps^2 by a high-order rule
    dm = build_dofmap(BrokenLagrange(2), mesh)
    flat = np.zeros(dm.n_global)
    flat[dm.cell_dofs] = coef
    f = FEFunction(dm, flat)
    rule = quadrature(8)
    xy = np.broadcast_to(rule.xy, (mesh.n_triangles,) + rule.xy.shape)
    el = np.arange(mesh.n_triangles)
    v, g = f.values_at(el, xy), f.values_at(el, xy, "gradient")
    w = np.abs(mesh.det)[:, None] * rule.weights
    direct = np.sqrt(np.sum(w * (v ** 2 + np.sum(g ** 2, axis=2))))
    assert eta.global_value == pytest.approx(direct, rel=1e-12)
    assert eta.global_value == pytest.approx(global_residual_norm(ResidualField(coef, p)), rel=1e-12)


@pytest.mark.parametrize("form", [PrimalLowest(), Ultraweak(0), UltraweakLowestRT()], ids=str)
def test_localization(form):
    _, _, res = _solved(refine_uniform(refine_uniform(build_domain("lshape"))), form)
    eta = eta_natural(res)
    assert eta.global_value == pytest.approx(global_residual_norm(res), rel=1e-12)
    assert np.sum(eta.squared) == pytest.approx(eta.global_value ** 2, rel=1e-12)


def test_etabar_globally_linear():
    p = condense_and_assemble(build_domain("square"), PrimalLowest())
    g = np.array([0.3, -1.2])
    eb = eta_bar(_linear_residual(p, np.tile(g, (2, 1))))
    # only the two boundary edges of each triangle contribute, each of length 1
    expected = np.sqrt(p.mesh.areas) * 2.0 * (g @ g)
    assert np.allclose(eb.squared, expected, rtol=1e-13)


def test_etabar_two_elements():
    mesh = build_domain("square")
    p = condense_and_assemble(mesh, PrimalLowest())
    g = np.array([[1.0, 2.0], [-0.5, 0.25]])
    eb = eta_bar(_linear_residual(p, g))
    L = np.sqrt(2.0)
    jump = np.sum((g[0] - g[1]) ** 2)
    for t in range(2):
        bnd = 2.0 * np.sum(g[t] ** 2)  # two unit boundary edges, trace = full gradient
        assert eb.squared[t] == pytest.approx(np.sqrt(mesh.areas[t]) * (L * jump + bnd), rel=1e-13)


def test_etabar_vs_edge_quadrature():
    mesh = refine_uniform(build_domain("lshape"))
    p, _, res = _solved(mesh, PrimalLowest())
    eps = res.component("v")
    grads = []
    for t, tri in enumerate(mesh.triangles):
        A = np.column_stack([mesh.vertices[tri], np.ones(3)])
        grads.append(np.linalg.solve(A, eps[t])[:2])
    grads = np.array(grads)
    s, w = line_quadrature(4)
    ind = np.zeros(mesh.n_triangles)
    for e, (a, b) in enumerate(mesh.edges):
        ts = [t for t in range(mesh.n_triangles) if a in mesh.triangles[t] and b in mesh.triangles[t]]
        jump = grads[ts[0]] - (grads[ts[1]] if len(ts) == 2 else 0.0)
        L = np.linalg.norm(mesh.vertices[b] - mesh.vertices[a])
        term = L * np.sum(w) * (jump @ jump)
        for t in ts:
            ind[t] += np.sqrt(mesh.areas[t]) * term
    assert np.allclose(eta_bar(res).squared, ind, rtol=1e-12)


def test_wrong_formulation_rejected():
    _, _, res = _solved(refine_uniform(build_domain("lshape")), Ultraweak(0))
    with pytest.raises(ValueError):
        eta_bar(res)
    with pytest.raises(ValueError):
        eta_tilde(res)
    assert jump_estimator(res) is None
    _, _, res2 = _solved(refine_uniform(build_domain("lshape")), Primal(2))
    with pytest.raises(ValueError):
        eta_bar(res2)


def test_etatilde_linear_v():
    p = condense_and_assemble(build_domain("square"), UltraweakLowestRT())
    g = np.array([0.3, -1.2])
    et = eta_tilde(_linear_residual(p, np.tile(g, (2, 1))))
    expected = np.sqrt(p.mesh.areas) * 2.0 * (g @ g)
    assert np.allclose(et.squared, expected, rtol=1e-13)
    # mirror of the two-element example
    h = np.array([[1.0, 2.0], [-0.5, 0.25]])
    et = eta_tilde(_linear_residual(p, h))
    jump = np.sum((h[0] - h[1]) ** 2)
    for t in range(2):
        want = np.sqrt(p.mesh.areas[t]) * (np.sqrt(2.0) * jump + 2.0 * np.sum(h[t] ** 2))
        assert et.squared[t] == pytest.approx(want, rel=1e-13)


def test_etatilde_forms_agree_on_slit():
    mesh = refine_adaptive(refine_uniform(refine_uniform(build_domain("slit"))), [0, 3, 10])
    _, _, res = _solved(mesh, UltraweakLowestRT(), tol_eig=1e-14, tol_res=1e-12)
    et = eta_tilde(res)
    assert et.global_value == pytest.approx(et.alternative_global, rel=1e-8)
    assert np.allclose(et.values, et.alternative, rtol=1e-6)


def test_estimate_dispatch():
    _, _, res = _solved(refine_uniform(build_domain("lshape")), PrimalLowest())
    assert estimate(res, "eta").kind is EstimatorKind.NATURAL
    assert estimate(res, EstimatorKind.JUMP_PRIMAL).kind is EstimatorKind.JUMP_PRIMAL


def test_indicator_validation():
    with pytest.raises(ValueError):
        IndicatorField(np.array([1.0, -1.0]), EstimatorKind.NATURAL)
    f = IndicatorField(np.array([3.0, 4.0]), EstimatorKind.NATURAL)
    assert f.global_value == 5.0


@pytest.mark.parametrize("name", ["lshape", "slit", "square"])
def test_cr_lemma_factor(name):
    rng = np.random.default_rng(21)
    mesh = build_domain(name)
    for _ in range(4):
        mesh = refine_adaptive(mesh, rng.choice(mesh.n_triangles, mesh.n_triangles // 2 + 1, replace=False))
    worst = 1.0
    for _ in range(20):
        w = project_cr_orthogonal(mesh, rng.normal(size=len(mesh.interior_edges)))
        terms = np.array(cr_lemma_terms(mesh, w))
        worst = max(worst, terms.max() / terms.min())
    assert worst <= 50.0


def test_efficiency_ratio():
    assert efficiency_ratio(2.0, 1.0) == 2.0
    assert efficiency_ratio(0.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        efficiency_ratio(1.0, 0.0)


# -- reference solutions ---------------------------------------------------------------
def test_self_reference():
    p, pair, _ = _solved(refine_uniform(refine_uniform(build_domain("lshape"))), PrimalLowest())
    ref = ReferenceSolution.from_pair(pair)
    assert energy_error(pair, ref) == pytest.approx(0.0, abs=1e-12)
    assert higher_order_term(pair, ref) == pytest.approx(0.0, abs=1e-12)
    shifted = EigenPair(pair.lam + 0.25, pair.y, pencil=p)
    assert higher_order_term(shifted, ref) == pytest.approx(0.25, rel=1e-10)


def test_zero_discrete_solution():
    p, pair, _ = _solved(refine_uniform(refine_uniform(build_domain("lshape"))), Primal(1))
    ref = ReferenceSolution.from_pair(pair)
    zero = EigenPair(pair.lam, np.zeros(p.n_trial), pencil=p)
    u = pair.y[p.trial_range("u")]
    f = FEFunction(p.dofmaps["u"], u)
    rule = quadrature(6)
    el = np.arange(p.mesh.n_triangles)
    xy = np.broadcast_to(rule.xy, (len(el),) + rule.xy.shape)
    w = np.abs(p.mesh.det)[:, None] * rule.weights
    h1 = np.sum(w * (f.values_at(el, xy) ** 2 + np.sum(f.values_at(el, xy, "gradient") ** 2, axis=2)))
    assert energy_error(zero, ref) == pytest.approx(np.sqrt(h1), rel=1e-12)


@pytest.mark.parametrize("form", [Primal(1), Ultraweak(0)], ids=str)
def test_nested_manufactured(form):
    coarse = refine_uniform(build_domain("lshape"))
    fine = refine_adaptive(refine_uniform(coarse), [0, 5, 9])
    pc = condense_and_assemble(coarse, form)
    pf = condense_and_assemble(fine, form)
    rng = np.random.default_rng(13)
    yc, yf = rng.normal(size=pc.n_trial), rng.normal(size=pf.n_trial)
    pair = EigenPair(2.0, yc, pencil=pc)
    ref = ReferenceSolution(fine, form, yf, 3.0)
    # oracle: point-locate every fine quadrature point in the coarse mesh
    from dpgeig.fespace import locate
    rule = quadrature(6)
    fu = FEFunction(pf.dofmaps["u"], yf[pf.trial_range("u")])
    cu = FEFunction(pc.dofmaps["u"], yc[pc.trial_range("u")])
    names = ["u"] + ([] if form.is_primal else ["sigma"])
    fs = {n: FEFunction(pf.dofmaps[n], yf[pf.trial_range(n)]) for n in names}
    cs = {n: FEFunction(pc.dofmaps[n], yc[pc.trial_range(n)]) for n in names}
    ip = 0.0
    rows = []
    for t in range(fine.n_triangles):
        J = fine.jacobians[t]
        for q, wq in zip(rule.xy, rule.weights):
            x = fine.vertices[fine.triangles[t, 0]] + J @ q
            c, cxy = locate(coarse, x)
            w = abs(fine.det[t]) * wq
            row = {"w": w}
            for n in names:
                row[n] = (fs[n].values_at([t], q[None, None])[0, 0], cs[n].values_at([c], cxy[None, None])[0, 0])
            if form.is_primal:
                row["g"] = (fu.values_at([t], q[None, None], "gradient")[0, 0],
                            cu.values_at([c], cxy[None, None], "gradient")[0, 0])
            ip += w * row["u"][0] * row["u"][1]
            rows.append(row)
    s = 1.0 if ip >= 0 else -1.0
    err = hot = 0.0
    for r in rows:
        for n in names + (["g"] if form.is_primal else []):
            d = np.atleast_1d(r[n][0] - s * r[n][1])
            err += r["w"] * d @ d
        hot += r["w"] * (3.0 * r["u"][0] - 2.0 * s * r["u"][1]) ** 2
    assert energy_error(pair, ref) == pytest.approx(np.sqrt(err), rel=1e-10)
    assert higher_order_term(pair, ref) == pytest.approx(np.sqrt(hot), rel=1e-10)


def test_non_nested_rejected():
    a = refine_adaptive(build_domain("lshape"), [0])
    b = refine_adaptive(build_domain("lshape"), [3])
    with pytest.raises(ValueError):
        ancestor_map(a, b)
    with pytest.raises(ValueError):
        ancestor_map(refine_uniform(build_domain("lshape")), build_domain("lshape"))


def test_reference_roundtrip(tmp_path):
    p, pair, _ = _solved(refine_uniform(build_domain("slit")), Ultraweak(0))
    ref = ReferenceSolution.from_pair(pair, lam_exact=8.371329711)
    ref.save(tmp_path / "ref.npz")
    back = ReferenceSolution.load(tmp_path / "ref.npz")
    assert back.formulation == ref.formulation
    assert back.lam == ref.lam and back.lam_exact == ref.lam_exact
    assert np.array_equal(back.y, ref.y)
    assert np.array_equal(back.mesh.key, ref.mesh.key)
    assert energy_error(pair, back) == pytest.approx(0.0, abs=1e-12)
