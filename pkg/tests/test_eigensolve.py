import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from dpgeig.assembly import Primal, PrimalLowest, Ultraweak, UltraweakLowestRT, condense_and_assemble
from dpgeig.eigensolve import (CapacityError, DegenerateEigenvectorError, EigenPair, SolverConfig,
                               SolverError, conjugate_gradient, normalize, smallest_eigenpairs,
                               solve_spd)
from dpgeig.fespace import quadrature
from dpgeig.mesh import build_domain, refine_uniform


def test_diag_solve():
    assert np.allclose(solve_spd(np.diag([2.0, 3.0]), np.array([2.0, 3.0])), [1.0, 1.0])


def test_zero_rhs():
    S = sp.diags([4.0, 5.0, 6.0]).tocsr()
    assert np.all(solve_spd(S, np.zeros(3)) == 0.0)


@pytest.mark.parametrize("method", ["direct", "cg"])
def test_random_spd(method):
    rng = np.random.default_rng(1)
    A = rng.normal(size=(20, 20))
    S = A @ A.T + 20 * np.eye(20)
    b = rng.normal(size=20)
    x = solve_spd(sp.csr_matrix(S), b, method=method)
    ref = sla.cho_solve(sla.cho_factor(S), b)
    assert np.abs(x - ref).max() <= 1e-10 * np.abs(ref).max()


def test_cg_zero_and_indefinite():
    assert np.all(conjugate_gradient(sp.identity(3, format="csr"), np.zeros(3)) == 0.0)
    with pytest.raises(SolverError):
        conjugate_gradient(sp.diags([1.0, -1.0]).tocsr(), np.ones(2))


def test_unknown_method():
    with pytest.raises(ValueError):
        solve_spd(np.eye(2), np.ones(2), method="magic")


def test_diagonal_pencil():
    S = sp.diags([1.0, 2.0, 3.0, 4.0, 5.0]).tocsr()
    pairs = smallest_eigenpairs((S, sp.identity(5, format="csr")), SolverConfig(m=2))
    assert [p.lam for p in pairs] == pytest.approx([1.0, 2.0], rel=1e-12)
    for j, p in enumerate(pairs):
        e = np.zeros(5)
        e[j] = 1.0
        assert abs(abs(p.y @ e) - 1.0) < 1e-10


def test_nonsymmetric_pencil():
    # S y = lam N y with triangular N: eigenvalues are the reciprocals of diag(N)
    S = sp.identity(4, format="csr")
    N = sp.csr_matrix(np.array([[2.0, 1, 0, 0], [0, 1, 0, 0], [0, 0, 0.2, 0], [0, 0, 0, 0.1]]))
    pairs = smallest_eigenpairs((S, N), SolverConfig(m=2))
    assert [p.lam for p in pairs] == pytest.approx([0.5, 1.0], rel=1e-10)


def test_complex_ritz_rejected():
    # rotation block: eigenvalues 1 +- i, no real smallest pair
    N = sp.csr_matrix(np.array([[1.0, -1, 0, 0, 0], [1, 1, 0, 0, 0], [0, 0, 0.1, 0, 0],
                                [0, 0, 0, 0.05, 0], [0, 0, 0, 0, 0.01]]))
    with pytest.raises(SolverError):
        smallest_eigenpairs((sp.identity(5, format="csr"), N), SolverConfig(m=1))


def test_capacity():
    with pytest.raises(CapacityError):
        smallest_eigenpairs((sp.identity(2, format="csr"), sp.identity(2, format="csr")))
    # one interior vertex: N has rank one, so a second finite eigenvalue does not exist
    p = condense_and_assemble(refine_uniform(refine_uniform(build_domain("square"))), PrimalLowest())
    assert len(smallest_eigenpairs(p)) == 1
    with pytest.raises(CapacityError):
        smallest_eigenpairs(p, SolverConfig(m=2))


def test_block_size_validation():
    with pytest.raises(ValueError):
        SolverConfig(m=3, block_size=4)
    assert SolverConfig(m=5).p == 7


@pytest.mark.parametrize("form", [PrimalLowest(), Primal(1), Ultraweak(0), UltraweakLowestRT()], ids=str)
def test_dense_oracle(form):
    # two red-type sweeps = four bisection sweeps from the two-triangle square
    mesh = build_domain("square")
    for _ in range(4):
        mesh = refine_uniform(mesh)
    p = condense_and_assemble(mesh, form)
    assert p.n_trial <= 400
    pairs = smallest_eigenpairs(p, SolverConfig(m=3))
    w = sla.eigvals(p.S.toarray(), p.N.toarray())
    w = np.sort(w[np.isfinite(w) & (np.abs(w.real) < 1e12)].real)
    w = w[w > 0]
    assert [q.lam for q in pairs] == pytest.approx(list(w[:3]), rel=1e-9)
    assert all(q.lam > 0 for q in pairs)


def _u_norm(pair):
    p = pair.pencil
    u = pair.y[p.trial_range("u")]
    from dpgeig.fespace import FEFunction
    f = FEFunction(p.dofmaps["u"], u)
    rule = quadrature(6)
    vals = f.values_at(np.arange(p.mesh.n_triangles),
                       np.broadcast_to(rule.xy, (p.mesh.n_triangles,) + rule.xy.shape))
    return np.sqrt(np.sum(np.abs(p.mesh.det)[:, None] * rule.weights * vals ** 2))


def test_normalization():
    p = condense_and_assemble(refine_uniform(build_domain("lshape")), Primal(2))
    pair = smallest_eigenpairs(p)[0]
    assert _u_norm(pair) == pytest.approx(1.0, abs=1e-10)
    u = pair.y[p.trial_range("u")]
    big = np.flatnonzero(np.abs(u) > 1e-6 * np.abs(u).max())
    assert u[big[0]] > 0
    scaled = normalize(EigenPair(pair.lam, -7.0 * pair.y, pencil=p))
    assert np.allclose(scaled.y, pair.y, rtol=1e-14, atol=1e-15)


def test_normalization_random_vector():
    p = condense_and_assemble(refine_uniform(build_domain("slit")), Ultraweak(1))
    rng = np.random.default_rng(4)
    pair = normalize(EigenPair(1.0, rng.normal(size=p.n_trial), pencil=p))
    assert _u_norm(pair) == pytest.approx(1.0, abs=1e-12)


def test_degenerate_vector():
    p = condense_and_assemble(refine_uniform(build_domain("square")), PrimalLowest())
    y = np.zeros(p.n_trial)
    y[p.trial_range("sigma_n")] = 1.0
    with pytest.raises(DegenerateEigenvectorError):
        normalize(EigenPair(1.0, y, pencil=p))


def test_deterministic_text():
    def run():
        p = condense_and_assemble(refine_uniform(refine_uniform(build_domain("lshape"))), PrimalLowest())
        return " ".join(f"{q.lam:.17g}" for q in smallest_eigenpairs(p, SolverConfig(m=2)))
    assert run() == run()
