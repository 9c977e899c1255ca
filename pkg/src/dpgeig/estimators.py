"""A posteriori error estimators and error norms against reference solutions.

Three indicator families are provided:

* the natural estimator, the V-norm of the residual on each triangle;
* the jump estimator of the lowest-order primal method, built from the jumps
  of the broken residual gradient;
* its ultraweak counterpart built from the scalar test component (and,
  equivalently at an eigenpair, from the Raviart-Thomas component).

The jump of a vector field ``w`` across an interior edge is ``w|T1 - w|T2``;
on boundary edges it is the one-sided trace.  Every edge enters the
indicators of both of its triangles.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledPencil, Formulation, Kind, ResidualField, trial_layout
from .eigensolve import EigenPair
from .fespace import FEFunction, lagrange_gradients, line_quadrature, quadrature, to_physical
from .fespace.basis import rt0_values
from .fespace.function import to_reference
from .mesh import KEY_BITS, DomainSpec, Mesh

log = logging.getLogger(__name__)


class EstimatorKind(enum.Enum):
    NATURAL = "eta"
    JUMP_PRIMAL = "etabar"
    JUMP_ULTRAWEAK = "etatilde"


@dataclass(frozen=True)
class IndicatorField:
    """Per-triangle indicators ``eta_T >= 0``.

    ``alternative`` holds a second, theoretically identical evaluation where
    one exists (the Raviart-Thomas jump form of the ultraweak estimator).
    """

    values: np.ndarray
    kind: EstimatorKind
    alternative: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("indicators must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def squared(self) -> np.ndarray:
        return self.values ** 2

    @property
    def global_value(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2)))

    @property
    def alternative_global(self) -> float:
        if self.alternative is None:
            return float("nan")
        return float(np.sqrt(np.sum(self.alternative ** 2)))

    def __len__(self):
        return len(self.values)


# -- natural estimator ------------------------------------------------------------
def eta_natural(residual: ResidualField) -> IndicatorField:
    """``eta_T^2 = eps_T^T G_T eps_T``, the V(T)-norm of the residual."""
    eps = residual.coefficients
    G = residual.pencil.blocks.G
    sq = np.einsum("ni,nij,nj->n", eps, G, eps)
    return IndicatorField(np.sqrt(np.maximum(sq, 0.0)), EstimatorKind.NATURAL)


# -- jump estimators ----------------------------------------------------------------
def edge_jump_norms(mesh: Mesh, field_fn, degree: int = 2) -> np.ndarray:
    """``||[w]_E||^2_{L2(E)}`` for every edge.

    ``field_fn(elements, xy)`` returns the (n, npts, 2) values of a broken
    vector field at reference points ``xy`` of shape (n, npts, 2).  Both
    sides of an interior edge are sampled at the same physical points.
    """
    s, w = line_quadrature(degree)
    p = mesh.vertices[mesh.edges]
    pts = p[:, None, 0] + s[None, :, None] * (p[:, None, 1] - p[:, None, 0])
    t0 = mesh.edge_tris[:, 0]
    vals = field_fn(t0, to_reference(mesh, t0, pts))
    inner = mesh.interior_edges
    t1 = mesh.edge_tris[inner, 1]
    vals[inner] -= field_fn(t1, to_reference(mesh, t1, pts[inner]))
    return mesh.edge_lengths * np.einsum("q,eqc,eqc->e", w, vals, vals)


def _collect(mesh: Mesh, edge_terms: np.ndarray) -> np.ndarray:
    """``|T|^(1/2) sum_{E in E(T)} edge_terms[E]``."""
    return np.sqrt(mesh.areas) * edge_terms[mesh.tri_edges].sum(axis=1)


def _p1_gradient(mesh: Mesh, coef: np.ndarray) -> np.ndarray:
    """(nt, 2) constant physical gradients of broken P1 functions."""
    ref = lagrange_gradients(1, np.array([[1 / 3, 1 / 3]]))[0]  # (3, 2)
    g = coef @ ref
    return np.einsum("nac,na->nc", mesh.inverse_jacobians, g)


def _broken_gradient_fn(mesh: Mesh, coef: np.ndarray, k: int):
    def fn(elements, xy):
        n, npts = xy.shape[:2]
        ref = lagrange_gradients(k, xy.reshape(-1, 2)).reshape(n, npts, -1, 2)
        g = np.einsum("npia,ni->npa", ref, coef[elements])
        return np.einsum("nac,npa->npc", mesh.inverse_jacobians[elements], g)
    return fn


def eta_bar(residual: ResidualField) -> IndicatorField:
    """Jump estimator of the primal method with k = 1.

    ``etabar_T^2 = |T|^(1/2) sum_{E in E(T)} ||[grad_h eps_h]_E||^2_{L2(E)}``
    """
    pencil = residual.pencil
    form = pencil.formulation
    if not form.is_primal or form.order != 1:
        raise ValueError(f"the primal jump estimator needs the primal k=1 method, got {form}")
    mesh = pencil.mesh
    eps = residual.component("v")
    r = form.test_order
    if r == 1:
        g = _p1_gradient(mesh, eps)
        fn = lambda elements, xy: np.repeat(g[elements][:, None, :], xy.shape[1], axis=1)  # noqa: E731
        terms = edge_jump_norms(mesh, fn, 1)
    else:
        terms = edge_jump_norms(mesh, _broken_gradient_fn(mesh, eps, r), 2 * (r - 1))
    return IndicatorField(np.sqrt(_collect(mesh, terms)), EstimatorKind.JUMP_PRIMAL)


def _rt0_fn(mesh: Mesh, coef: np.ndarray):
    def fn(elements, xy):
        n, npts = xy.shape[:2]
        psi = rt0_values(xy.reshape(-1, 2)).reshape(n, npts, 3, 2)
        v = np.einsum("npia,ni->npa", psi, coef[elements])
        J = mesh.jacobians[elements]
        return np.einsum("nca,npa->npc", J, v) / mesh.det[elements][:, None, None]
    return fn


def eta_tilde(residual: ResidualField, rtol: float = 1e-8) -> IndicatorField:
    """Jump estimator of the ultraweak method with Raviart-Thomas test space.

    The indicators use the jumps of ``grad_h v_h``; the jumps of ``tau_h``
    are evaluated as well and stored in ``alternative``.  At a discrete
    eigenpair ``tau_h = grad_h v_h`` so the two agree; a mismatch above
    ``rtol`` is logged.
    """
    pencil = residual.pencil
    if pencil.formulation.kind is not Kind.ULTRAWEAK_RT:
        raise ValueError(f"the ultraweak jump estimator needs the RT test space, got {pencil.formulation}")
    mesh = pencil.mesh
    g = _p1_gradient(mesh, residual.component("v"))
    fn = lambda elements, xy: np.repeat(g[elements][:, None, :], xy.shape[1], axis=1)  # noqa: E731
    grad_terms = _collect(mesh, edge_jump_norms(mesh, fn, 1))
    tau_terms = _collect(mesh, edge_jump_norms(mesh, _rt0_fn(mesh, residual.component("tau")), 2))
    a, b = np.sqrt(grad_terms.sum()), np.sqrt(tau_terms.sum())
    # below ~1e-10 both sums are round-off and their ratio is meaningless
    if abs(a - b) > rtol * max(a, b) and max(a, b) > 1e-10:
        log.warning("grad v and tau jump forms differ: %.6e vs %.6e", a, b)
    return IndicatorField(np.sqrt(grad_terms), EstimatorKind.JUMP_ULTRAWEAK, np.sqrt(tau_terms))


def estimate(residual: ResidualField, kind: EstimatorKind | str) -> IndicatorField:
    kind = EstimatorKind(kind) if isinstance(kind, str) else kind
    if kind is EstimatorKind.NATURAL:
        return eta_natural(residual)
    if kind is EstimatorKind.JUMP_PRIMAL:
        return eta_bar(residual)
    return eta_tilde(residual)


def jump_estimator(residual: ResidualField) -> IndicatorField | None:
    """The jump estimator matching the formulation, or None if there is none."""
    form = residual.pencil.formulation
    if form.is_primal and form.order == 1:
        return eta_bar(residual)
    if form.kind is Kind.ULTRAWEAK_RT:
        return eta_tilde(residual)
    return None


# -- Crouzeix-Raviart lemma ---------------------------------------------------------------
def _p1_to_cr(mesh: Mesh) -> sp.csr_matrix:
    """Embedding S^1_0 -> CR^1_0: midpoint value = mean of the endpoint values."""
    free = ~mesh.boundary_vertices
    vnum = np.full(mesh.n_vertices, -1)
    vnum[free] = np.arange(int(free.sum()))
    inner = mesh.interior_edges
    rows, cols = [], []
    for j in range(2):
        v = vnum[mesh.edges[inner, j]]
        keep = v >= 0
        rows.append(np.arange(len(inner))[keep])
        cols.append(v[keep])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.full(len(rows), 0.5), (rows, cols)), shape=(len(inner), int(free.sum())))


def _cr_gradients(mesh: Mesh, w: np.ndarray) -> np.ndarray:
    """(nt, 2) gradients of the CR^1_0 function with interior-edge values ``w``."""
    enum_ = np.full(mesh.n_edges, -1)
    enum_[mesh.interior_edges] = np.arange(len(mesh.interior_edges))
    loc = np.append(w, 0.0)[enum_[mesh.tri_edges]]
    ref = -2.0 * np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.einsum("nac,na->nc", mesh.inverse_jacobians, loc @ ref)


def cr_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Broken stiffness matrix of CR^1_0 on interior-edge midpoints."""
    enum_ = np.full(mesh.n_edges, -1)
    enum_[mesh.interior_edges] = np.arange(len(mesh.interior_edges))
    ref = -2.0 * np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    G = np.einsum("nac,ia->nic", mesh.inverse_jacobians, ref)
    K = mesh.areas[:, None, None] * np.einsum("nic,njc->nij", G, G)
    cell = enum_[mesh.tri_edges]
    R = np.broadcast_to(cell[:, :, None], K.shape)
    C = np.broadcast_to(cell[:, None, :], K.shape)
    keep = (R >= 0) & (C >= 0)
    n = len(mesh.interior_edges)
    return sp.csr_matrix((K[keep], (R[keep], C[keep])), shape=(n, n))


def project_cr_orthogonal(mesh: Mesh, w: np.ndarray) -> np.ndarray:
    """Remove from ``w`` in CR^1_0 its broken-energy projection onto S^1_0."""
    P = _p1_to_cr(mesh)
    if P.shape[1] == 0:
        return np.asarray(w, dtype=float).copy()
    K = cr_stiffness(mesh)
    A = (P.T @ K @ P).tocsc()
    z = spla.spsolve(A, P.T @ (K @ w))
    return w - P @ z


def cr_lemma_terms(mesh: Mesh, w: np.ndarray) -> tuple[float, float, float]:
    """Broken energy norm squared and the normal / tangential jump sums of ``w``."""
    g = _cr_gradients(mesh, w)
    energy = float(np.sum(mesh.areas * np.einsum("nc,nc->n", g, g)))
    jump = g[mesh.edge_tris[:, 0]].copy()
    inner = mesh.interior_edges
    jump[inner] -= g[mesh.edge_tris[inner, 1]]
    jn = np.einsum("ec,ec->e", jump, mesh.edge_normals) ** 2 * mesh.edge_lengths
    jt = np.einsum("ec,ec->e", jump, mesh.edge_tangents) ** 2 * mesh.edge_lengths
    return energy, float(_collect(mesh, jn).sum()), float(_collect(mesh, jt).sum())


# -- reference solutions and error norms ---------------------------------------------
@dataclass
class ReferenceSolution:
    """An eigenpair on a fine mesh of the same bisection forest as the study meshes.

    ``lam`` is the fine discrete eigenvalue; ``lam_exact`` an optional known
    value used only for reporting.
    """

    mesh: Mesh
    formulation: Formulation
    y: np.ndarray
    lam: float
    lam_exact: float | None = None

    @classmethod
    def from_pair(cls, pair: EigenPair, lam_exact: float | None = None) -> "ReferenceSolution":
        p = pair.pencil
        return cls(p.mesh, p.formulation, pair.y, pair.lam, lam_exact)

    @cached_property
    def layout(self):
        return trial_layout(self.mesh, self.formulation)

    @property
    def n_dof(self) -> int:
        return self.layout[2]

    def fields(self) -> dict:
        dofmaps, offsets, _ = self.layout
        return _trial_fields(self.formulation, self.y, dofmaps, offsets)

    def save(self, path) -> None:
        m = self.mesh
        np.savez(path, vertices=m.vertices, triangles=m.triangles, refedge=m.refedge,
                 root=m.root, key=m.key, y=self.y, lam=self.lam,
                 lam_exact=np.nan if self.lam_exact is None else self.lam_exact,
                 domain=m.domain.value if m.domain is not None else "",
                 kind=self.formulation.kind.value, order=self.formulation.order,
                 test_order=-1 if self.formulation.test_order is None else self.formulation.test_order)

    @classmethod
    def load(cls, path) -> "ReferenceSolution":
        with np.load(path) as d:
            domain = DomainSpec(str(d["domain"])) if str(d["domain"]) else None
            mesh = Mesh(d["vertices"], d["triangles"], d["refedge"], domain, d["root"], d["key"])
            to = int(d["test_order"])
            form = Formulation(Kind(str(d["kind"])), int(d["order"]), None if to < 0 else to)
            lam_exact = float(d["lam_exact"])
            return cls(mesh, form, d["y"].copy(), float(d["lam"]),
                       None if np.isnan(lam_exact) else lam_exact)


def _trial_fields(formulation: Formulation, y, dofmaps, offsets) -> dict:
    out = {}
    for name in ("u", "sigma"):
        if name in dofmaps:
            dm = dofmaps[name]
            out[name] = FEFunction(dm, y[offsets[name]: offsets[name] + dm.n_global])
    return out


def _pair_fields(pair: EigenPair) -> dict:
    p = pair.pencil
    return _trial_fields(p.formulation, pair.y, p.dofmaps, p.offsets)


def ancestor_map(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Index of the coarse triangle containing each fine triangle.

    Both meshes must descend from the same coarse mesh by bisection; the
    lookup uses the genealogy keys, no geometric search is involved.
    """
    gc, gf = coarse.generation, fine.generation
    order = np.argsort(coarse.forest_keys)
    keys = coarse.forest_keys[order]
    anc = np.full(fine.n_triangles, -1, dtype=np.int64)
    for g in np.unique(gc):
        sel = np.flatnonzero((gf >= g) & (anc < 0))
        if sel.size == 0:
            continue
        cand = (fine.root[sel] << KEY_BITS) | (fine.key[sel] >> (gf[sel] - g))
        pos = np.clip(np.searchsorted(keys, cand), 0, len(keys) - 1)
        hit = keys[pos] == cand
        anc[sel[hit]] = order[pos[hit]]
    if np.any(anc < 0):
        raise ValueError("the reference mesh does not refine the study mesh")
    return anc


@dataclass
class _Transfer:
    """Fine quadrature points mapped into the coarse mesh."""

    weights: np.ndarray   # (nf, nq) physical weights
    fine_xy: np.ndarray   # (nq, 2)
    coarse_el: np.ndarray  # (nf,)
    coarse_xy: np.ndarray  # (nf, nq, 2)


def _transfer(coarse: Mesh, fine: Mesh, degree: int) -> _Transfer:
    rule = quadrature(degree)
    anc = ancestor_map(coarse, fine)
    pts = to_physical(fine, np.arange(fine.n_triangles), rule.xy)
    cxy = to_reference(coarse, anc, pts)
    w = np.abs(fine.det)[:, None] * rule.weights[None, :]
    return _Transfer(w, rule.xy, anc, cxy)


def _values(f: FEFunction, elements, xy, what="value"):
    if xy.ndim == 2:
        xy = np.broadcast_to(xy, (len(elements),) + xy.shape)
    return f.values_at(elements, xy, what)


def _differences(pair: EigenPair, reference: ReferenceSolution, with_gradient: bool):
    fh = _pair_fields(pair)
    fr = reference.fields()
    ku = fr["u"].space.order
    tr = _transfer(pair.pencil.mesh, reference.mesh, min(2 * max(ku, 1) + 2, 20))
    allf = np.arange(reference.mesh.n_triangles)
    ur = _values(fr["u"], allf, tr.fine_xy)
    uh = _values(fh["u"], tr.coarse_el, tr.coarse_xy)
    sign = 1.0 if np.sum(tr.weights * ur * uh) >= 0 else -1.0
    out = {"w": tr.weights, "sign": sign, "u": (ur, sign * uh)}
    if with_gradient:
        out["grad"] = (_values(fr["u"], allf, tr.fine_xy, "gradient"),
                       sign * _values(fh["u"], tr.coarse_el, tr.coarse_xy, "gradient"))
    if "sigma" in fr:
        out["sigma"] = (_values(fr["sigma"], allf, tr.fine_xy),
                        sign * _values(fh["sigma"], tr.coarse_el, tr.coarse_xy))
    return out


def _sq(w, a, b):
    d = a - b
    if d.ndim == 3:
        return float(np.sum(w * np.einsum("npc,npc->np", d, d)))
    return float(np.sum(w * d * d))


def energy_error(pair: EigenPair, reference: ReferenceSolution) -> float:
    """Computable surrogate of ``||u - u_h||_U`` against a nested reference.

    Primal: broken H1 norm of ``u_ref - u_h``.  Ultraweak: L2 norms of the
    ``u`` and ``sigma`` differences.  Skeleton components are left out.
    The sign of ``u_h`` is aligned with the reference first.
    """
    if pair.pencil is None:
        raise ValueError("the eigenpair must carry its pencil")
    primal = reference.formulation.is_primal
    d = _differences(pair, reference, with_gradient=primal)
    w = d["w"]
    err = _sq(w, *d["u"])
    if primal:
        err += _sq(w, *d["grad"])
    else:
        err += _sq(w, *d["sigma"])
    return float(np.sqrt(err))


def higher_order_term(pair: EigenPair, reference: ReferenceSolution) -> float:
    """``||lam_ref u_ref - lam_h u_h||_L2`` with sign-aligned eigenfunctions."""
    if pair.pencil is None:
        raise ValueError("the eigenpair must carry its pencil")
    d = _differences(pair, reference, with_gradient=False)
    ur, uh = d["u"]
    return float(np.sqrt(_sq(d["w"], reference.lam * ur, pair.lam * uh)))


def efficiency_ratio(eta: float, energy_err: float) -> float:
    if not energy_err > 0:
        raise ValueError("efficiency ratio needs a positive error")
    return float(eta) / float(energy_err)


def global_residual_norm(residual: ResidualField) -> float:
    """``||eps_h||_V`` from the globally assembled block-diagonal Gram matrix."""
    G, _, _ = residual.pencil.global_blocks()
    e = residual.coefficients.ravel()
    return float(np.sqrt(e @ (G @ e)))


__all__ = [
    "EstimatorKind", "IndicatorField", "ReferenceSolution", "ancestor_map", "cr_lemma_terms",
    "cr_stiffness", "edge_jump_norms", "efficiency_ratio", "energy_error", "estimate", "eta_bar",
    "eta_natural", "eta_tilde", "global_residual_norm", "higher_order_term", "jump_estimator",
    "project_cr_orthogonal",
]
