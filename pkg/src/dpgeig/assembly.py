"""Element blocks of the DPG formulations and the condensed eigenvalue pencil.

For every triangle ``T`` we build the test Gram matrix ``G_T``, the matrix
``B_T`` of the bilinear form ``b`` (rows: test, columns: trial) and the
matrix ``M_T`` of ``m`` (nonzero only in the columns of the volumetric trial
component ``u``).  Because the test space is broken, the residual variable
can be eliminated triangle by triangle, which leaves the pencil

    S y = lambda N y,   S = B^T G^-1 B,   N = B^T G^-1 M.

All integrals are computed from reference-element tensors: the affine maps
make every coefficient constant per triangle.

Trial DOFs are ordered volumetric first, skeleton second: ``u`` (and ``sigma``
for ultraweak formulations), then ``u_hat`` and ``sigma_n``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fespace import (BrokenLagrange, BrokenRT0, ContinuousLagrangeZeroBC, DofMap, Family,
                      SkeletonPk, Space, TraceSkeleton, build_dofmap, edge_lagrange_values,
                      edge_points, lagrange_gradients, lagrange_values, line_quadrature,
                      quadrature)
from .fespace.basis import rt0_values
from .mesh import Mesh


class AssemblyError(RuntimeError):
    pass


class Kind(enum.Enum):
    PRIMAL = "primal"
    ULTRAWEAK = "ultraweak"
    ULTRAWEAK_AUGMENTED = "ultraweak_augmented"
    ULTRAWEAK_RT = "ultraweak_rt"


@dataclass(frozen=True)
class Formulation:
    """One of the DPG discretizations of the Dirichlet Laplacian.

    ``test_order`` only applies to the primal formulation; it defaults to
    ``order + 1``.  ``test_order=1`` with ``order=1`` gives the lowest-order
    primal method whose residual is a Crouzeix-Raviart function.
    """

    kind: Kind
    order: int
    test_order: int | None = None

    def __post_init__(self):
        if self.kind is Kind.PRIMAL:
            if self.order < 1:
                raise ValueError("the primal formulation needs k >= 1")
            if self.test_order is None:
                object.__setattr__(self, "test_order", self.order + 1)
            elif self.test_order < 1:
                raise ValueError("test order must be >= 1")
        else:
            if self.test_order is not None:
                raise ValueError("test_order is only configurable for the primal formulation")
            if self.order < 0:
                raise ValueError("ultraweak formulations need k >= 0")
            if self.kind is Kind.ULTRAWEAK_RT and self.order != 0:
                raise ValueError("the Raviart-Thomas test space is lowest order only")

    def __str__(self):
        if self.kind is Kind.PRIMAL:
            return f"primal(k={self.order}, test=P{self.test_order})"
        return f"{self.kind.value}(k={self.order})"

    @property
    def is_primal(self) -> bool:
        return self.kind is Kind.PRIMAL

    @property
    def quad_degree(self) -> int:
        return 2 * (self.order + 2) + 2

    @property
    def trial_spaces(self) -> tuple[tuple[str, Space], ...]:
        k = self.order
        if self.is_primal:
            return (("u", ContinuousLagrangeZeroBC(k)), ("sigma_n", SkeletonPk(k - 1)))
        ku = k + 1 if self.kind is Kind.ULTRAWEAK_AUGMENTED else k
        return (("u", BrokenLagrange(ku)), ("sigma", BrokenLagrange(k, 2)),
                ("u_hat", TraceSkeleton(k + 1)), ("sigma_n", SkeletonPk(k)))

    @property
    def test_spaces(self) -> tuple[tuple[str, Space], ...]:
        if self.is_primal:
            return (("v", BrokenLagrange(self.test_order)),)
        if self.kind is Kind.ULTRAWEAK_RT:
            return (("v", BrokenLagrange(1)), ("tau", BrokenRT0()))
        r = self.order + 2
        return (("v", BrokenLagrange(r)), ("tau", BrokenLagrange(r, 2)))


def Primal(k: int, test_order: int | None = None) -> Formulation:
    return Formulation(Kind.PRIMAL, k, test_order)


def PrimalLowest() -> Formulation:
    return Formulation(Kind.PRIMAL, 1, 1)


def Ultraweak(k: int) -> Formulation:
    return Formulation(Kind.ULTRAWEAK, k)


def UltraweakAugmented(k: int) -> Formulation:
    return Formulation(Kind.ULTRAWEAK_AUGMENTED, k)


def UltraweakLowestRT() -> Formulation:
    return Formulation(Kind.ULTRAWEAK_RT, 0)


def parse_formulation(kind: str, order: int, test_order: int | None = None) -> Formulation:
    kind = kind.strip().lower()
    aliases = {"uw": "ultraweak", "ultraweak+": "ultraweak_augmented", "augmented": "ultraweak_augmented",
               "ultraweak_lowest_rt": "ultraweak_rt", "uw_rt": "ultraweak_rt"}
    kind = aliases.get(kind, kind)
    try:
        k = Kind(kind)
    except ValueError:
        raise ValueError(f"unknown formulation {kind!r}") from None
    return Formulation(k, order, test_order if k is Kind.PRIMAL else None)


# -- reference tensors ---------------------------------------------------------
class _Ref:
    """Reference-triangle integrals shared by all elements."""

    def __init__(self, degree: int):
        self.rule = quadrature(degree)
        self.s, self.ws = line_quadrature(degree)
        self.edge_xy = edge_points(self.s)[:, :, 1:]
        self._cache = {}

    def val(self, k, xy=None):
        return lagrange_values(k, self.rule.xy if xy is None else xy)

    def grad(self, k):
        return lagrange_gradients(k, self.rule.xy)

    def mass(self, ka, kb):
        return np.einsum("q,qi,qj->ij", self.rule.weights, self.val(ka), self.val(kb))

    def stiff(self, ka, kb):
        """(2, 2, na, nb): int d_a phi_i d_b psi_j."""
        return np.einsum("q,qia,qjb->abij", self.rule.weights, self.grad(ka), self.grad(kb))

    def grad_val(self, ka, kb):
        """(2, na, nb): int d_a phi_i psi_j."""
        return np.einsum("q,qia,qj->aij", self.rule.weights, self.grad(ka), self.val(kb))

    def edge_val(self, k, ntrunc=None):
        """(3, nq, n) 2D basis restricted to each local edge."""
        out = np.stack([lagrange_values(k, self.edge_xy[e]) for e in range(3)])
        return out if ntrunc is None else out[:, :, :ntrunc]

    def edge_pair(self, ka, skel_k):
        """(3, na, nskel): int_edge phi_i psi_j on the unit parameter interval."""
        psi = edge_lagrange_values(skel_k, self.s)
        return np.einsum("q,eqi,qj->eij", self.ws, self.edge_val(ka), psi)

    def edge_pair2d(self, ka, kb, nb):
        return np.einsum("q,eqi,eqj->eij", self.ws, self.edge_val(ka), self.edge_val(kb, nb))


def _stiffness(ref_stiff, C, absdet):
    return absdet[:, None, None] * np.einsum("nab,abij->nij", C, ref_stiff)


@dataclass
class ElementBlocks:
    """Per-element matrices and local-to-global trial maps.

    ``G`` has shape (nt, n_test), ``B`` and ``M`` shape (nt, n_test, n_trial).
    ``trial_dofs`` holds global trial indices (-1: eliminated Dirichlet DOF).
    """

    G: np.ndarray
    B: np.ndarray
    M: np.ndarray
    trial_dofs: np.ndarray
    test_slices: dict
    trial_slices: dict


def element_blocks(mesh: Mesh, formulation: Formulation, dofmaps=None, offsets=None,
                   degree: int | None = None) -> ElementBlocks:
    """Gram, b-form and m-form matrices of every triangle."""
    degree = formulation.quad_degree if degree is None else degree
    ref = _Ref(degree)
    if dofmaps is None:
        dofmaps = {name: build_dofmap(space, mesh) for name, space in formulation.trial_spaces}
    if offsets is None:
        offsets, start = {}, 0
        for name, _ in formulation.trial_spaces:
            offsets[name] = start
            start += dofmaps[name].n_global
    absdet = np.abs(mesh.det)
    Jinv = mesh.inverse_jacobians
    C = np.einsum("nac,nbc->nab", Jinv, Jinv)
    lengths = mesh.local_edge_lengths
    orient = mesh.edge_orientation.astype(float)
    normals = mesh.outward_normals
    if formulation.is_primal:
        blocks = _primal_blocks(formulation, ref, absdet, C, lengths, orient)
    else:
        blocks = _ultraweak_blocks(formulation, ref, mesh, absdet, Jinv, C, lengths, orient, normals)
    G, B, M, test_slices, trial_slices = blocks

    cols = []
    for name, _ in formulation.trial_spaces:
        cell = dofmaps[name].cell_dofs
        cols.append(np.where(cell >= 0, cell + offsets[name], -1))
    trial_dofs = np.concatenate(cols, axis=1)
    return ElementBlocks(G, B, M, trial_dofs, test_slices, trial_slices)


def _slices(sizes):
    out, start = {}, 0
    for name, n in sizes:
        out[name] = slice(start, start + n)
        start += n
    return out, start


def _primal_blocks(form, ref, absdet, C, lengths, orient):
    k, r = form.order, form.test_order
    nr = (r + 1) * (r + 2) // 2
    nu = (k + 1) * (k + 2) // 2
    ns = 3 * k
    nt = len(absdet)
    test_slices, n_test = _slices([("v", nr)])
    trial_slices, n_trial = _slices([("u", nu), ("sigma_n", ns)])

    G = _stiffness(ref.stiff(r, r), C, absdet) + absdet[:, None, None] * ref.mass(r, r)
    B = np.zeros((nt, n_test, n_trial))
    B[:, :, :nu] = _stiffness(ref.stiff(r, k), C, absdet)
    ep = ref.edge_pair(r, k - 1)  # (3, nr, k)
    for e in range(3):
        fac = -(orient[:, e] * lengths[:, e])
        B[:, :, nu + e * k: nu + (e + 1) * k] = fac[:, None, None] * ep[e]
    M = np.zeros_like(B)
    M[:, :, :nu] = absdet[:, None, None] * ref.mass(r, k)
    return G, B, M, test_slices, trial_slices


def _ultraweak_blocks(form, ref, mesh, absdet, Jinv, C, lengths, orient, normals):
    k = form.order
    ku = k + 1 if form.kind is Kind.ULTRAWEAK_AUGMENTED else k
    rt = form.kind is Kind.ULTRAWEAK_RT
    r = 1 if rt else k + 2
    nr = (r + 1) * (r + 2) // 2
    n_tau = 3 if rt else 2 * nr
    n_u = (ku + 1) * (ku + 2) // 2
    n_k = (k + 1) * (k + 2) // 2
    n_hat = 3 * (k + 1)
    n_sn = 3 * (k + 1)
    nt = len(absdet)
    test_slices, n_test = _slices([("v", nr), ("tau", n_tau)])
    trial_slices, n_trial = _slices([("u", n_u), ("sigma", 2 * n_k), ("u_hat", n_hat), ("sigma_n", n_sn)])
    sv, st = test_slices["v"], test_slices["tau"]
    su, ss, sh, sn = (trial_slices[x] for x in ("u", "sigma", "u_hat", "sigma_n"))

    G = np.zeros((nt, n_test, n_test))
    G[:, sv, sv] = _stiffness(ref.stiff(r, r), C, absdet) + absdet[:, None, None] * ref.mass(r, r)
    B = np.zeros((nt, n_test, n_trial))
    M = np.zeros((nt, n_test, n_trial))

    # -(sigma, grad v)
    D = ref.grad_val(r, k)  # (2, nr, n_k)
    for c in range(2):
        B[:, sv, ss.start + c * n_k: ss.start + (c + 1) * n_k] = \
            -absdet[:, None, None] * np.einsum("na,aij->nij", Jinv[:, :, c], D)
    # <v, sigma_n>
    ep = ref.edge_pair(r, k)
    for e in range(3):
        fac = orient[:, e] * lengths[:, e]
        B[:, sv, sn.start + e * (k + 1): sn.start + (e + 1) * (k + 1)] = fac[:, None, None] * ep[e]
    # m(u; v, tau) = (u, v)
    M[:, sv, su] = absdet[:, None, None] * ref.mass(r, ku)

    if rt:
        psi = rt0_values(ref.rule.xy)  # (nq, 3, 2)
        w = ref.rule.weights
        R = np.einsum("q,qia,qjb->abij", w, psi, psi)
        J = mesh.jacobians
        JtJ = np.einsum("nca,ncb->nab", J, J)
        G[:, st, st] = np.einsum("nab,abij->nij", JtJ, R) / absdet[:, None, None] \
            + (2.0 / absdet)[:, None, None] * np.ones((3, 3))
        # (sigma, tau): int (J psi_i / det) . phi_j e_c
        RT = np.einsum("q,qia,qj->aij", w, psi, ref.val(k))
        for c in range(2):
            B[:, st, ss.start + c * n_k: ss.start + (c + 1) * n_k] = np.einsum("na,aij->nij", J[:, c, :], RT)
        # -(u, div tau), div psi_i = 2 / det
        mean_u = np.einsum("q,qj->j", w, ref.val(ku))
        B[:, st, su] = -2.0 * np.broadcast_to(mean_u, (nt, 3, n_u))
        # <u_hat, tau . n>: psi_i . n_e = delta_ie / |E_e|
        hat = ref.edge_val(k + 1, n_hat)  # (3, nq, n_hat)
        for e in range(3):
            B[:, st.start + e, sh] = np.einsum("q,qj->j", ref.ws, hat[e])
    else:
        K = ref.stiff(r, r)
        Mr = ref.mass(r, r)
        for c in range(2):
            for d in range(2):
                blk = absdet[:, None, None] * np.einsum("na,nb,abij->nij", Jinv[:, :, c], Jinv[:, :, d], K)
                if c == d:
                    blk = blk + absdet[:, None, None] * Mr
                G[:, st.start + c * nr: st.start + (c + 1) * nr, st.start + d * nr: st.start + (d + 1) * nr] = blk
        Mrk = ref.mass(r, k)
        Dku = ref.grad_val(r, ku)
        pair = ref.edge_pair2d(r, k + 1, n_hat)  # (3, nr, n_hat)
        for c in range(2):
            rows = slice(st.start + c * nr, st.start + (c + 1) * nr)
            # (sigma, tau)
            B[:, rows, ss.start + c * n_k: ss.start + (c + 1) * n_k] = absdet[:, None, None] * Mrk
            # -(u, div tau)
            B[:, rows, su] = -absdet[:, None, None] * np.einsum("na,aij->nij", Jinv[:, :, c], Dku)
            # <u_hat, tau . n>
            B[:, rows, sh] = np.einsum("ne,eij->nij", lengths * normals[:, :, c], pair)
    return G, B, M, test_slices, trial_slices


# -- condensed pencil --------------------------------------------------------------
@dataclass
class AssembledPencil:
    """Condensed pencil ``S y = lambda N y`` and everything needed to recover residuals."""

    mesh: Mesh
    formulation: Formulation
    S: sp.csr_matrix
    N: sp.csr_matrix
    blocks: ElementBlocks
    dofmaps: dict
    offsets: dict
    L_inv: np.ndarray = field(repr=False)

    @property
    def n_trial(self) -> int:
        return self.S.shape[0]

    def trial_range(self, name: str) -> slice:
        start = self.offsets[name]
        return slice(start, start + self.dofmaps[name].n_global)

    @cached_property
    def u_mass(self) -> sp.csr_matrix:
        """L2 mass matrix of the volumetric trial component."""
        space = dict(self.formulation.trial_spaces)["u"]
        k = space.order
        rule = quadrature(max(2 * k, 1))
        phi = lagrange_values(k, rule.xy)
        ref = np.einsum("q,qi,qj->ij", rule.weights, phi, phi)
        loc = np.abs(self.mesh.det)[:, None, None] * ref
        cell = self.dofmaps["u"].cell_dofs
        return _scatter(loc, cell, cell, self.dofmaps["u"].n_global, self.dofmaps["u"].n_global)

    def local_trial(self, y: np.ndarray) -> np.ndarray:
        """(nt, n_trial_local) element restrictions of a global trial vector."""
        padded = np.append(np.asarray(y, dtype=float), 0.0)
        cell = self.blocks.trial_dofs
        return padded[np.where(cell >= 0, cell, -1)]

    def global_blocks(self):
        """Block-diagonal G and global B, M with test DOFs numbered element by element."""
        G, B, M = self.blocks.G, self.blocks.B, self.blocks.M
        nt, ntest, _ = B.shape
        test = np.arange(nt * ntest).reshape(nt, ntest)
        n_test = nt * ntest
        Gg = _scatter(G, test, test, n_test, n_test)
        Bg = _scatter(B, test, self.blocks.trial_dofs, n_test, self.n_trial)
        Mg = _scatter(M, test, self.blocks.trial_dofs, n_test, self.n_trial)
        return Gg, Bg, Mg


def _scatter(local, rows, cols, n_rows, n_cols) -> sp.csr_matrix:
    R = np.broadcast_to(rows[:, :, None], local.shape)
    Cc = np.broadcast_to(cols[:, None, :], local.shape)
    keep = (R >= 0) & (Cc >= 0)
    A = sp.coo_matrix((local[keep], (R[keep], Cc[keep])), shape=(n_rows, n_cols))
    A.sum_duplicates()
    return A.tocsr()


def _cholesky_inverse(G: np.ndarray) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(G).all(axis=(1, 2)))
    if bad.size:
        raise AssemblyError(f"Gram matrix of element {int(bad[0])} is not finite (degenerate triangle?)")
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        for t, g in enumerate(G):
            try:
                np.linalg.cholesky(g)
            except np.linalg.LinAlgError:
                raise AssemblyError(f"Gram matrix of element {t} is not positive definite") from None
        raise
    return np.linalg.inv(L)


def gram_matrix(mesh: Mesh, formulation: Formulation, t: int = 0) -> np.ndarray:
    return element_blocks(mesh, formulation).G[t]


def bform(mesh: Mesh, formulation: Formulation, t: int = 0) -> np.ndarray:
    return element_blocks(mesh, formulation).B[t]


def mform(mesh: Mesh, formulation: Formulation, t: int = 0) -> np.ndarray:
    return element_blocks(mesh, formulation).M[t]


def trial_layout(mesh: Mesh, formulation: Formulation) -> tuple[dict, dict, int]:
    """DOF maps and global offsets of the trial components, and the trial dimension."""
    dofmaps = {name: build_dofmap(space, mesh) for name, space in formulation.trial_spaces}
    offsets, start = {}, 0
    for name, _ in formulation.trial_spaces:
        offsets[name] = start
        start += dofmaps[name].n_global
    return dofmaps, offsets, start


def condense_and_assemble(mesh: Mesh, formulation: Formulation) -> AssembledPencil:
    """Eliminate the residual element by element and assemble ``(S, N)``."""
    dofmaps, offsets, n = trial_layout(mesh, formulation)
    blocks = element_blocks(mesh, formulation, dofmaps, offsets)
    L_inv = _cholesky_inverse(blocks.G)
    W = L_inv @ blocks.B
    WM = L_inv @ blocks.M
    S_loc = np.einsum("nki,nkj->nij", W, W)
    S_loc = 0.5 * (S_loc + S_loc.transpose(0, 2, 1))
    N_loc = np.einsum("nki,nkj->nij", W, WM)
    dofs = blocks.trial_dofs
    S = _scatter(S_loc, dofs, dofs, n, n)
    N = _scatter(N_loc, dofs, dofs, n, n)
    return AssembledPencil(mesh, formulation, S, N, blocks, dofmaps, offsets, L_inv)


@dataclass
class ResidualField:
    """Element-wise coefficients of the residual in the local test basis."""

    coefficients: np.ndarray
    pencil: AssembledPencil = field(repr=False)

    def component(self, name: str) -> np.ndarray:
        return self.coefficients[:, self.pencil.blocks.test_slices[name]]


def recover_residual(pencil: AssembledPencil, y: np.ndarray, lam: float) -> ResidualField:
    """``eps_T = G_T^-1 (lam M_T y_T - B_T y_T)`` on every triangle."""
    y = np.asarray(y, dtype=float)
    if y.shape != (pencil.n_trial,):
        raise ValueError(f"trial vector must have length {pencil.n_trial}")
    yl = pencil.local_trial(y)
    b = pencil.blocks
    rhs = lam * np.einsum("nij,nj->ni", b.M, yl) - np.einsum("nij,nj->ni", b.B, yl)
    Li = pencil.L_inv
    eps = np.einsum("nki,nk->ni", Li, np.einsum("nkj,nj->nk", Li, rhs))
    return ResidualField(eps, pencil)


def write_triplets(A: sp.spmatrix, path) -> None:
    """Coordinate dump ``row col value`` of a sparse matrix."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")
