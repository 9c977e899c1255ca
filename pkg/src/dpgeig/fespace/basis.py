"""Reference-element shape functions.

The reference triangle has vertices (0,0), (1,0), (0,1) and barycentric
coordinates ``l0 = 1 - x - y``, ``l1 = x``, ``l2 = y``.  Lagrange nodes are
equispaced and ordered vertices first, then the interior nodes of local edges
0, 1, 2 (each running from vertex ``e+1`` to ``e+2``), then interior nodes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

REF_AREA = 0.5
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class Family(enum.Enum):
    LAGRANGE_ZERO_BC = "S0"      # continuous Lagrange with homogeneous Dirichlet data
    BROKEN = "P"                 # discontinuous Lagrange, scalar or 2-vector
    SKELETON = "Pskel"           # piecewise polynomials on edges (all edges)
    TRACE = "Strace"             # traces of S^k_0 on the skeleton
    BROKEN_RT0 = "RT0pw"         # discontinuous lowest-order Raviart-Thomas
    CR_ZERO_BC = "CR0"           # Crouzeix-Raviart with zero boundary midpoints


@dataclass(frozen=True)
class Space:
    family: Family
    order: int
    components: int = 1

    def __post_init__(self):
        continuous = self.family in (Family.LAGRANGE_ZERO_BC, Family.TRACE)
        if continuous and self.order < 1:
            raise ValueError(f"{self.family.name} needs order >= 1")
        if self.order < 0:
            raise ValueError("negative polynomial order")
        if self.components not in (1, 2):
            raise ValueError("components must be 1 or 2")
        if self.components == 2 and self.family is not Family.BROKEN:
            raise ValueError("only broken Lagrange spaces may be vector valued")
        if self.family is Family.BROKEN_RT0 and self.order != 0:
            raise ValueError("BrokenRT0 has order 0")
        if self.family is Family.CR_ZERO_BC and self.order != 1:
            raise ValueError("Crouzeix-Raviart has order 1")

    def __str__(self):
        comp = "^2" if self.components == 2 else ""
        return f"{self.family.value}{self.order}{comp}"


def ContinuousLagrangeZeroBC(k: int) -> Space:
    return Space(Family.LAGRANGE_ZERO_BC, k)


def BrokenLagrange(k: int, components: int = 1) -> Space:
    return Space(Family.BROKEN, k, components)


def SkeletonPk(k: int) -> Space:
    return Space(Family.SKELETON, k)


def TraceSkeleton(k: int) -> Space:
    return Space(Family.TRACE, k)


def BrokenRT0() -> Space:
    return Space(Family.BROKEN_RT0, 0)


def CrouzeixRaviartZeroBC() -> Space:
    return Space(Family.CR_ZERO_BC, 1)


# -- Lagrange ---------------------------------------------------------------
@lru_cache(maxsize=None)
def lagrange_nodes(k: int) -> tuple[np.ndarray, tuple]:
    """Barycentric nodes of P_k and the entity each node belongs to.

    Entities are ``("vertex", i)``, ``("edge", e, j)`` with ``j`` counted from
    the first endpoint of local edge ``e``, or ``("interior", j)``.
    """
    if k == 0:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), (("interior", 0),)
    nodes, ents = [], []
    for i in range(3):
        b = np.zeros(3)
        b[i] = 1.0
        nodes.append(b)
        ents.append(("vertex", i))
    for e in range(3):
        a, c = (e + 1) % 3, (e + 2) % 3
        for j in range(1, k):
            b = np.zeros(3)
            b[a] = (k - j) / k
            b[c] = j / k
            nodes.append(b)
            ents.append(("edge", e, j - 1))
    n_int = 0
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append(np.array([k - i - j, i, j]) / k)
            ents.append(("interior", n_int))
            n_int += 1
    return np.array(nodes), tuple(ents)


def _monomial_exponents(k: int) -> np.ndarray:
    return np.array([(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)])


def _monomials(k: int, xy: np.ndarray, dx: int = 0, dy: int = 0) -> np.ndarray:
    exps = _monomial_exponents(k)
    x = xy[:, 0:1]
    y = xy[:, 1:2]
    a = exps[:, 0][None, :]
    b = exps[:, 1][None, :]
    cx = np.ones_like(a, dtype=float)
    cy = np.ones_like(b, dtype=float)
    ax, by = a.copy(), b.copy()
    for _ in range(dx):
        cx = cx * ax
        ax = ax - 1
    for _ in range(dy):
        cy = cy * by
        by = by - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = cx * cy * np.where(ax >= 0, x ** np.maximum(ax, 0), 0.0) \
            * np.where(by >= 0, y ** np.maximum(by, 0), 0.0)
    return vals


@lru_cache(maxsize=None)
def _lagrange_coefficients(k: int) -> np.ndarray:
    nodes, _ = lagrange_nodes(k)
    V = _monomials(k, nodes[:, 1:])
    return np.linalg.inv(V)


def lagrange_values(k: int, xy: np.ndarray) -> np.ndarray:
    """(npts, n) values of the P_k nodal basis at reference points ``xy``."""
    xy = np.atleast_2d(xy)
    return _monomials(k, xy) @ _lagrange_coefficients(k)


def lagrange_gradients(k: int, xy: np.ndarray) -> np.ndarray:
    """(npts, n, 2) reference gradients of the P_k nodal basis."""
    xy = np.atleast_2d(xy)
    C = _lagrange_coefficients(k)
    gx = _monomials(k, xy, dx=1) @ C
    gy = _monomials(k, xy, dy=1) @ C
    return np.stack([gx, gy], axis=2)


def lagrange_dim(k: int) -> int:
    return (k + 1) * (k + 2) // 2


# -- 1D edge basis ------------------------------------------------------------
def edge_lagrange_values(k: int, s: np.ndarray) -> np.ndarray:
    """(len(s), k+1) nodal P_k basis on [0, 1] with nodes j/k (constant for k=0)."""
    s = np.asarray(s, dtype=float)
    if k == 0:
        return np.ones((len(s), 1))
    nodes = np.arange(k + 1) / k
    out = np.ones((len(s), k + 1))
    for j in range(k + 1):
        for m in range(k + 1):
            if m != j:
                out[:, j] *= (s - nodes[m]) / (nodes[j] - nodes[m])
    return out


# -- Raviart-Thomas and Crouzeix-Raviart -------------------------------------
def rt0_values(xy: np.ndarray) -> np.ndarray:
    """(npts, 3, 2) reference RT0 functions ``x - p_i`` (divergence 2 = 1/|T_ref|).

    Physical functions follow from the contravariant Piola map
    ``J psi_ref / det J``.
    """
    xy = np.atleast_2d(xy)
    return xy[:, None, :] - REF_VERTICES[None, :, :]


def cr_values(xy: np.ndarray) -> np.ndarray:
    """(npts, 3) Crouzeix-Raviart basis ``1 - 2 l_i``, nodal at edge midpoints."""
    xy = np.atleast_2d(xy)
    lam = np.stack([1.0 - xy[:, 0] - xy[:, 1], xy[:, 0], xy[:, 1]], axis=1)
    return 1.0 - 2.0 * lam


def cr_gradients(xy: np.ndarray) -> np.ndarray:
    xy = np.atleast_2d(xy)
    g = -2.0 * np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.broadcast_to(g, (len(xy), 3, 2)).copy()


def local_dim(space: Space) -> int:
    """Number of shape functions per triangle."""
    fam, k = space.family, space.order
    if fam is Family.LAGRANGE_ZERO_BC:
        return lagrange_dim(k)
    if fam is Family.BROKEN:
        return lagrange_dim(k) * space.components
    if fam is Family.SKELETON:
        return 3 * (k + 1)
    if fam is Family.TRACE:
        return 3 * k
    return 3


def basis_eval(space: Space, xy, what: str = "value") -> np.ndarray:
    """Reference shape functions of ``space`` at reference points ``xy``.

    ``what`` is ``"value"``, ``"gradient"`` or ``"divergence"``.  Returns
    arrays indexed ``[point, function]`` with trailing component axes for
    vector values and gradients.  Skeleton families live on edges and are
    evaluated through :func:`edge_lagrange_values` instead.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    fam, k = space.family, space.order
    if fam in (Family.LAGRANGE_ZERO_BC, Family.BROKEN) or (fam is Family.TRACE and what == "value"):
        kk = k
        if fam is Family.TRACE:
            # vertex and edge nodes of P_k; interior functions vanish on the boundary
            vals = lagrange_values(k, xy)[:, :3 * k]
            return vals
        if what == "value":
            vals = lagrange_values(kk, xy)
            if space.components == 1:
                return vals
            n = vals.shape[1]
            out = np.zeros((len(xy), 2 * n, 2))
            out[:, :n, 0] = vals
            out[:, n:, 1] = vals
            return out
        if what == "gradient" and space.components == 1:
            return lagrange_gradients(kk, xy)
        if what == "divergence" and space.components == 2:
            g = lagrange_gradients(kk, xy)
            return np.concatenate([g[:, :, 0], g[:, :, 1]], axis=1)
    elif fam is Family.BROKEN_RT0:
        if what == "value":
            return rt0_values(xy)
        if what == "divergence":
            return np.full((len(xy), 3), 2.0)
    elif fam is Family.CR_ZERO_BC:
        if what == "value":
            return cr_values(xy)
        if what == "gradient":
            return cr_gradients(xy)
    raise ValueError(f"{what!r} is not available for {space}")
