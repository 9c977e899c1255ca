"""Finite element functions: evaluation, point location and interpolation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import DomainSpec, Mesh
from .basis import (Family, Space, basis_eval, edge_lagrange_values, lagrange_gradients,
                    lagrange_nodes, lagrange_values)
from .dofmap import DofMap, build_dofmap


@dataclass(frozen=True)
class FEFunction:
    dofmap: DofMap
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.dofmap.n_global,):
            raise ValueError(f"expected {self.dofmap.n_global} coefficients, got {c.shape}")
        object.__setattr__(self, "coefficients", c)

    @property
    def space(self) -> Space:
        return self.dofmap.space

    @property
    def mesh(self) -> Mesh:
        return self.dofmap.mesh

    def local_coefficients(self, elements=None) -> np.ndarray:
        """(n, n_local) coefficients per triangle, zero for constrained DOFs."""
        cell = self.dofmap.cell_dofs if elements is None else self.dofmap.cell_dofs[elements]
        padded = np.append(self.coefficients, 0.0)
        return padded[np.where(cell >= 0, cell, -1)]

    def values_at(self, elements, xy, what="value") -> np.ndarray:
        """Values at reference points ``xy`` (shape (n, npts, 2)) of triangles ``elements``.

        Returns shape (n, npts) for scalars and (n, npts, 2) for vector values
        and gradients.
        """
        elements = np.asarray(elements, dtype=np.int64)
        xy = np.asarray(xy, dtype=float)
        n, npts = xy.shape[:2]
        flat = xy.reshape(-1, 2)
        coef = self.local_coefficients(elements)
        fam = self.space.family
        mesh = self.mesh
        if fam in (Family.SKELETON, Family.TRACE):
            raise ValueError(f"{self.space} lives on the skeleton")
        if fam is Family.BROKEN_RT0:
            if what == "value":
                ref = basis_eval(self.space, flat, "value").reshape(n, npts, 3, 2)
                v = np.einsum("npia,ni->npa", ref, coef)
                J = mesh.jacobians[elements]
                return np.einsum("nca,npa->npc", J, v) / mesh.det[elements][:, None, None]
            if what == "divergence":
                div = 2.0 * coef.sum(axis=1) / mesh.det[elements]
                return np.repeat(div[:, None], npts, axis=1)
            raise ValueError(f"{what!r} is not available for {self.space}")
        if what == "value":
            ref = basis_eval(self.space, flat, "value")
            if self.space.components == 1:
                return np.einsum("npi,ni->np", ref.reshape(n, npts, -1), coef)
            return np.einsum("npic,ni->npc", ref.reshape(n, npts, -1, 2), coef)
        if what == "gradient":
            ref = basis_eval(self.space, flat, "gradient").reshape(n, npts, -1, 2)
            g = np.einsum("npia,ni->npa", ref, coef)
            Jinv = mesh.inverse_jacobians[elements]
            return np.einsum("nac,npa->npc", Jinv, g)
        if what == "divergence" and self.space.components == 2:
            ref = lagrange_gradients(self.space.order, flat).reshape(n, npts, -1, 2)
            nb = ref.shape[2]
            Jinv = mesh.inverse_jacobians[elements]
            gx = np.einsum("npia,ni->npa", ref, coef[:, :nb])
            gy = np.einsum("npia,ni->npa", ref, coef[:, nb:])
            return np.einsum("na,npa->np", Jinv[:, :, 0], gx) + np.einsum("na,npa->np", Jinv[:, :, 1], gy)
        raise ValueError(f"{what!r} is not available for {self.space}")

    def __call__(self, point, side=None, seed=0, what="value"):
        return evaluate(self, point, side=side, seed=seed, what=what)


def to_reference(mesh: Mesh, elements, points) -> np.ndarray:
    """Reference coordinates of physical ``points`` (n, npts, 2) in ``elements``."""
    elements = np.asarray(elements)
    p0 = mesh.vertices[mesh.triangles[elements, 0]]
    Jinv = mesh.inverse_jacobians[elements]
    return np.einsum("nab,npb->npa", Jinv, np.asarray(points) - p0[:, None, :])


def to_physical(mesh: Mesh, elements, xy) -> np.ndarray:
    """Physical points of reference points ``xy`` (npts, 2) or (n, npts, 2)."""
    elements = np.asarray(elements)
    p0 = mesh.vertices[mesh.triangles[elements, 0]]
    J = mesh.jacobians[elements]
    xy = np.asarray(xy)
    if xy.ndim == 2:
        return p0[:, None, :] + np.einsum("nab,pb->npa", J, xy)
    return p0[:, None, :] + np.einsum("nab,npb->npa", J, xy)


def _on_slit(mesh: Mesh, point) -> bool:
    return mesh.domain is DomainSpec.SLIT and point[1] == 0.0 and 0.0 < point[0] <= 1.0


def locate(mesh: Mesh, point, side: str | None = None, seed: int = 0, tol: float = 1e-12):
    """Triangle containing ``point`` and the reference coordinates there.

    Walks from ``seed`` towards the point across the edge with the most
    negative barycentric coordinate.  Points on the slit need ``side`` set to
    ``"upper"`` or ``"lower"``.
    """
    point = np.asarray(point, dtype=float)
    if _on_slit(mesh, point):
        if side not in ("upper", "lower"):
            raise ValueError("points on the slit need side='upper' or side='lower'")
        return _locate_brute(mesh, point, side, tol)
    t = int(seed)
    visited = set()
    for _ in range(mesh.n_triangles):
        visited.add(t)
        xy = to_reference(mesh, [t], point[None, None, :])[0, 0]
        lam = np.array([1.0 - xy[0] - xy[1], xy[0], xy[1]])
        i = int(np.argmin(lam))
        if lam[i] >= -tol:
            return t, xy
        e = mesh.tri_edges[t, i]
        a, b = mesh.edge_tris[e]
        nxt = b if a == t else a
        if nxt < 0 or nxt in visited:
            break
        t = int(nxt)
    return _locate_brute(mesh, point, side, tol)


def _locate_brute(mesh, point, side, tol):
    nt = mesh.n_triangles
    xy = to_reference(mesh, np.arange(nt), np.broadcast_to(point, (nt, 1, 2)))[:, 0]
    lam = np.column_stack([1.0 - xy.sum(axis=1), xy])
    inside = lam.min(axis=1) >= -tol
    if side is not None:
        y = mesh.barycenters[:, 1]
        inside &= (y > 0) if side == "upper" else (y < 0)
    hits = np.flatnonzero(inside)
    if hits.size == 0:
        raise LookupError(f"point {tuple(point)} lies outside the mesh")
    t = int(hits[0])
    return t, xy[t]


def evaluate(f: FEFunction, point, side=None, seed=0, what="value"):
    """Value of ``f`` at a physical point."""
    t, xy = locate(f.mesh, point, side=side, seed=seed)
    return f.values_at([t], xy[None, None, :], what=what)[0, 0]


def interpolate(space: Space, mesh: Mesh, fn, dofmap: DofMap | None = None) -> FEFunction:
    """Nodal interpolant of ``fn(x, y)`` (vectorized, returns scalars or (..., 2)).

    Lagrange families use their nodes, Crouzeix-Raviart the edge midpoints.
    Constrained boundary DOFs are dropped.
    """
    dm = dofmap or build_dofmap(space, mesh)
    coef = np.zeros(dm.n_global)
    fam = space.family
    if fam in (Family.LAGRANGE_ZERO_BC, Family.BROKEN, Family.TRACE):
        nodes, _ = lagrange_nodes(space.order)
        if fam is Family.TRACE:
            nodes = nodes[:3 * space.order]
        pts = to_physical(mesh, np.arange(mesh.n_triangles), nodes[:, 1:])
        vals = np.asarray(fn(pts[..., 0], pts[..., 1]), dtype=float)
        if space.components == 2:
            vals = np.concatenate([vals[..., 0], vals[..., 1]], axis=1)
    elif fam is Family.CR_ZERO_BC:
        # local edge i is opposite vertex i: midpoints (1/2,1/2), (0,1/2), (1/2,0)
        mids = np.array([[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]])
        pts = to_physical(mesh, np.arange(mesh.n_triangles), mids)
        vals = np.asarray(fn(pts[..., 0], pts[..., 1]), dtype=float)
    elif fam is Family.SKELETON:
        k = space.order
        s = np.array([0.5]) if k == 0 else np.arange(k + 1) / k
        p = mesh.vertices[mesh.edges]
        pts = p[:, None, 0] + s[None, :, None] * (p[:, None, 1] - p[:, None, 0])
        coef = np.asarray(fn(pts[..., 0], pts[..., 1]), dtype=float).reshape(-1)
        return FEFunction(dm, coef)
    else:
        raise ValueError(f"interpolation into {space} is not supported")
    cell = dm.cell_dofs
    keep = cell >= 0
    coef[cell[keep]] = vals[keep]
    return FEFunction(dm, coef)


def edge_trace_values(space: Space, s: np.ndarray) -> np.ndarray:
    """Values of skeleton shape functions on a local edge at parameters ``s``."""
    if space.family is Family.SKELETON:
        return edge_lagrange_values(space.order, s)
    raise ValueError(f"{space} has no edge-local basis")


__all__ = ["FEFunction", "evaluate", "interpolate", "locate", "to_physical", "to_reference",
           "lagrange_values"]
