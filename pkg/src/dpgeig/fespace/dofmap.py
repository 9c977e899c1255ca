"""Global degree-of-freedom numbering."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import Mesh
from .basis import Family, Space, lagrange_dim, lagrange_nodes, local_dim

VERTEX, EDGE, INTERIOR = 0, 1, 2


@dataclass(frozen=True)
class DofMap:
    """Local-to-global map of one space on one mesh.

    ``cell_dofs[t, i]`` is the global index of local shape function ``i`` on
    triangle ``t``, or -1 for a DOF removed by a homogeneous Dirichlet
    condition.  ``entity_kind`` / ``entity_index`` tag each global DOF with
    the mesh entity carrying it and ``on_boundary`` flags skeleton DOFs
    sitting on boundary edges.
    """

    space: Space
    mesh: Mesh
    n_global: int
    cell_dofs: np.ndarray
    entity_kind: np.ndarray
    entity_index: np.ndarray
    on_boundary: np.ndarray

    @property
    def n_local(self) -> int:
        return self.cell_dofs.shape[1]


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


def _lagrange_map(mesh: Mesh, k: int, with_interior: bool):
    nodes, ents = lagrange_nodes(k)
    nt = mesh.n_triangles
    n_loc = lagrange_dim(k) if with_interior else 3 * k
    cell = np.full((nt, n_loc), -1, dtype=np.int64)

    free_v = ~mesh.boundary_vertices
    vnum = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vnum[free_v] = np.arange(int(free_v.sum()))
    nvd = int(free_v.sum())

    inner_edges = ~mesh.boundary_edges
    per_edge = k - 1
    enum_ = np.full(mesh.n_edges, -1, dtype=np.int64)
    enum_[inner_edges] = np.arange(int(inner_edges.sum()))
    ned = int(inner_edges.sum()) * per_edge

    per_cell = (k - 1) * (k - 2) // 2 if with_interior else 0

    kinds, idx = [], []
    kinds.append(np.full(nvd, VERTEX))
    idx.append(np.flatnonzero(free_v))
    kinds.append(np.full(ned, EDGE))
    idx.append(np.repeat(np.flatnonzero(inner_edges), per_edge))
    kinds.append(np.full(nt * per_cell, INTERIOR))
    idx.append(np.repeat(np.arange(nt), per_cell))

    orient = mesh.edge_orientation
    for i, ent in enumerate(ents[:n_loc]):
        if ent[0] == "vertex":
            cell[:, i] = vnum[mesh.triangles[:, ent[1]]]
        elif ent[0] == "edge":
            e, j = ent[1], ent[2]
            ge = mesh.tri_edges[:, e]
            jj = np.where(orient[:, e] > 0, j, per_edge - 1 - j)
            g = nvd + enum_[ge] * per_edge + jj
            cell[:, i] = np.where(enum_[ge] >= 0, g, -1)
        else:
            cell[:, i] = nvd + ned + np.arange(nt) * per_cell + ent[1]
    n = nvd + ned + nt * per_cell
    return n, cell, np.concatenate(kinds), np.concatenate(idx), np.zeros(n, dtype=bool)


def build_dofmap(space: Space, mesh: Mesh) -> DofMap:
    fam, k = space.family, space.order
    nt = mesh.n_triangles
    if fam is Family.LAGRANGE_ZERO_BC:
        n, cell, kinds, idx, bnd = _lagrange_map(mesh, k, True)
    elif fam is Family.TRACE:
        n, cell, kinds, idx, bnd = _lagrange_map(mesh, k, False)
    elif fam in (Family.BROKEN, Family.BROKEN_RT0):
        nl = local_dim(space)
        n = nt * nl
        cell = np.arange(n, dtype=np.int64).reshape(nt, nl)
        kinds = np.full(n, INTERIOR)
        idx = np.repeat(np.arange(nt), nl)
        bnd = np.zeros(n, dtype=bool)
    elif fam is Family.SKELETON:
        per = k + 1
        cell = np.empty((nt, 3 * per), dtype=np.int64)
        for e in range(3):
            ge = mesh.tri_edges[:, e]
            for j in range(per):
                jj = np.where(mesh.edge_orientation[:, e] > 0, j, k - j)
                cell[:, e * per + j] = ge * per + jj
        n = mesh.n_edges * per
        kinds = np.full(n, EDGE)
        idx = np.repeat(np.arange(mesh.n_edges), per)
        bnd = np.repeat(mesh.boundary_edges, per)
    elif fam is Family.CR_ZERO_BC:
        inner = ~mesh.boundary_edges
        enum_ = np.full(mesh.n_edges, -1, dtype=np.int64)
        enum_[inner] = np.arange(int(inner.sum()))
        cell = enum_[mesh.tri_edges]
        n = int(inner.sum())
        kinds = np.full(n, EDGE)
        idx = np.flatnonzero(inner)
        bnd = np.zeros(n, dtype=bool)
    else:  # pragma: no cover
        raise ValueError(f"unsupported family {fam}")
    kinds = np.asarray(kinds, dtype=np.int8)
    idx = np.asarray(idx, dtype=np.int64)
    _freeze(cell, kinds, idx, bnd)
    return DofMap(space, mesh, int(n), cell, kinds, idx, bnd)


def dof_count(space: Space, mesh: Mesh) -> int:
    return build_dofmap(space, mesh).n_global
