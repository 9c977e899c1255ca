"""Conforming triangulations with newest-vertex bisection.

Triangles are stored counterclockwise. Local edge ``i`` of a triangle is the
edge opposite local vertex ``i``, i.e. it runs from vertex ``i+1`` to vertex
``i+2`` (indices mod 3). The refinement edge of every triangle is stored as
such a local edge index.

Every triangle also carries a genealogical key ``(root, key)``: ``root`` is
the index of the coarse triangle it descends from and ``key`` is a heap index
in the binary bisection tree of that root (the root itself has key 1, the two
children of key ``q`` have keys ``2q`` and ``2q + 1``).  Two meshes obtained
from the same coarse mesh can therefore be compared element by element
without any point location.
"""
from __future__ import annotations

import enum
from functools import cached_property

import numpy as np

__all__ = [
    "DomainSpec",
    "Mesh",
    "MeshError",
    "build_domain",
    "refine_uniform",
    "refine_adaptive",
    "geometry",
    "dump_mesh",
    "load_mesh",
]

# deepest bisection level representable in an int64 heap key (keeps
# ``root << KEY_BITS | key`` inside int64 for up to 64 roots)
KEY_BITS = 56


class MeshError(ValueError):
    """Invalid mesh input or structurally broken mesh."""


class DomainSpec(enum.Enum):
    UNIT_SQUARE = "square"
    LSHAPE = "lshape"
    SLIT = "slit"

    @property
    def area(self) -> float:
        return {"square": 1.0, "lshape": 3.0, "slit": 4.0}[self.value]

    @property
    def perimeter(self) -> float:
        """Length of the boundary, counting both sides of the slit."""
        return {"square": 4.0, "lshape": 8.0, "slit": 10.0}[self.value]

    @classmethod
    def parse(cls, name: str) -> "DomainSpec":
        aliases = {"unitsquare": "square", "unit_square": "square", "l-shape": "lshape",
                   "l_shape": "lshape", "slitdb": "slit"}
        key = name.strip().lower()
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown domain {name!r}")


class Mesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    refedge : (nt,) int array with values in {0, 1, 2}
    domain : DomainSpec or None
    root, key : (nt,) int arrays, bisection genealogy (defaults: coarse mesh)
    """

    def __init__(self, vertices, triangles, refedge=None, domain=None,
                 root=None, key=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        nt = len(self.triangles)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if refedge is None:
            refedge = _longest_edges(self.vertices, self.triangles)
        self.refedge = np.ascontiguousarray(refedge, dtype=np.int64)
        self.domain = domain
        self.root = np.arange(nt, dtype=np.int64) if root is None else np.asarray(root, dtype=np.int64)
        self.key = np.ones(nt, dtype=np.int64) if key is None else np.asarray(key, dtype=np.int64)
        for arr in (self.vertices, self.triangles, self.refedge, self.root, self.key):
            arr.flags.writeable = False
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")

    def __repr__(self):
        name = self.domain.value if self.domain is not None else "custom"
        return f"Mesh({name}, {self.n_vertices} vertices, {self.n_triangles} triangles)"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def generation(self) -> np.ndarray:
        """Number of bisections separating each triangle from its root."""
        return _bit_length(self.key) - 1

    # -- topology -----------------------------------------------------------
    @cached_property
    def _topology(self):
        t = self.triangles
        # local edge i runs from vertex i+1 to vertex i+2
        loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        pairs = np.sort(loc.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        tri_edges = inverse.reshape(-1, 3)
        ne = len(edges)
        edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        flat_tri = np.repeat(np.arange(len(t)), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_tris[sorted_edges[first], 0] = flat_tri[order[first]]
        second = ~first
        if np.any(second[1:] & second[:-1]):
            raise MeshError("edge shared by more than two triangles")
        edge_tris[sorted_edges[second], 1] = flat_tri[order[second]]
        # +1 when the local direction agrees with the global (low -> high id) one
        orient = np.where(loc[:, :, 0] < loc[:, :, 1], 1, -1)
        return edges, tri_edges, edge_tris, orient

    @property
    def edges(self) -> np.ndarray:
        """(ne, 2) endpoint ids, first id smaller (global edge orientation)."""
        return self._topology[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """(nt, 3) global edge index of each local edge."""
        return self._topology[1]

    @property
    def edge_tris(self) -> np.ndarray:
        """(ne, 2) adjacent triangles; second entry -1 on the boundary."""
        return self._topology[2]

    @property
    def edge_orientation(self) -> np.ndarray:
        """(nt, 3) +1/-1: local edge direction relative to the global one.

        Equals the sign ``nu_E . n_T`` between the global edge normal and the
        outward normal of the triangle.
        """
        return self._topology[3]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[self.edges[self.boundary_edges].ravel()] = True
        return flag

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_edges)

    # -- geometry -----------------------------------------------------------
    @cached_property
    def jacobians(self) -> np.ndarray:
        """(nt, 2, 2) affine map Jacobians, columns p1 - p0 and p2 - p0."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def det(self) -> np.ndarray:
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def areas(self) -> np.ndarray:
        area = 0.5 * np.abs(self.det)
        if np.any(area <= 0.0):
            bad = int(np.flatnonzero(area <= 0.0)[0])
            raise MeshError(f"degenerate triangle {bad}")
        return area

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        J = self.jacobians
        d = self.det
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / d
        inv[:, 1, 1] = J[:, 0, 0] / d
        inv[:, 0, 1] = -J[:, 0, 1] / d
        inv[:, 1, 0] = -J[:, 1, 0] / d
        return inv

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.edges]
        return np.hypot(*(p[:, 1] - p[:, 0]).T)

    @cached_property
    def edge_tangents(self) -> np.ndarray:
        p = self.vertices[self.edges]
        return (p[:, 1] - p[:, 0]) / self.edge_lengths[:, None]

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Global unit normals, tangent rotated clockwise."""
        t = self.edge_tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return self.vertices[self.edges].mean(axis=1)

    @cached_property
    def local_edge_lengths(self) -> np.ndarray:
        return self.edge_lengths[self.tri_edges]

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """(nt, 3, 2) outward unit normal of each local edge."""
        return self.edge_normals[self.tri_edges] * self.edge_orientation[:, :, None]

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.local_edge_lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles (radians)."""
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.hypot(*a.T) * np.hypot(*b.T))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    # -- auditing -----------------------------------------------------------
    def check(self) -> None:
        """Raise MeshError unless the mesh is a positively oriented conforming triangulation."""
        if np.any(self.det <= 0.0):
            raise MeshError("triangle with non-positive orientation")
        if np.any((self.refedge < 0) | (self.refedge > 2)):
            raise MeshError("refinement edge index outside {0, 1, 2}")
        nv = self.n_vertices
        if self.triangles.min() < 0 or self.triangles.max() >= nv:
            raise MeshError("vertex index out of range")
        used = np.zeros(nv, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshError("unreferenced vertex")
        # a hanging node leaves one-sided edges inside the domain
        if self.domain is not None:
            perimeter = float(self.edge_lengths[self.boundary_edges].sum())
            if abs(perimeter - self.domain.perimeter) > 1e-10 * self.domain.perimeter:
                raise MeshError("non-conforming mesh: boundary length "
                                f"{perimeter} != {self.domain.perimeter}")
        area = float(self.areas.sum())
        if self.domain is not None and abs(area - self.domain.area) > 1e-12 * self.domain.area:
            raise MeshError(f"areas sum to {area}, expected {self.domain.area}")
        n_comp = 1
        if self.n_vertices - self.n_edges + self.n_triangles != n_comp:
            raise MeshError("Euler characteristic violated")

    # -- genealogy ----------------------------------------------------------
    @cached_property
    def forest_keys(self) -> np.ndarray:
        """Combined ``root << KEY_BITS | key`` integer identifying each triangle."""
        return (self.root << KEY_BITS) | self.key


def _bit_length(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    out = np.zeros(a.shape, dtype=np.int64)
    work = a.copy()
    while np.any(work > 0):
        nz = work > 0
        out[nz] += 1
        work >>= 1
    return out


def _longest_edges(vertices, triangles) -> np.ndarray:
    """Longest local edge, ties broken by the smallest opposite-vertex id."""
    p = vertices[triangles]
    lengths = np.stack([np.hypot(*(p[:, (i + 2) % 3] - p[:, (i + 1) % 3]).T)
                        for i in range(3)], axis=1)
    out = np.empty(len(triangles), dtype=np.int64)
    for n, (row, tri) in enumerate(zip(lengths, triangles)):
        longest = row.max()
        cand = [i for i in range(3) if row[i] >= longest * (1.0 - 1e-12)]
        out[n] = min(cand, key=lambda i: tri[i])
    return out


def build_domain(spec: DomainSpec | str) -> Mesh:
    """Coarse mesh of one of the three model domains.

    The singular point (reentrant corner or slit tip) is the centre of a
    triangle fan.  For the slit, the boundary point (1, 0) is duplicated so
    that the two sides of the slit are topologically disconnected.
    """
    if isinstance(spec, str):
        spec = DomainSpec.parse(spec)
    if spec is DomainSpec.UNIT_SQUARE:
        vertices = [(0, 0), (1, 0), (1, 1), (0, 1)]
        triangles = [(0, 1, 2), (0, 2, 3)]
    elif spec is DomainSpec.LSHAPE:
        vertices = [(0, 0), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1)]
        triangles = [(0, i, i + 1) for i in range(1, 7)]
    elif spec is DomainSpec.SLIT:
        # 1: (1, 0) seen from above, 9: (1, 0) seen from below
        vertices = [(0, 0), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1),
                    (0, -1), (1, -1), (1, 0)]
        triangles = [(0, i, i + 1) for i in range(1, 9)]
    else:  # pragma: no cover
        raise MeshError(f"unsupported domain {spec}")
    return Mesh(np.array(vertices, dtype=float), np.array(triangles), domain=spec)


def refine_adaptive(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked triangles plus closure.

    Every marked triangle is bisected at least once.  Refinement edges of
    all triangles touching a bisected edge are bisected as well until no
    hanging node remains; each affected triangle is then split into two,
    three or four children.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    nt = mesh.n_triangles
    if marked.size and (marked.min() < 0 or marked.max() >= nt):
        raise ValueError(f"marked triangle ids must lie in [0, {nt})")
    if marked.size == 0:
        return mesh
    tri_edges = mesh.tri_edges
    ref_glob = tri_edges[np.arange(nt), mesh.refedge]
    flag = np.zeros(mesh.n_edges, dtype=bool)
    flag[ref_glob[marked]] = True
    while True:
        touched = flag[tri_edges].any(axis=1)
        missing = touched & ~flag[ref_glob]
        if not missing.any():
            break
        flag[ref_glob[missing]] = True

    split = np.flatnonzero(flag)
    edge_mid = np.full(mesh.n_edges, -1, dtype=np.int64)
    edge_mid[split] = mesh.n_vertices + np.arange(split.size)
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints[split]])

    tris = mesh.triangles.copy()
    refedge = mesh.refedge.copy()
    root = mesh.root.copy()
    key = mesh.key.copy()
    mid = edge_mid[tri_edges]  # midpoint vertex of each local edge or -1

    while True:
        n = len(tris)
        todo = np.flatnonzero(mid[np.arange(n), refedge] >= 0)
        if todo.size == 0:
            break
        r = refedge[todo]
        a = tris[todo, r]
        b = tris[todo, (r + 1) % 3]
        c = tris[todo, (r + 2) % 3]
        m = mid[todo, r]
        mid_ab = mid[todo, (r + 2) % 3]
        mid_ca = mid[todo, (r + 1) % 3]
        if np.any(key[todo] >= (1 << (KEY_BITS - 2))):
            raise MeshError("bisection depth exceeds the genealogy key range")
        # child A = (a, b, m) replaces the parent, child B = (a, m, c) is appended;
        # both get the edge opposite the new vertex m as refinement edge
        nb = todo.size
        tris[todo] = np.stack([a, b, m], axis=1)
        refedge[todo] = 2
        new_mid_a = np.full((nb, 3), -1, dtype=np.int64)
        new_mid_a[:, 2] = mid_ab
        child_b = np.stack([a, m, c], axis=1)
        new_mid_b = np.full((nb, 3), -1, dtype=np.int64)
        new_mid_b[:, 1] = mid_ca
        mid[todo] = new_mid_a
        tris = np.vstack([tris, child_b])
        refedge = np.concatenate([refedge, np.ones(nb, dtype=np.int64)])
        mid = np.vstack([mid, new_mid_b])
        root = np.concatenate([root, root[todo]])
        key_parent = key[todo]
        key[todo] = 2 * key_parent
        key = np.concatenate([key, 2 * key_parent + 1])
    return Mesh(vertices, tris, refedge, mesh.domain, root, key)


def refine_uniform(mesh: Mesh) -> Mesh:
    """One sweep of newest-vertex bisection with every triangle marked."""
    return refine_adaptive(mesh, np.arange(mesh.n_triangles))


def geometry(mesh: Mesh) -> dict:
    """Areas, edge lengths, normals, tangents and barycenters of ``mesh``."""
    return {
        "areas": mesh.areas,
        "edge_lengths": mesh.edge_lengths,
        "edge_normals": mesh.edge_normals,
        "edge_tangents": mesh.edge_tangents,
        "barycenters": mesh.barycenters,
    }


def dump_mesh(mesh: Mesh) -> str:
    """Plain-text dump: a ``vertices`` section and a ``triangles`` section."""
    lines = ["vertices"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    lines.append("triangles")
    lines += [f"{i} {a} {b} {c} {r}"
              for i, ((a, b, c), r) in enumerate(zip(mesh.triangles.tolist(), mesh.refedge.tolist()))]
    return "\n".join(lines) + "\n"


def load_mesh(text: str, domain: DomainSpec | None = None) -> Mesh:
    """Inverse of :func:`dump_mesh` (genealogy is reset to a coarse mesh)."""
    section = None
    verts, tris, refs = [], [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line in ("vertices", "triangles"):
            section = line
            continue
        parts = line.split()
        if section == "vertices":
            verts.append((float(parts[1]), float(parts[2])))
        elif section == "triangles":
            tris.append(tuple(int(p) for p in parts[1:4]))
            refs.append(int(parts[4]))
        else:
            raise MeshError(f"data outside a section: {line!r}")
    return Mesh(np.array(verts), np.array(tris, dtype=np.int64), np.array(refs), domain)
