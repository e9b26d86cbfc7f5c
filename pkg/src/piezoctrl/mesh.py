"""Conforming tetrahedral meshes of box domains with a tagged boundary.

A mesh stores vertices, positively oriented tetrahedra, and the inherited
boundary triangulation. Every boundary triangle is oriented so that its
right-hand-rule normal points out of the domain, carries an integer tag,
and each tag is classified as Dirichlet or Neumann. Instances are
immutable after construction and safe to share across threads.
"""

from dataclasses import dataclass, field

import numpy as np

_DEGENERATE_AREA = 1e-14

# Oriented vertex triples of the face opposite each local vertex of a
# positively oriented tetrahedron (outward normals).
_OPPOSITE_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


class MeshError(Exception):
    """Raised for malformed meshes or invalid queries."""


@dataclass(frozen=True)
class BoundaryPartition:
    """Boundary faces grouped by tag, with per-face areas."""

    faces_by_tag: dict
    face_areas: np.ndarray

    def area_of_tag(self, tag):
        return float(self.face_areas[self.faces_by_tag[tag]].sum())


@dataclass(frozen=True)
class Mesh:
    """Tetrahedral mesh with a partitioned boundary triangulation.

    Attributes
    ----------
    vertices : (nv, 3) float array
    tets : (nt, 4) int array, positive signed volume each
    boundary_faces : (nf, 3) int array, outward oriented
    face_tags : (nf,) int array
    dirichlet_tags, neumann_tags : frozenset of int, disjoint, covering
    face_parent_tet : (nf,) int array, owning tetrahedron of each face
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    face_tags: np.ndarray
    dirichlet_tags: frozenset
    neumann_tags: frozenset
    face_parent_tet: np.ndarray = field(default=None)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_tets(self):
        return self.tets.shape[0]

    @property
    def n_boundary_faces(self):
        return self.boundary_faces.shape[0]

    def tet_vertices(self, i):
        return self.vertices[self.tets[i]]

    def tet_volumes(self):
        v = self.vertices[self.tets]
        e = v[:, 1:] - v[:, :1]
        return np.linalg.det(e) / 6.0

    def face_centroids(self):
        return self.vertices[self.boundary_faces].mean(axis=1)

    def face_normals(self):
        """Unit outward normals of the boundary triangles."""
        v = self.vertices[self.boundary_faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def face_areas(self):
        v = self.vertices[self.boundary_faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)

    def is_dirichlet_face(self, i):
        return int(self.face_tags[i]) in self.dirichlet_tags

    def dirichlet_face_indices(self):
        return np.array(
            [i for i in range(self.n_boundary_faces) if self.is_dirichlet_face(i)],
            dtype=int,
        )

    def boundary_partition(self) -> BoundaryPartition:
        areas = self.face_areas()
        by_tag = {}
        for i, tag in enumerate(self.face_tags):
            by_tag.setdefault(int(tag), []).append(i)
        by_tag = {t: np.array(ix, dtype=int) for t, ix in by_tag.items()}
        return BoundaryPartition(by_tag, areas)

    def validate(self):
        """Check orientation, boundary coverage and tag partition."""
        vols = self.tet_volumes()
        if np.any(vols <= 0.0):
            bad = int(np.argmin(vols))
            raise MeshError(f"tetrahedron {bad} has non-positive volume {vols[bad]:g}")
        if self.dirichlet_tags & self.neumann_tags:
            raise MeshError("a tag is classified both Dirichlet and Neumann")
        present = set(int(t) for t in self.face_tags)
        if not present <= (self.dirichlet_tags | self.neumann_tags):
            raise MeshError("some face tags are unclassified")
        owners = _face_occurrences(self.tets)
        for tri in self.boundary_faces:
            key = tuple(sorted(int(v) for v in tri))
            if len(owners.get(key, ())) != 1:
                raise MeshError(f"boundary face {key} is not owned by exactly one tet")
        if len(owners_boundary := [k for k, v in owners.items() if len(v) == 1]) != self.n_boundary_faces:
            raise MeshError(
                f"boundary_faces misses faces: mesh has {len(owners_boundary)}, "
                f"stored {self.n_boundary_faces}"
            )
        return self


def boundary_face_area(mesh: Mesh, face_index: int) -> float:
    """Area of one boundary triangle; rejects bad indices and slivers."""
    if not 0 <= face_index < mesh.n_boundary_faces:
        raise IndexError(f"face index {face_index} out of range")
    area = float(mesh.face_areas()[face_index])
    if area <= _DEGENERATE_AREA:
        raise MeshError(f"boundary face {face_index} is degenerate (area {area:g})")
    return area


def _face_occurrences(tets):
    """Map sorted vertex triple -> list of (tet, local opposite vertex)."""
    occ = {}
    for t, tet in enumerate(tets):
        for l, tri in enumerate(_OPPOSITE_FACES):
            key = tuple(sorted(int(tet[j]) for j in tri))
            occ.setdefault(key, []).append((t, l))
    return occ


_EVEN_PERMS = {(0, 1, 2), (1, 2, 0), (2, 0, 1)}
_ALL_PERMS = (
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
)

# Geometric side tags of the unit cube boundary, by plane.
CUBE_SIDE_TAGS = {"x0": 1, "x1": 2, "y0": 3, "y1": 4, "z0": 5, "z1": 6}


def build_cube_mesh(M: int, dirichlet_rule=None) -> Mesh:
    """Mesh the unit cube with M^3 subcubes of six tetrahedra each.

    Every subcube is split along the same main diagonal (Kuhn
    subdivision), which makes the mesh reproducible run to run. Each of
    the 12*M^2 boundary triangles is tagged by the cube side it lies on
    and classified by ``dirichlet_rule`` evaluated at its centroid; the
    default rule marks everything Neumann.
    """
    if M < 1:
        raise ValueError(f"subdivision count must be >= 1, got {M}")

    grid = np.linspace(0.0, 1.0, M + 1)
    vid = lambda i, j, k: (i * (M + 1) + j) * (M + 1) + k
    verts = np.array([(grid[i], grid[j], grid[k])
                      for i in range(M + 1) for j in range(M + 1) for k in range(M + 1)])

    tets = []
    for i in range(M):
        for j in range(M):
            for k in range(M):
                corner = np.array([i, j, k])
                for perm in _ALL_PERMS:
                    path = [corner.copy()]
                    for ax in perm:
                        nxt = path[-1].copy()
                        nxt[ax] += 1
                        path.append(nxt)
                    ids = [vid(*p) for p in path]
                    if perm not in _EVEN_PERMS:
                        ids[1], ids[2] = ids[2], ids[1]
                    tets.append(ids)
    tets = np.array(tets, dtype=int)

    occ = _face_occurrences(tets)
    faces, parents = [], []
    for key, owners in occ.items():
        if len(owners) == 1:
            t, l = owners[0]
            tri = [int(tets[t][j]) for j in _OPPOSITE_FACES[l]]
            faces.append(tri)
            parents.append(t)
    order = np.lexsort(np.array([sorted(f) for f in faces]).T[::-1])
    faces = np.array(faces, dtype=int)[order]
    parents = np.array(parents, dtype=int)[order]

    centroids = verts[faces].mean(axis=1)
    side = np.empty(len(faces), dtype=int)
    tol = 1e-12
    for f, c in enumerate(centroids):
        if abs(c[0]) < tol:
            side[f] = CUBE_SIDE_TAGS["x0"]
        elif abs(c[0] - 1.0) < tol:
            side[f] = CUBE_SIDE_TAGS["x1"]
        elif abs(c[1]) < tol:
            side[f] = CUBE_SIDE_TAGS["y0"]
        elif abs(c[1] - 1.0) < tol:
            side[f] = CUBE_SIDE_TAGS["y1"]
        elif abs(c[2]) < tol:
            side[f] = CUBE_SIDE_TAGS["z0"]
        elif abs(c[2] - 1.0) < tol:
            side[f] = CUBE_SIDE_TAGS["z1"]
        else:
            raise MeshError("boundary face centroid is not on a cube side")

    if dirichlet_rule is None:
        dirichlet_rule = lambda c: False
    is_d = np.array([bool(dirichlet_rule(c)) for c in centroids])

    tags = side.copy()
    d_tags, n_tags = set(), set()
    for s in sorted(set(int(v) for v in side)):
        on_side = side == s
        flags = is_d[on_side]
        if flags.all():
            d_tags.add(s)
        elif not flags.any():
            n_tags.add(s)
        else:
            # mixed side: split the tag so classification stays per tag
            tags[on_side & is_d] = 10 * s + 1
            tags[on_side & ~is_d] = 10 * s + 2
            d_tags.add(10 * s + 1)
            n_tags.add(10 * s + 2)

    mesh = Mesh(
        vertices=verts,
        tets=tets,
        boundary_faces=faces,
        face_tags=tags,
        dirichlet_tags=frozenset(d_tags),
        neumann_tags=frozenset(n_tags),
        face_parent_tet=parents,
    )
    return mesh.validate()


def cube_side_of_faces(mesh: Mesh):
    """Side index 0..5 (x0,x1,y0,y1,z0,z1) of each boundary face.

    Only meaningful for meshes of the unit cube.
    """
    c = mesh.face_centroids()
    side = np.full(mesh.n_boundary_faces, -1, dtype=int)
    tol = 1e-10
    planes = [(0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0), (2, 0.0), (2, 1.0)]
    for s, (ax, val) in enumerate(planes):
        side[np.abs(c[:, ax] - val) < tol] = s
    if np.any(side < 0):
        raise MeshError("mesh is not a unit-cube mesh; cannot group faces by side")
    return side


def read_mesh(path, dirichlet_tags, neumann_tags) -> Mesh:
    """Read the plain ASCII format: counts, vertices, tets, tagged faces.

    Line 1 is "nv nt nf", then nv lines "x y z", nt lines "v0 v1 v2 v3",
    and nf lines "v0 v1 v2 tag". Inverted tets are repaired by swapping
    two vertices; boundary faces are reoriented outward from their
    owning tetrahedron.
    """
    with open(path) as fh:
        toks = fh.read().split()
    it = iter(toks)
    try:
        nv, nt, nf = int(next(it)), int(next(it)), int(next(it))
        verts = np.array([[float(next(it)) for _ in range(3)] for _ in range(nv)])
        tets = np.array([[int(next(it)) for _ in range(4)] for _ in range(nt)])
        raw_faces = []
        for _ in range(nf):
            tri = [int(next(it)) for _ in range(3)]
            raw_faces.append((tri, int(next(it))))
    except StopIteration:
        raise MeshError(f"truncated mesh file: {path}") from None

    e = verts[tets][:, 1:] - verts[tets][:, :1]
    vols = np.linalg.det(e) / 6.0
    flip = vols < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]

    occ = _face_occurrences(tets)
    faces, tags, parents = [], [], []
    for tri, tag in raw_faces:
        key = tuple(sorted(tri))
        owners = occ.get(key, [])
        if len(owners) != 1:
            raise MeshError(f"face {key} is not a boundary face of exactly one tet")
        t, l = owners[0]
        faces.append([int(tets[t][j]) for j in _OPPOSITE_FACES[l]])
        tags.append(tag)
        parents.append(t)

    mesh = Mesh(
        vertices=verts,
        tets=tets,
        boundary_faces=np.array(faces, dtype=int),
        face_tags=np.array(tags, dtype=int),
        dirichlet_tags=frozenset(int(t) for t in dirichlet_tags),
        neumann_tags=frozenset(int(t) for t in neumann_tags),
        face_parent_tet=np.array(parents, dtype=int),
    )
    return mesh.validate()
