"""Legacy ASCII VTK writers for volume and boundary-surface snapshots."""

import numpy as np


def _write_header(fh, title):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(f"{title}\n")
    fh.write("ASCII\n")
    fh.write("DATASET UNSTRUCTURED_GRID\n")


def _write_points(fh, points):
    fh.write(f"POINTS {len(points)} double\n")
    for p in points:
        fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def write_volume_snapshot(path, mesh, point_vectors=None, point_scalars=None, title="snapshot"):
    """Tetrahedral grid with vector and scalar point data at the vertices.

    ``point_vectors`` and ``point_scalars`` map names to arrays of shape
    (n_vertices, 3) and (n_vertices,).
    """
    point_vectors = point_vectors or {}
    point_scalars = point_scalars or {}
    with open(path, "w") as fh:
        _write_header(fh, title)
        _write_points(fh, mesh.vertices)
        nt = mesh.n_tets
        fh.write(f"CELLS {nt} {5 * nt}\n")
        for tet in mesh.tets:
            fh.write(f"4 {tet[0]} {tet[1]} {tet[2]} {tet[3]}\n")
        fh.write(f"CELL_TYPES {nt}\n")
        fh.write("10\n" * nt)
        if point_vectors or point_scalars:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
        for name, vec in point_vectors.items():
            fh.write(f"VECTORS {name} double\n")
            for v in np.asarray(vec):
                fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for name, sca in point_scalars.items():
            fh.write(f"SCALARS {name} double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for s in np.asarray(sca):
                fh.write(f"{s:.9g}\n")


def write_boundary_snapshot(path, mesh, cell_scalars, title="boundary"):
    """Boundary triangles with per-face scalar cell data (e.g. the control)."""
    with open(path, "w") as fh:
        _write_header(fh, title)
        _write_points(fh, mesh.vertices)
        nf = mesh.n_boundary_faces
        fh.write(f"CELLS {nf} {4 * nf}\n")
        for tri in mesh.boundary_faces:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"CELL_TYPES {nf}\n")
        fh.write("5\n" * nf)
        fh.write(f"CELL_DATA {nf}\n")
        for name, vals in cell_scalars.items():
            fh.write(f"SCALARS {name} double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for s in np.asarray(vals):
                fh.write(f"{s:.9g}\n")


def vertex_values_vector(space_v, coeffs_full, mesh):
    """Vector FE coefficients sampled at the mesh vertices."""
    scalar = space_v.scalar
    out = np.zeros((mesh.n_vertices, 3))
    for v in range(mesh.n_vertices):
        dof = scalar._registry[("v", v)]
        out[v] = coeffs_full[3 * dof : 3 * dof + 3]
    return out


def vertex_values_scalar(space_s, coeffs, mesh):
    out = np.zeros(mesh.n_vertices)
    for v in range(mesh.n_vertices):
        out[v] = coeffs[space_s._registry[("v", v)]]
    return out
