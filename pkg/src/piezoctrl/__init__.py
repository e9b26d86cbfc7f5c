"""Optimal boundary-flux control of transient piezoelectric elastodynamics.

Finite element toolkit for the coupled hyperbolic-elliptic system of
elastic displacement and electric potential on tetrahedral meshes:
Crank-Nicolson state and adjoint solves, adjoint-based gradients in the
H1-in-time control metric, and a projected limited-memory BFGS loop over
box-constrained zero-mean boundary controls.
"""

from .control import (
    ControlTrajectory,
    ZMetric,
    pair_beta,
    project_Q,
    riesz_gradient,
    z_inner,
    z_norm,
)
from .fespace import (
    DiscreteOperators,
    ScalarSpace,
    VectorSpace,
    apply_grounding,
    assemble,
    project_L2_weighted,
)
from .materials import (
    IsotropicElasticity,
    MaterialSet,
    paper_benchmark_materials,
    voigt_strain,
)
from .mesh import BoundaryPartition, Mesh, boundary_face_area, build_cube_mesh, read_mesh
from .optimizer import (
    OptimizerReport,
    ReducedProblem,
    build_reduced_problem,
    evaluate_gradient,
    evaluate_jfd,
    optimize,
)
from .quadrature import QuadratureRule, tetrahedron_rule, triangle_rule
from .timestepper import (
    AdjointTrajectory,
    Sources,
    StateTrajectory,
    control_metric,
    energy,
    solve_adjoint,
    solve_state,
    transposition_gap,
)

__version__ = "0.1.0"
