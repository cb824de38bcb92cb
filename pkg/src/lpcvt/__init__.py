"""Lp centroidal Voronoi tessellation: exact energy, closed-form gradient,
optimizer and verification oracles for convex volumes and triangle meshes."""

from .aniso_field import (
    AnisotropyTensor,
    FrameMatrix,
    TensorField,
    field_eval,
    normalize_det,
    quadratic_form,
    spectral_factor,
)
from .errors import (
    DegenerateFrame,
    DegenerateTriangle,
    EmptyField,
    InputError,
    IoError,
    LpcvtError,
    NearDegenerate,
    NonFiniteEnergy,
    NonTriangleFace,
    NotPositiveDefinite,
    NumericalError,
    OddP,
    ParseError,
    SeedOutsideDomain,
    UnboundedPolytope,
)
from .gradient import grad_area_dU, grad_E_dU, grad_FT_vertices, grad_volume_dU
from .io import load_domain, load_field, read_seeds, write_outputs
from .optimizer import (
    GradientAccumulator,
    OptimizerConfig,
    OptimizeResult,
    energy_and_gradient,
    evaluate,
    optimize,
    random_seeds,
)
from .quadrature import (
    IntegrationSimplex,
    exponent_multisets,
    lasserre_integrate,
    polar_form,
    simplex_energy,
    star_power,
    star_product,
)
from .rvd import (
    Domain,
    RestrictedVoronoiDiagram,
    SeedSet,
    VertexProvenance,
    build_rvd,
    circumcenter,
    circumcenter_jacobian,
    constrained_vertex_jacobian,
    decompose_cell,
)

__version__ = "0.1.0"
