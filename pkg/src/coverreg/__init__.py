"""High-genus surface registration through universal covering spaces."""

__version__ = "0.1.0"

from .mesh import MeshError, TriangleMesh, compute_curvatures, load_mesh, make_synthetic, save_mesh  # noqa: E402
from .topology import (HomotopyBasis, SlicedMesh, choose_base_vertex, greedy_homotopy_basis,  # noqa: E402
                       slice_along_basis)
from .uniformize import DiscreteMetric, FundamentalDomain, layout_domain, ricci_flow  # noqa: E402
from .covering import FuchsianGenerators, RigidMotion, compute_generators  # noqa: E402
from .cover_solver import CoverSystem, assemble, solve_linear, solve_newton  # noqa: E402
from .beltrami import BeltramiField, beltrami_of_map, reconstruct_map, smooth_coefficient  # noqa: E402
from .registration import RegistrationConfig, RegistrationResult, parameterize, register  # noqa: E402

__all__ = [
    "MeshError", "TriangleMesh", "compute_curvatures", "load_mesh", "make_synthetic", "save_mesh",
    "HomotopyBasis", "SlicedMesh", "choose_base_vertex", "greedy_homotopy_basis", "slice_along_basis",
    "DiscreteMetric", "FundamentalDomain", "layout_domain", "ricci_flow",
    "FuchsianGenerators", "RigidMotion", "compute_generators",
    "CoverSystem", "assemble", "solve_linear", "solve_newton",
    "BeltramiField", "beltrami_of_map", "reconstruct_map", "smooth_coefficient",
    "RegistrationConfig", "RegistrationResult", "parameterize", "register",
]
