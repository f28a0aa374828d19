"""Meshes, diffeomorphisms onto the ball, straightening charts and conformal corrections."""

from .mesh import Domain, build_ball_mesh, build_perturbed_ball, uniform_refinement
from .shapes import Diffeomorphism, IdentityDiffeo, RadialBumpDiffeo, build_diffeomorphism

__all__ = [
    "Diffeomorphism",
    "Domain",
    "IdentityDiffeo",
    "RadialBumpDiffeo",
    "build_ball_mesh",
    "build_diffeomorphism",
    "build_perturbed_ball",
    "uniform_refinement",
]
