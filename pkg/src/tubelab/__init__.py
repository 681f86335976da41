"""tubelab: numerical laboratory for thin-tube effective operators.

Builds discrete Dirichlet forms of rescaled tubular neighborhoods of a
closed submanifold, the renormalized reference forms, and the limiting
operator on the submanifold, and runs convergence/inequality studies
against independent oracles.
"""

from tubelab.ball import ball_eigenvalue, ball_spectrum, eps_star, ground_state
from tubelab.errors import AcceptanceError, ConvergenceError, ValidationError
from tubelab.geometry import (
    circle_in_plane,
    geometry_from_config,
    latitude_circle,
    plane_curve,
    space_curve,
    sphere_in_r3,
)
from tubelab.lab import (
    ConvergenceReport,
    StudyConfig,
    asymptotics_check,
    coercivity_check,
    eigenvalue_convergence_study,
    kato_check,
    semigroup_convergence_study,
    study_config,
    write_report,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AcceptanceError",
    "ConvergenceError",
    "ConvergenceReport",
    "StudyConfig",
    "ValidationError",
    "asymptotics_check",
    "ball_eigenvalue",
    "ball_spectrum",
    "circle_in_plane",
    "coercivity_check",
    "eigenvalue_convergence_study",
    "eps_star",
    "geometry_from_config",
    "ground_state",
    "kato_check",
    "latitude_circle",
    "plane_curve",
    "semigroup_convergence_study",
    "space_curve",
    "sphere_in_r3",
    "study_config",
    "write_report",
]
