"""Discrete conformal Ricci flow on the flat torus, started from singular surfaces."""

__version__ = "0.1.0"

from .grid import ScalarField, TorusGrid, integrate, laplacian, make_grid
from .measures import SignedMeasure, area_measure, curvature_measure, gauss_curvature, weak_distance
from .potential import SingularSurfaceSpec, one_atom_spec, solve_potential
from .distance import conformal_distance, default_samples, gh_distortion, uniform_distance
from .flow import FlowControls, run_flow, extract_initial_data
from .approximation import build_family, mollify
from .verification import check_estimates, duality_residual, uniqueness_experiment
