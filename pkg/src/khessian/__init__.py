"""Dirichlet problems for degenerate k-Hessian equations S_k[D^2 u] = f on a grid."""
from .condh import ConditionHReport, RhsSpec, audit, root_regularity_probe, shift
from .errors import (ConfigurationError, ConvergenceError, DomainError, GeometryError, InadmissibleError,
                     InitializationError, InputError, KHessianError)
from .expr import Expression, parse
from .geometry import DomainSpec, classify, default_grid, is_k1_convex, principal_curvatures
from .hessop import Grid, GridField, Layout, hessian_at, load_field, save_field, sk_field, spectrum
from .solver import (PathReport, ProblemSpec, SolveOptions, SolveReport, c11_proxy, comparison_check,
                     default_start, path, solve)
from .symfun import fk_value, in_gamma, maclaurin_chain, sigma, sigma_all, sigma_grad

__version__ = "0.1.0"
