"""Multilevel (quasi-)Monte Carlo with Full Multigrid sample recycling."""
from mgmlqmc._accel import USE_NUMBA
from mgmlqmc.estimators import (EstimatorConfig, NonConvergenceError, RunResult,
                                adaptive_run)
from mgmlqmc.lattice import LatticeRule, default_rule, map_to_normal
from mgmlqmc.multigrid import GridHierarchy, fmg_solve
from mgmlqmc.problem import PDESampler
from mgmlqmc.random_field import MaternParams, build_kl, build_quadrature

__version__ = '0.1.0'
