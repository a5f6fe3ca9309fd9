"""Stochastic gradient method for risk-neutral optimal control of a
semilinear elliptic PDE with a random diffusion coefficient."""

from .mesh_fem import Mesh, P1Space, build_mesh, interpolate
from .oracle import (ProblemSpec, SaaSet, draw_saa_set, grad_norm, make_problem,
                     objective_sample, saa_gradient, saa_objective, stochastic_gradient)
from .optimizer import RunConfig, StepSchedule, Trajectory, rate_check, run_deterministic, run_sgd
from .pde_solver import SemilinearModel, SolverError, SolverTolerances
from .rand_field import KlSpec, RandomSample, build_kl_spec, draw_sample, rng_streams

__version__ = "0.1.0"
