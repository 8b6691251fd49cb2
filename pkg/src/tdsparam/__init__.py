"""Stability equivalence of time-delay systems in parameter space.

Given a retarded characteristic quasi-polynomial ``f(s, tau)`` and a start
point, the package certifies intervals along rays and Hölder balls in
which the number of unstable zeros does not change, grows regions from
such balls, and counts unstable zeros with the argument principle.
"""

from .charfun import CharFun, HypothesisReport, QPTerm, RetardedForm
from .distributed import DistributedModel, kernel_laplace, model_to_charfun
from .errors import TDSError
from .expr import diff, evaluate, parse, unparse
from .line import Curve, LineTrace, RayTask, run_fan, run_ray, step_bound_general, step_bound_retarded
from .polecount import PoleCountReport, count_unstable, rhp_radius_bound
from .region import Ball, HolderPair, RegionState, grow_region, region_bound_general, region_bound_retarded
from .sweep import RatioProblem, SweepResult, TailBound, global_min, min_modulus, quasipoly_tail_bound

__version__ = "0.1.0"

__all__ = [
    "Ball", "CharFun", "Curve", "DistributedModel", "HolderPair", "HypothesisReport",
    "LineTrace", "PoleCountReport", "QPTerm", "RatioProblem", "RayTask", "RegionState",
    "RetardedForm", "SweepResult", "TDSError", "TailBound", "count_unstable", "diff",
    "evaluate", "global_min", "grow_region", "kernel_laplace", "min_modulus",
    "model_to_charfun", "parse", "quasipoly_tail_bound", "region_bound_general",
    "region_bound_retarded", "rhp_radius_bound", "run_fan", "run_ray", "step_bound_general",
    "step_bound_retarded", "unparse",
]
