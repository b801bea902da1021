"""Neural reach-avoid certificates for controlled stochastic differential
equations: bound-based training with hard guarantees over an adaptively
refined partition, joint controller-certificate synthesis, and scenario
linear programming over last-layer weights with PAC guarantees.
"""

from .geometry import (Box, Interval, ReachAvoidSpec, Region, beta_from_p,
                       region_contains, region_intersects)
from .expr import DynamicsSpec, parse_expr, expr_to_string, eval_scalar
from .nets import CertificateNet, ControllerNet, OutputChannel
from .generator import (ExprController, GeneratorGraph, NetController,
                        build_generator, eval_generator)
from .bounds import bound_certificate, bound_generator
from .partition import Partition
from .hardsat import HardSatConfig, TrainOutcome, train_hard_sat, incremental_train
from .scenario import ScenarioConfig, pac_epsilon, run_scenario
from .mcsim import RolloutConfig, estimate_reach_avoid, rollout

__version__ = "0.1.0"
