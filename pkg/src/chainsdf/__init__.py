"""chainsdf: configuration-conditioned signed distance fields for
articulated kinematic chains.

Exact geometric oracles, a learned multi-head distance field with analytic
gradients, dataset generation, a quantitative evaluation suite, and an
optimization-based collision-aware grasp planner.
"""

__version__ = "0.1.0"

from .pose import Pose
from .geometry import Sphere, Capsule, Box, TriMesh, load_obj, save_obj
from .robot import (RobotModel, LinkSpec, JointSpec, load_robot, forward_kinematics,
                    model_hash)
from .oracle import OracleField, link_signed_distance, signed_distance_vector
from .gjk import ConvexShape, GjkResult, gjk_distance
from .sampler import (SamplerConfig, SdfDataset, generate_dataset, load_dataset,
                      sample_configuration, sample_near_surface, save_dataset)
from .field import (ArchConfig, FieldParams, NeuralField, default_arch, forward,
                    input_jacobian, load_checkpoint, param_count, positional_encode,
                    save_checkpoint)
from .train import TrainConfig, TrainResult, rmse_loss, train
from .evaluate import (EvalReport, bench_throughput, eval_classification, eval_rmse,
                       evaluate_field, extract_isosurface, scaled_thresholds)
from .grasp import (CompositeSystem, GraspProblem, GraspSolution, HandChain,
                    PlanOptions, constraint_values, force_closure, grasp_objective,
                    plan_grasp, plan_grasp_restarts, query_composite, read_grasp_problem)
