"""Reference fixtures: a desk-scale arm-plus-gripper system and a pinch
grasp problem, used by the examples, tests and benchmarks.

The gripper is a parallel-jaw pair of 2-DoF fingers mounted on the arm's
wrist; the object is a small sphere whose graspable region is its
equatorial band (an affordance-style restriction that makes two-contact
pinches the natural optimum), with one spherical obstacle off to the side.
"""
import os

import numpy as np

from .geometry import Sphere
from .grasp import (CompositeSystem, GraspProblem, HandChain, PlanOptions,
                    sample_pregrasp_init)
from .oracle import OracleField
from .pose import Pose
from .robot import load_robot

ASSETS = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))),
                      "assets")

FINGER_SEPARATION = 0.035  # jaw half-gap at the mounts, meters
MOUNT_HEIGHT = 0.26  # hand base offset along the wrist z axis
OBJECT_RADIUS = 0.022
OBJECT_CENTER = (0.50, 0.0, 0.44)
OBSTACLE_RADIUS = 0.04
OBSTACLE_CENTER = (0.30, 0.18, 0.55)


def asset_path(*parts):
    return os.path.join(ASSETS, *parts)


def build_pinch_system(arm_path=None, finger_path=None, field_factory=OracleField):
    """The two-finger pinch system; ``field_factory(model)`` builds the
    per-chain field (exact oracle by default)."""
    arm = load_robot(arm_path or asset_path("robots", "arm3.robot.toml"))
    finger = load_robot(finger_path or asset_path("robots", "finger2.robot.toml"))
    chains = [
        HandChain(field=field_factory(finger),
                  offset=Pose.from_rpy([+FINGER_SEPARATION, 0.0, 0.0], [0.0, 0.0, 0.0]),
                  model=finger),
        # mirrored mount: yaw pi flips the curl direction, so identical
        # joint limits curl both fingers toward the jaw center
        HandChain(field=field_factory(finger),
                  offset=Pose.from_rpy([-FINGER_SEPARATION, 0.0, 0.0], [0.0, 0.0, np.pi]),
                  model=finger),
    ]
    return CompositeSystem(arm, field_factory(arm), chains, mount_link=3,
                           mount_offset=Pose.from_rpy([0.0, 0.0, MOUNT_HEIGHT], [0.0, 0.0, 0.0]))


def pinch_object_points(seed=7, count=160, band=0.35):
    """Equatorial-band points (and outward normals) of the object sphere."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    theta = rng.uniform(0.0, 2.0 * np.pi, count)
    phi = np.arcsin(rng.uniform(-band, band, count))
    normals = np.stack(
        [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=1
    )
    points = np.asarray(OBJECT_CENTER) + OBJECT_RADIUS * normals
    return points, normals


def pinch_obstacle_points(seed=7, count=60):
    rng = np.random.default_rng(np.random.PCG64(seed + 1))
    pts, _ = Sphere(OBSTACLE_RADIUS).sample_surface(count, rng)
    return pts + np.asarray(OBSTACLE_CENTER)


def build_pinch_problem(seed=7):
    points, normals = pinch_object_points(seed)
    return GraspProblem(
        object_points=points,
        object_normals=normals,
        obstacle_points=pinch_obstacle_points(seed),
        contact_links=(6, 9),  # the two fingertips in the global registry
        d_min_obs=0.005,
        d_p=0.002,
        mu=0.5,
        fc_facets=8,
    )


def pinch_plan_options():
    return PlanOptions(inner_maxiter=300, tau0=0.002, max_outer=12)


def pinch_init_sampler(system, problem):
    """Pre-grasp seeding for the pinch fixture (see sample_pregrasp_init)."""

    def sampler(rng):
        return sample_pregrasp_init(
            system, problem, rng,
            approach_range=(0.085, 0.150), lateral=0.012, transverse=0.04,
        )

    return sampler


def antipodal_reference_contacts():
    """The canonical opposing contact pair on the object's equator."""
    c = np.asarray(OBJECT_CENTER)
    r = OBJECT_RADIUS
    return [
        (c + np.array([r, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])),
        (c - np.array([r, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])),
    ]
