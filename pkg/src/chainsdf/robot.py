"""Serial-chain robot models: description loading and forward kinematics.

A robot is a serial chain of n links connected by m = n - 1 revolute
joints. Link k's world pose is

    pose[0]   = base
    pose[i+1] = pose[i] * joint_origin[i] * Rot(axis[i], q[i])

The description format is a small TOML document (see docs/formats.md);
all lengths are meters, all angles radians.
"""
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .geometry import Box, Capsule, GeometryError, OpenMeshError, Sphere, TriMesh, load_obj
from .pose import Pose

AXIS_UNIT_TOL = 1e-9


class RobotLoadError(ValueError):
    """Base class for robot-description problems."""


class RobotParseError(RobotLoadError):
    """Document does not parse or is missing required fields."""


class NonUnitAxisError(RobotLoadError):
    """A joint axis does not have unit norm (tolerance 1e-9)."""


class JointLimitError(RobotLoadError):
    """A joint has lo >= hi."""


class UnsupportedJointError(RobotLoadError):
    """Only revolute joints are supported."""


@dataclass(frozen=True)
class LinkSpec:
    name: str
    geometry: object  # Sphere | Capsule | Box | TriMesh
    # placement of the geometry inside the link frame (defaults to identity)
    geometry_origin: Pose = field(default_factory=Pose.identity)


@dataclass(frozen=True)
class JointSpec:
    parent: int
    origin: Pose  # fixed transform from the parent link frame to the joint frame
    axis: np.ndarray  # unit rotation axis in the joint frame
    limits: tuple  # (lo, hi) radians


@dataclass(frozen=True)
class RobotModel:
    name: str
    links: tuple  # n LinkSpec
    joints: tuple  # m JointSpec, m = n - 1
    base: Pose = field(default_factory=Pose.identity)

    @property
    def n_links(self):
        return len(self.links)

    @property
    def dof(self):
        return len(self.joints)

    def joint_limits(self):
        """(m, 2) array of joint limits."""
        if not self.joints:
            return np.zeros((0, 2))
        return np.array([j.limits for j in self.joints])

    def reach_radius(self):
        """Upper bound on the distance from the world origin to any robot point."""
        reach = float(np.linalg.norm(self.base.t)) + self.links[0].geometry.bounding_radius() + float(
            np.linalg.norm(self.links[0].geometry_origin.t)
        )
        acc = float(np.linalg.norm(self.base.t))
        for i, joint in enumerate(self.joints):
            acc += float(np.linalg.norm(joint.origin.t))
            link = self.links[i + 1]
            r = acc + float(np.linalg.norm(link.geometry_origin.t)) + link.geometry.bounding_radius()
            reach = max(reach, r)
        return reach

    def oracle_kind(self):
        kinds = {link.geometry.kind for link in self.links}
        if kinds <= {"sphere", "capsule", "box"}:
            return "analytic"
        if kinds == {"mesh"}:
            return "mesh"
        return "mixed"


def model_hash(model):
    """Deterministic sha256 of the model's full numeric content."""
    h = hashlib.sha256()
    h.update(model.name.encode())
    h.update(model.base.R.tobytes() + model.base.t.tobytes())
    for link in model.links:
        h.update(link.name.encode())
        h.update(link.geometry.kind.encode())
        g = link.geometry
        if isinstance(g, TriMesh):
            h.update(g.vertices.tobytes() + g.faces.tobytes())
        else:
            h.update(repr(sorted(g.params().items())).encode())
        h.update(link.geometry_origin.R.tobytes() + link.geometry_origin.t.tobytes())
    for j in model.joints:
        h.update(np.int64(j.parent).tobytes())
        h.update(j.origin.R.tobytes() + j.origin.t.tobytes())
        h.update(np.asarray(j.axis, dtype=np.float64).tobytes())
        h.update(np.asarray(j.limits, dtype=np.float64).tobytes())
    return h.hexdigest()


def _parse_pose(table, where):
    if table is None:
        return Pose.identity()
    t = table.get("translation", [0.0, 0.0, 0.0])
    if "rotation" in table and "rpy" in table:
        raise RobotParseError(f"{where}: give either 'rotation' or 'rpy', not both")
    if "rotation" in table:
        return Pose(np.asarray(table["rotation"], dtype=np.float64), t)
    return Pose.from_rpy(t, table.get("rpy", [0.0, 0.0, 0.0]))


def _parse_geometry(table, where, base_dir):
    if not isinstance(table, dict) or "kind" not in table:
        raise RobotParseError(f"{where}: geometry table with a 'kind' is required")
    kind = table["kind"]
    try:
        if kind == "sphere":
            return Sphere(table["radius"])
        if kind == "capsule":
            return Capsule(table["half_length"], table["radius"])
        if kind == "box":
            return Box(table["half_extents"])
        if kind == "mesh":
            path = table["file"]
            if not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            if not os.path.exists(path):
                raise RobotParseError(f"{where}: mesh file not found: {path}")
            return load_obj(path)
    except KeyError as e:
        raise RobotParseError(f"{where}: missing geometry field {e}") from e
    except OpenMeshError:
        raise
    except GeometryError as e:
        raise RobotParseError(f"{where}: {e}") from e
    raise RobotParseError(f"{where}: unknown geometry kind {kind!r}")


def load_robot(path):
    """Load a robot description document; see docs/formats.md for the grammar.

    Raises a distinct error per failure class: RobotParseError,
    NonUnitAxisError, JointLimitError, UnsupportedJointError, OpenMeshError.
    """
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as e:
        raise RobotParseError(f"{path}: {e}") from e
    return robot_from_dict(doc, name_hint=os.path.basename(path), base_dir=os.path.dirname(path))


def robot_from_dict(doc, name_hint="<inline>", base_dir="."):
    name = doc.get("name")
    if not name:
        raise RobotParseError(f"{name_hint}: a 'name' field is required")
    base = _parse_pose(doc.get("base"), f"{name_hint}[base]")

    raw_links = doc.get("links", [])
    if not raw_links:
        raise RobotParseError(f"{name_hint}: at least one [[links]] entry is required")
    links = []
    for i, tbl in enumerate(raw_links):
        where = f"{name_hint}[links.{i}]"
        geometry = _parse_geometry(tbl.get("geometry"), where, base_dir)
        origin = _parse_pose(tbl.get("geometry_origin"), where)
        links.append(LinkSpec(name=tbl.get("name", f"link{i}"), geometry=geometry, geometry_origin=origin))

    raw_joints = doc.get("joints", [])
    joints = []
    for i, tbl in enumerate(raw_joints):
        where = f"{name_hint}[joints.{i}]"
        jtype = tbl.get("type", "revolute")
        if jtype != "revolute":
            raise UnsupportedJointError(f"{where}: joint type {jtype!r} is not supported (revolute only)")
        parent = tbl.get("parent", i)
        if parent != i:
            raise RobotParseError(f"{where}: serial chain requires parent == joint index ({i}), got {parent}")
        axis = np.asarray(tbl.get("axis", [0.0, 0.0, 1.0]), dtype=np.float64)
        if axis.shape != (3,):
            raise RobotParseError(f"{where}: axis must be a 3-vector")
        if abs(np.linalg.norm(axis) - 1.0) > AXIS_UNIT_TOL:
            raise NonUnitAxisError(
                f"{where}: axis {axis.tolist()} has norm {np.linalg.norm(axis):.12g}, expected 1 within 1e-9"
            )
        limits = tbl.get("limits")
        if limits is None or len(limits) != 2:
            raise RobotParseError(f"{where}: limits = [lo, hi] is required")
        lo, hi = float(limits[0]), float(limits[1])
        if not lo < hi:
            raise JointLimitError(f"{where}: lower limit {lo} must be strictly below upper limit {hi}")
        origin = _parse_pose(tbl.get("origin"), where)
        joints.append(JointSpec(parent=parent, origin=origin, axis=axis, limits=(lo, hi)))

    if len(links) != len(joints) + 1:
        raise RobotParseError(
            f"{name_hint}: serial chain needs n = m + 1 links, got n={len(links)}, m={len(joints)}"
        )
    return RobotModel(name=name, links=tuple(links), joints=tuple(joints), base=base)


def check_config(model, q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.dof,):
        raise ValueError(f"configuration must have {model.dof} entries, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("configuration has non-finite entries")
    return q


def forward_kinematics(model, q):
    """World poses of all n links at configuration ``q``."""
    q = check_config(model, q)
    poses = [model.base]
    for i, joint in enumerate(model.joints):
        step = joint.origin.compose(Pose.from_axis_angle(joint.axis, q[i]))
        poses.append(poses[i].compose(step))
    return poses


def fk_with_frames(model, q):
    """Forward kinematics plus per-joint world axes and origins.

    Returns (poses, joint_origins (m,3), joint_axes (m,3)); joint j's frame is
    pose[j] * origin[j], whose axis is unchanged by the joint's own rotation.
    """
    q = check_config(model, q)
    poses = [model.base]
    origins = np.zeros((model.dof, 3))
    axes = np.zeros((model.dof, 3))
    for i, joint in enumerate(model.joints):
        jf = poses[i].compose(joint.origin)
        origins[i] = jf.t
        axes[i] = jf.R @ joint.axis
        poses.append(jf.compose(Pose.from_axis_angle(joint.axis, q[i])))
    return poses, origins, axes


def link_point_jacobian(model, q, link_index, world_point, frames=None):
    """d(world_point carried by link)/dq: (3, m), zero columns for distal joints.

    ``world_point`` is interpreted as rigidly attached to the link; column j is
    axis_j x (p - origin_j) for every joint j that moves the link.
    """
    if frames is None:
        frames = fk_with_frames(model, q)
    _, origins, axes = frames
    J = np.zeros((3, model.dof))
    p = np.asarray(world_point, dtype=np.float64)
    for j in range(min(link_index, model.dof)):
        J[:, j] = np.cross(axes[j], p - origins[j])
    return J
