"""Rigid transforms (rotation matrix + translation) in SE(3)."""
import numpy as np

ORTHONORMAL_TOL = 1e-9


class PoseError(ValueError):
    """Raised for a rotation that is not orthonormal / proper."""


class Pose:
    """A rigid transform: ``x_world = R @ x_local + t``.

    Immutable after construction (the arrays are marked read-only).
    Lengths are meters.
    """

    __slots__ = ("R", "t")

    def __init__(self, rotation=None, translation=None, check=True):
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        if R.shape != (3, 3):
            raise PoseError(f"rotation must be 3x3, got {R.shape}")
        if t.shape != (3,):
            raise PoseError(f"translation must be a 3-vector, got {t.shape}")
        if check:
            if not np.allclose(R @ R.T, np.eye(3), atol=ORTHONORMAL_TOL):
                raise PoseError("rotation is not orthonormal within 1e-9")
            if not np.isclose(np.linalg.det(R), 1.0, atol=ORTHONORMAL_TOL):
                raise PoseError("rotation determinant is not +1 within 1e-9")
        R = R.copy()
        t = t.copy()
        R.flags.writeable = False
        t.flags.writeable = False
        self.R = R
        self.t = t

    @staticmethod
    def identity():
        return Pose()

    @staticmethod
    def from_rpy(translation, rpy):
        """Pose from translation and XYZ roll-pitch-yaw angles (radians)."""
        return Pose(rotation_rpy(rpy), translation, check=False)

    @staticmethod
    def from_axis_angle(axis, angle, translation=None):
        return Pose(rotation_axis_angle(axis, angle), translation, check=False)

    def compose(self, other):
        """Rigid composition: self then ``other`` in self's frame (``self @ other``)."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t, check=False)

    def inverse(self):
        return Pose(self.R.T, -(self.R.T @ self.t), check=False)

    def apply(self, points):
        """Map local points (..., 3) into the parent frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.R.T + self.t

    def apply_inverse(self, points):
        """Map parent-frame points (..., 3) into the local frame."""
        p = np.asarray(points, dtype=np.float64)
        return (p - self.t) @ self.R

    def rotate(self, vectors):
        """Rotate vectors (..., 3) without translating."""
        return np.asarray(vectors, dtype=np.float64) @ self.R.T

    def matrix(self):
        """The 4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def __repr__(self):
        return f"Pose(t={np.array2string(self.t, precision=4)})"


def rotation_axis_angle(axis, angle):
    """Rodrigues rotation matrix about a unit ``axis`` by ``angle`` radians."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if abs(n - 1.0) > 1e-6:
        a = a / n
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def rotation_rpy(rpy):
    """XYZ roll-pitch-yaw convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    r, p, y = float(rpy[0]), float(rpy[1]), float(rpy[2])
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx
