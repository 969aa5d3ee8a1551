"""Separation distance between convex hulls (GJK).

Distance-only variant: the simplex closest-point is found by exhaustive
sub-simplex enumeration (at most 4 points), termination on the support
gap. No penetration depth; intersecting shapes report distance 0.
"""
from dataclasses import dataclass

import numpy as np

from .pose import Pose

DEFAULT_TOL = 1e-9
MAX_ITERATIONS = 64


class ConvexShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ConvexShape:
    """A convex body given by the hull of its vertices (meters).

    Needs >= 4 non-coplanar vertices unless ``degenerate=True`` explicitly
    allows points / segments / triangles (useful in tests).
    """

    vertices: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise ConvexShapeError("vertices must be a non-empty (V, 3) array")
        object.__setattr__(self, "vertices", v)
        if not self.degenerate:
            if len(v) < 4:
                raise ConvexShapeError("need >= 4 vertices (or pass degenerate=True)")
            centered = v - v.mean(axis=0)
            if np.linalg.matrix_rank(centered, tol=1e-12) < 3:
                raise ConvexShapeError("vertices are coplanar (or pass degenerate=True)")


@dataclass(frozen=True)
class GjkResult:
    distance: float
    converged: bool
    iterations: int

    def __float__(self):
        return self.distance


def _support(world_verts, direction):
    return world_verts[int(np.argmax(world_verts @ direction))]


def _closest_on_simplex(pts):
    """Closest point to the origin on the hull of <= 4 points.

    Enumerates every non-empty subset, projects the origin onto its affine
    hull, and keeps the best projection whose barycentric coordinates are
    all nonnegative. Returns (closest point, reduced support subset).
    """
    best = None
    best_norm2 = np.inf
    best_subset = None
    k = len(pts)
    for mask in range(1, 1 << k):
        idx = [i for i in range(k) if mask >> i & 1]
        sub = pts[idx]
        if len(sub) == 1:
            lam = np.array([1.0])
        else:
            D = (sub[1:] - sub[0]).T  # (3, s-1)
            G = D.T @ D
            try:
                mu = np.linalg.solve(G, -(D.T @ sub[0]))
            except np.linalg.LinAlgError:
                continue  # degenerate subset (duplicates / collinear)
            lam = np.concatenate([[1.0 - mu.sum()], mu])
        if np.any(lam < -1e-12):
            continue
        v = lam @ sub
        n2 = float(v @ v)
        if n2 < best_norm2 - 1e-18:
            best_norm2 = n2
            best = v
            best_subset = idx
    return best, best_subset


def _gjk_core(va, vb, tol, max_iterations):
    v = va[0] - vb[0]
    simplex = [v]
    best = float(np.linalg.norm(v))
    for it in range(1, max_iterations + 1):
        vnorm = np.linalg.norm(v)
        best = min(best, float(vnorm))
        if vnorm < tol:
            return 0.0, True, it
        s = _support(va, -v) - _support(vb, v)
        # support gap in meters: how much closer the hull could still get
        gap = (vnorm * vnorm - float(v @ s)) / vnorm
        if gap <= tol:
            return float(vnorm), True, it
        if any(np.array_equal(s, w) for w in simplex):
            return float(vnorm), True, it  # no progress possible
        simplex.append(s)
        pts = np.asarray(simplex)
        v_new, subset = _closest_on_simplex(pts)
        if v_new is None:
            return float(vnorm), True, it
        simplex = [pts[i] for i in subset]
        v = v_new
        if len(simplex) == 4:
            return 0.0, True, it
    return best, False, max_iterations


def gjk_distance(a, pose_a, b, pose_b, tol=DEFAULT_TOL, max_iterations=MAX_ITERATIONS):
    """Euclidean separation distance between two posed convex shapes.

    Returns a GjkResult; ``distance`` is 0 when the hulls intersect, and
    ``converged`` is False when the iteration budget ran out (the distance
    is then the best upper bound found). The computation is canonicalized
    on the argument order, so gjk_distance(a, b) == gjk_distance(b, a)
    exactly.
    """
    pose_a = pose_a if pose_a is not None else Pose.identity()
    pose_b = pose_b if pose_b is not None else Pose.identity()
    va = pose_a.apply(a.vertices)
    vb = pose_b.apply(b.vertices)
    # order-canonicalization: run the iteration on a deterministic ordering
    if (va.shape, va.tobytes()) > (vb.shape, vb.tobytes()):
        va, vb = vb, va
    d, converged, iters = _gjk_core(va, vb, tol, max_iterations)
    return GjkResult(distance=d, converged=converged, iterations=iters)
