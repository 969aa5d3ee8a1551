import numpy as np
import pytest

from chainsdf.gjk import ConvexShape, ConvexShapeError, gjk_distance
from chainsdf.pose import Pose

from test_robot import random_pose


def cube(half=1.0):
    return ConvexShape(np.array([[x, y, z] for x in (-half, half)
                                 for y in (-half, half) for z in (-half, half)]))


def qp_oracle(va, vb):
    """Brute-force QP: min |A^T a - B^T b| over the two simplices."""
    import cvxpy as cp

    a = cp.Variable(len(va))
    b = cp.Variable(len(vb))
    cost = cp.sum_squares(va.T @ a - vb.T @ b)
    prob = cp.Problem(cp.Minimize(cost),
                      [cp.sum(a) == 1, cp.sum(b) == 1, a >= 0, b >= 0])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-14, tol_gap_rel=1e-14, tol_feas=1e-14)
    return float(np.sqrt(max(prob.value, 0.0)))


class TestGjk:
    def test_separated_cubes(self):
        r = gjk_distance(cube(), Pose(), cube(), Pose(translation=[3.0, 0, 0]))
        assert r.converged
        assert abs(r.distance - 1.0) < 1e-9

    def test_overlapping_cubes(self):
        r = gjk_distance(cube(), Pose(), cube(), Pose(translation=[0.5, 0, 0]))
        assert r.converged
        assert r.distance == 0.0

    def test_symmetry_exact(self, rng):
        for _ in range(50):
            a = ConvexShape(rng.uniform(-1, 1, (rng.integers(4, 13), 3)))
            b = ConvexShape(rng.uniform(-1, 1, (rng.integers(4, 13), 3)))
            pa, pb = random_pose(rng), random_pose(rng)
            d_ab = gjk_distance(a, pa, b, pb).distance
            d_ba = gjk_distance(b, pb, a, pa).distance
            assert abs(d_ab - d_ba) <= 1e-12

    def test_matches_qp_oracle(self, rng):
        for _ in range(60):
            a = ConvexShape(rng.uniform(-1, 1, (rng.integers(4, 13), 3)))
            b = ConvexShape(rng.uniform(-1, 1, (rng.integers(4, 13), 3)) +
                            rng.uniform(-2, 2, 3))
            r = gjk_distance(a, Pose(), b, Pose())
            ref = qp_oracle(a.vertices, b.vertices)
            assert abs(r.distance - ref) < 1e-6

    def test_touching(self):
        r = gjk_distance(cube(), Pose(), cube(), Pose(translation=[2.0, 0, 0]))
        assert r.distance < 1e-9

    def test_degenerate_shapes(self):
        point = ConvexShape(np.array([[0.0, 0.0, 0.0]]), degenerate=True)
        seg = ConvexShape(np.array([[0.0, 0, 0], [1.0, 0, 0]]), degenerate=True)
        r = gjk_distance(point, Pose(translation=[0, 2.0, 0]), seg, Pose())
        assert abs(r.distance - 2.0) < 1e-9

    def test_degenerate_rejected_without_flag(self):
        with pytest.raises(ConvexShapeError):
            ConvexShape(np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]]))
        with pytest.raises(ConvexShapeError):
            ConvexShape(np.zeros((0, 3)), degenerate=True)

    def test_iteration_budget_flag(self, rng):
        a = ConvexShape(rng.uniform(-1, 1, (12, 3)))
        b = ConvexShape(rng.uniform(-1, 1, (12, 3)) + np.array([3.0, 0, 0]))
        r = gjk_distance(a, Pose(), b, Pose(), max_iterations=1)
        assert not r.converged
        full = gjk_distance(a, Pose(), b, Pose())
        assert r.distance >= full.distance - 1e-12  # best bound, not below truth
