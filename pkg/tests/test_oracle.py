import numpy as np
import pytest

from chainsdf.geometry import (Box, Capsule, GeometryError, OpenMeshError, Sphere,
                               TriMesh, load_obj, save_obj, SURFACE_EPS)
from chainsdf.oracle import (OracleField, link_signed_distance, signed_distance_vector)
from chainsdf.pose import Pose
from chainsdf.robot import LinkSpec, JointSpec, RobotModel, forward_kinematics

from test_robot import random_pose


def one_link_model(geometry):
    return RobotModel(name="one", links=(LinkSpec(name="g", geometry=geometry),), joints=())


PRIMITIVES = [Sphere(1.0), Capsule(0.5, 0.1), Box([0.1, 0.2, 0.3])]
# desk-scale variants: the sampling oracle's resolution is its surface
# spacing, so keep areas small enough for 1e-3 m at 1e6 samples
PRIMITIVES_DESK = [Sphere(0.15), Capsule(0.5, 0.1), Box([0.1, 0.2, 0.3])]


class TestPrimitives:
    def test_unit_sphere_values(self):
        s = Sphere(1.0)
        assert s.signed_distance(np.array([[2.0, 0, 0]]))[0] == 1.0
        assert s.signed_distance(np.array([[0.0, 0, 0]]))[0] == -1.0

    @pytest.mark.parametrize("geom", PRIMITIVES_DESK, ids=lambda g: g.kind)
    def test_matches_dense_surface_sampling(self, geom, rng):
        # brute-force oracle: min distance to a dense surface sampling
        from scipy.spatial import cKDTree

        pts, _ = geom.sample_surface(1_000_000, rng)
        tree = cKDTree(pts)
        r = geom.bounding_radius()
        queries = rng.uniform(-2 * r, 2 * r, (300, 3))
        approx = tree.query(queries)[0]
        exact = geom.signed_distance(queries)
        assert np.abs(np.abs(exact) - approx).max() < 1e-3

    @pytest.mark.parametrize("geom", PRIMITIVES, ids=lambda g: g.kind)
    def test_eikonal_gradient_norm(self, geom, rng):
        r = geom.bounding_radius()
        pts = rng.uniform(-2 * r, 2 * r, (4000, 3))
        d = geom.signed_distance(pts)
        keep = np.abs(d) > 0.02 * r  # off surface, off medial axis (probabilistically)
        h = 1e-6
        grad = np.empty((keep.sum(), 3))
        sel = pts[keep]
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            grad[:, a] = (geom.signed_distance(sel + dp) - geom.signed_distance(sel - dp)) / (2 * h)
        norms = np.linalg.norm(grad, axis=1)
        # box interiors have medial-axis sheets; drop the few that straddle them
        good = np.abs(norms - 1.0) < 1e-4
        assert good.mean() > 0.99
        assert np.abs(np.linalg.norm(geom.distance_gradient(sel[good]), axis=1) - 1.0).max() < 1e-9

    @pytest.mark.parametrize("geom", PRIMITIVES, ids=lambda g: g.kind)
    def test_surface_samples_are_on_surface(self, geom, rng):
        pts, normals = geom.sample_surface(5000, rng)
        assert np.abs(geom.signed_distance(pts)).max() <= SURFACE_EPS
        # normals point outward: a small outward offset is positive
        off = geom.signed_distance(pts + 1e-4 * normals)
        assert (off > 0).all()

    def test_invalid_parameters(self):
        with pytest.raises(GeometryError):
            Sphere(0.0)
        with pytest.raises(GeometryError):
            Capsule(-0.1, 0.1)
        with pytest.raises(GeometryError):
            Box([0.1, 0.0, 0.1])


class TestLinkDistance:
    def test_capsule_under_pose_matches_sampling(self, rng):
        # spec oracle: dense surface sampling under a random rigid pose
        from scipy.spatial import cKDTree

        geom = Capsule(0.5, 0.1)
        model = one_link_model(geom)
        pose = random_pose(rng)
        local, _ = geom.sample_surface(1_000_000, rng)
        tree = cKDTree(pose.apply(local))
        queries = rng.uniform(-1.5, 1.5, (200, 3))
        exact = link_signed_distance(model, 0, pose, queries)
        approx = tree.query(queries)[0]
        assert np.abs(np.abs(exact) - approx).max() < 1e-3

    def test_on_surface_point_snaps_to_zero(self, arm3, rng):
        q = rng.uniform(-1, 1, 3)
        poses = forward_kinematics(arm3, q)
        link = arm3.links[2]
        local, _ = link.geometry.sample_surface(10, rng)
        world = poses[2].compose(link.geometry_origin).apply(local)
        d = link_signed_distance(arm3, 2, poses[2], world)
        assert np.abs(d).max() <= 1e-9

    def test_far_point_all_positive(self, arm3):
        d = signed_distance_vector(arm3, np.zeros(3), np.array([10.0, 0.0, 0.0]))
        assert (d > 0).all()

    def test_vector_matches_per_link_bitwise(self, arm3, rng):
        q = rng.uniform(-2, 2, 3)
        pts = rng.uniform(-1, 1, (50, 3))
        vec = signed_distance_vector(arm3, q, pts)
        poses = forward_kinematics(arm3, q)
        for k in range(arm3.n_links):
            per_link = link_signed_distance(arm3, k, poses[k], pts)
            assert np.array_equal(vec[:, k], per_link)

    def test_rigid_invariance(self, rng):
        geom = Capsule(0.3, 0.08)
        model = one_link_model(geom)
        for _ in range(20):
            pose = random_pose(rng)
            T = random_pose(rng)
            p = rng.uniform(-1, 1, 3)
            d0 = link_signed_distance(model, 0, pose, p)
            d1 = link_signed_distance(model, 0, T.compose(pose), T.apply(p))
            assert abs(d0 - d1) < 1e-10

    def test_sign_unsigned_consistency(self, rng):
        for geom in PRIMITIVES:
            pts = rng.uniform(-1.5, 1.5, (500, 3))
            d = geom.signed_distance(pts)
            # |signed| must equal the unsigned point-to-surface distance;
            # verified against a fine sampling
            pts_s, _ = geom.sample_surface(200_000, rng)
            from scipy.spatial import cKDTree

            unsigned = cKDTree(pts_s).query(pts)[0]
            assert np.abs(np.abs(d) - unsigned).max() < 2e-3


def icosphere(subdiv=2):
    # icosahedron subdivision, projected onto the unit sphere
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    for _ in range(subdiv):
        mid = {}
        new_faces = []
        verts = list(verts)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                mid[key] = len(verts)
                verts.append((np.asarray(verts[a]) + verts[b]) / 2.0)
            return mid[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces)
        verts = np.array(verts)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return verts, faces


class TestMesh:
    def test_closed_validation(self):
        verts, faces = icosphere(1)
        TriMesh(verts, faces)  # validates
        with pytest.raises(OpenMeshError):
            TriMesh(verts, faces[:-1])  # open: one face removed

    def test_inconsistent_orientation_rejected(self):
        verts, faces = icosphere(1)
        bad = faces.copy()
        bad[0] = bad[0][::-1]
        with pytest.raises(OpenMeshError):
            TriMesh(verts, bad)

    def test_sphere_mesh_distance_close_to_analytic(self, rng):
        verts, faces = icosphere(3)
        mesh = TriMesh(verts, faces)
        pts = rng.uniform(-2, 2, (100, 3))
        d_mesh = mesh.signed_distance(pts)
        d_true = np.linalg.norm(pts, axis=1) - 1.0
        # icosphere(3) chord error ~ 1e-3
        assert np.abs(d_mesh - d_true).max() < 5e-3

    def test_bvh_matches_brute_force(self, rng):
        verts, faces = icosphere(2)
        mesh = TriMesh(verts, faces)
        pts = rng.uniform(-1.5, 1.5, (80, 3))
        fast = mesh.signed_distance(pts)
        slow = mesh.signed_distance(pts, brute_force=True)
        assert np.array_equal(fast, slow)

    def test_inside_outside_sign(self):
        verts, faces = icosphere(2)
        mesh = TriMesh(verts, faces)
        assert mesh.signed_distance(np.array([[0.0, 0.0, 0.0]]))[0] < 0
        assert mesh.signed_distance(np.array([[2.0, 0.0, 0.0]]))[0] > 0

    def test_obj_roundtrip(self, tmp_path, rng):
        verts, faces = icosphere(1)
        path = tmp_path / "ball.obj"
        save_obj(path, verts, faces)
        mesh = load_obj(path)
        pts = rng.uniform(-1.5, 1.5, (20, 3))
        ref = TriMesh(verts, faces)
        assert np.abs(mesh.signed_distance(pts) - ref.signed_distance(pts)).max() < 1e-9


class TestOracleField:
    def test_query_matches_oracle_bitwise(self, arm3, rng):
        f = OracleField(arm3)
        q = rng.uniform(-1, 1, 3)
        pts = rng.uniform(-1, 1, (30, 3))
        assert np.array_equal(f.query(q, pts), signed_distance_vector(arm3, q, pts))

    def test_jacobian_matches_fd(self, arm3, rng):
        f = OracleField(arm3)
        q = rng.uniform(-1, 1, 3)
        pts = rng.uniform(-0.8, 0.8, (12, 3))
        dd_dq, dd_dp = f.jacobian_batch(q, pts)
        eps = 1e-6
        for j in range(3):
            dq = np.zeros(3)
            dq[j] = eps
            fd = (f.query(q + dq, pts) - f.query(q - dq, pts)) / (2 * eps)
            assert np.abs(fd - dd_dq[:, :, j]).max() < 1e-6
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = eps
            fd = (f.query(q, pts + dp) - f.query(q, pts - dp)) / (2 * eps)
            assert np.abs(fd - dd_dp[:, :, a]).max() < 1e-6
