import numpy as np
import pytest

from chainsdf.oracle import signed_distance_vector
from chainsdf.robot import LinkSpec, JointSpec, RobotModel
from chainsdf.geometry import Sphere
from chainsdf.pose import Pose
from chainsdf.sampler import (SamplerConfig, SamplingBudgetError, dataset_to_csv,
                              expanded_limits, file_sha256, generate_dataset,
                              load_dataset, sample_configuration, sample_near_surface,
                              _sample_near_surface_tagged, save_dataset)


def toy_model(lo=-1.0, hi=1.0):
    links = (LinkSpec(name="a", geometry=Sphere(0.1)),
             LinkSpec(name="b", geometry=Sphere(0.1)))
    joints = (JointSpec(parent=0, origin=Pose.identity(),
                        axis=np.array([0.0, 0.0, 1.0]), limits=(lo, hi)),)
    return RobotModel(name="toy", links=links, joints=joints)


class TestSampleConfiguration:
    def test_zero_expansion_stays_in_limits(self, rng):
        model = toy_model()
        qs = np.array([sample_configuration(model, 0.0, rng)[0] for _ in range(2000)])
        assert qs.min() >= -1.0 and qs.max() <= 1.0

    def test_five_percent_expansion(self, rng):
        # expanded range [-1.1, 1.1]; empirical extremes approach the bounds
        model = toy_model()
        qs = np.array([sample_configuration(model, 0.05, rng)[0] for _ in range(100_000)])
        assert qs.min() >= -1.1 and qs.max() <= 1.1
        assert qs.min() < -1.095 and qs.max() > 1.095

    def test_seeded_determinism(self):
        model = toy_model()
        a = [sample_configuration(model, 0.05, np.random.default_rng(9)) for _ in range(5)]
        rng = np.random.default_rng(9)
        b = [sample_configuration(model, 0.05, rng) for _ in range(5)]
        # same seed, same draw sequence
        rng2 = np.random.default_rng(9)
        c = [sample_configuration(model, 0.05, rng2) for _ in range(5)]
        assert all(np.array_equal(x, y) for x, y in zip(b, c))

    def test_expanded_limits_values(self):
        model = toy_model(-1.0, 1.0)
        lims = expanded_limits(model, 0.05)
        assert np.allclose(lims, [[-1.1, 1.1]])


class TestNearSurface:
    def test_sphere_shell_membership(self, sphere1, rng):
        pts = sample_near_surface(sphere1, np.zeros(0), 0.05, 2000, rng)
        r = np.linalg.norm(pts, axis=1)
        assert (np.abs(r - 0.15) <= 0.05 + 1e-12).all()

    def test_band_membership_oracle_recheck(self, arm3, rng):
        q = rng.uniform(-1.5, 1.5, 3)
        d_s = 0.04
        pts = sample_near_surface(arm3, q, d_s, 3000, rng)
        d = signed_distance_vector(arm3, q, pts)
        assert (np.abs(d.min(axis=1)) <= d_s).all()

    def test_zero_band_is_error(self, arm3, rng):
        with pytest.raises(ValueError):
            sample_near_surface(arm3, np.zeros(3), 0.0, 10, rng)

    def test_budget_exhaustion_names_geometry(self, rng):
        # near-impossible request: strictly-inside points of a hairline sphere
        tiny = RobotModel(name="tiny",
                          links=(LinkSpec(name="dot", geometry=Sphere(1e-7)),),
                          joints=())
        with pytest.raises(SamplingBudgetError) as ei:
            _sample_near_surface_tagged(tiny, np.zeros(0), 0.05, 50,
                                        rng, want_inside=True)
        assert "dot" in str(ei.value)


class TestGenerateDataset:
    def test_counts_balance_and_metadata(self, arm3):
        cfg = SamplerConfig(configs_count=50, points_per_config=100, seed=21)
        ds = generate_dataset(arm3, cfg)
        assert len(ds) == 5000
        assert 0.48 <= ds.inside_fraction() <= 0.52
        assert ds.metadata["robot_name"] == "arm3"
        assert ds.metadata["oracle_kind"] == "analytic"
        assert ds.metadata["config"]["d_s"] > 0

    def test_inside_tag_matches_labels(self, arm3_small_dataset):
        ds = arm3_small_dataset
        assert np.array_equal(ds.inside_mask, ds.d.min(axis=1) < 0)

    def test_near_surface_tags_in_band(self, arm3_small_dataset):
        ds = arm3_small_dataset
        d_s = ds.metadata["config"]["d_s"]
        near = ds.near_surface_mask
        assert (np.abs(ds.d[near].min(axis=1)) <= d_s).all()

    def test_labels_bitwise_recheck(self, arm3, arm3_small_dataset):
        ds = arm3_small_dataset
        rng = np.random.default_rng(0)
        idx = rng.choice(len(ds), size=max(1, len(ds) // 100), replace=False)
        for i in idx:
            again = signed_distance_vector(arm3, ds.q[i], ds.p[i])
            assert np.array_equal(again, ds.d[i])

    def test_same_seed_identical_files(self, arm3, tmp_path):
        cfg = SamplerConfig(configs_count=20, points_per_config=50, seed=77)
        f1 = tmp_path / "a.sdfd"
        f2 = tmp_path / "b.sdfd"
        save_dataset(generate_dataset(arm3, cfg), f1)
        save_dataset(generate_dataset(arm3, SamplerConfig(configs_count=20,
                                                          points_per_config=50, seed=77)), f2)
        assert file_sha256(f1) == file_sha256(f2)

    def test_different_seeds_disjoint_configs(self, arm3):
        a = generate_dataset(arm3, SamplerConfig(configs_count=20, points_per_config=10, seed=1))
        b = generate_dataset(arm3, SamplerConfig(configs_count=20, points_per_config=10, seed=2))
        qa = {tuple(q) for q in a.q}
        qb = {tuple(q) for q in b.q}
        assert not (qa & qb)

    def test_roundtrip(self, arm3_small_dataset, tmp_path):
        path = tmp_path / "ds.sdfd"
        save_dataset(arm3_small_dataset, path)
        back = load_dataset(path)
        assert np.array_equal(back.q, arm3_small_dataset.q)
        assert np.array_equal(back.p, arm3_small_dataset.p)
        assert np.array_equal(back.d, arm3_small_dataset.d)
        assert np.array_equal(back.tags, arm3_small_dataset.tags)
        assert back.metadata == arm3_small_dataset.metadata

    def test_zero_dof_robot(self, sphere1, tmp_path):
        cfg = SamplerConfig(configs_count=5, points_per_config=40, seed=1)
        ds = generate_dataset(sphere1, cfg)
        assert ds.q.shape == (200, 0)
        path = tmp_path / "s.sdfd"
        save_dataset(ds, path)
        assert np.array_equal(load_dataset(path).d, ds.d)

    def test_csv_export(self, sphere_dataset, tmp_path):
        path = tmp_path / "ds.csv"
        dataset_to_csv(sphere_dataset, path)
        lines = path.read_text().splitlines()
        assert len(lines) == len(sphere_dataset) + 1
        assert lines[0].startswith("px,") or "px" in lines[0]

    def test_invalid_config(self, arm3):
        with pytest.raises(ValueError):
            SamplerConfig(configs_count=0).resolved(arm3)
        with pytest.raises(ValueError):
            SamplerConfig(d_s=-0.1).resolved(arm3)
        with pytest.raises(ValueError):
            SamplerConfig(near_surface_fraction=1.5).resolved(arm3)
        with pytest.raises(ValueError):
            # workspace box must contain the reachable sphere
            SamplerConfig(workspace_bounds=((-0.1, -0.1, -0.1), (0.1, 0.1, 0.1))).resolved(arm3)

    def test_default_band_is_five_percent_of_reach(self, arm3):
        cfg = SamplerConfig().resolved(arm3)
        assert np.isclose(cfg.d_s, 0.05 * arm3.reach_radius())
