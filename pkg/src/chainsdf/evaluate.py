"""Field evaluation: close/far RMSE per link, near-surface sign
classification, throughput benchmarking against the GJK baseline, and
isosurface extraction for visual inspection.

The close/far split assigns a sample to "close" for link k when the true
|d_k| is at or below the threshold (100 mm at reference scale; scale by
reach/0.8 m for smaller fixtures). Accuracy is averaged over
(sample, link) pairs inside the band, excluding exact surface zeros.
"""
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import SURFACE_EPS, save_obj
from .gjk import ConvexShape, gjk_distance
from .pose import Pose

REFERENCE_REACH = 0.8  # meters: scale anchor for the default thresholds
DEFAULT_CLOSE_THRESHOLD = 0.100
DEFAULT_BAND = 0.030


def scaled_thresholds(reach):
    """Close threshold and classification band scaled to a fixture's reach."""
    s = reach / REFERENCE_REACH
    return DEFAULT_CLOSE_THRESHOLD * s, DEFAULT_BAND * s


@dataclass
class EvalReport:
    close_rmse: list  # per link, meters (None where the partition is empty)
    far_rmse: list
    avg_close_rmse: float
    avg_far_rmse: float
    classification_accuracy: float = None
    zero_excluded: int = 0
    band_count: int = 0
    param_count: int = None
    close_threshold: float = None
    band: float = None
    accumulation_ratio: float = None  # last-link / first-link close RMSE
    timing: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        def clean(x):
            if isinstance(x, (np.floating, np.integer)):
                return x.item()
            if isinstance(x, list):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return x

        return json.dumps({k: clean(v) for k, v in self.__dict__.items()}, indent=2, sort_keys=True)

    def to_text(self):
        lines = []
        lines.append("distance field evaluation")
        lines.append("=" * 60)
        if self.close_threshold is not None:
            lines.append(f"close/far threshold: {self.close_threshold * 1000:.1f} mm")
        lines.append(f"{'link':>6} {'close RMSE (mm)':>18} {'far RMSE (mm)':>16}")
        for k, (c, f) in enumerate(zip(self.close_rmse, self.far_rmse)):
            cs = f"{c * 1000:.3f}" if c is not None else "absent"
            fs = f"{f * 1000:.3f}" if f is not None else "absent"
            lines.append(f"{k + 1:>6} {cs:>18} {fs:>16}")
        ac = f"{self.avg_close_rmse * 1000:.3f}" if self.avg_close_rmse is not None else "absent"
        af = f"{self.avg_far_rmse * 1000:.3f}" if self.avg_far_rmse is not None else "absent"
        lines.append(f"{'avg':>6} {ac:>18} {af:>16}")
        if self.accumulation_ratio is not None:
            lines.append(f"last/first close-RMSE ratio: {self.accumulation_ratio:.3f}")
        if self.classification_accuracy is not None:
            lines.append(
                f"sign accuracy (|d| < {self.band * 1000:.1f} mm): "
                f"{self.classification_accuracy:.4f} over {self.band_count} pairs "
                f"({self.zero_excluded} exact zeros excluded)"
            )
        if self.param_count is not None:
            lines.append(f"parameters: {self.param_count}")
        for key, val in sorted(self.timing.items()):
            lines.append(f"timing {key}: {val}")
        for key, val in sorted(self.metadata.items()):
            lines.append(f"{key}: {val}")
        return "\n".join(lines) + "\n"


def _predict_dataset(f, testset, chunk=20000):
    """Field predictions over a dataset, grouped by identical q rows."""
    N = len(testset)
    pred = np.empty_like(testset.d)
    start = 0
    while start < N:
        end = start + 1
        q = testset.q[start]
        while end < N and end - start < chunk and np.array_equal(testset.q[end], q):
            end += 1
        pred[start:end] = f.query(q, testset.p[start:end])
        start = end
    return pred


def eval_rmse(f, testset, close_threshold, predictions=None):
    """Per-link close/far RMSE (meters). Empty partitions report None."""
    if not close_threshold > 0:
        raise ValueError("close_threshold must be positive")
    pred = _predict_dataset(f, testset) if predictions is None else predictions
    true = testset.d
    n = true.shape[1]
    close_rmse, far_rmse = [], []
    for k in range(n):
        close = np.abs(true[:, k]) <= close_threshold
        err2 = (pred[:, k] - true[:, k]) ** 2
        close_rmse.append(float(np.sqrt(err2[close].mean())) if close.any() else None)
        far_rmse.append(float(np.sqrt(err2[~close].mean())) if (~close).any() else None)
    cs = [c for c in close_rmse if c is not None]
    fs = [f_ for f_ in far_rmse if f_ is not None]
    avg_close = float(np.mean(cs)) if cs else None
    avg_far = float(np.mean(fs)) if fs else None
    ratio = None
    if close_rmse[0] and close_rmse[-1]:
        ratio = float(close_rmse[-1] / close_rmse[0])
    return EvalReport(
        close_rmse=close_rmse,
        far_rmse=far_rmse,
        avg_close_rmse=avg_close,
        avg_far_rmse=avg_far,
        close_threshold=float(close_threshold),
        accumulation_ratio=ratio,
    )


def eval_classification(f, testset, band, predictions=None):
    """Sign agreement of prediction vs truth over (sample, link) pairs with
    0 < |true d| < band; exact zeros are excluded and counted separately.

    Returns (accuracy, band_count, zero_excluded).
    """
    if not band > 0:
        raise ValueError("band must be positive")
    pred = _predict_dataset(f, testset) if predictions is None else predictions
    true = testset.d
    in_band = np.abs(true) < band
    zeros = in_band & (np.abs(true) <= SURFACE_EPS)
    considered = in_band & ~zeros
    count = int(np.count_nonzero(considered))
    if count == 0:
        raise ValueError("no test pairs inside the classification band")
    agree = np.sign(pred[considered]) == np.sign(true[considered])
    return float(np.mean(agree)), count, int(np.count_nonzero(zeros))


def evaluate_field(f, testset, close_threshold, band, param_count=None, metadata=None):
    """Full report: RMSE partitioning + classification in one pass."""
    pred = _predict_dataset(f, testset)
    report = eval_rmse(f, testset, close_threshold, predictions=pred)
    acc, cnt, zer = eval_classification(f, testset, band, predictions=pred)
    report.classification_accuracy = acc
    report.band_count = cnt
    report.zero_excluded = zer
    report.band = float(band)
    report.param_count = param_count
    report.metadata = dict(metadata or {})
    return report


def bench_throughput(f, batch_size=100_000, repeats=5, dtype=np.float64, rng=None,
                     joint_limits=None, workspace=None, gjk_pairs=True):
    """Wall-clock batched inference timing plus a GJK per-query baseline.

    Inputs are pre-generated outside the timed region; one warm-up run
    precedes the measurements. Returns a timing dict (seconds / microseconds).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = rng or np.random.default_rng(0)
    m = f.dof
    lims = joint_limits if joint_limits is not None else np.tile([-np.pi, np.pi], (m, 1))
    lo, hi = (np.array([-1.0] * 3), np.array([1.0] * 3)) if workspace is None else workspace
    Q = rng.uniform(lims[:, 0], lims[:, 1], size=(batch_size, m)) if m else np.zeros((batch_size, 0))
    P = rng.uniform(lo, hi, size=(batch_size, 3))
    if dtype == np.float32:
        Q = Q.astype(np.float32)
        P = P.astype(np.float32)

    query_qp = getattr(f, "query_qp", None)
    if query_qp is not None:
        run_batch = lambda: query_qp(Q, P, dtype=dtype)
    else:
        # oracle-style fields take one configuration at a time
        run_batch = lambda: f.query(Q[0], P)

    run_batch()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_batch()
        times.append(time.perf_counter() - t0)
    batch_time = float(np.mean(times))

    # single-sample reference
    q1, p1 = Q[:1], P[:1]
    if query_qp is not None:
        run_one = lambda: query_qp(q1, p1, dtype=dtype)
    else:
        run_one = lambda: f.query(q1[0], p1)
    run_one()
    t0 = time.perf_counter()
    n_single = max(10, min(200, repeats * 20))
    for _ in range(n_single):
        run_one()
    single_time = (time.perf_counter() - t0) / n_single

    timing = {
        "batch_size": int(batch_size),
        "repeats": int(repeats),
        "dtype": np.dtype(dtype).name,
        "batch_time_s": batch_time,
        "per_sample_us": batch_time / batch_size * 1e6,
        "single_query_us": single_time * 1e6,
        "threads": os.cpu_count(),
    }
    if gjk_pairs:
        timing.update(_gjk_baseline(rng, n_links=f.n_links))
    return timing


def _gjk_baseline(rng, n_links, queries=200):
    """Per-query cost of the convex-pair distance baseline on this machine."""
    a = ConvexShape(rng.uniform(-0.1, 0.1, (10, 3)))
    b = ConvexShape(rng.uniform(-0.1, 0.1, (10, 3)))
    poses = [Pose.from_rpy(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)) for _ in range(queries)]
    gjk_distance(a, poses[0], b, poses[1])  # warm-up
    t0 = time.perf_counter()
    for i in range(queries):
        gjk_distance(a, poses[i], b, poses[(i + 1) % queries])
    per_query = (time.perf_counter() - t0) / queries
    return {
        "gjk_per_query_us": per_query * 1e6,
        "gjk_per_configuration_us": per_query * 1e6 * n_links,
        "gjk_links_assumed": int(n_links),
    }


def extract_isosurface(f, q, level, grid_resolution=128, bounds=None, chunk=65536):
    """Marching-cubes mesh of {p : min_k d_k(q, p) = level}.

    Returns (vertices, faces); empty arrays (with a warning) when the level
    does not intersect the sampled field range.
    """
    from skimage.measure import marching_cubes

    if bounds is None:
        raise ValueError("bounds ((lo3), (hi3)) are required")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    r = int(grid_resolution)
    axes = [np.linspace(lo[a], hi[a], r) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.empty(len(grid))
    for s in range(0, len(grid), chunk):
        d = f.query(q, grid[s : s + chunk])
        vals[s : s + chunk] = d.min(axis=1)
    vol = vals.reshape(r, r, r)
    if not (vol.min() <= level <= vol.max()):
        warnings.warn(
            f"isosurface level {level} outside field range [{vol.min():.4g}, {vol.max():.4g}]; "
            "returning an empty mesh"
        )
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    spacing = (hi - lo) / (r - 1)
    verts, faces, _, _ = marching_cubes(vol, level=level, spacing=tuple(spacing))
    return verts + lo, faces.astype(np.int64)


def export_isosurface(path, f, q, level, grid_resolution=128, bounds=None):
    verts, faces = extract_isosurface(f, q, level, grid_resolution, bounds)
    save_obj(path, verts, faces)
    return len(verts), len(faces)
