"""Balanced signed-distance dataset generation.

Configurations are drawn uniformly inside joint limits expanded by 5% per
side; a configurable fraction of query points is sampled densely inside a
band of half-width ``d_s`` around the robot surface and the rest uniformly
in the workspace box. A post-pass rebalances the inside/outside split (a
record is "inside" when min_k d_k < 0) to ``inside_fraction`` +/- 0.02.

Datasets serialize to a little-endian binary file with a versioned header
(docs/formats.md) whose bytes are a pure function of (model, config).
"""
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .oracle import signed_distance_vector
from .robot import check_config, forward_kinematics, model_hash

MAGIC = b"SDFD"
VERSION = 1

TAG_NEAR_SURFACE = 0x01  # else: volume
TAG_INSIDE = 0x02  # else: outside

BALANCE_TOL = 0.02
REJECTION_BUDGET = 100  # attempts per requested near-surface point


class SamplerError(RuntimeError):
    pass


class SamplingBudgetError(SamplerError):
    """Near-surface rejection sampling ran out of attempts."""


class RebalanceError(SamplerError):
    """Could not reach the target inside fraction within bounded retries."""


class DatasetFormatError(ValueError):
    pass


@dataclass
class SamplerConfig:
    configs_count: int = 1000
    points_per_config: int = 200
    d_s: float = None  # default: 5% of the robot's reach, resolved at generation
    near_surface_fraction: float = 0.5
    inside_fraction: float = 0.5
    limit_expansion: float = 0.05
    workspace_bounds: tuple = None  # ((lo x,y,z), (hi x,y,z)); default from reach
    seed: int = 0

    def validate(self):
        if self.configs_count <= 0 or self.points_per_config <= 0:
            raise ValueError("configs_count and points_per_config must be positive")
        if self.d_s is not None and not self.d_s > 0:
            raise ValueError(f"d_s must be positive, got {self.d_s}")
        for name in ("near_surface_fraction", "inside_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.limit_expansion < 0:
            raise ValueError("limit_expansion must be >= 0")

    def resolved(self, model):
        """A copy with d_s and workspace_bounds materialized for ``model``."""
        self.validate()
        reach = model.reach_radius()
        d_s = self.d_s if self.d_s is not None else 0.05 * reach
        if not d_s > 0:
            raise ValueError(f"d_s must be positive, got {d_s}")
        if self.workspace_bounds is None:
            c = model.base.t
            half = 1.1 * reach
            bounds = (tuple(c - half), tuple(c + half))
        else:
            bounds = (tuple(float(x) for x in self.workspace_bounds[0]),
                      tuple(float(x) for x in self.workspace_bounds[1]))
        lo = np.asarray(bounds[0])
        hi = np.asarray(bounds[1])
        if np.any(hi - lo <= 0):
            raise ValueError("workspace_bounds must have positive extent")
        # the box must contain the reachable sphere
        if np.any(model.base.t - reach < lo - 1e-12) or np.any(model.base.t + reach > hi + 1e-12):
            raise ValueError("workspace_bounds do not contain the robot's reachable sphere")
        return SamplerConfig(
            configs_count=self.configs_count,
            points_per_config=self.points_per_config,
            d_s=float(d_s),
            near_surface_fraction=self.near_surface_fraction,
            inside_fraction=self.inside_fraction,
            limit_expansion=self.limit_expansion,
            workspace_bounds=bounds,
            seed=int(self.seed),
        )


@dataclass
class SdfDataset:
    q: np.ndarray  # (N, m)
    p: np.ndarray  # (N, 3)
    d: np.ndarray  # (N, n)
    tags: np.ndarray  # (N,) uint8
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.p)

    @property
    def inside_mask(self):
        return (self.tags & TAG_INSIDE) != 0

    @property
    def near_surface_mask(self):
        return (self.tags & TAG_NEAR_SURFACE) != 0

    def inside_fraction(self):
        return float(np.count_nonzero(self.inside_mask)) / len(self)


def expanded_limits(model, expansion):
    limits = model.joint_limits()
    if len(limits) == 0:
        return limits
    e = expansion * (limits[:, 1] - limits[:, 0])
    return np.stack([limits[:, 0] - e, limits[:, 1] + e], axis=1)


def sample_configuration(model, expansion, rng):
    """One configuration, each angle uniform on its expanded limit range."""
    if expansion < 0:
        raise ValueError("expansion must be >= 0")
    lims = expanded_limits(model, expansion)
    if len(lims) == 0:
        return np.zeros(0)
    return rng.uniform(lims[:, 0], lims[:, 1])


def _link_surface_weights(model):
    areas = np.array([link.geometry.surface_area() for link in model.links])
    return areas / areas.sum()


def _surface_band_points(model, poses, weights, d_s, count, rng, want_inside=None):
    """Candidate band points: area-weighted link surface point offset along
    the surface normal by U(-d_s, d_s) (or the requested side only)."""
    link_idx = rng.choice(model.n_links, size=count, p=weights)
    pts = np.empty((count, 3))
    for k in range(model.n_links):
        mask = link_idx == k
        c = int(np.count_nonzero(mask))
        if c == 0:
            continue
        local, nrm = model.links[k].geometry.sample_surface(c, rng)
        if want_inside is None:
            off = rng.uniform(-d_s, d_s, size=c)
        elif want_inside:
            off = rng.uniform(-d_s, 0.0, size=c)
        else:
            off = rng.uniform(0.0, d_s, size=c)
        frame = poses[k].compose(model.links[k].geometry_origin)
        pts[mask] = frame.apply(local + off[:, None] * nrm)
    return pts


def sample_near_surface(model, q, d_s, count, rng):
    """``count`` points whose min-over-links |distance| is at most ``d_s``.

    Offsets are drawn on both sides of the surface; candidates that leave
    the band (for example by falling deep inside a neighboring link) are
    rejected and resampled, up to 100x the requested count.
    """
    pts, _ = _sample_near_surface_tagged(model, q, d_s, count, rng)
    return pts


def _sample_near_surface_tagged(model, q, d_s, count, rng, want_inside=None, oracle=None):
    if not d_s > 0:
        raise ValueError(f"d_s must be positive, got {d_s}")
    if oracle is None:
        oracle = signed_distance_vector
    q = check_config(model, q)
    poses = forward_kinematics(model, q)
    weights = _link_surface_weights(model)
    out = np.empty((count, 3))
    dvec = np.empty((count, model.n_links))
    got = 0
    attempts = 0
    budget = REJECTION_BUDGET * count
    while got < count:
        want = count - got
        batch = max(want, 32)
        if attempts + batch > budget:
            batch = budget - attempts
            if batch <= 0:
                worst = model.links[int(np.argmax(weights))]
                raise SamplingBudgetError(
                    f"gave up after {attempts} attempts for {count} near-surface points "
                    f"(d_s={d_s}, dominant geometry {worst.name!r}: {worst.geometry.kind})"
                )
        cand = _surface_band_points(model, poses, weights, d_s, batch, rng, want_inside)
        d = oracle(model, q, cand)
        dmin = d.min(axis=1)
        ok = np.abs(dmin) <= d_s
        if want_inside is True:
            ok &= dmin < 0
        elif want_inside is False:
            ok &= dmin >= 0
        take = min(int(np.count_nonzero(ok)), want)
        sel = np.nonzero(ok)[0][:take]
        out[got : got + take] = cand[sel]
        dvec[got : got + take] = d[sel]
        got += take
        attempts += batch
    return out, dvec


def _volume_points(cfg, count, rng):
    lo = np.asarray(cfg.workspace_bounds[0])
    hi = np.asarray(cfg.workspace_bounds[1])
    return rng.uniform(lo, hi, size=(count, 3))


def _make_tags(d, near_mask):
    inside = d.min(axis=1) < 0
    tags = np.where(near_mask, TAG_NEAR_SURFACE, 0).astype(np.uint8)
    tags[inside] |= TAG_INSIDE
    return tags


def generate_dataset(model, config, oracle=None):
    """Generate a labeled dataset; content is a pure function of (model, config).

    ``oracle`` defaults to the exact signed-distance oracle; a substitute
    must have the same (model, q, points) -> (B, n) signature.
    """
    cfg = config.resolved(model)
    if oracle is None:
        oracle = signed_distance_vector
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    n_near = int(round(cfg.points_per_config * cfg.near_surface_fraction))
    n_vol = cfg.points_per_config - n_near
    N = cfg.configs_count * cfg.points_per_config

    qs = np.empty((N, model.dof))
    ps = np.empty((N, 3))
    ds = np.empty((N, model.n_links))
    near = np.zeros(N, dtype=bool)
    config_q = np.empty((cfg.configs_count, model.dof))

    row = 0
    for c in range(cfg.configs_count):
        q = sample_configuration(model, cfg.limit_expansion, rng)
        config_q[c] = q
        if n_near:
            pts_near, d_near = _sample_near_surface_tagged(
                model, q, cfg.d_s, n_near, rng, oracle=oracle
            )
        if n_vol:
            pts_vol = _volume_points(cfg, n_vol, rng)
            d_vol = oracle(model, q, pts_vol)
        qs[row : row + cfg.points_per_config] = q
        if n_near:
            ps[row : row + n_near] = pts_near
            ds[row : row + n_near] = d_near
            near[row : row + n_near] = True
        if n_vol:
            ps[row + n_near : row + cfg.points_per_config] = pts_vol
            ds[row + n_near : row + cfg.points_per_config] = d_vol
        row += cfg.points_per_config

    _rebalance(model, cfg, rng, qs, ps, ds, near, config_q, oracle=oracle)

    tags = _make_tags(ds, near)
    metadata = {
        "robot_name": model.name,
        "robot_hash": model_hash(model),
        "oracle_kind": model.oracle_kind(),
        "seed": cfg.seed,
        "config": _config_dict(cfg),
    }
    return SdfDataset(q=qs, p=ps, d=ds, tags=tags, metadata=metadata)


def _rebalance(model, cfg, rng, qs, ps, ds, near, config_q, oracle=None, max_rounds=50):
    """Resample majority-class records near the surface until the inside
    fraction lands within BALANCE_TOL of the target."""
    N = len(ps)
    ppc = cfg.points_per_config
    target = cfg.inside_fraction
    for _ in range(max_rounds):
        inside = ds.min(axis=1) < 0
        frac = inside.mean()
        if abs(frac - target) <= BALANCE_TOL * 0.5:
            return
        need_inside = frac < target
        deficit = int(np.ceil(abs(frac - target) * N))
        majority_rows = np.nonzero(~inside if need_inside else inside)[0]
        # prefer converting volume-tagged records to keep the near-surface set intact
        vol_rows = majority_rows[~near[majority_rows]]
        pick_from = vol_rows if len(vol_rows) >= deficit else majority_rows
        pick = rng.choice(pick_from, size=min(deficit, len(pick_from)), replace=False)
        by_config = {}
        for r in pick:
            by_config.setdefault(r // ppc, []).append(r)
        for c, rows in sorted(by_config.items()):
            q = config_q[c]
            try:
                pts, d = _sample_near_surface_tagged(
                    model, q, cfg.d_s, len(rows), rng, want_inside=need_inside, oracle=oracle
                )
            except SamplingBudgetError as e:
                raise RebalanceError(f"rebalancing failed: {e}") from e
            for i, r in enumerate(rows):
                ps[r] = pts[i]
                ds[r] = d[i]
                near[r] = True
    inside = ds.min(axis=1) < 0
    if abs(inside.mean() - target) > BALANCE_TOL:
        raise RebalanceError(
            f"inside fraction {inside.mean():.4f} still outside {target}+/-{BALANCE_TOL} "
            f"after {max_rounds} rebalancing rounds"
        )


def _config_dict(cfg):
    d = asdict(cfg)
    d["workspace_bounds"] = [list(cfg.workspace_bounds[0]), list(cfg.workspace_bounds[1])]
    return d


def _config_from_dict(d):
    wb = d.get("workspace_bounds")
    return SamplerConfig(
        configs_count=d["configs_count"],
        points_per_config=d["points_per_config"],
        d_s=d["d_s"],
        near_surface_fraction=d["near_surface_fraction"],
        inside_fraction=d["inside_fraction"],
        limit_expansion=d["limit_expansion"],
        workspace_bounds=(tuple(wb[0]), tuple(wb[1])) if wb else None,
        seed=d["seed"],
    )


def _record_dtype(m, n):
    return np.dtype([("q", "<f8", (m,)), ("p", "<f8", (3,)), ("d", "<f8", (n,)), ("tag", "u1")])


def save_dataset(dataset, path):
    """Write the versioned little-endian binary dataset file."""
    m = dataset.q.shape[1]
    n = dataset.d.shape[1]
    meta = json.dumps(dataset.metadata, sort_keys=True, separators=(",", ":")).encode()
    rec = np.zeros(len(dataset), dtype=_record_dtype(m, n))
    if m:
        rec["q"] = dataset.q
    rec["p"] = dataset.p
    rec["d"] = dataset.d
    rec["tag"] = dataset.tags
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIQ", VERSION, m, n, len(dataset)))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(rec.tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise DatasetFormatError(f"{path}: not a dataset file (bad magic)")
    version, m, n, count = struct.unpack("<IIIQ", buf.read(20))
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {version}")
    (meta_len,) = struct.unpack("<I", buf.read(4))
    metadata = json.loads(buf.read(meta_len).decode())
    rec = np.frombuffer(buf.read(), dtype=_record_dtype(m, n), count=count)
    q = rec["q"].astype(np.float64).reshape(count, m) if m else np.zeros((count, 0))
    return SdfDataset(
        q=q,
        p=rec["p"].astype(np.float64),
        d=rec["d"].astype(np.float64),
        tags=rec["tag"].copy(),
        metadata=metadata,
    )


def dataset_to_csv(dataset, path):
    """Debug export; not bit-exact (floats are formatted with repr)."""
    m = dataset.q.shape[1]
    n = dataset.d.shape[1]
    cols = [f"q{i}" for i in range(m)] + ["px", "py", "pz"] + [f"d{k}" for k in range(n)] + ["near_surface", "inside"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        near = dataset.near_surface_mask
        inside = dataset.inside_mask
        for i in range(len(dataset)):
            vals = [repr(float(x)) for x in dataset.q[i]]
            vals += [repr(float(x)) for x in dataset.p[i]]
            vals += [repr(float(x)) for x in dataset.d[i]]
            vals += [str(int(near[i])), str(int(inside[i]))]
            fh.write(",".join(vals) + "\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
