"""Link geometries: analytic primitives and triangle meshes.

Every geometry lives in its own local frame and provides exact signed
distances (positive outside, negative inside, zero on the surface),
spatial gradients, area-weighted surface sampling, and a few bounds used
for sampling and reach estimates.
"""
import numpy as np

# Signed distances inside this band snap to exactly 0 ("on the surface").
SURFACE_EPS = 1e-9

# Fixed ray directions for mesh inside/outside parity voting; three skewed
# unit vectors so a single edge/vertex graze cannot flip the majority.
_PARITY_RAYS = np.array(
    [
        [0.57735026918962584, 0.57735026918962584, 0.57735026918962584],
        [-0.28059551665786284, 0.83147663380814157, -0.47920949054867191],
        [0.79893351678822272, -0.17355267461177186, -0.57587952134535942],
    ]
)


class GeometryError(ValueError):
    """Invalid geometry parameters."""


class OpenMeshError(GeometryError):
    """Mesh is not closed or not consistently oriented."""


def _snap_surface(d):
    d = np.where(np.abs(d) <= SURFACE_EPS, 0.0, d)
    return d


class Sphere:
    kind = "sphere"

    def __init__(self, radius):
        if radius <= 0:
            raise GeometryError(f"sphere radius must be positive, got {radius}")
        self.radius = float(radius)

    def signed_distance(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = np.linalg.norm(p, axis=1) - self.radius
        return _snap_surface(d)

    def distance_gradient(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        r = np.linalg.norm(p, axis=1, keepdims=True)
        g = np.where(r > 1e-12, p / np.maximum(r, 1e-12), np.array([1.0, 0.0, 0.0]))
        return g

    def surface_area(self):
        return 4.0 * np.pi * self.radius**2

    def sample_surface(self, count, rng):
        dirs = rng.standard_normal((count, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return dirs * self.radius, dirs

    def bounding_radius(self):
        return self.radius

    def params(self):
        return {"radius": self.radius}


class Capsule:
    """Capsule along the local z axis: segment [-h, +h] inflated by ``radius``."""

    kind = "capsule"

    def __init__(self, half_length, radius):
        if half_length <= 0 or radius <= 0:
            raise GeometryError("capsule half_length and radius must be positive")
        self.half_length = float(half_length)
        self.radius = float(radius)

    def _to_segment(self, p):
        z = np.clip(p[:, 2], -self.half_length, self.half_length)
        closest = np.zeros_like(p)
        closest[:, 2] = z
        return p - closest

    def signed_distance(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = np.linalg.norm(self._to_segment(p), axis=1) - self.radius
        return _snap_surface(d)

    def distance_gradient(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        v = self._to_segment(p)
        r = np.linalg.norm(v, axis=1, keepdims=True)
        return np.where(r > 1e-12, v / np.maximum(r, 1e-12), np.array([1.0, 0.0, 0.0]))

    def surface_area(self):
        return 4.0 * np.pi * self.radius**2 + 4.0 * np.pi * self.radius * self.half_length

    def sample_surface(self, count, rng):
        cap_area = 4.0 * np.pi * self.radius**2
        total = self.surface_area()
        on_cap = rng.random(count) < cap_area / total
        dirs = rng.standard_normal((count, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = np.empty((count, 3))
        nrm = np.empty((count, 3))
        # caps: hemisphere pointing away from the segment midpoint
        cap_sign = np.where(dirs[:, 2] >= 0.0, 1.0, -1.0)
        cap_center = np.zeros((count, 3))
        cap_center[:, 2] = cap_sign * self.half_length
        refl = dirs.copy()
        refl[:, 2] = np.abs(refl[:, 2]) * cap_sign
        pts_cap = cap_center + refl * self.radius
        # cylinder: uniform height and angle
        theta = rng.random(count) * 2.0 * np.pi
        z = (rng.random(count) * 2.0 - 1.0) * self.half_length
        side = np.stack([np.cos(theta), np.sin(theta), np.zeros(count)], axis=1)
        pts_cyl = side * self.radius
        pts_cyl[:, 2] = z
        pts[on_cap] = pts_cap[on_cap]
        nrm[on_cap] = refl[on_cap]
        pts[~on_cap] = pts_cyl[~on_cap]
        nrm[~on_cap] = side[~on_cap]
        return pts, nrm

    def bounding_radius(self):
        return self.half_length + self.radius

    def params(self):
        return {"half_length": self.half_length, "radius": self.radius}


class Box:
    """Axis-aligned box centered at the local origin with given half extents."""

    kind = "box"

    def __init__(self, half_extents):
        e = np.asarray(half_extents, dtype=np.float64)
        if e.shape != (3,) or np.any(e <= 0):
            raise GeometryError("box half_extents must be 3 positive numbers")
        self.half_extents = e

    def signed_distance(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        q = np.abs(p) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return _snap_surface(outside + inside)

    def distance_gradient(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        q = np.abs(p) - self.half_extents
        g = np.zeros_like(p)
        out = np.max(q, axis=1) > 0.0
        qo = np.maximum(q[out], 0.0)
        norm = np.linalg.norm(qo, axis=1, keepdims=True)
        g[out] = np.sign(p[out]) * qo / np.maximum(norm, 1e-12)
        # inside: push along the axis with the smallest wall clearance
        ins = ~out
        if np.any(ins):
            ax = np.argmax(q[ins], axis=1)
            rows = np.nonzero(ins)[0]
            g[rows, ax] = np.where(np.sign(p[rows, ax]) == 0.0, 1.0, np.sign(p[rows, ax]))
        return g

    def surface_area(self):
        ex, ey, ez = self.half_extents
        return 8.0 * (ex * ey + ey * ez + ez * ex)

    def sample_surface(self, count, rng):
        ex, ey, ez = self.half_extents
        face_areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey]) * 4.0
        face = rng.choice(6, size=count, p=face_areas / face_areas.sum())
        u = (rng.random(count) * 2.0 - 1.0)
        v = (rng.random(count) * 2.0 - 1.0)
        pts = np.empty((count, 3))
        nrm = np.zeros((count, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        for a in range(3):
            m = axis == a
            o1, o2 = [i for i in range(3) if i != a]
            pts[m, a] = sign[m] * self.half_extents[a]
            pts[m, o1] = u[m] * self.half_extents[o1]
            pts[m, o2] = v[m] * self.half_extents[o2]
            nrm[m, a] = sign[m]
        return pts, nrm

    def bounding_radius(self):
        return float(np.linalg.norm(self.half_extents))

    def params(self):
        return {"half_extents": self.half_extents.tolist()}


class TriMesh:
    """Closed, consistently oriented triangle mesh.

    Distance queries run through a median-split BVH (leaves hold at most 8
    triangles); ``brute_force=True`` keeps the exhaustive path, which doubles
    as the test oracle. The sign comes from ray-crossing parity with a
    3-ray majority vote.
    """

    kind = "mesh"

    def __init__(self, vertices, faces, source=None, validate=True):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        self.source = source
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError("mesh vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise GeometryError("mesh faces must be (F, 3) triangles")
        if validate:
            self._validate_closed_oriented()
            self._orient_outward()
        self._tris = self.vertices[self.faces]  # (F, 3, 3)
        self._areas = 0.5 * np.linalg.norm(
            np.cross(self._tris[:, 1] - self._tris[:, 0], self._tris[:, 2] - self._tris[:, 0]),
            axis=1,
        )
        self._normals = np.cross(
            self._tris[:, 1] - self._tris[:, 0], self._tris[:, 2] - self._tris[:, 0]
        )
        norms = np.linalg.norm(self._normals, axis=1, keepdims=True)
        self._normals = self._normals / np.maximum(norms, 1e-30)
        self._bvh = _Bvh(self._tris)

    def _validate_closed_oriented(self):
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
        keys = {}
        for a, b in directed:
            keys[(int(a), int(b))] = keys.get((int(a), int(b)), 0) + 1
        for (a, b), c in keys.items():
            if c != 1:
                raise OpenMeshError(
                    f"directed edge ({a},{b}) appears {c} times; mesh not consistently oriented"
                )
            if (b, a) not in keys:
                raise OpenMeshError(f"edge ({a},{b}) has no opposite half-edge; mesh not closed")

    def _orient_outward(self):
        tris = self.vertices[self.faces]
        signed_vol = np.sum(np.einsum("ij,ij->i", tris[:, 0], np.cross(tris[:, 1], tris[:, 2]))) / 6.0
        if signed_vol < 0:
            self.faces = self.faces[:, [0, 2, 1]]

    def signed_distance(self, points, brute_force=False):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(len(p))
        for i, q in enumerate(p):
            if brute_force:
                d2 = _point_tri_dist2(self._tris, q).min()
            else:
                d2 = self._bvh.min_dist2(q)
            out[i] = np.sqrt(d2)
        inside = self._inside_mask(p)
        out[inside] *= -1.0
        return _snap_surface(out)

    def _inside_mask(self, p):
        votes = np.zeros(len(p), dtype=np.int64)
        for ray in _PARITY_RAYS:
            for i, q in enumerate(p):
                votes[i] += _ray_crossings(self._tris, q, ray) % 2
        return votes >= 2

    def distance_gradient(self, points, h=1e-6):
        # central differences; mesh distance has no cheap closed-form gradient
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        g = np.empty_like(p)
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            g[:, a] = (self.signed_distance(p + dp) - self.signed_distance(p - dp)) / (2 * h)
        return g

    def surface_area(self):
        return float(self._areas.sum())

    def sample_surface(self, count, rng):
        idx = rng.choice(len(self.faces), size=count, p=self._areas / self._areas.sum())
        u = rng.random(count)
        v = rng.random(count)
        flip = u + v > 1.0
        u[flip] = 1.0 - u[flip]
        v[flip] = 1.0 - v[flip]
        t = self._tris[idx]
        pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])
        return pts, self._normals[idx]

    def bounding_radius(self):
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def params(self):
        return {"file": self.source if self.source else "<inline>"}


def _point_tri_dist2(tris, q):
    """Squared distances from point ``q`` to each triangle in ``tris`` (T,3,3).

    Vectorized form of Ericson's closest-point-on-triangle construction.
    """
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab = b - a
    ac = c - a
    ap = q - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = q - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = q - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    closest = np.empty_like(a)
    done = np.zeros(len(tris), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    done |= m

    m = (~done) & (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    done |= m

    m = (~done) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
    closest[m] = a[m] + t_ab[m, None] * ab[m]
    done |= m

    m = (~done) & (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    done |= m

    m = (~done) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ac = d2 / (d2 - d6)
    closest[m] = a[m] + t_ac[m, None] * ac[m]
    done |= m

    m = (~done) & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    closest[m] = b[m] + t_bc[m, None] * (c[m] - b[m])
    done |= m

    m = ~done
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    closest[m] = a[m] + v[m, None] * ab[m] + w[m, None] * ac[m]

    diff = q - closest
    return np.einsum("ij,ij->i", diff, diff)


def _ray_crossings(tris, origin, direction):
    """Count ray/triangle crossings (Moller-Trumbore), t > 0 only."""
    eps = 1e-12
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    h = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > eps
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0
    u = np.einsum("ij,ij->i", s, h) * inv_det
    q = np.cross(s, e1)
    v = np.einsum("j,ij->i", direction, q) * inv_det
    t = np.einsum("ij,ij->i", e2, q) * inv_det
    hit = ok & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > eps)
    return int(np.count_nonzero(hit))


class _Bvh:
    """Median-split AABB tree over triangles; leaves hold <= 8 triangles."""

    LEAF_SIZE = 8

    def __init__(self, tris):
        self.tris = tris
        n = len(tris)
        centroids = tris.mean(axis=1)
        order = np.arange(n)
        self.nodes = []  # (lo, hi, left, right, start, count)
        self.lo = []
        self.hi = []
        self.left = []
        self.right = []
        self.start = []
        self.count = []
        self.order = order
        self._build(centroids, 0, n)
        self.lo = np.asarray(self.lo)
        self.hi = np.asarray(self.hi)
        self.left = np.asarray(self.left)
        self.right = np.asarray(self.right)
        self.start = np.asarray(self.start)
        self.count = np.asarray(self.count)

    def _build(self, centroids, begin, end):
        idx = len(self.lo)
        sub = self.order[begin:end]
        t = self.tris[sub]
        lo = t.min(axis=(0, 1))
        hi = t.max(axis=(0, 1))
        self.lo.append(lo)
        self.hi.append(hi)
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(begin)
        self.count.append(end - begin)
        if end - begin > self.LEAF_SIZE:
            axis = int(np.argmax(hi - lo))
            c = centroids[sub][:, axis]
            mid = (end - begin) // 2
            part = np.argpartition(c, mid)
            self.order[begin:end] = sub[part]
            l = self._build(centroids, begin, begin + mid)
            r = self._build(centroids, begin + mid, end)
            self.left[idx] = l
            self.right[idx] = r
            self.count[idx] = 0
        return idx

    def _aabb_dist2(self, node, q):
        d = np.maximum(np.maximum(self.lo[node] - q, 0.0), q - self.hi[node])
        return float(d @ d)

    def min_dist2(self, q):
        best = np.inf
        stack = [0]
        while stack:
            node = stack.pop()
            if self._aabb_dist2(node, q) >= best:
                continue
            if self.count[node] > 0:
                sub = self.order[self.start[node] : self.start[node] + self.count[node]]
                d2 = _point_tri_dist2(self.tris[sub], q).min()
                best = min(best, float(d2))
            else:
                l, r = self.left[node], self.right[node]
                dl, dr = self._aabb_dist2(l, q), self._aabb_dist2(r, q)
                if dl < dr:
                    stack.append(r)
                    stack.append(l)
                else:
                    stack.append(l)
                    stack.append(r)
        return best


def load_obj(path, validate=True):
    """Load an ASCII OBJ mesh (vertices and triangular faces only)."""
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{lineno}: malformed vertex line")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise GeometryError(
                        f"{path}:{lineno}: only triangular faces are supported, got {len(idx)} vertices"
                    )
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            # all other OBJ records (vn, vt, o, g, s, usemtl...) are ignored
    if not verts or not faces:
        raise GeometryError(f"{path}: no triangles found")
    return TriMesh(np.array(verts), np.array(faces), source=str(path), validate=validate)


def save_obj(path, vertices, faces):
    """Write an ASCII OBJ mesh (triangles)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in np.asarray(faces, dtype=np.int64):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


GEOMETRY_KINDS = {"sphere": Sphere, "capsule": Capsule, "box": Box, "mesh": TriMesh}
