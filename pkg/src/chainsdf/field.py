"""Learned configuration-conditioned distance fields.

Three variants share one parameter/forward/backward engine (plain numpy,
float64, exact analytic gradients):

* ``rndf``          - hourglass backbone producing a global feature, one
                      regression head per link, and a hierarchical hand-off:
                      head k receives head k-1's mid-level feature, so
                      geometry errors do not accumulate along the chain.
* ``multi-head-mlp`` - same minus the k-1 -> k hand-off.
* ``plain-mlp``     - single trunk with an n-wide linear output.

Inputs are [q, p]; both get sinusoidal positional encoding. All hidden
activations are exact GeLU (Gaussian CDF form); outputs are linear.
"""
import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import erf

VARIANTS = ("rndf", "multi-head-mlp", "plain-mlp")

CHECKPOINT_MAGIC = b"NFCK"
CHECKPOINT_VERSION = 1

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class CheckpointError(ValueError):
    pass


@dataclass
class ArchConfig:
    variant: str
    m: int
    n: int
    latent_size: int = 64
    encoding_frequencies: int = 4
    backbone_widths: tuple = (128,)
    head_residual_width: int = 32
    head_regression_widths: tuple = (16,)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.m < 0 or self.n < 1:
            raise ValueError("need m >= 0 joints and n >= 1 links")
        if self.latent_size < 1 or self.head_residual_width < 1:
            raise ValueError("latent_size and head_residual_width must be positive")
        if self.encoding_frequencies < 0:
            raise ValueError("encoding_frequencies must be >= 0")
        self.backbone_widths = tuple(int(w) for w in self.backbone_widths)
        self.head_regression_widths = tuple(int(w) for w in self.head_regression_widths)
        if any(w < 1 for w in self.backbone_widths + self.head_regression_widths):
            raise ValueError("all widths must be positive")

    @property
    def input_dim(self):
        return self.m + 3

    @property
    def encoded_dim(self):
        return self.input_dim * (1 + 2 * self.encoding_frequencies)

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["backbone_widths"] = tuple(d["backbone_widths"])
        d["head_regression_widths"] = tuple(d["head_regression_widths"])
        return ArchConfig(**d)


def default_arch(variant, m, n, latent_size=64, encoding_frequencies=4):
    """Default widths per variant; the plain trunk is deliberately wider
    (the single-trunk baseline traditionally spends ~2x the parameters)."""
    if variant == "plain-mlp":
        return ArchConfig(variant, m, n, latent_size, encoding_frequencies,
                          backbone_widths=(256, 256, 128))
    return ArchConfig(variant, m, n, latent_size, encoding_frequencies)


def build_layout(arch):
    """Ordered list of (name, shape) for every learnable tensor."""
    E = arch.encoded_dim
    K = arch.latent_size
    Hr = arch.head_residual_width
    layout = []
    if arch.variant == "plain-mlp":
        prev = E
        for i, w in enumerate(arch.backbone_widths):
            layout.append((f"trunk{i}.W", (w, prev)))
            layout.append((f"trunk{i}.b", (w,)))
            prev = w
        layout.append(("out.W", (arch.n, prev)))
        layout.append(("out.b", (arch.n,)))
        return layout
    prev = E
    for i, w in enumerate(arch.backbone_widths):
        layout.append((f"bb{i}.W", (w, prev)))
        layout.append((f"bb{i}.b", (w,)))
        prev = w
    layout.append(("bot.W", (K, prev)))
    layout.append(("bot.b", (K,)))
    layout.append(("glob.W", (K, E + K)))
    layout.append(("glob.b", (K,)))
    head_in = K + Hr if arch.variant == "rndf" else K
    for k in range(arch.n):
        layout.append((f"head{k}.in.W", (Hr, head_in)))
        layout.append((f"head{k}.in.b", (Hr,)))
        layout.append((f"head{k}.res.W", (Hr, Hr)))
        layout.append((f"head{k}.res.b", (Hr,)))
        prev = Hr
        for i, w in enumerate(arch.head_regression_widths):
            layout.append((f"head{k}.reg{i}.W", (w, prev)))
            layout.append((f"head{k}.reg{i}.b", (w,)))
            prev = w
        layout.append((f"head{k}.out.W", (1, prev)))
        layout.append((f"head{k}.out.b", (1,)))
    return layout


def param_count(arch):
    return int(sum(np.prod(s) for _, s in build_layout(arch)))


class FieldParams:
    """All learnable weights as one flat float64 vector plus named views."""

    def __init__(self, arch, flat=None):
        self.arch = arch
        self.layout = build_layout(arch)
        self.count = int(sum(np.prod(s) for _, s in self.layout))
        if flat is None:
            flat = np.zeros(self.count)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (self.count,):
            raise ValueError(f"expected {self.count} parameters, got {flat.shape}")
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters contain non-finite values")
        self.flat = flat
        self.views = {}
        off = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.views[name] = self.flat[off : off + size].reshape(shape)
            off += size

    def __getitem__(self, name):
        return self.views[name]

    def copy(self):
        return FieldParams(self.arch, self.flat.copy())

    def cast(self, dtype):
        """Read-only reduced-precision view set (for throughput benchmarks)."""
        out = {name: view.astype(dtype) for name, view in self.views.items()}
        return out


def init_params(arch, seed):
    """Uniform fan-in initialization: W ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    biases zero; draw order follows the layout order."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    params = FieldParams(arch)
    for name, shape in params.layout:
        if name.endswith(".W"):
            bound = 1.0 / np.sqrt(shape[1])
            params.views[name][...] = rng.uniform(-bound, bound, size=shape)
    return params


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


def positional_encode(x, frequencies):
    """x (..., D) -> (..., D*(1+2L)): x, then sin/cos(2^l pi x) for l < L."""
    x = np.asarray(x, dtype=np.float64)
    if frequencies == 0:
        return x.copy()
    parts = [x]
    for l in range(frequencies):
        a = (2.0**l) * np.pi
        parts.append(np.sin(a * x))
        parts.append(np.cos(a * x))
    return np.concatenate(parts, axis=-1)


def positional_encode_backward(x, grad_encoded, frequencies):
    """Pull a gradient wrt the encoding back to the raw input."""
    D = x.shape[-1]
    g = grad_encoded[..., :D].copy()
    for l in range(frequencies):
        a = (2.0**l) * np.pi
        gs = grad_encoded[..., D * (1 + 2 * l) : D * (2 + 2 * l)]
        gc = grad_encoded[..., D * (2 + 2 * l) : D * (3 + 2 * l)]
        g += a * np.cos(a * x) * gs - a * np.sin(a * x) * gc
    return g


def _linear(W, b, x):
    return x @ W.T + b


def forward_batch(params, arch, Q, P, views=None):
    """Batched forward pass.

    Returns (Y (B, n), cache); the cache holds every intermediate needed by
    the backward pass. ``views`` may substitute a cast parameter dict (the
    float32 benchmark path).
    """
    V = views if views is not None else params.views
    Q = np.atleast_2d(np.asarray(Q))
    P = np.atleast_2d(np.asarray(P))
    dtype = next(iter(V.values())).dtype
    X = np.concatenate([Q, P], axis=1).astype(dtype, copy=False)
    L = arch.encoding_frequencies
    enc = positional_encode(X, L).astype(dtype, copy=False)
    cache = {"X": X, "enc": enc}

    if arch.variant == "plain-mlp":
        h = enc
        pre_list = []
        act_list = [enc]
        for i in range(len(arch.backbone_widths)):
            pre = _linear(V[f"trunk{i}.W"], V[f"trunk{i}.b"], h)
            h = gelu(pre)
            pre_list.append(pre)
            act_list.append(h)
        Y = _linear(V["out.W"], V["out.b"], h)
        cache.update({"pre": pre_list, "act": act_list})
        return Y, cache

    h = enc
    bb_pre = []
    bb_act = [enc]
    for i in range(len(arch.backbone_widths)):
        pre = _linear(V[f"bb{i}.W"], V[f"bb{i}.b"], h)
        h = gelu(pre)
        bb_pre.append(pre)
        bb_act.append(h)
    bot_pre = _linear(V["bot.W"], V["bot.b"], h)
    bot = gelu(bot_pre)
    skip = np.concatenate([enc, bot], axis=1)
    glob_pre = _linear(V["glob.W"], V["glob.b"], skip)
    glob = gelu(glob_pre)
    cache.update(
        {"bb_pre": bb_pre, "bb_act": bb_act, "bot_pre": bot_pre, "bot": bot,
         "skip": skip, "glob_pre": glob_pre, "glob": glob}
    )

    B = len(X)
    Hr = arch.head_residual_width
    heads = []
    prev_mid = np.zeros((B, Hr), dtype=dtype)  # head 0 has no predecessor
    ys = []
    for k in range(arch.n):
        if arch.variant == "rndf":
            xk = np.concatenate([glob, prev_mid], axis=1)
        else:
            xk = glob
        u_pre = _linear(V[f"head{k}.in.W"], V[f"head{k}.in.b"], xk)
        u = gelu(u_pre)
        r_pre = _linear(V[f"head{k}.res.W"], V[f"head{k}.res.b"], u)
        mid = u + gelu(r_pre)
        z = mid
        reg_pre = []
        reg_act = [mid]
        for i in range(len(arch.head_regression_widths)):
            pre = _linear(V[f"head{k}.reg{i}.W"], V[f"head{k}.reg{i}.b"], z)
            z = gelu(pre)
            reg_pre.append(pre)
            reg_act.append(z)
        y = _linear(V[f"head{k}.out.W"], V[f"head{k}.out.b"], z)
        heads.append(
            {"xk": xk, "u_pre": u_pre, "u": u, "r_pre": r_pre, "mid": mid,
             "reg_pre": reg_pre, "reg_act": reg_act}
        )
        ys.append(y)
        prev_mid = mid
    cache["heads"] = heads
    Y = np.concatenate(ys, axis=1)
    return Y, cache


def forward(params, arch, q, p):
    """Predicted distance vector (n,) for a single (q, p) query."""
    Y, _ = forward_batch(params, arch, np.atleast_2d(q), np.atleast_2d(p))
    return Y[0]


def backward_batch(params, arch, cache, upstream, need_param_grads=True, need_input_grads=False):
    """Exact reverse-mode pass.

    ``upstream`` is dL/dY with shape (B, n). Returns (param_grads flat or
    None, input_grads (B, m+3) or None).
    """
    V = params.views
    G = np.asarray(upstream, dtype=np.float64)
    grads = FieldParams(arch) if need_param_grads else None

    def add_linear(name, x, g):
        if need_param_grads:
            grads.views[f"{name}.W"] += g.T @ x
            grads.views[f"{name}.b"] += g.sum(axis=0)
        return g @ V[f"{name}.W"]

    if arch.variant == "plain-mlp":
        g = add_linear("out", cache["act"][-1], G)
        for i in reversed(range(len(arch.backbone_widths))):
            g = g * gelu_grad(cache["pre"][i])
            g = add_linear(f"trunk{i}", cache["act"][i], g)
        g_enc = g
    else:
        Hr = arch.head_residual_width
        K = arch.latent_size
        B = len(cache["X"])
        g_glob = np.zeros((B, K))
        g_next_mid = np.zeros((B, Hr))  # dL/dM_k coming from head k+1
        for k in reversed(range(arch.n)):
            hd = cache["heads"][k]
            g = G[:, k : k + 1]
            g = add_linear(f"head{k}.out", hd["reg_act"][-1], g)
            for i in reversed(range(len(arch.head_regression_widths))):
                g = g * gelu_grad(hd["reg_pre"][i])
                g = add_linear(f"head{k}.reg{i}", hd["reg_act"][i], g)
            g_mid = g + g_next_mid
            # mid = u + gelu(res(u))
            g_rpre = g_mid * gelu_grad(hd["r_pre"])
            g_u = g_mid + add_linear(f"head{k}.res", hd["u"], g_rpre)
            g_upre = g_u * gelu_grad(hd["u_pre"])
            g_xk = add_linear(f"head{k}.in", hd["xk"], g_upre)
            g_glob += g_xk[:, :K]
            if arch.variant == "rndf" and k > 0:
                g_next_mid = g_xk[:, K:]
            else:
                g_next_mid = np.zeros((B, Hr))
        g = g_glob * gelu_grad(cache["glob_pre"])
        g_skip = add_linear("glob", cache["skip"], g)
        E = arch.encoded_dim
        g_enc = g_skip[:, :E].copy()
        g_bot = g_skip[:, E:]
        g = g_bot * gelu_grad(cache["bot_pre"])
        g = add_linear("bot", cache["bb_act"][-1], g)
        for i in reversed(range(len(arch.backbone_widths))):
            g = g * gelu_grad(cache["bb_pre"][i])
            g = add_linear(f"bb{i}", cache["bb_act"][i], g)
        g_enc += g

    input_grads = None
    if need_input_grads:
        input_grads = positional_encode_backward(cache["X"], g_enc, arch.encoding_frequencies)
    return (grads.flat if need_param_grads else None), input_grads


def backward(params, arch, Q, P, upstream):
    """Parameter gradients (flat, layout order) for a batch; exact."""
    _, cache = forward_batch(params, arch, Q, P)
    flat, _ = backward_batch(params, arch, cache, upstream, need_param_grads=True)
    return flat


@dataclass
class JacobianResult:
    dd_dq: np.ndarray  # (n, m), meters per radian
    dd_dp: np.ndarray  # (n, 3), dimensionless


def input_jacobian(params, arch, q, p):
    """Exact d(prediction)/d(q, p) for a single query."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    Q = np.repeat(q, arch.n, axis=0)
    P = np.repeat(p, arch.n, axis=0)
    _, cache = forward_batch(params, arch, Q, P)
    upstream = np.eye(arch.n)
    _, gin = backward_batch(params, arch, cache, upstream,
                            need_param_grads=False, need_input_grads=True)
    return JacobianResult(dd_dq=gin[:, : arch.m].copy(), dd_dp=gin[:, arch.m :].copy())


def input_jacobian_batch(params, arch, q, points):
    """(B, n, m) and (B, n, 3) Jacobians at one q over many points.

    One forward pass; n reverse passes (one per output row).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    B = len(points)
    Q = np.broadcast_to(np.asarray(q, dtype=np.float64), (B, arch.m))
    _, cache = forward_batch(params, arch, Q, points)
    dd_dq = np.empty((B, arch.n, arch.m))
    dd_dp = np.empty((B, arch.n, 3))
    for k in range(arch.n):
        upstream = np.zeros((B, arch.n))
        upstream[:, k] = 1.0
        _, gin = backward_batch(params, arch, cache, upstream,
                                need_param_grads=False, need_input_grads=True)
        dd_dq[:, k, :] = gin[:, : arch.m]
        dd_dp[:, k, :] = gin[:, arch.m :]
    return dd_dq, dd_dp


class NeuralField:
    """Inference wrapper bundling parameters, architecture and provenance.

    Exposes the same ``query`` / ``jacobian_batch`` surface as the exact
    oracle field, so downstream code does not care which one it holds.
    """

    def __init__(self, params, arch, robot_hash=None, metadata=None):
        self.params = params
        self.arch = arch
        self.robot_hash = robot_hash
        self.metadata = dict(metadata or {})
        self.n_links = arch.n
        self.dof = arch.m
        self._views32 = None

    @property
    def close_rmse(self):
        return self.metadata.get("close_rmse")

    def query(self, q, points, dtype=np.float64):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        B = len(points)
        Q = np.broadcast_to(np.asarray(q, dtype=np.float64), (B, self.arch.m))
        views = None
        if dtype == np.float32:
            if self._views32 is None:
                self._views32 = self.params.cast(np.float32)
            views = self._views32
        Y, _ = forward_batch(self.params, self.arch, Q, points, views=views)
        return Y

    def query_qp(self, Q, P, dtype=np.float64):
        views = None
        if dtype == np.float32:
            if self._views32 is None:
                self._views32 = self.params.cast(np.float32)
            views = self._views32
        Y, _ = forward_batch(self.params, self.arch, Q, P, views=views)
        return Y

    def jacobian_batch(self, q, points):
        return input_jacobian_batch(self.params, self.arch, q, points)

    def jacobian(self, q, point):
        res = input_jacobian(self.params, self.arch, q, point)
        return res.dd_dq, res.dd_dp


def save_checkpoint(path, params, robot_hash=None, metadata=None):
    """Versioned binary checkpoint; round-trips bit-exactly."""
    header = {
        "arch": params.arch.to_dict(),
        "robot_hash": robot_hash,
        "metadata": metadata or {},
        "param_count": params.count,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.flat.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Returns a NeuralField with the stored parameters and provenance."""
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode())
    arch = ArchConfig.from_dict(header["arch"])
    flat = np.frombuffer(buf.read(), dtype="<f8").copy()
    if len(flat) != header["param_count"]:
        raise CheckpointError(
            f"{path}: parameter block has {len(flat)} values, header says {header['param_count']}"
        )
    try:
        params = FieldParams(arch, flat)
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from e
    return NeuralField(params, arch, robot_hash=header.get("robot_hash"),
                       metadata=header.get("metadata", {}))
