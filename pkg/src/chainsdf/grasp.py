"""Collision-aware grasp configuration planning on distance fields.

An arm field and any number of hand-chain fields merge into one queryable
system: world points are pulled into the hand base frame (produced by arm
forward kinematics) before querying the chains. The planner minimizes a
contact objective

    Q = l1 * max(relu(d_c)) + l2 * max(relu(-d_c - d_p))

(zero exactly when every contact-link distance sits in [-d_p, 0]) subject
to obstacle clearance and free-link non-penetration, with an augmented
Lagrangian outer loop around a quasi-Newton inner minimizer. Mins are
smoothed by a temperature-controlled soft-min for the solver; every
reported diagnostic is recomputed hard at float64, and with the exact
geometric oracle when link geometry is available. Force closure is a
post-check on the converged contacts.
"""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import expit, logsumexp

from .oracle import OracleField
from .pose import Pose
from .robot import fk_with_frames

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

EPS_FC = 1e-8
STATUS_CONVERGED = "converged"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max-iterations"


class GraspProblemError(ValueError):
    pass


@dataclass
class HandChain:
    field: object  # anything with query/jacobian_batch/n_links/dof
    offset: Pose = None  # hand-base frame -> chain base frame
    model: object = None  # RobotModel when exact geometry is available

    def __post_init__(self):
        if self.offset is None:
            self.offset = Pose.identity()


class CompositeSystem:
    """Arm field + hand chains behind one link-indexed query surface.

    The hand base pose is H(q_arm) = FK(q_arm)[mount_link] * mount_offset;
    chain c lives at H * chains[c].offset. The combined configuration is
    [q_arm, q_chain0, q_chain1, ...]; global link indices run over arm
    links first, then each chain's links in order.
    """

    def __init__(self, arm_model, arm_field, chains=(), mount_link=None, mount_offset=None):
        self.arm_model = arm_model
        self.arm_field = arm_field
        self.chains = list(chains)
        self.mount_link = arm_model.n_links - 1 if mount_link is None else int(mount_link)
        self.mount_offset = mount_offset if mount_offset is not None else Pose.identity()
        self.dof_arm = arm_field.dof
        self.dof = self.dof_arm + sum(c.field.dof for c in self.chains)
        self.n_links = arm_field.n_links + sum(c.field.n_links for c in self.chains)
        self._chain_q_slices = []
        self._chain_link_slices = []
        qo = self.dof_arm
        lo = arm_field.n_links
        for c in self.chains:
            self._chain_q_slices.append(slice(qo, qo + c.field.dof))
            self._chain_link_slices.append(slice(lo, lo + c.field.n_links))
            qo += c.field.dof
            lo += c.field.n_links
        self.link_names = self._registry()

    def _registry(self):
        names = []
        if self.arm_model is not None:
            names += [f"arm/{l.name}" for l in self.arm_model.links]
        else:
            names += [f"arm/link{i}" for i in range(self.arm_field.n_links)]
        for ci, c in enumerate(self.chains):
            if c.model is not None:
                names += [f"chain{ci}/{l.name}" for l in c.model.links]
            else:
                names += [f"chain{ci}/link{i}" for i in range(c.field.n_links)]
        return names

    def split(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dof,):
            raise ValueError(f"configuration must have {self.dof} entries, got {q.shape}")
        return q[: self.dof_arm], [q[s] for s in self._chain_q_slices]

    def joint_limits(self):
        lims = [self.arm_model.joint_limits()] if self.arm_model is not None else [
            np.tile([-np.pi, np.pi], (self.dof_arm, 1))
        ]
        for c in self.chains:
            if c.model is not None:
                lims.append(c.model.joint_limits())
            else:
                lims.append(np.tile([-np.pi, np.pi], (c.field.dof, 1)))
        return np.concatenate(lims, axis=0) if lims else np.zeros((0, 2))

    def hand_base(self, q_arm, frames=None):
        if frames is None:
            frames = fk_with_frames(self.arm_model, q_arm)
        poses = frames[0]
        return poses[self.mount_link].compose(self.mount_offset)

    def query(self, q, points):
        """(B, n_links) predicted distances at fixed world points."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        q_arm, q_chains = self.split(q)
        cols = [np.atleast_2d(self.arm_field.query(q_arm, points))]
        if self.chains:
            H = self.hand_base(q_arm)
            for c, qc in zip(self.chains, q_chains):
                T = H.compose(c.offset)
                local = T.apply_inverse(points)
                cols.append(np.atleast_2d(c.field.query(qc, local)))
        return np.concatenate(cols, axis=1)

    def jacobian_dq(self, q, points):
        """(B, n_links, dof) derivative of every link distance wrt q.

        Hand-chain columns for arm joints chain through the mount transform:
        moving joint j sweeps the point relative to the hand frame with
        velocity -(axis_j x (p - origin_j)).
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        B = len(points)
        q_arm, q_chains = self.split(q)
        J = np.zeros((B, self.n_links, self.dof))
        arm_dq, _ = self.arm_field.jacobian_batch(q_arm, points)
        J[:, : self.arm_field.n_links, : self.dof_arm] = arm_dq
        if not self.chains:
            return J
        frames = fk_with_frames(self.arm_model, q_arm)
        _, origins, axes = frames
        H = self.hand_base(q_arm, frames)
        n_move = min(self.mount_link, self.dof_arm)  # joints that move the mount
        vel = np.empty((n_move, B, 3))
        for j in range(n_move):
            vel[j] = np.cross(axes[j], points - origins[j])
        for ci, (c, qc) in enumerate(zip(self.chains, q_chains)):
            T = H.compose(c.offset)
            local = T.apply_inverse(points)
            dq_c, dp_local = c.field.jacobian_batch(qc, local)
            ls = self._chain_link_slices[ci]
            J[:, ls, self._chain_q_slices[ci]] = dq_c
            g_world = dp_local @ T.R.T  # (B, n_c, 3) world-frame spatial gradients
            for j in range(n_move):
                J[:, ls, j] = -np.einsum("bkl,bl->bk", g_world, vel[j])
        return J

    def oracle_view(self):
        """Same system backed by exact-geometry fields, or None if any
        geometry is missing."""
        if self.arm_model is None or any(c.model is None for c in self.chains):
            return None
        chains = [HandChain(field=OracleField(c.model), offset=c.offset, model=c.model)
                  for c in self.chains]
        return CompositeSystem(self.arm_model, OracleField(self.arm_model), chains,
                               self.mount_link, self.mount_offset)


def query_composite(sys, q, points):
    return sys.query(q, points)


@dataclass
class GraspProblem:
    object_points: np.ndarray  # (B1, 3)
    object_normals: np.ndarray  # (B1, 3) outward unit normals
    contact_links: tuple  # global link indices used to establish contact
    obstacle_points: np.ndarray = None  # (B2, 3); may be empty
    d_min_obs: float = 0.005
    d_p: float = 0.002
    lambda1: float = 1.0
    lambda2: float = 1.0
    mu: float = 0.5
    fc_facets: int = 8

    def __post_init__(self):
        self.object_points = np.atleast_2d(np.asarray(self.object_points, dtype=np.float64))
        self.object_normals = np.atleast_2d(np.asarray(self.object_normals, dtype=np.float64))
        if self.obstacle_points is None:
            self.obstacle_points = np.zeros((0, 3))
        self.obstacle_points = np.asarray(self.obstacle_points, dtype=np.float64).reshape(-1, 3)
        self.contact_links = tuple(int(k) for k in self.contact_links)
        if not self.contact_links:
            raise GraspProblemError("contact link set must not be empty")
        if not self.d_p > 0:
            raise GraspProblemError("penetration band d_p must be positive")
        if self.d_min_obs < 0:
            raise GraspProblemError("obstacle clearance must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.mu < 0:
            raise GraspProblemError("weights and friction must be nonnegative")
        if self.fc_facets < 3:
            raise GraspProblemError("need at least 3 friction-cone facets")
        if self.object_normals.shape != self.object_points.shape:
            raise GraspProblemError("object_normals must match object_points")
        norms = np.linalg.norm(self.object_normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise GraspProblemError("object normals must be unit length")

    def free_links(self, sys):
        return tuple(k for k in range(sys.n_links) if k not in set(self.contact_links))

    def object_centroid(self):
        return self.object_points.mean(axis=0)

    def object_radius(self):
        return float(np.linalg.norm(self.object_points - self.object_centroid(), axis=1).max())


def softmin(values, tau):
    v = np.asarray(values, dtype=np.float64).ravel()
    return float(-tau * logsumexp(-v / tau))


def _softmin_weights(values, tau):
    v = np.asarray(values, dtype=np.float64)
    w = np.exp(-(v - v.min()) / tau)
    return w / w.sum()


def _smoothmax(v, tau):
    return float(tau * logsumexp(np.asarray(v, dtype=np.float64) / tau))


def _smoothmax_weights(v, tau):
    v = np.asarray(v, dtype=np.float64)
    w = np.exp((v - v.max()) / tau)
    return w / w.sum()


def _softplus(x, tau):
    return float(tau * np.logaddexp(0.0, x / tau))


def constraint_values(sys, problem, q, tau=None):
    """(c_obs, c_free): both >= 0 iff the constraints hold.

    c_obs: min distance from any obstacle point to any system link, minus
    d_min_obs (+inf when there are no obstacle points). c_free: min
    predicted distance from object points to the non-contact links.
    ``tau`` switches to the smoothed soft-min used by the solver.
    """
    c_obs = np.inf
    if len(problem.obstacle_points):
        D = sys.query(q, problem.obstacle_points)
        c_obs = (softmin(D, tau) if tau else float(D.min())) - problem.d_min_obs
    free = problem.free_links(sys)
    c_free = np.inf
    if free:
        D = sys.query(q, problem.object_points)[:, free]
        c_free = softmin(D, tau) if tau else float(D.min())
    return c_obs, c_free


def _constraint_grads(sys, problem, q, tau):
    """Smoothed constraint values and gradients wrt q."""
    g_obs = np.zeros(sys.dof)
    c_obs = np.inf
    if len(problem.obstacle_points):
        D = sys.query(q, problem.obstacle_points)
        c_obs = softmin(D, tau) - problem.d_min_obs
        W = _softmin_weights(D, tau).reshape(D.shape)
        J = sys.jacobian_dq(q, problem.obstacle_points)
        g_obs = np.einsum("bk,bkm->m", W, J)
    g_free = np.zeros(sys.dof)
    c_free = np.inf
    free = problem.free_links(sys)
    if free:
        D = sys.query(q, problem.object_points)[:, free]
        c_free = softmin(D, tau)
        W = _softmin_weights(D, tau).reshape(D.shape)
        J = sys.jacobian_dq(q, problem.object_points)[:, free, :]
        g_free = np.einsum("bk,bkm->m", W, J)
    return c_obs, g_obs, c_free, g_free


def contact_distances(sys, problem, q, tau=None):
    """Per-contact-link distance to its nearest object point.

    Hard mode returns (distances, nearest point indices); the nearest point
    is the object point minimizing the predicted link distance (first index
    wins ties). Soft mode replaces min by soft-min (indices still hard).
    """
    D = sys.query(q, problem.object_points)[:, list(problem.contact_links)]
    idx = np.argmin(D, axis=0)
    if tau:
        d_c = np.array([softmin(D[:, c], tau) for c in range(D.shape[1])])
    else:
        d_c = D[idx, np.arange(D.shape[1])]
    return d_c, idx


def grasp_objective(sys, problem, q, tau=None, aggregate="max"):
    """The contact objective Q >= 0; exactly 0 iff every contact distance
    lies in [-d_p, 0]. ``aggregate="sum"`` swaps max for sum (experiment
    switch; the default follows the planner contract)."""
    d_c, _ = contact_distances(sys, problem, q, tau=tau)
    if tau:
        t1 = _softplus(_smoothmax(d_c, tau), tau)
        t2 = _softplus(_smoothmax(-d_c - problem.d_p, tau), tau)
        return problem.lambda1 * t1 + problem.lambda2 * t2
    relu = lambda x: np.maximum(x, 0.0)
    if aggregate == "sum":
        return float(problem.lambda1 * relu(d_c).sum() + problem.lambda2 * relu(-d_c - problem.d_p).sum())
    return float(
        problem.lambda1 * relu(d_c).max() + problem.lambda2 * relu(-d_c - problem.d_p).max()
    )


def _objective_grad(sys, problem, q, tau):
    """Smoothed objective and gradient wrt q."""
    links = list(problem.contact_links)
    D = sys.query(q, problem.object_points)[:, links]  # (B1, C)
    J = sys.jacobian_dq(q, problem.object_points)[:, links, :]  # (B1, C, m)
    C = D.shape[1]
    d_c = np.empty(C)
    dd_dq = np.empty((C, sys.dof))
    for c in range(C):
        d_c[c] = softmin(D[:, c], tau)
        w = _softmin_weights(D[:, c], tau)
        dd_dq[c] = np.einsum("b,bm->m", w, J[:, c, :])
    a1 = _smoothmax(d_c, tau)
    w1 = _smoothmax_weights(d_c, tau)
    a2 = _smoothmax(-d_c - problem.d_p, tau)
    w2 = _smoothmax_weights(-d_c - problem.d_p, tau)
    Q = problem.lambda1 * _softplus(a1, tau) + problem.lambda2 * _softplus(a2, tau)
    g = problem.lambda1 * float(expit(a1 / tau)) * (w1 @ dd_dq)
    g += problem.lambda2 * float(expit(a2 / tau)) * (w2 @ (-dd_dq))
    return Q, g


def smoothed_lagrangian(sys, problem, q, tau, lam, rho):
    """Augmented-Lagrangian merit value and gradient at q.

    Inequalities c_i(q) >= 0 enter as psi(c) = (max(0, lam - rho c)^2 - lam^2) / (2 rho).
    """
    Q, g = _objective_grad(sys, problem, q, tau)
    c_obs, g_obs, c_free, g_free = _constraint_grads(sys, problem, q, tau)
    val = Q
    grad = g
    for c, gc, l in ((c_obs, g_obs, lam[0]), (c_free, g_free, lam[1])):
        if not np.isfinite(c):
            continue
        slack = l - rho * c
        if slack > 0:
            val += (slack**2 - l**2) / (2 * rho)
            grad = grad - slack * gc
        else:
            val += -(l**2) / (2 * rho)
    return val, grad


@dataclass
class FcResult:
    closure: bool
    rank: int
    n_wrenches: int
    message: str = ""

    def __bool__(self):
        return self.closure


def force_closure(contacts, mu, facets=8, centroid=None, char_length=None):
    """Binary force-closure test for point contacts with friction.

    Each cone is linearized into ``facets`` edge wrenches (force, torque
    about the centroid scaled by the characteristic length); the verdict is
    the feasibility program: does a strictly positive combination (weights
    >= 1e-8, bounded above) of all edge wrenches sum to zero? The wrench
    matrix rank rides along as a diagnostic (a rank below 6 means the
    wrenches span a degenerate subspace).

    A single contact returns False rather than raising.
    """
    contacts = list(contacts)
    pts = np.array([c[0] for c in contacts], dtype=np.float64).reshape(-1, 3)
    nrms = np.array([c[1] for c in contacts], dtype=np.float64).reshape(-1, 3)
    if centroid is None:
        centroid = pts.mean(axis=0) if len(pts) else np.zeros(3)
    if char_length is None:
        spread = np.linalg.norm(pts - centroid, axis=1).max() if len(pts) else 1.0
        char_length = max(float(spread), 1e-9)
    if len(contacts) < 2:
        return FcResult(False, 0, 0, "fewer than 2 contacts")
    wrenches = []
    for p, n in zip(pts, nrms):
        n = n / np.linalg.norm(n)
        a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(n, a)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        for j in range(facets):
            th = 2.0 * np.pi * j / facets
            f = n + mu * (np.cos(th) * u + np.sin(th) * v)
            tq = np.cross(p - centroid, f) / char_length
            wrenches.append(np.concatenate([f, tq]))
    W = np.array(wrenches).T  # (6, C*facets)
    rank = int(np.linalg.matrix_rank(W, tol=1e-10))
    res = linprog(
        c=np.zeros(W.shape[1]),
        A_eq=W,
        b_eq=np.zeros(6),
        bounds=[(EPS_FC, 1.0)] * W.shape[1],
        method="highs",
    )
    if res.status == 2:  # infeasible
        return FcResult(False, rank, W.shape[1], "no strictly positive zero combination")
    if not res.success:
        return FcResult(False, rank, W.shape[1], f"feasibility solve failed: {res.message}")
    return FcResult(True, rank, W.shape[1], "origin is a strictly positive combination")


@dataclass
class PlanOptions:
    max_outer: int = 12
    inner_maxiter: int = 150
    tau0: float = 1e-3  # soft-min temperature: 1 mm
    tau_anneal: float = 0.5
    tau_min: float = 1e-5
    rho0: float = 100.0
    rho_growth: float = 4.0
    rho_max: float = 1e9
    q_tol: float = 1e-6
    constraint_slack: float = 1e-4  # meters of tolerated hard violation
    aggregate: str = "max"
    fc_check: bool = True
    verify_with_oracle: bool = True


@dataclass
class GraspSolution:
    q: np.ndarray
    status: str
    objective: float
    min_obstacle_distance: float
    min_obstacle_clearance: float  # distance minus d_min_obs
    max_free_penetration: float
    contact_distance: dict  # global link index -> signed distance
    fc: FcResult = None
    contacts: list = field(default_factory=list)  # (point, inward normal)
    flagged: bool = False
    outer_iterations: int = 0
    oracle_checked: bool = False
    notes: list = field(default_factory=list)

    def to_text(self):
        lines = [
            f"status: {self.status}",
            f"configuration: {np.array2string(self.q, precision=6, max_line_width=200)}",
            f"objective Q: {self.objective:.3e}",
            f"min obstacle distance: {self.min_obstacle_distance:.6f} m "
            f"(clearance {self.min_obstacle_clearance:+.6f} m)",
            f"max free-link penetration: {self.max_free_penetration:.6f} m",
        ]
        for k, v in sorted(self.contact_distance.items()):
            lines.append(f"contact link {k}: d = {v:+.6f} m")
        if self.fc is not None:
            lines.append(
                f"force closure: {self.fc.closure} (wrench rank {self.fc.rank}, "
                f"{self.fc.n_wrenches} edge wrenches)"
            )
        lines.append(f"outer iterations: {self.outer_iterations}")
        lines.append(f"exact-oracle verified: {self.oracle_checked}")
        if self.flagged:
            lines.append("FLAGGED: learned field disagrees with the exact oracle beyond 3x close RMSE")
        for n in self.notes:
            lines.append(f"note: {n}")
        return "\n".join(lines) + "\n"


def _hard_diagnostics(sys, problem, q):
    c_obs, c_free = constraint_values(sys, problem, q)
    d_c, idx = contact_distances(sys, problem, q)
    Q = grasp_objective(sys, problem, q)
    min_obs = c_obs + problem.d_min_obs if np.isfinite(c_obs) else np.inf
    max_free_pen = max(0.0, -c_free) if np.isfinite(c_free) else 0.0
    return {
        "Q": Q,
        "c_obs": c_obs,
        "c_free": c_free,
        "min_obs": min_obs,
        "max_free_pen": max_free_pen,
        "d_c": d_c,
        "nearest_idx": idx,
    }


def plan_grasp(sys, problem, q_init, options=None):
    """One constrained solve from ``q_init``; returns a GraspSolution.

    Status ``converged`` requires the hard-recomputed diagnostics (exact
    oracle when available) to satisfy the clearance / non-penetration /
    contact-band tolerances, and the post-hoc force-closure check to pass;
    an FC failure downgrades to ``infeasible``.
    """
    opt = options or PlanOptions()
    q = np.asarray(q_init, dtype=np.float64).copy()
    if q.shape != (sys.dof,):
        raise ValueError(f"q_init must have {sys.dof} entries")
    limits = sys.joint_limits()
    bounds = [(float(lo), float(hi)) for lo, hi in limits]
    lam = np.zeros(2)
    rho = opt.rho0
    tau = opt.tau0
    prev_viol = np.inf
    outer_done = 0
    hard = _hard_diagnostics(sys, problem, q)
    viol0 = max(0.0, -hard["c_obs"] if np.isfinite(hard["c_obs"]) else 0.0,
                -hard["c_free"] if np.isfinite(hard["c_free"]) else 0.0)
    if hard["Q"] <= opt.q_tol and viol0 <= opt.constraint_slack:
        return _finalize(sys, problem, q, opt, 0)  # warm start already optimal
    for outer in range(opt.max_outer):
        res = minimize(
            lambda x: smoothed_lagrangian(sys, problem, x, tau, lam, rho),
            q,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": opt.inner_maxiter},
        )
        q = res.x
        outer_done = outer + 1
        hard = _hard_diagnostics(sys, problem, q)
        viol = max(0.0, -hard["c_obs"] if np.isfinite(hard["c_obs"]) else 0.0,
                   -hard["c_free"] if np.isfinite(hard["c_free"]) else 0.0)
        if hard["Q"] <= opt.q_tol and viol <= opt.constraint_slack:
            break
        c_obs_s, c_free_s = constraint_values(sys, problem, q, tau=tau)
        for i, c in enumerate((c_obs_s, c_free_s)):
            if np.isfinite(c):
                lam[i] = max(0.0, lam[i] - rho * c)
        if viol > 0.25 * prev_viol and rho < opt.rho_max:
            rho *= opt.rho_growth
        prev_viol = viol if viol > 0 else prev_viol
        tau = max(opt.tau_min, tau * opt.tau_anneal)

    return _finalize(sys, problem, q, opt, outer_done)


def _finalize(sys, problem, q, opt, outer_done):
    hard = _hard_diagnostics(sys, problem, q)
    notes = []
    flagged = False
    oracle_checked = False
    diag_sys = sys
    oracle = sys.oracle_view() if opt.verify_with_oracle else None
    if oracle is not None and oracle is not sys:
        exact = _hard_diagnostics(oracle, problem, q)
        close_rmse = getattr(sys.arm_field, "close_rmse", None)
        if close_rmse:
            gap = max(
                abs(exact["min_obs"] - hard["min_obs"]) if np.isfinite(hard["min_obs"]) else 0.0,
                float(np.max(np.abs(exact["d_c"] - hard["d_c"]))),
            )
            if gap > 3.0 * close_rmse:
                flagged = True
                notes.append(
                    f"field/oracle discrepancy {gap:.4e} m exceeds 3x close RMSE {close_rmse:.4e} m"
                )
        hard = exact
        oracle_checked = True
        diag_sys = oracle

    ok = (
        hard["Q"] <= opt.q_tol
        and (not np.isfinite(hard["min_obs"]) or hard["min_obs"] >= problem.d_min_obs - opt.constraint_slack)
        and hard["max_free_pen"] <= opt.constraint_slack
        and float(np.max(-hard["d_c"])) <= problem.d_p + opt.constraint_slack
    )

    contacts = []
    for c, link in enumerate(problem.contact_links):
        pi = hard["nearest_idx"][c]
        contacts.append((problem.object_points[pi].copy(), -problem.object_normals[pi].copy()))
    fc = None
    if opt.fc_check:
        fc = force_closure(
            contacts,
            problem.mu,
            facets=problem.fc_facets,
            centroid=problem.object_centroid(),
            char_length=max(problem.object_radius(), 1e-9),
        )

    if ok:
        status = STATUS_CONVERGED
        if opt.fc_check and not fc.closure:
            status = STATUS_INFEASIBLE
            notes.append("contacts reached but force closure failed; no stable grasp")
    else:
        viol = max(
            0.0,
            (problem.d_min_obs - hard["min_obs"]) if np.isfinite(hard["min_obs"]) else 0.0,
            hard["max_free_pen"],
        )
        status = STATUS_INFEASIBLE if viol > max(10 * opt.constraint_slack, 1e-3) else STATUS_MAX_ITER

    return GraspSolution(
        q=q,
        status=status,
        objective=hard["Q"],
        min_obstacle_distance=float(hard["min_obs"]),
        min_obstacle_clearance=float(hard["min_obs"] - problem.d_min_obs)
        if np.isfinite(hard["min_obs"])
        else np.inf,
        max_free_penetration=float(hard["max_free_pen"]),
        contact_distance={int(l): float(hard["d_c"][c]) for c, l in enumerate(problem.contact_links)},
        fc=fc,
        contacts=contacts,
        flagged=flagged,
        outer_iterations=outer_done,
        oracle_checked=oracle_checked,
        notes=notes,
    )


def sample_q_init(sys, rng, obs_filter=None, problem=None, max_tries=50):
    """Uniform random start inside hard joint limits; optionally redraw
    while the obstacle constraint starts violated (heuristic seeding)."""
    limits = sys.joint_limits()
    for _ in range(max_tries):
        q = rng.uniform(limits[:, 0], limits[:, 1])
        if not obs_filter or problem is None:
            return q
        c_obs, _ = constraint_values(sys, problem, q)
        if c_obs > 0:
            return q
    return q


def sample_pregrasp_init(sys, problem, rng, approach_range=(0.05, 0.30),
                         lateral=0.02, transverse=0.05, hand_q=None, max_tries=30000):
    """IK-free pre-grasp seeding: random arm configurations filtered by
    cheap forward-kinematics checks (the object centroid must sit inside a
    window of the hand frame) plus the obstacle-clearance filter.

    This is the offline-reachability-map analog for fixtures without one:
    the optimizer still has to establish both contacts, clear obstacles and
    respect limits, but the hand starts in a posture from which a pinch is
    kinematically natural. ``hand_q`` fixes the hand-chain starting angles
    (default: all zero, i.e. an open gripper).
    """
    arm_dof = sys.dof_arm
    if sys.arm_model is None:
        return sample_q_init(sys, rng, obs_filter=True, problem=problem)
    limits = sys.arm_model.joint_limits()
    if hand_q is None:
        hand_q = np.zeros(sys.dof - arm_dof)
    centroid = problem.object_centroid()
    q0 = None
    for _ in range(max_tries):
        q_arm = rng.uniform(limits[:, 0], limits[:, 1])
        q0 = np.concatenate([q_arm, hand_q])
        rel = sys.hand_base(q_arm).apply_inverse(centroid)
        if not (approach_range[0] <= rel[2] <= approach_range[1]):
            continue
        if abs(rel[0]) > lateral or abs(rel[1]) > transverse:
            continue
        c_obs, _ = constraint_values(sys, problem, q0)
        if c_obs <= 0:
            continue
        return q0
    return q0


def plan_grasp_restarts(sys, problem, restarts, seed=0, options=None, q_inits=None,
                        init_sampler=None):
    """Independent restarts; returns (best, all solutions).

    Restart i uses seed ``seed + i``; ``init_sampler(rng)`` overrides the
    default uniform-with-obstacle-filter seeding. Best = converged first,
    then lowest objective, then lowest seed.
    """
    solutions = []
    for i in range(restarts):
        if q_inits is not None:
            q0 = q_inits[i]
        else:
            rng = np.random.default_rng(np.random.PCG64(seed + i))
            if init_sampler is not None:
                q0 = init_sampler(rng)
            else:
                q0 = sample_q_init(sys, rng, obs_filter=True, problem=problem)
        solutions.append(plan_grasp(sys, problem, q0, options))
    order = {STATUS_CONVERGED: 0, STATUS_MAX_ITER: 1, STATUS_INFEASIBLE: 2}
    best_i = min(range(len(solutions)), key=lambda i: (order[solutions[i].status], solutions[i].objective, i))
    return solutions[best_i], solutions


def read_points(path, with_normals=False):
    """Read a point list from ASCII PLY or CSV (by extension).

    Returns (points, normals or None). CSV columns: x,y,z[,nx,ny,nz];
    a header row is detected and skipped.
    """
    path = str(path)
    if path.endswith(".ply"):
        return _read_ply(path, with_normals)
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                continue  # header
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (3, 6):
        raise GraspProblemError(f"{path}: expected 3 or 6 numeric columns")
    pts = arr[:, :3]
    nrm = arr[:, 3:6] if arr.shape[1] == 6 else None
    if with_normals and nrm is None:
        raise GraspProblemError(f"{path}: normals required but only 3 columns present")
    return pts, nrm


def _read_ply(path, with_normals):
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise GraspProblemError(f"{path}: not a PLY file")
        props = []
        count = 0
        while True:
            line = fh.readline()
            if not line:
                raise GraspProblemError(f"{path}: unterminated header")
            parts = line.split()
            if parts[:2] == ["format", "ascii"]:
                pass
            elif parts[:2] == ["element", "vertex"]:
                count = int(parts[2])
            elif parts and parts[0] == "property":
                props.append(parts[-1])
            elif parts and parts[0] == "end_header":
                break
        data = np.loadtxt(fh, max_rows=count).reshape(count, len(props))
    cols = {name: i for i, name in enumerate(props)}
    for c in ("x", "y", "z"):
        if c not in cols:
            raise GraspProblemError(f"{path}: vertex property {c!r} missing")
    pts = data[:, [cols["x"], cols["y"], cols["z"]]]
    nrm = None
    if all(c in cols for c in ("nx", "ny", "nz")):
        nrm = data[:, [cols["nx"], cols["ny"], cols["nz"]]]
    if with_normals and nrm is None:
        raise GraspProblemError(f"{path}: normals required but not present")
    return pts, nrm


def write_points_ply(path, points, normals=None):
    points = np.atleast_2d(points)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if normals is not None:
            fh.write("property double nx\nproperty double ny\nproperty double nz\n")
        fh.write("end_header\n")
        for i, p in enumerate(points):
            row = list(p) + (list(normals[i]) if normals is not None else [])
            fh.write(" ".join(f"{x:.12g}" for x in row) + "\n")


def read_grasp_problem(path, base_dir=None):
    """Grasp problem from a TOML document (docs/formats.md)."""
    import os

    base_dir = base_dir if base_dir is not None else os.path.dirname(str(path))
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    try:
        obj_pts, obj_nrm = read_points(resolve(doc["object"]["points"]), with_normals=True)
        obs = doc.get("obstacles", {})
        obs_pts = None
        if "points" in obs:
            obs_pts, _ = read_points(resolve(obs["points"]))
        return GraspProblem(
            object_points=obj_pts,
            object_normals=obj_nrm,
            obstacle_points=obs_pts,
            contact_links=tuple(doc["contact_links"]),
            d_min_obs=float(doc.get("d_min_obs", 0.005)),
            d_p=float(doc.get("d_p", 0.002)),
            lambda1=float(doc.get("lambda1", 1.0)),
            lambda2=float(doc.get("lambda2", 1.0)),
            mu=float(doc.get("mu", 0.5)),
            fc_facets=int(doc.get("fc_facets", 8)),
        )
    except KeyError as e:
        raise GraspProblemError(f"{path}: missing field {e}") from e


def write_solution(prefix, solution):
    """Write <prefix>.txt (human-readable) and <prefix>.json."""
    with open(f"{prefix}.txt", "w", encoding="utf-8") as fh:
        fh.write(solution.to_text())
    payload = {
        "q": solution.q.tolist(),
        "status": solution.status,
        "objective": solution.objective,
        "min_obstacle_distance": solution.min_obstacle_distance,
        "max_free_penetration": solution.max_free_penetration,
        "contact_distance": {str(k): v for k, v in solution.contact_distance.items()},
        "force_closure": bool(solution.fc) if solution.fc is not None else None,
        "flagged": solution.flagged,
        "outer_iterations": solution.outer_iterations,
        "oracle_checked": solution.oracle_checked,
        "notes": solution.notes,
    }
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
