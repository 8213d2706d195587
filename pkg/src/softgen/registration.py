"""Non-rigid warp-field fitting between deformable configurations.

The warp family is a 3D thin-plate spline with kernel phi(r) = r:

    f(x) = A x + b + sum_i w_i * ||x - c_i||

subject to the side conditions sum_i w_i = 0 and sum_i w_i c_i^T = 0, which
keep the bending energy finite and make the far field purely affine.  The fit
minimizes

    sum_i ||f(a_i) - b_i||^2 + lambda * E_bend(f)

with E_bend = -tr(W^T K W) >= 0 on the side-condition subspace (K is the
control-point kernel matrix).  The reported cost is the attained objective
divided by node count so it is comparable across objects of different sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import NonConvergence, ShapeMismatch
from .geometry import Pose, kabsch_fit, transform_points

DEFAULT_LAMBDA = 0.1
LAMBDA_FLOOR = 1e-9
MAX_CONTROL_POINTS = 400
KERNEL_EPSILON = 1e-6

# Spatial directions whose singular value is this far below the largest are
# exactly unobservable (a flat cloth's normal, a straight rope's transverse
# plane): the affine part is anchored to the identity along them, which costs
# the fit nothing and keeps out-of-plane structure (approach heights) intact.
WEAK_DIRECTION_RATIO = 1e-7


@dataclass(frozen=True)
class DeformableConfig:
    """Deformable object state: an ordered set of 3D node positions."""

    nodes: np.ndarray
    object_id: str = ""

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        if len(nodes) < 1:
            raise ValueError("config needs at least one node")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("config has non-finite nodes")
        object.__setattr__(self, "nodes", nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def to_json(self) -> dict:
        return {
            "schema": "softgen/v1",
            "object_id": self.object_id,
            "nodes": [[float(v) for v in row] for row in self.nodes],
        }

    @staticmethod
    def from_json(obj: dict) -> "DeformableConfig":
        return DeformableConfig(np.asarray(obj["nodes"], dtype=float), obj.get("object_id", ""))


@dataclass(frozen=True)
class WarpField:
    """Fitted smooth map f: R^3 -> R^3 (affine part + radial-basis weights)."""

    control_points: np.ndarray  # (n, 3)
    rbf_weights: np.ndarray  # (n, 3)
    affine: np.ndarray  # (3, 3)
    offset: np.ndarray  # (3,)
    kernel_epsilon: float = KERNEL_EPSILON

    @staticmethod
    def identity() -> "WarpField":
        return WarpField(np.zeros((0, 3)), np.zeros((0, 3)), np.eye(3), np.zeros(3))

    @staticmethod
    def from_pose(p: Pose) -> "WarpField":
        """Rigid map as a warp field (no radial terms)."""
        return WarpField(np.zeros((0, 3)), np.zeros((0, 3)), p.rotation.copy(), p.position.copy())

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        p = np.atleast_2d(pts)
        out = p @ self.affine.T + self.offset
        if len(self.control_points):
            out = out + _kernel_matrix(p, self.control_points) @ self.rbf_weights
        return out[0] if single else out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(3)
        j = self.affine.copy()
        if len(self.control_points):
            diff = x - self.control_points
            r = np.linalg.norm(diff, axis=1)
            r = np.maximum(r, self.kernel_epsilon)
            j = j + self.rbf_weights.T @ (diff / r[:, None])
        return j


@dataclass(frozen=True)
class RegistrationResult:
    """Fitted field plus the cost decomposition used for source selection."""

    field: WarpField
    cost: float  # (sum residual^2 + lambda * E_bend) / N
    residual: float  # mean point-match distance, meters
    bending_energy: float  # E_bend / N
    lam: float
    correspondence: np.ndarray | None = None
    degenerate: bool = False
    residual_term: float = 0.0  # mean squared match distance


@dataclass(frozen=True)
class RpmParams:
    """Annealing schedule for correspondence-free fitting."""

    t_init: float | None = None  # None: 0.5 * (target bbox diagonal)^2
    t_final_ratio: float = 1.0 / 500.0
    anneal_rate: float = 0.93
    outlier_weight: float = 0.1
    inner_iters: int = 5
    sinkhorn_iters: int = 20
    lam_scale: float = 0.1  # TPS lambda = lam_scale * T / T_init at temperature T


def _kernel_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _solve_displacement_tps(ctrl: np.ndarray, disp: np.ndarray, lam: float):
    """Minimize sum ||g(c_i) - d_i||^2 + lam * E_bend(g) over the TPS family.

    Fits the displacement field g (f = x + g) in the principal-axis frame of
    the control points.  Well-spread inputs get the exact stationarity solve
    (exact interpolation at lam = 0).  When some spatial direction is weak
    (flat or near-degenerate clouds), the affine rows along those directions
    are ridge-anchored to zero displacement in a joint solve, which selects
    the identity-like member of the nearly flat solution family instead of a
    noise-amplified slope.

    Returns (weights, affine_of_g, offset, bending_energy, degenerate).
    """
    n = len(ctrl)
    mean = ctrl.mean(axis=0)
    centered = ctrl - mean
    _, s_sp, vt = np.linalg.svd(centered, full_matrices=True)
    spread = np.zeros(3)
    spread[: len(s_sp)] = s_sp
    z = centered @ vt.T
    p = np.hstack([np.ones((n, 1)), z])
    q, r = np.linalg.qr(p, mode="complete")
    weak = spread <= max(WEAK_DIRECTION_RATIO * spread[0], 1e-12)
    degenerate = n < 4 or bool(weak.any())
    lam_eff = max(lam, LAMBDA_FLOOR) if degenerate else lam

    k = _kernel_matrix(ctrl, ctrl)
    q2 = q[:, 4:] if n > 4 else np.zeros((n, 0))
    if not degenerate:
        # representer solve: (Q2^T K Q2 - lam I) gamma = Q2^T d.  The reduced
        # matrix is negative definite (the -r kernel is conditionally positive
        # definite of order 1), so this is well posed for every lam >= 0.
        m = q2.T @ k @ q2 - lam_eff * np.eye(n - 4)
        gamma = np.linalg.solve(m, q2.T @ disp)
        w = q2 @ gamma
        q1 = q[:, :4]
        rhs = q1.T @ (disp - k @ w + lam_eff * w)
        coeff = np.linalg.solve(r[:4, :4], rhs)
    else:
        # joint normal-equation solve with the weak affine rows ridged; along
        # exactly-degenerate directions the ridge is free (the data carries no
        # signal there), so a strong anchor is safe
        ridge = np.zeros(4)
        alpha = max(spread[0] ** 2, 1e-8)
        for d in range(3):
            if weak[d]:
                ridge[1 + d] = alpha
        kq2 = k @ q2
        m = np.block(
            [
                [kq2.T @ kq2 - lam_eff * (q2.T @ kq2), kq2.T @ p],
                [p.T @ kq2, p.T @ p + np.diag(ridge)],
            ]
        )
        rhs = np.vstack([kq2.T @ disp, p.T @ disp])
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(m, rhs, rcond=None)[0]
        nfree = q2.shape[1]
        w = q2 @ sol[:nfree]
        coeff = sol[nfree:]
    # map the principal-frame coefficients back to world coordinates
    affine_g = coeff[1:].T @ vt
    offset = coeff[0] - affine_g @ mean
    bending = float(-np.einsum("id,ij,jd->", w, k, w))
    return w, affine_g, offset, max(bending, 0.0), degenerate


def _subsample_indices(n: int, limit: int = MAX_CONTROL_POINTS) -> np.ndarray:
    if n <= limit:
        return np.arange(n)
    stride = -(-n // limit)  # ceil
    return np.arange(0, n, stride)


def _build_result(field, src_nodes, tgt_like, lam, bending, degenerate, corr=None):
    mapped = field(src_nodes)
    d = np.linalg.norm(mapped - tgt_like, axis=1)
    n = len(src_nodes)
    residual_term = float((d * d).sum() / n)
    bend_n = bending / n
    return RegistrationResult(
        field=field,
        cost=residual_term + lam * bend_n,
        residual=float(d.mean()),
        bending_energy=bend_n,
        lam=lam,
        correspondence=corr,
        degenerate=degenerate,
        residual_term=residual_term,
    )


def fit_tps(src: DeformableConfig, tgt: DeformableConfig, lam: float = DEFAULT_LAMBDA) -> RegistrationResult:
    """Fit a warp field between node-indexed configurations of equal size."""
    if len(src) != len(tgt):
        raise ShapeMismatch(f"node counts differ: {len(src)} vs {len(tgt)}")
    idx = _subsample_indices(len(src))
    a = src.nodes[idx]
    b = tgt.nodes[idx]
    w, affine_g, offset, bending, degenerate = _solve_displacement_tps(a, b - a, lam)
    field = WarpField(a.copy(), w, np.eye(3) + affine_g, offset)
    # residual and cost are reported over the full node set even when the
    # control points were subsampled
    return _build_result(field, src.nodes, tgt.nodes, lam, bending, degenerate)


def registration_cost(result: RegistrationResult) -> float:
    """Size-normalized objective value used for source selection."""
    return result.cost


def rigid_register(src: DeformableConfig, tgt: DeformableConfig) -> tuple[Pose, float]:
    """Best rigid (Kabsch) map and its size-normalized residual cost."""
    if len(src) != len(tgt):
        raise ShapeMismatch(f"node counts differ: {len(src)} vs {len(tgt)}")
    pose = kabsch_fit(src.nodes, tgt.nodes)
    d = transform_points(pose, src.nodes) - tgt.nodes
    cost = float(np.einsum("ij,ij->", d, d) / len(src))
    return pose, cost


def fit_tps_rpm(
    src: DeformableConfig,
    tgt: DeformableConfig,
    params: RpmParams = RpmParams(),
) -> RegistrationResult:
    """Correspondence-free fit: annealed softassign alternated with TPS solves.

    Works for unequal node counts.  Correspondence is a row/column normalized
    Gaussian affinity with an outlier bin; each temperature runs a few TPS
    fits against correspondence-weighted virtual targets, then the
    temperature anneals down.
    """
    a = src.nodes[_subsample_indices(len(src))]
    b = tgt.nodes[_subsample_indices(len(tgt))]
    n, m = len(a), len(b)

    span = b.max(axis=0) - b.min(axis=0) if m > 1 else np.ones(3)
    diag2 = float(span @ span)
    t_init = params.t_init if params.t_init is not None else max(0.5 * diag2, 1e-8)
    t_final = t_init * params.t_final_ratio

    w = np.zeros((n, 3))
    affine_g = np.zeros((3, 3))
    offset = np.zeros(3)
    bending = 0.0
    degenerate = False
    corr = np.full((n, m), 1.0 / m)
    virtual = corr @ b

    t = t_init
    while t > t_final:
        lam = max(params.lam_scale * t / t_init, 1e-6)
        for _ in range(params.inner_iters):
            fld = WarpField(a, w, np.eye(3) + affine_g, offset)
            fa = fld(a)
            d2 = np.sum((fa[:, None, :] - b[None, :, :]) ** 2, axis=2)
            aff = np.exp(-d2 / (2.0 * t))
            padded = np.empty((n + 1, m + 1))
            padded[:n, :m] = aff
            padded[n, :m] = params.outlier_weight
            padded[:n, m] = params.outlier_weight
            padded[n, m] = params.outlier_weight
            for _ in range(params.sinkhorn_iters):
                padded[:n] /= padded[:n].sum(axis=1, keepdims=True) + 1e-300
                padded[:, :m] /= padded[:, :m].sum(axis=0, keepdims=True) + 1e-300
            corr = padded[:n, :m]
            # column sums are exactly <= 1 after the final column pass; scale
            # down any row the partial Sinkhorn left above 1
            rs = corr.sum(axis=1, keepdims=True)
            corr = np.where(rs > 1.0, corr / np.maximum(rs, 1e-300), corr)
            mass = corr.sum(axis=1)
            virtual = np.where(
                mass[:, None] > 1e-8, corr @ b / np.maximum(mass, 1e-300)[:, None], fa
            )
            w, affine_g, offset, bending, degenerate = _solve_displacement_tps(
                a, virtual - a, lam
            )
            if not (
                np.all(np.isfinite(w)) and np.all(np.isfinite(affine_g)) and np.all(np.isfinite(offset))
            ):
                raise NonConvergence("non-finite fit; check input scaling")
        t *= params.anneal_rate

    field = WarpField(a.copy(), w, np.eye(3) + affine_g, offset)
    mass = corr.sum(axis=1)
    dist = np.linalg.norm(field(a) - virtual, axis=1)
    total_mass = float(mass.sum())
    if total_mass <= 0.0 or not np.isfinite(total_mass):
        raise NonConvergence("correspondence mass vanished")
    residual = float((mass * dist).sum() / total_mass)
    residual_term = float((mass * dist * dist).sum() / total_mass)
    lam_final = max(params.lam_scale * t / t_init, 1e-6)
    cost = residual_term + lam_final * bending / n
    if not np.isfinite(cost):
        raise NonConvergence("registration cost is not finite")
    return RegistrationResult(
        field=field,
        cost=cost,
        residual=residual,
        bending_energy=bending / n,
        lam=lam_final,
        correspondence=corr,
        degenerate=degenerate,
        residual_term=residual_term,
    )
