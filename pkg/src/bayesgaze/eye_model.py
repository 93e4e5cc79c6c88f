"""Geometric eye-face model: pose fit, eyeball recovery, pupil back-projection.

The gaze map works in four steps: fit the rigid head pose to the 11 facial
landmarks by minimizing reprojection error, place the eyeball center with the
fitted pose, back-project the observed pupil pixel onto the eyeball sphere,
and rotate the resulting optical axis by the kappa angles to obtain the
visual axis (the reported gaze).

Kappa convention: with head rotation R, the visual axis is
    R @ Rx(kappa_v) @ Ry(kappa_h) @ R.T @ optical_axis
i.e. the offset is applied in the head frame, horizontal first. Synthesis
uses the exact inverse, so noiseless round trips are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraIntrinsics,
    GeometryError,
    NoIntersection,
    Pose,
    axis_angle_matrix,
    backproject,
    identity_pose,
    nearest_rotation,
    normalize,
    project,
    ray_sphere_intersect,
    ray_sphere_intersect_batch,
    rotation_x,
    rotation_y,
)

# Rigid face template, head frame, millimeters. +x right, +y down, +z away
# from the camera when the head faces it. Order: eye corners (outer L, inner
# L, inner R, outer R), nose tip, nostrils (L, R), mouth corners (L, R),
# brows (L, R). The nose tip keeps the set non-coplanar.
FACE_TEMPLATE = np.array(
    [
        [-30.0, -12.0, 0.0],
        [-10.0, -12.0, 0.0],
        [10.0, -12.0, 0.0],
        [30.0, -12.0, 0.0],
        [0.0, 10.0, -12.0],
        [-8.0, 14.0, -6.0],
        [8.0, 14.0, -6.0],
        [-16.0, 30.0, -4.0],
        [16.0, 30.0, -4.0],
        [-20.0, -26.0, -2.0],
        [20.0, -26.0, -2.0],
    ]
)

# Eyeball center of the modeled (image-left) eye, head frame. It sits behind
# the plane of the eye corners; with radius 12 the front surface is ~4 mm
# proud of that plane.
EYEBALL_OFFSET = np.array([-20.0, -12.0, 8.0])

HUMAN_EYEBALL_RADIUS_MM = 12.0
HUMAN_KAPPA_DEG = (5.0, 1.2)

# The cornea center sits on the optical axis between eyeball center and
# pupil; synthesis anchors the gaze-target ray there.
CORNEA_OFFSET_FRAC = 0.45

N_FACE_POINTS = 11
N_LANDMARKS = 12  # 11 facial + pupil center


class EyeModelError(GeometryError):
    pass


class DegenerateConfiguration(EyeModelError):
    """Normal equations of the pose fit are singular beyond tolerance."""


class SingularCovariance(EyeModelError):
    pass


class InsufficientData(EyeModelError):
    pass


@dataclass
class EyeModelParams:
    """Geometric parameters: rigid face shape, eyeball placement, camera."""

    face_shape: np.ndarray  # (11, 3) head frame, mm
    eyeball_offset: np.ndarray  # (3,) head frame, mm
    eyeball_radius: float  # mm
    kappa_deg: tuple  # (horizontal, vertical)
    cam: CameraIntrinsics
    sigma_n: np.ndarray = field(default_factory=lambda: 1e-3 * np.eye(3))

    def __post_init__(self):
        self.face_shape = np.asarray(self.face_shape, dtype=float)
        self.eyeball_offset = np.asarray(self.eyeball_offset, dtype=float).reshape(3)
        self.sigma_n = np.asarray(self.sigma_n, dtype=float)
        if self.face_shape.shape != (N_FACE_POINTS, 3):
            raise ValueError(f"face_shape must be ({N_FACE_POINTS}, 3)")
        if self.eyeball_radius <= 0:
            raise ValueError("eyeball radius must be positive")
        if self.sigma_n.shape != (3, 3) or np.max(np.abs(self.sigma_n - self.sigma_n.T)) > 1e-12:
            raise ValueError("sigma_n must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(self.sigma_n)) < -1e-12:
            raise ValueError("sigma_n must be positive semidefinite")


def average_eye_model(cam: CameraIntrinsics, sigma_n=None) -> EyeModelParams:
    """Human-average model used for evaluation (no per-subject calibration)."""
    return EyeModelParams(
        face_shape=FACE_TEMPLATE.copy(),
        eyeball_offset=EYEBALL_OFFSET.copy(),
        eyeball_radius=HUMAN_EYEBALL_RADIUS_MM,
        kappa_deg=HUMAN_KAPPA_DEG,
        cam=cam,
        sigma_n=1e-3 * np.eye(3) if sigma_n is None else sigma_n,
    )


@dataclass
class LandmarkSet:
    """2D observations: 11 facial points plus the pupil center, pixels."""

    facial: np.ndarray  # (11, 2)
    pupil: np.ndarray  # (2,)

    def __post_init__(self):
        self.facial = np.asarray(self.facial, dtype=float)
        self.pupil = np.asarray(self.pupil, dtype=float).reshape(2)
        if self.facial.shape != (N_FACE_POINTS, 2):
            raise ValueError(f"facial must be ({N_FACE_POINTS}, 2)")
        if not (np.all(np.isfinite(self.facial)) and np.all(np.isfinite(self.pupil))):
            raise ValueError("landmark coordinates must be finite")

    @classmethod
    def from_vector(cls, z) -> "LandmarkSet":
        z = np.asarray(z, dtype=float).reshape(N_LANDMARKS, 2)
        return cls(facial=z[:N_FACE_POINTS], pupil=z[N_FACE_POINTS])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.facial.ravel(), self.pupil])


def kappa_rotation(kappa_deg) -> np.ndarray:
    """Head-frame rotation taking the optical axis to the visual axis."""
    kh, kv = kappa_deg
    return rotation_x(kv) @ rotation_y(kh)


def kappa_rotate(optical, kappa_deg, rotation) -> np.ndarray:
    """Optical axis -> visual axis, offset applied in the head frame."""
    K = kappa_rotation(kappa_deg)
    return np.asarray(optical, dtype=float) @ (rotation @ K @ rotation.T).T


def kappa_unrotate(visual, kappa_deg, rotation) -> np.ndarray:
    """Inverse of kappa_rotate (visual axis -> optical axis)."""
    K = kappa_rotation(kappa_deg)
    return np.asarray(visual, dtype=float) @ (rotation @ K.T @ rotation.T).T


@dataclass
class PoseFit:
    pose: Pose
    residual_rms: float  # pixels
    converged: bool
    iterations: int


def _projection_residual_jacobian(points_cam, landmarks, cam):
    """Residuals (2K,) and Jacobian (2K, 6) for the increment (omega, dt).

    Increment model: X' = exp([omega]x) @ X + dt applied to camera-frame
    points, i.e. the pose update is R' = exp(w)R, t' = exp(w)t + dt.
    """
    X = points_cam
    z = X[:, 2]
    u = cam.fx * X[:, 0] / z + cam.cx
    v = cam.fy * X[:, 1] / z + cam.cy
    r = np.stack([u, v], axis=1) - landmarks

    K = X.shape[0]
    inv_z = 1.0 / z
    # d(pixel)/dX
    A = np.zeros((K, 2, 3))
    A[:, 0, 0] = cam.fx * inv_z
    A[:, 0, 2] = -cam.fx * X[:, 0] * inv_z**2
    A[:, 1, 1] = cam.fy * inv_z
    A[:, 1, 2] = -cam.fy * X[:, 1] * inv_z**2
    # dX/d(omega) = -[X]x, dX/d(dt) = I
    dXdw = np.zeros((K, 3, 3))
    dXdw[:, 0, 1] = X[:, 2]
    dXdw[:, 0, 2] = -X[:, 1]
    dXdw[:, 1, 0] = -X[:, 2]
    dXdw[:, 1, 2] = X[:, 0]
    dXdw[:, 2, 0] = X[:, 1]
    dXdw[:, 2, 1] = -X[:, 0]
    J = np.concatenate([np.einsum("kij,kjl->kil", A, dXdw), A], axis=2)
    return r.reshape(-1), J.reshape(-1, 6)


def fit_pose(
    landmarks,
    params: EyeModelParams,
    init: Pose | None = None,
    max_iter: int = 100,
    step_tol: float = 1e-10,
) -> PoseFit:
    """Levenberg-damped Gauss-Newton fit of the head pose to facial landmarks.

    `landmarks` is a LandmarkSet, a (11, 2) array, or a flat 24-vector whose
    pupil entry is ignored. Raises DegenerateConfiguration when the normal
    equations are rank deficient at the start (e.g. collinear model points).
    """
    z = _facial_array(landmarks)
    if init is None:
        init = identity_pose()
    R = init.rotation.copy()
    t = init.translation.copy()
    pts = params.face_shape
    cam = params.cam

    def cost_of(Rc, tc):
        X = pts @ Rc.T + tc
        if np.any(X[:, 2] <= 0):
            return None, None
        r, J = _projection_residual_jacobian(X, z, cam)
        return float(r @ r), (r, J)

    cost, rj = cost_of(R, t)
    if cost is None:
        raise ValueError("initial pose places model points behind the camera")
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r, J = rj
        H = J.T @ J
        g = J.T @ r
        if it == 1:
            s = np.linalg.svd(H, compute_uv=False)
            if s[-1] <= 1e-12 * max(s[0], 1.0):
                raise DegenerateConfiguration(
                    f"pose normal equations singular (smallest/largest singular value "
                    f"{s[-1]:.2e}/{s[0]:.2e})"
                )
        accepted = False
        step = None
        for _ in range(8):
            D = np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                step = np.linalg.solve(H + lam * D, -g)
            except np.linalg.LinAlgError as exc:
                raise DegenerateConfiguration(str(exc)) from exc
            E = axis_angle_matrix(step[:3])
            R_new = E @ R
            t_new = E @ t + step[3:]
            cost_new, rj_new = cost_of(R_new, t_new)
            if cost_new is not None and cost_new <= cost:
                R, t, cost, rj = R_new, t_new, cost_new, rj_new
                lam = max(lam * 0.33, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if np.linalg.norm(step) < step_tol:
            converged = True
            break

    R = nearest_rotation(R)
    rms = float(np.sqrt(cost / z.size))
    return PoseFit(Pose(R, t), rms, converged or cost == 0.0, it)


def _facial_array(landmarks):
    if isinstance(landmarks, LandmarkSet):
        return landmarks.facial
    z = np.asarray(landmarks, dtype=float)
    if z.shape == (2 * N_LANDMARKS,):
        return z.reshape(N_LANDMARKS, 2)[:N_FACE_POINTS]
    if z.shape == (N_LANDMARKS, 2):
        return z[:N_FACE_POINTS]
    if z.shape == (N_FACE_POINTS, 2):
        return z
    raise ValueError(f"unexpected landmark shape {z.shape}")


def _pupil_array(landmarks):
    if isinstance(landmarks, LandmarkSet):
        return landmarks.pupil
    z = np.asarray(landmarks, dtype=float)
    if z.shape == (2 * N_LANDMARKS,):
        return z[2 * N_FACE_POINTS :]
    if z.shape == (N_LANDMARKS, 2):
        return z[N_FACE_POINTS]
    raise ValueError(f"landmarks of shape {z.shape} carry no pupil entry")


def gaze_from_pose(pupil_px, pose: Pose, params: EyeModelParams) -> np.ndarray:
    """Visual axis given an already-fitted pose and the observed pupil pixel."""
    o_e = pose.transform(params.eyeball_offset)
    ray = backproject(pupil_px, params.cam)
    p = ray_sphere_intersect(np.zeros(3), ray, o_e, params.eyeball_radius)
    optical = normalize(p - o_e)
    return kappa_rotate(optical, params.kappa_deg, pose.rotation)


def estimate_gaze(
    landmarks, params: EyeModelParams, init: Pose | None = None
) -> np.ndarray:
    """Full gaze map: pose fit, pupil back-projection, kappa offset.

    Returns the unit visual axis in the camera frame. Raises NoIntersection
    when the pupil ray misses the eyeball sphere and DegenerateConfiguration
    when the pose fit is ill posed.
    """
    fit = fit_pose(landmarks, params, init=init)
    return gaze_from_pose(_pupil_array(landmarks), fit.pose, params)


# ---------------------------------------------------------------------------
# Batched variants. Same arithmetic as the single-sample path, vectorized over
# draws so Monte-Carlo inference stays fast. Cross-checked in the test suite.
# ---------------------------------------------------------------------------


def _rotate_points_batch(R, pts):
    """(B, 3, 3) rotations applied to fixed (K, 3) points -> (B, K, 3)."""
    B = R.shape[0]
    return (R.reshape(B * 3, 3) @ pts.T).reshape(B, 3, -1).transpose(0, 2, 1)


def _chol6_solve(H, g):
    """Solve the 6x6 SPD systems given as nested lists of (B,) arrays.

    H[i][j] (i >= j) holds the lower triangle, g is a list of 6 (B,) arrays.
    Fully unrolled Cholesky so every operation is a contiguous batch op.
    Returns (solution list of 6 arrays, ok mask).
    """
    n = 6
    L = [[None] * n for _ in range(n)]
    ok = None
    for j in range(n):
        s = H[j][j].copy()
        for k in range(j):
            s -= L[j][k] * L[j][k]
        good = s > 0
        ok = good if ok is None else (ok & good)
        L[j][j] = np.sqrt(np.where(good, s, 1.0))
        for i in range(j + 1, n):
            v = H[i][j].copy()
            for k in range(j):
                v -= L[i][k] * L[j][k]
            L[i][j] = v / L[j][j]
    y = [None] * n
    for i in range(n):
        v = g[i].copy()
        for k in range(i):
            v -= L[i][k] * y[k]
        y[i] = v / L[i][i]
    x = [None] * n
    for i in range(n - 1, -1, -1):
        v = y[i]
        for k in range(i + 1, n):
            v = v - L[k][i] * x[k]
        x[i] = v / L[i][i]
    return x, ok


def _apply_rotvec(w0, w1, w2, M):
    """exp([w]x) applied to a stack of vectors M (B, 3) or matrix columns.

    Rodrigues without forming the 3x3 exponential: v + a (w x v) + b (w x (w x v)).
    M may be (B, 3) or (B, 3, 3) (each column rotated).
    """
    theta2 = w0 * w0 + w1 * w1 + w2 * w2
    theta = np.sqrt(theta2)
    small = theta < 1e-12
    th = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(th) / th)
    b = np.where(small, 0.5, (1.0 - np.cos(th)) / th**2)
    if M.ndim == 3:
        w0 = w0[:, None]
        w1 = w1[:, None]
        w2 = w2[:, None]
        a = a[:, None]
        b = b[:, None]
        v0, v1, v2 = M[:, 0, :], M[:, 1, :], M[:, 2, :]
    else:
        v0, v1, v2 = M[:, 0], M[:, 1], M[:, 2]
    c0 = w1 * v2 - w2 * v1
    c1 = w2 * v0 - w0 * v2
    c2 = w0 * v1 - w1 * v0
    d0 = w1 * c2 - w2 * c1
    d1 = w2 * c0 - w0 * c2
    d2 = w0 * c1 - w1 * c0
    out = np.empty_like(M)
    if M.ndim == 3:
        out[:, 0, :] = v0 + a * c0 + b * d0
        out[:, 1, :] = v1 + a * c1 + b * d1
        out[:, 2, :] = v2 + a * c2 + b * d2
    else:
        out[:, 0] = v0 + a * c0 + b * d0
        out[:, 1] = v1 + a * c1 + b * d1
        out[:, 2] = v2 + a * c2 + b * d2
    return out


def fit_pose_batch(
    landmarks_batch,
    params: EyeModelParams,
    init,
    max_iter: int = 60,
    step_tol: float = 1e-10,
):
    """Levenberg-damped Gauss-Newton on a (B, 11, 2) landmark batch.

    `init` is a single warm-start Pose or a (rotations (B, 3, 3),
    translations (B, 3)) pair with one start per row. Returns
    (rotations (B, 3, 3), translations (B, 3), valid (B,)).

    Same update rule as fit_pose, restructured so every quantity is a
    contiguous batch vector: the 6x6 normal equations are accumulated from
    closed-form Jacobian components and solved by an unrolled Cholesky.
    """
    z = np.asarray(landmarks_batch, dtype=float)
    if z.ndim == 2:  # flat 24-vectors
        z = z.reshape(z.shape[0], N_LANDMARKS, 2)[:, :N_FACE_POINTS]
    elif z.shape[1] == N_LANDMARKS:
        z = z[:, :N_FACE_POINTS]
    B = z.shape[0]
    pts = params.face_shape
    cam = params.cam
    fx, fy = cam.fx, cam.fy
    zu = np.ascontiguousarray(z[:, :, 0])
    zv = np.ascontiguousarray(z[:, :, 1])

    if isinstance(init, Pose):
        R = np.broadcast_to(init.rotation, (B, 3, 3)).copy()
        t = np.broadcast_to(init.translation, (B, 3)).copy()
    else:
        R0, t0 = init
        R = np.broadcast_to(np.asarray(R0, dtype=float), (B, 3, 3)).copy()
        t = np.broadcast_to(np.asarray(t0, dtype=float), (B, 3)).copy()
    lam = np.full(B, 1e-5)
    valid = np.ones(B, dtype=bool)
    done = np.zeros(B, dtype=bool)

    def residuals(Rb, tb, zub, zvb):
        X = _rotate_points_batch(Rb, pts) + tb[:, None, :]
        zc = X[:, :, 2]
        bad = np.any(zc <= 0, axis=1)
        inv = 1.0 / np.where(zc <= 0, 1.0, zc)
        ru = fx * X[:, :, 0] * inv + cam.cx - zub
        rv = fy * X[:, :, 1] * inv + cam.cy - zvb
        cost = np.einsum("bk,bk->b", ru, ru) + np.einsum("bk,bk->b", rv, rv)
        return X, inv, ru, rv, np.where(bad, np.inf, cost)

    X, inv, ru, rv, cost = residuals(R, t, zu, zv)
    bad_start = ~np.isfinite(cost)
    valid &= ~bad_start
    done |= bad_start

    def dot(u, v):
        return np.einsum("bk,bk->b", u, v)

    for _ in range(max_iter):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        Xa, inva = X[active], inv[active]
        rua, rva = ru[active], rv[active]
        x, y = Xa[:, :, 0], Xa[:, :, 1]
        zc = Xa[:, :, 2]
        a = fx * inva
        b = fy * inva
        P = x * inva
        Q = y * inva
        # rows of d(pixel)/d(omega, dt) for the increment X' = exp([w]x) X + dt:
        #   u row: a*(-P*y, z + P*x, -y, 1, 0, -P)
        #   v row: b*(-z - Q*y, Q*x, x, 0, 1, -Q)
        aP = a * P
        bQ = b * Q
        A = [-aP * y, fx + aP * x, -a * y, a, None, -aP]
        Bc = [-(fy + bQ * y), bQ * x, b * x, None, b, -bQ]
        H = [[None] * 6 for _ in range(6)]
        g = [None] * 6
        for i in range(6):
            for j in range(i + 1):
                hij = 0.0
                if A[i] is not None and A[j] is not None:
                    hij = dot(A[i], A[j])
                if Bc[i] is not None and Bc[j] is not None:
                    hij = hij + dot(Bc[i], Bc[j])
                H[i][j] = hij if isinstance(hij, np.ndarray) else np.zeros(active.size)
            gi = 0.0
            if A[i] is not None:
                gi = dot(A[i], rua)
            if Bc[i] is not None:
                gi = gi + dot(Bc[i], rva)
            g[i] = -gi

        la = lam[active]
        for i in range(6):
            H[i][i] = H[i][i] * (1.0 + la) + 1e-12 * la
        step, ok = _chol6_solve(H, g)
        if not np.all(ok):
            valid[active[~ok]] = False
            done[active[~ok]] = True
            keep = ok
            active = active[keep]
            if active.size == 0:
                continue
            step = [s[keep] for s in step]

        s0, s1, s2 = step[0], step[1], step[2]
        R_new = _apply_rotvec(s0, s1, s2, R[active])
        t_new = _apply_rotvec(s0, s1, s2, t[active])
        t_new[:, 0] += step[3]
        t_new[:, 1] += step[4]
        t_new[:, 2] += step[5]
        X_new, inv_new, ru_new, rv_new, cost_new = residuals(
            R_new, t_new, zu[active], zv[active]
        )

        # tolerate rounding-neutral steps so rows at the optimum terminate via
        # the small-step test instead of spiraling through lam escalations
        improved = cost_new <= cost[active] * (1.0 + 1e-14)
        acc = active[improved]
        rej = active[~improved]
        R[acc] = R_new[improved]
        t[acc] = t_new[improved]
        X[acc] = X_new[improved]
        inv[acc] = inv_new[improved]
        ru[acc] = ru_new[improved]
        rv[acc] = rv_new[improved]
        cost[acc] = cost_new[improved]
        lam[acc] = np.maximum(lam[acc] * 0.33, 1e-12)
        lam[rej] = lam[rej] * 10.0
        step_sq = s0 * s0 + s1 * s1 + s2 * s2 + step[3] ** 2 + step[4] ** 2 + step[5] ** 2
        done[active[step_sq < step_tol**2]] = True  # converged, accepted or not
        done[active[lam[active] > 1e8]] = True

    return R, t, valid


def estimate_gaze_batch(
    landmark_vectors,
    params: EyeModelParams,
    init=None,
    max_iter: int = 60,
    step_tol: float = 1e-10,
):
    """Gaze for a (B, 24) batch of landmark vectors.

    Returns (gazes (B, 3), valid (B,)). Items whose pupil ray misses the
    eyeball, or whose pose fit is singular, are flagged invalid (NaN rows).
    A warm-start pose is fitted to the batch mean first.
    """
    Z = np.asarray(landmark_vectors, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != 2 * N_LANDMARKS:
        raise ValueError(f"expected (B, {2 * N_LANDMARKS}) landmark vectors, got {Z.shape}")
    if init is None:
        mean_fit = fit_pose(Z.mean(axis=0), params, init=identity_pose())
        init = mean_fit.pose
    R, t, valid = fit_pose_batch(Z, params, init, max_iter=max_iter, step_tol=step_tol)

    B = Z.shape[0]
    o_e = (R.reshape(B * 3, 3) @ params.eyeball_offset).reshape(B, 3) + t
    rays = backproject(Z[:, 2 * N_FACE_POINTS :], params.cam)
    with np.errstate(invalid="ignore"):
        p, hit = ray_sphere_intersect_batch(rays, o_e, params.eyeball_radius)
        valid = valid & hit
        diff = p - o_e
        norms = np.linalg.norm(diff, axis=1, keepdims=True)
        optical = np.where(valid[:, None], diff / np.where(norms == 0, 1.0, norms), np.nan)

        # visual = R K R^T optical, evaluated as R @ (K @ (R^T optical))
        K = kappa_rotation(params.kappa_deg)
        u = (R * optical[:, :, None]).sum(axis=1)  # R^T optical
        w = u @ K.T
        gaze = (R * w[:, None, :]).sum(axis=2)
        gaze = np.where(valid[:, None], gaze, np.nan)
    return gaze, valid


def estimate_sigma_n(landmark_vectors, gazes_true, params: EyeModelParams, min_samples: int = 30):
    """Sample covariance of the model's gaze residuals on validation data.

    landmark_vectors: (M, 24) noiseless observations; gazes_true: (M, 3).
    """
    Z = np.asarray(landmark_vectors, dtype=float)
    G = np.asarray(gazes_true, dtype=float)
    if Z.shape[0] < min_samples:
        raise InsufficientData(f"need at least {min_samples} samples, got {Z.shape[0]}")
    est, valid = estimate_gaze_batch(Z, params)
    if not np.all(valid):
        raise EyeModelError("gaze model failed on validation samples")
    resid = est - G
    return np.cov(resid.T, ddof=1)


def gaze_log_density(gaze, landmarks, params: EyeModelParams, init: Pose | None = None) -> float:
    """Log density of a Gaussian around the model gaze with covariance sigma_n."""
    mean = estimate_gaze(landmarks, params, init=init)
    try:
        L = np.linalg.cholesky(params.sigma_n)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("sigma_n is not positive definite") from exc
    d = np.asarray(gaze, dtype=float) - mean
    y = np.linalg.solve(L, d)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return float(-0.5 * (3 * np.log(2 * np.pi) + logdet + y @ y))
