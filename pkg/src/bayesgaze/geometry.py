"""3D/2D geometry primitives shared by the gaze pipeline.

Camera frame convention: +x right, +y down, +z pointing from the camera into
the scene. 3D quantities are millimeters, image coordinates are pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(Exception):
    """Base class for geometric failures."""


class NonPositiveDepth(GeometryError):
    """A point at or behind the camera plane cannot be projected."""


class NoIntersection(GeometryError):
    """The ray misses the sphere."""


def normalize(v):
    """Scale a vector (or an (N, 3) batch of vectors) to unit norm."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return v / n


def rotation_x(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_rotation(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Head rotation as Rz(roll) @ Rx(pitch) @ Ry(yaw)."""
    return rotation_z(roll_deg) @ rotation_x(pitch_deg) @ rotation_y(yaw_deg)


def axis_angle_matrix(w) -> np.ndarray:
    """Rodrigues formula for a rotation vector (axis * angle in radians)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-12:
        # second-order series keeps the map accurate near zero
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def is_rotation_matrix(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (
        np.max(np.abs(R.T @ R - np.eye(3))) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def nearest_rotation(M) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return R


def matrix_to_quaternion(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera without distortion."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


@dataclass(frozen=True)
class Pose:
    """Rigid head pose: camera_point = rotation @ head_point + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not is_rotation_matrix(R, tol=1e-9):
            raise ValueError("rotation is not orthonormal with det +1 (tol 1e-9)")
        if t[2] <= 0:
            raise ValueError("subject must be in front of the camera (translation z > 0)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def transform(self, points) -> np.ndarray:
        """Map head-frame points ((3,) or (N, 3)) into the camera frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation


def identity_pose(distance_mm: float = 600.0) -> Pose:
    return Pose(np.eye(3), np.array([0.0, 0.0, distance_mm]))


def project(point, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of a (3,) point or (N, 3) batch to pixels."""
    p = np.asarray(point, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"point depth must be positive, got z={np.min(z)}")
    u = cam.fx * p[..., 0] / z + cam.cx
    v = cam.fy * p[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1)


def backproject(pixel, cam: CameraIntrinsics) -> np.ndarray:
    """Unit ray direction through a pixel ((2,) or (N, 2))."""
    px = np.asarray(pixel, dtype=float)
    d = np.stack(
        [
            (px[..., 0] - cam.cx) / cam.fx,
            (px[..., 1] - cam.cy) / cam.fy,
            np.ones_like(px[..., 0]),
        ],
        axis=-1,
    )
    return normalize(d)


def ray_sphere_intersect(origin, direction, center, radius: float) -> np.ndarray:
    """Intersection of a ray with a sphere, nearest to the ray origin.

    `direction` must be unit length. Raises NoIntersection when the ray
    misses the sphere.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    center = np.asarray(center, dtype=float)
    oc = origin - center
    b = float(np.dot(direction, oc))
    c = float(np.dot(oc, oc)) - radius * radius
    disc = b * b - c
    if disc < 0:
        raise NoIntersection(f"ray misses sphere (discriminant {disc:.3e})")
    t = -b - np.sqrt(disc)
    return origin + t * direction


def ray_sphere_intersect_batch(directions, center, radius: float):
    """Vectorized near-intersection for rays from the camera origin.

    directions: (B, 3) unit rays; center: (3,) or (B, 3).
    Returns (points (B, 3), valid (B,)); rows with valid == False missed the
    sphere and hold NaN.
    """
    d = np.asarray(directions, dtype=float)
    c = np.broadcast_to(np.asarray(center, dtype=float), d.shape)
    b = -np.einsum("ij,ij->i", d, c)
    disc = b * b - (np.einsum("ij,ij->i", c, c) - radius * radius)
    valid = disc >= 0
    t = np.where(valid, -b - np.sqrt(np.where(valid, disc, 0.0)), np.nan)
    return t[:, None] * d, valid


def angular_error_deg(g1, g2):
    """Angle between unit vectors in degrees, in [0, 180].

    Equals acos of the clamped dot product, evaluated in the atan2 form
    2*atan2(|g1-g2|, |g1+g2|) which stays accurate for nearly parallel and
    nearly antiparallel vectors where acos loses half the significant digits.
    """
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    num = np.linalg.norm(g1 - g2, axis=-1)
    den = np.linalg.norm(g1 + g2, axis=-1)
    return np.degrees(2.0 * np.arctan2(num, den))
