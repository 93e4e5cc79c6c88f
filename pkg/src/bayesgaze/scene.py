"""Synthetic subjects, stylized face rendering, corruption, and dataset files.

Every raster lives on the 8-bit grid (multiples of 1/255), so dataset files
round-trip losslessly. Sample generation derives one RNG stream per sample
from (seed, index), which makes parallel and serial generation agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .eye_model import (
    CORNEA_OFFSET_FRAC,
    EYEBALL_OFFSET,
    FACE_TEMPLATE,
    N_FACE_POINTS,
    N_LANDMARKS,
    kappa_unrotate,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    euler_rotation,
    matrix_to_quaternion,
    normalize,
    project,
    quaternion_to_matrix,
)

RASTER_SIZE = 64
DEFAULT_CAMERA = CameraIntrinsics(fx=420.0, fy=420.0, cx=32.0, cy=32.0)

# Per-subject shape noise as a fraction of the template's per-axis extent.
SUBJECT_SHAPE_FRACTION = 0.10
# Per-subject eyeball placement noise, mm per axis.
EYEBALL_JITTER_MM = 0.8

# Rendering intensities.
_FACE_SHADE = 0.80
_SCLERA_SHADE = 0.95
_IRIS_SHADE = 0.35
_PUPIL_SHADE = 0.05
_STROKE_SHADE = 0.55


class SceneError(Exception):
    pass


class OutOfFrame(SceneError):
    """A landmark (or the pupil) falls outside the raster."""


class FormatError(SceneError):
    """Dataset file is malformed; carries the failing record index if known."""

    def __init__(self, message: str, record: int | None = None):
        super().__init__(message if record is None else f"record {record}: {message}")
        self.record = record


@dataclass
class SubjectParams:
    """Anatomy of one synthetic subject."""

    face_points: np.ndarray  # (11, 3) head frame, mm
    eyeball_offset: np.ndarray  # (3,) head frame, mm
    eyeball_radius: float  # mm
    kappa_deg: tuple  # (horizontal, vertical)
    iris_radius: float  # mm

    def __post_init__(self):
        self.face_points = np.asarray(self.face_points, dtype=float)
        self.eyeball_offset = np.asarray(self.eyeball_offset, dtype=float).reshape(3)
        if self.face_points.shape != (N_FACE_POINTS, 3):
            raise ValueError(f"face_points must be ({N_FACE_POINTS}, 3)")
        if self.eyeball_radius <= 0:
            raise ValueError("eyeball radius must be positive")
        if not self.iris_radius < self.eyeball_radius:
            raise ValueError("iris radius must be smaller than the eyeball radius")


@dataclass
class SyntheticSample:
    raster: np.ndarray  # (H, W) float in [0, 1], on the 8-bit grid
    landmarks: np.ndarray  # (12, 2) pixels: 11 facial + pupil center
    gaze: np.ndarray  # (3,) unit visual axis, camera frame
    pose: Pose
    subject_id: int

    def landmark_vector(self) -> np.ndarray:
        return self.landmarks.reshape(-1).copy()


@dataclass(frozen=True)
class NoiseSpec:
    """Test-time corruption: Gaussian noise std on a 0-255 scale, plus a
    square black occlusion block sized as a fraction of the image width."""

    gaussian_std: float = 0.0
    occlusion_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_std < 0:
            raise ValueError("gaussian_std must be nonnegative")
        if not (0 <= self.occlusion_frac < 1):
            raise ValueError("occlusion_frac must be in [0, 1)")


def quantize(raster: np.ndarray) -> np.ndarray:
    """Snap intensities to the 8-bit grid."""
    return np.round(np.asarray(raster, dtype=float) * 255.0) / 255.0


def sample_subject(rng: np.random.Generator) -> SubjectParams:
    """Draw one subject around the human-average template.

    RNG call order is fixed (shape, eyeball, radius, kappa, iris); seeded
    callers rely on it for reproducibility.
    """
    extent = FACE_TEMPLATE.max(axis=0) - FACE_TEMPLATE.min(axis=0)
    face = FACE_TEMPLATE + rng.uniform(-SUBJECT_SHAPE_FRACTION, SUBJECT_SHAPE_FRACTION, (N_FACE_POINTS, 3)) * extent
    eye = EYEBALL_OFFSET + rng.uniform(-EYEBALL_JITTER_MM, EYEBALL_JITTER_MM, 3)
    radius = rng.uniform(11.0, 13.0)
    kappa = (rng.uniform(4.0, 6.0), rng.uniform(0.8, 1.6))
    iris = rng.uniform(3.5, 4.5)
    return SubjectParams(face, eye, radius, kappa, iris)


def subject_for_id(seed: int, subject_id: int) -> SubjectParams:
    """Identity of a subject is a pure function of (seed, subject_id)."""
    return sample_subject(np.random.default_rng([seed, 1, subject_id]))


def sample_pose(rng: np.random.Generator) -> Pose:
    yaw = rng.uniform(-10.0, 10.0)
    pitch = rng.uniform(-7.0, 7.0)
    roll = rng.uniform(-3.0, 3.0)
    tx = rng.uniform(-8.0, 8.0)
    ty = rng.uniform(-6.0, 6.0)
    tz = rng.uniform(570.0, 630.0)
    return Pose(euler_rotation(yaw, pitch, roll), np.array([tx, ty, tz]))


def sample_target(rng: np.random.Generator) -> np.ndarray:
    """Gaze target on the camera plane (a screen around the lens)."""
    return np.array([rng.uniform(-180.0, 180.0), rng.uniform(-140.0, 140.0), 0.0])


def solve_gaze_geometry(subject: SubjectParams, pose: Pose, target):
    """Optical axis, pupil point, and visual axis for a fixation target.

    The visual axis leaves the cornea center (on the optical axis, at
    CORNEA_OFFSET_FRAC * radius from the eyeball center) toward the target,
    and relates to the optical axis by the kappa offset; the two constraints
    are solved by fixed-point iteration, which converges fast because the
    cornea offset is tiny compared to the target distance.
    """
    target = np.asarray(target, dtype=float)
    o_e = pose.transform(subject.eyeball_offset)
    optical = kappa_unrotate(normalize(target - o_e), subject.kappa_deg, pose.rotation)
    for _ in range(60):
        cornea = o_e + CORNEA_OFFSET_FRAC * subject.eyeball_radius * optical
        visual = normalize(target - cornea)
        new_optical = kappa_unrotate(visual, subject.kappa_deg, pose.rotation)
        if np.max(np.abs(new_optical - optical)) < 1e-15:
            optical = new_optical
            break
        optical = new_optical
    cornea = o_e + CORNEA_OFFSET_FRAC * subject.eyeball_radius * optical
    visual = normalize(target - cornea)
    pupil = o_e + subject.eyeball_radius * optical
    return o_e, optical, pupil, visual


def generate_scene(
    subject: SubjectParams,
    pose: Pose,
    target,
    cam: CameraIntrinsics = DEFAULT_CAMERA,
    subject_id: int = 0,
    size: int = RASTER_SIZE,
) -> SyntheticSample:
    """Render one sample with exact ground-truth landmarks and gaze."""
    face_cam = pose.transform(subject.face_points)
    o_e, optical, pupil, visual = solve_gaze_geometry(subject, pose, target)
    if np.dot(pupil - o_e, pupil) >= 0:
        raise OutOfFrame("pupil sits on the far hemisphere of the eyeball")
    pts = np.vstack([face_cam, pupil])
    landmarks = project(pts, cam)
    if np.any(landmarks < 0) or np.any(landmarks >= size):
        raise OutOfFrame(f"landmarks outside the {size}x{size} raster")
    iris_px = subject.iris_radius * cam.fx / pupil[2]
    raster = _render_face(landmarks, iris_px, size)
    return SyntheticSample(raster, landmarks, visual, pose, subject_id)


def _ellipse_mask(u, v, center, axis_u, axis_v):
    return ((u - center[0]) / axis_u) ** 2 + ((v - center[1]) / axis_v) ** 2 <= 1.0


def _rotated_ellipse_mask(u, v, c1, c2, major_scale, aspect):
    """Ellipse aligned with the segment c1-c2 (used for eye openings)."""
    center = 0.5 * (c1 + c2)
    d = c2 - c1
    length = np.hypot(d[0], d[1])
    dir_u, dir_v = d / length
    a = major_scale * length
    b = aspect * a
    eu = u - center[0]
    ev = v - center[1]
    along = eu * dir_u + ev * dir_v
    across = -eu * dir_v + ev * dir_u
    return (along / a) ** 2 + (across / b) ** 2 <= 1.0


def _segment_mask(u, v, p1, p2, width):
    d = p2 - p1
    L2 = float(d @ d)
    t = ((u - p1[0]) * d[0] + (v - p1[1]) * d[1]) / L2
    t = np.clip(t, 0.0, 1.0)
    du = p1[0] + t * d[0] - u
    dv = p1[1] + t * d[1] - v
    return du * du + dv * dv <= width * width


def _render_face(landmarks, iris_radius_px, size, supersample: int = 2):
    """Paint the stylized face at supersampled resolution, then box-filter."""
    S = supersample
    n = size * S
    jj, ii = np.meshgrid(np.arange(n), np.arange(n))
    u = (jj + 0.5) / S - 0.5
    v = (ii + 0.5) / S - 0.5
    img = np.zeros((n, n))

    facial = landmarks[:N_FACE_POINTS]
    pupil = landmarks[N_FACE_POINTS]
    lo = facial.min(axis=0)
    hi = facial.max(axis=0)
    center = 0.5 * (lo + hi)
    img[_ellipse_mask(u, v, center, 0.68 * (hi[0] - lo[0]) + 5.0, 0.72 * (hi[1] - lo[1]) + 6.0)] = _FACE_SHADE

    left_eye = _rotated_ellipse_mask(u, v, facial[0], facial[1], 0.62, 0.55)
    right_eye = _rotated_ellipse_mask(u, v, facial[2], facial[3], 0.62, 0.55)
    img[left_eye] = _SCLERA_SHADE
    img[right_eye] = _SCLERA_SHADE

    # Modeled eye: iris and pupil ride the projected pupil center, clipped to
    # the eye opening. The other eye gets a static iris as decoration.
    iris = (u - pupil[0]) ** 2 + (v - pupil[1]) ** 2 <= iris_radius_px**2
    img[iris & left_eye] = _IRIS_SHADE
    pup = (u - pupil[0]) ** 2 + (v - pupil[1]) ** 2 <= (0.45 * iris_radius_px) ** 2
    img[pup & left_eye] = _PUPIL_SHADE
    oc = 0.5 * (facial[2] + facial[3])
    other_iris = (u - oc[0]) ** 2 + (v - oc[1]) ** 2 <= iris_radius_px**2
    img[other_iris & right_eye] = _IRIS_SHADE
    other_pup = (u - oc[0]) ** 2 + (v - oc[1]) ** 2 <= (0.45 * iris_radius_px) ** 2
    img[other_pup & right_eye] = _PUPIL_SHADE

    bridge = 0.5 * (facial[9] + facial[10])
    for p1, p2, w in [
        (bridge, facial[4], 0.9),
        (facial[4], facial[5], 0.9),
        (facial[4], facial[6], 0.9),
        (facial[7], facial[8], 1.2),
        (facial[9], 0.5 * (facial[9] + facial[0]) + np.array([0.0, -2.0]), 0.9),
        (facial[10], 0.5 * (facial[10] + facial[3]) + np.array([0.0, -2.0]), 0.9),
    ]:
        img[_segment_mask(u, v, np.asarray(p1, float), np.asarray(p2, float), w)] = _STROKE_SHADE

    img = img.reshape(size, S, size, S).mean(axis=(1, 3))
    return quantize(img)


def corrupt(raster, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise (clamped), then a black occlusion square.

    The output is re-quantized to the 8-bit grid, so corruption composes
    with dataset round trips. With a zero spec this is the identity for any
    grid-aligned raster.
    """
    out = np.array(raster, dtype=float)
    H, W = out.shape
    if spec.gaussian_std > 0:
        out += rng.normal(0.0, spec.gaussian_std / 255.0, out.shape)
        np.clip(out, 0.0, 1.0, out)
    side = int(np.floor(spec.occlusion_frac * W))
    if side > 0:
        u0 = int(rng.integers(0, W - side + 1))
        v0 = int(rng.integers(0, H - side + 1))
        out[v0 : v0 + side, u0 : u0 + side] = 0.0
    return quantize(out)


def generate_sample(
    seed: int,
    index: int,
    subject_ids,
    cam: CameraIntrinsics = DEFAULT_CAMERA,
    noise_floor: float = 0.0,
) -> SyntheticSample:
    """Deterministic sample keyed by (seed, index); retries out-of-frame draws."""
    rng = np.random.default_rng([seed, 2, index])
    subject_ids = np.asarray(subject_ids)
    for _ in range(200):
        sid = int(subject_ids[rng.integers(0, len(subject_ids))])
        subject = subject_for_id(seed, sid)
        pose = sample_pose(rng)
        target = sample_target(rng)
        try:
            sample = generate_scene(subject, pose, target, cam=cam, subject_id=sid)
        except OutOfFrame:
            continue
        if noise_floor > 0:
            raster = corrupt(
                sample.raster,
                NoiseSpec(gaussian_std=noise_floor * 255.0),
                rng,
            )
            sample = SyntheticSample(raster, sample.landmarks, sample.gaze, sample.pose, sid)
        return sample
    raise SceneError(f"could not place sample {index} in frame after 200 attempts")


def generate_dataset(
    n_samples: int,
    subject_ids,
    seed: int,
    cam: CameraIntrinsics = DEFAULT_CAMERA,
    noise_floor: float = 0.0,
) -> list[SyntheticSample]:
    return [
        generate_sample(seed, i, subject_ids, cam=cam, noise_floor=noise_floor)
        for i in range(n_samples)
    ]


# ---------------------------------------------------------------------------
# Dataset container: one text header line pair, then fixed-size binary
# records. Layout (little-endian):
#   magic line  b"BGAZE1\n"
#   json line   {"width", "height", "n_landmarks", "fx", "fy", "cx", "cy",
#                "count"} + b"\n"
#   per record: int32 subject_id, float64[4] pose quaternion (w x y z),
#               float64[3] translation, float64[3] gaze, float64[2*n_landmarks]
#               landmarks, uint8[height*width] raster (row-major, value*255)
# ---------------------------------------------------------------------------

_MAGIC = b"BGAZE1\n"


@dataclass
class Dataset:
    samples: list
    camera: CameraIntrinsics

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def _record_size(h, w, n_landmarks):
    return 4 + 8 * (4 + 3 + 3 + 2 * n_landmarks) + h * w


def write_dataset(samples, path, camera: CameraIntrinsics = DEFAULT_CAMERA) -> None:
    samples = list(samples)
    if samples:
        H, W = samples[0].raster.shape
    else:
        H = W = RASTER_SIZE
    header = {
        "width": W,
        "height": H,
        "n_landmarks": N_LANDMARKS,
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "count": len(samples),
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for i, s in enumerate(samples):
            if s.raster.shape != (H, W):
                raise FormatError(f"raster shape {s.raster.shape} != ({H}, {W})", record=i)
            byte_img = np.round(s.raster * 255.0)
            if not np.array_equal(byte_img / 255.0, s.raster):
                raise FormatError("raster is not on the 8-bit grid", record=i)
            fh.write(np.int32(s.subject_id).tobytes())
            fh.write(matrix_to_quaternion(s.pose.rotation).astype("<f8").tobytes())
            fh.write(s.pose.translation.astype("<f8").tobytes())
            fh.write(np.asarray(s.gaze, dtype="<f8").tobytes())
            fh.write(s.landmarks.astype("<f8").reshape(-1).tobytes())
            fh.write(byte_img.astype(np.uint8).tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        try:
            header = json.loads(fh.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable header: {exc}") from exc
        for key in ("width", "height", "n_landmarks", "fx", "fy", "cx", "cy", "count"):
            if key not in header:
                raise FormatError(f"header missing {key!r}")
        H, W, NL = header["height"], header["width"], header["n_landmarks"]
        cam = CameraIntrinsics(header["fx"], header["fy"], header["cx"], header["cy"])
        rec_size = _record_size(H, W, NL)
        samples = []
        for i in range(header["count"]):
            blob = fh.read(rec_size)
            if len(blob) != rec_size:
                raise FormatError(f"truncated ({len(blob)} of {rec_size} bytes)", record=i)
            off = 0
            sid = int(np.frombuffer(blob, "<i4", 1, off)[0]); off += 4
            quat = np.frombuffer(blob, "<f8", 4, off); off += 32
            trans = np.frombuffer(blob, "<f8", 3, off); off += 24
            gaze = np.frombuffer(blob, "<f8", 3, off); off += 24
            lms = np.frombuffer(blob, "<f8", 2 * NL, off).reshape(NL, 2); off += 16 * NL
            raster = np.frombuffer(blob, np.uint8, H * W, off).reshape(H, W) / 255.0
            samples.append(
                SyntheticSample(raster, lms.copy(), gaze.copy(), Pose(quaternion_to_matrix(quat), trans.copy()), sid)
            )
        if fh.read(1):
            raise FormatError("trailing bytes after the last record")
    return Dataset(samples, cam)
