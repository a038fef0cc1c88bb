"""Synthetic two-domain CSI generator.

Animated 17-joint skeletons (COCO order, image pixels) are mapped into a
top-down scene plane where every joint acts as a point scatterer. The
channel at each subcarrier is a sum over the direct path, static
scatterers and joint reflections; only its amplitude is kept.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, PreconditionError

SPEED_OF_LIGHT = 299_792_458.0
SUBCARRIER_SPACING = 312.5e3
JOINTS = 17
IMAGE_SIZE = (640, 480)
# pixel -> metre mapping of the skeleton into the scene plane
METERS_PER_PIXEL = 0.006
DEPTH_FOLD = 0.5
LOCATIONS = {"L1": -120.0, "L2": 0.0, "L3": 120.0}
ACTIONS = ("wave", "leg_swing", "step")

# per-joint reflection coefficient: head, torso, elbows/wrists, knees/ankles
JOINT_COEFFS = np.array([0.10, 0.03, 0.03, 0.03, 0.03, 0.25, 0.25, 0.15, 0.15, 0.12, 0.12,
                         0.25, 0.25, 0.15, 0.15, 0.12, 0.12])

# COCO skeleton edges whose lengths are rigid
BONES = ((5, 7), (7, 9), (6, 8), (8, 10), (11, 13), (13, 15), (12, 14), (14, 16),
         (5, 6), (11, 12), (5, 11), (6, 12), (0, 1), (0, 2), (1, 3), (2, 4))


@dataclass(frozen=True)
class SceneSpec:
    tx_pos: tuple[float, float] = (0.0, 0.0)
    rx_pos: tuple[tuple[float, float], ...] = ((3.5, 0.0), (3.5, 0.028), (3.5, 0.056))
    static_scatterers: tuple[tuple[float, float, float], ...] = (
        (0.8, -1.6, 0.9), (2.9, -1.2, 0.7), (4.6, 1.4, 0.8), (-0.9, 2.2, 0.6), (1.6, 4.3, 0.9), (3.9, 3.6, 0.5),
    )
    device_axis_rotation: float = 0.0
    rotation_center: tuple[float, float] = (1.75, 1.8)
    subject_center: tuple[float, float] = (1.75, 1.8)
    carrier_freq: float = 5.32e9
    direct_coeff: float = 1.0
    noise_std: float = 0.0005
    seed: int = 0

    def __post_init__(self):
        if len(self.rx_pos) < 1:
            raise ConfigurationError("scene needs at least one receive antenna")
        for rx in self.rx_pos:
            if np.allclose(rx, self.tx_pos):
                raise ConfigurationError("tx and rx positions must be distinct")
        for s in self.static_scatterers:
            if len(s) != 3 or not (0.0 < s[2] <= 1.0):
                raise ConfigurationError(f"scatterer {s} needs (x, y, coeff) with coeff in (0, 1]")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be nonnegative")
        if self.carrier_freq <= 0:
            raise ConfigurationError("carrier_freq must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    def device_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """tx (2,) and rx (A, 2) after rotating the device axis about the rotation centre."""
        c, s = np.cos(self.device_axis_rotation), np.sin(self.device_axis_rotation)
        rot = np.array([[c, -s], [s, c]])
        ctr = np.asarray(self.rotation_center, dtype=np.float64)
        tx = ctr + rot @ (np.asarray(self.tx_pos, dtype=np.float64) - ctr)
        rx = ctr + (np.asarray(self.rx_pos, dtype=np.float64) - ctr) @ rot.T
        return tx, rx


def default_scene(rotation: float = 0.0, seed: int = 0, n_antennas: int = 3, **overrides) -> SceneSpec:
    """3.5 m link with receive antennas at half-wavelength spacing."""
    fc = overrides.get("carrier_freq", 5.32e9)
    half = SPEED_OF_LIGHT / fc / 2.0
    rx = tuple((3.5, i * half) for i in range(n_antennas))
    return SceneSpec(rx_pos=rx, device_axis_rotation=rotation, seed=seed, **overrides)


@dataclass(frozen=True)
class MotionSpec:
    action: str = "wave"
    location: str = "L2"
    subject_scale: float = 1.0
    duration: int = 320
    frame_rate: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ConfigurationError(f"unknown action {self.action!r}; choose from {ACTIONS}")
        if self.location not in LOCATIONS:
            raise ConfigurationError(f"unknown location {self.location!r}; choose from {sorted(LOCATIONS)}")
        if not (0.5 <= self.subject_scale <= 1.5):
            raise ConfigurationError(f"subject_scale {self.subject_scale} outside [0.5, 1.5]")
        if self.duration < 1 or self.frame_rate <= 0:
            raise ConfigurationError("duration and frame_rate must be positive")


@dataclass
class DomainDataset:
    csi: np.ndarray  # (N, antennas, subcarriers, time) float32
    poses: np.ndarray  # (N, joints, 2) float32, zero where unlabeled
    label_mask: np.ndarray  # (N,) bool
    domain_id: str = ""
    spec_hash: str = ""

    def __post_init__(self):
        self.csi = np.ascontiguousarray(self.csi, dtype=np.float32)
        self.poses = np.ascontiguousarray(self.poses, dtype=np.float32)
        self.label_mask = np.asarray(self.label_mask, dtype=bool)
        if not (len(self.csi) == len(self.poses) == len(self.label_mask)):
            raise PreconditionError("csi, poses and label_mask must have equal length")

    def __len__(self):
        return len(self.csi)

    @property
    def window_shape(self):
        return tuple(self.csi.shape[1:])

    @property
    def fully_labeled(self) -> bool:
        return bool(self.label_mask.all())

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.label_mask)

    def subset(self, idx) -> "DomainDataset":
        idx = np.asarray(idx)
        return DomainDataset(self.csi[idx], self.poses[idx], self.label_mask[idx], self.domain_id, self.spec_hash)


# --- skeletons ---------------------------------------------------------------

def _limb(origin, length, angle, side):
    """Endpoint of a limb hanging from ``origin`` at ``angle`` from straight down."""
    return origin + length * np.stack([side * np.sin(angle), np.cos(angle)], axis=-1)


def synth_pose_sequence(motion: MotionSpec, seed: int) -> np.ndarray:
    """Pixel skeletons for every frame, shape (duration, 17, 2)."""
    rng = np.random.default_rng(seed)
    s = motion.subject_scale
    t = np.arange(motion.duration) / motion.frame_rate
    freq = rng.uniform(0.6, 1.2)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.8, 1.2)
    w = 2 * np.pi * freq * t + phase
    sway = 0.05 * np.sin(0.5 * w)

    root_x = IMAGE_SIZE[0] / 2 + LOCATIONS[motion.location] + rng.uniform(-10, 10)
    root_y = 280.0 + rng.uniform(-5, 5)
    bob = np.zeros_like(t)
    arm_l = np.full_like(t, 0.15)
    arm_r = np.full_like(t, 0.15)
    elb_l = np.full_like(t, 0.1)
    elb_r = np.full_like(t, 0.1)
    hip_l = np.full_like(t, 0.05)
    hip_r = np.full_like(t, 0.05)
    knee_l = np.zeros_like(t)
    knee_r = np.zeros_like(t)
    if motion.action == "wave":
        arm_r = 1.6 + 0.9 * amp * np.sin(w)
        elb_r = 0.6 + 0.5 * amp * np.sin(w + 0.8)
        arm_l = 0.2 + 0.6 * amp * (1 + np.sin(w + np.pi)) / 2
        elb_l = 0.3 + 0.3 * np.sin(w + np.pi)
    elif motion.action == "leg_swing":
        hip_r = 0.1 + 0.6 * amp * np.sin(w)
        knee_r = 0.25 * (1 + np.sin(w - 0.5))
        arm_l = 0.25 + 0.15 * np.sin(w)
        arm_r = 0.25 - 0.15 * np.sin(w)
    else:  # step in place
        lift = np.sin(w)
        hip_l = 0.05 + 0.7 * amp * np.maximum(lift, 0)
        hip_r = 0.05 + 0.7 * amp * np.maximum(-lift, 0)
        knee_l = -1.2 * amp * np.maximum(lift, 0)
        knee_r = -1.2 * amp * np.maximum(-lift, 0)
        arm_l = 0.1 + 0.3 * lift
        arm_r = 0.1 - 0.3 * lift
        bob = 6.0 * s * np.abs(np.sin(w))

    root = np.stack([root_x + 20 * s * sway, root_y - bob], axis=-1)
    lean = sway
    up = np.stack([np.sin(lean), -np.cos(lean)], axis=-1)
    across = np.stack([np.cos(lean), np.sin(lean)], axis=-1)
    neck = root + 110 * s * up
    pose = np.zeros((len(t), JOINTS, 2))
    # image right is the subject's left
    pose[:, 5] = neck + 35 * s * across
    pose[:, 6] = neck - 35 * s * across
    pose[:, 11] = root + 25 * s * across
    pose[:, 12] = root - 25 * s * across
    head = neck + 45 * s * up
    pose[:, 0] = head
    pose[:, 1] = head + s * (8 * across - 7 * up)
    pose[:, 2] = head + s * (-8 * across - 7 * up)
    pose[:, 3] = head + s * (16 * across - 3 * up)
    pose[:, 4] = head + s * (-16 * across - 3 * up)
    pose[:, 7] = _limb(pose[:, 5], 55 * s, arm_l, +1)
    pose[:, 9] = _limb(pose[:, 7], 50 * s, arm_l + elb_l, +1)
    pose[:, 8] = _limb(pose[:, 6], 55 * s, arm_r, -1)
    pose[:, 10] = _limb(pose[:, 8], 50 * s, arm_r + elb_r, -1)
    pose[:, 13] = _limb(pose[:, 11], 80 * s, hip_l, +1)
    pose[:, 15] = _limb(pose[:, 13], 75 * s, hip_l + knee_l, +1)
    pose[:, 14] = _limb(pose[:, 12], 80 * s, hip_r, -1)
    pose[:, 16] = _limb(pose[:, 14], 75 * s, hip_r + knee_r, -1)

    if (pose < 0).any() or (pose[..., 0] > IMAGE_SIZE[0]).any() or (pose[..., 1] > IMAGE_SIZE[1]).any():
        raise ConfigurationError(f"motion {motion} leaves the image frame")
    return pose


def pose_to_scene(pose: np.ndarray, scene: SceneSpec) -> np.ndarray:
    """Pixel joints (..., 17, 2) -> scene-plane metres.

    The subject is placed relative to the devices, so it turns with them
    under ``device_axis_rotation``; only the static scatterers stay put.
    """
    pose = np.asarray(pose, dtype=np.float64)
    cx, cy = IMAGE_SIZE[0] / 2, 280.0
    dx = (pose[..., 0] - cx) * METERS_PER_PIXEL
    dy = (pose[..., 1] - cy) * METERS_PER_PIXEL * DEPTH_FOLD
    ctr = np.asarray(scene.rotation_center, dtype=np.float64)
    px = scene.subject_center[0] + dx - ctr[0]
    py = scene.subject_center[1] + dy - ctr[1]
    c, s = np.cos(scene.device_axis_rotation), np.sin(scene.device_axis_rotation)
    return np.stack([ctr[0] + c * px - s * py, ctr[1] + s * px + c * py], axis=-1)


# --- channel -----------------------------------------------------------------

def _path_table(points, coeffs, tx, rx):
    """Attenuations (..., P, A) and path lengths for tx -> point -> rx."""
    d_tx = np.linalg.norm(points - tx, axis=-1)
    d_rx = np.linalg.norm(points[..., None, :] - rx, axis=-1)
    length = d_tx[..., None] + d_rx
    atten = coeffs[..., None] / np.maximum(length, 0.1) ** 2
    return atten, length


def scene_paths(scene: SceneSpec, joints_scene=None):
    """(attenuation, length) arrays shaped (..., paths, antennas)."""
    tx, rx = scene.device_positions()
    direct_len = np.linalg.norm(rx - tx, axis=-1)[None, :]
    direct_att = scene.direct_coeff / np.maximum(direct_len, 0.1) ** 2
    atts, lens = [direct_att], [direct_len]
    if scene.static_scatterers:
        sc = np.asarray(scene.static_scatterers, dtype=np.float64)
        a, l = _path_table(sc[:, :2], sc[:, 2], tx, rx)
        atts.append(a)
        lens.append(l)
    att = np.concatenate(atts, axis=0)
    length = np.concatenate(lens, axis=0)
    if joints_scene is None:
        return att, length
    joints_scene = np.asarray(joints_scene, dtype=np.float64)
    lead = joints_scene.shape[:-2]
    ja, jl = _path_table(joints_scene, JOINT_COEFFS[: joints_scene.shape[-2]], tx, rx)
    att = np.concatenate([np.broadcast_to(att, lead + att.shape), ja], axis=-2)
    length = np.concatenate([np.broadcast_to(length, lead + length.shape), jl], axis=-2)
    return att, length


def subcarrier_freqs(scene: SceneSpec, indices) -> np.ndarray:
    return scene.carrier_freq + np.asarray(indices, dtype=np.float64) * SUBCARRIER_SPACING


def channel_response(pose, scene: SceneSpec, subcarrier_index: int, antenna_pair: int) -> complex:
    """Complex channel for one subcarrier and antenna; ``pose=None`` drops the body paths."""
    joints = None if pose is None else pose_to_scene(pose, scene)
    att, length = scene_paths(scene, joints)
    f = subcarrier_freqs(scene, subcarrier_index)
    tau = length[:, antenna_pair] / SPEED_OF_LIGHT
    return complex(np.sum(att[:, antenna_pair] * np.exp(2j * np.pi * f * tau)))


def csi_amplitude(poses: np.ndarray, scene: SceneSpec, indices) -> np.ndarray:
    """|H| for a pose sequence: (frames, antennas, subcarriers)."""
    att, length = scene_paths(scene, pose_to_scene(poses, scene))  # (F, P, A)
    f = subcarrier_freqs(scene, indices)
    phase = (2 * np.pi / SPEED_OF_LIGHT) * length[..., None] * f  # (F, P, A, K)
    h = np.einsum("fpa,fpak->fak", att, np.exp(1j * phase))
    return np.abs(h)


def subcarrier_indices(n_subcarriers: int, stride: int = 1) -> np.ndarray:
    return (np.arange(n_subcarriers) - n_subcarriers // 2) * stride


# --- datasets ----------------------------------------------------------------

def spec_hash(scene: SceneSpec, motions, **extra) -> str:
    doc = {"scene": asdict(scene), "motions": [asdict(m) for m in motions], **extra}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=list).encode()
    return hashlib.sha256(blob).hexdigest()


def motion_seed(scene: SceneSpec, index: int, motion: MotionSpec) -> int:
    return int(np.random.SeedSequence([scene.seed, index, motion.seed]).generate_state(1)[0])


def generate_domain(scene: SceneSpec, motions, window_len: int = 32, n_subcarriers: int = 114,
                    subcarrier_stride: int = 1, domain_id: str = "") -> DomainDataset:
    """Non-overlapping windows of CSI amplitude, labeled with the pose at each window's last frame."""
    motions = list(motions)
    idx = subcarrier_indices(n_subcarriers, subcarrier_stride)
    csi, poses = [], []
    for m_i, motion in enumerate(motions):
        if motion.duration < window_len:
            raise PreconditionError(f"motion {m_i} lasts {motion.duration} frames, shorter than window {window_len}")
        seq = synth_pose_sequence(motion, motion_seed(scene, m_i, motion))
        n_win = motion.duration // window_len
        amp = csi_amplitude(seq[: n_win * window_len], scene, idx)  # (F, A, K)
        for w_i in range(n_win):
            block = amp[w_i * window_len : (w_i + 1) * window_len].transpose(1, 2, 0)  # (A, K, T)
            if scene.noise_std > 0:
                rng = np.random.default_rng([scene.seed, m_i, w_i])
                block = block + rng.normal(0.0, scene.noise_std, size=block.shape)
            csi.append(np.maximum(block, 0.0))
            poses.append(seq[(w_i + 1) * window_len - 1])
    n = len(csi)
    a = len(scene.rx_pos)
    csi_arr = np.stack(csi) if n else np.zeros((0, a, n_subcarriers, window_len))
    pose_arr = np.stack(poses) if n else np.zeros((0, JOINTS, 2))
    digest = spec_hash(scene, motions, window_len=window_len, n_subcarriers=n_subcarriers,
                       subcarrier_stride=subcarrier_stride)
    return DomainDataset(csi_arr, pose_arr, np.ones(n, dtype=bool), domain_id, digest)


def mask_labels(dataset: DomainDataset, fraction: float, seed: int) -> DomainDataset:
    """Keep labels on a uniformly random subset of round(fraction * N) samples."""
    if not (0.0 <= fraction <= 1.0):
        raise PreconditionError(f"label fraction {fraction} outside [0, 1]")
    n = len(dataset)
    keep = int(round(fraction * n))
    chosen = np.random.default_rng(seed).choice(n, size=keep, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    mask &= dataset.label_mask
    poses = dataset.poses.copy()
    poses[~mask] = 0.0
    return replace(dataset, poses=poses, label_mask=mask)


def standard_motions(n_subjects: int = 2, duration: int = 320, frame_rate: float = 1000.0, seed: int = 0):
    """Every action at every location for ``n_subjects`` subjects."""
    rng = np.random.default_rng(seed)
    out = []
    for subj in range(n_subjects):
        scale = float(np.round(rng.uniform(0.85, 1.15), 3))
        for loc in LOCATIONS:
            for action in ACTIONS:
                out.append(MotionSpec(action=action, location=loc, subject_scale=scale, duration=duration,
                                      frame_rate=frame_rate, seed=subj))
    return out


# --- CSID files --------------------------------------------------------------

CSID_MAGIC = b"CSID"
CSID_VERSION = 1


def dataset_to_bytes(ds: DomainDataset) -> bytes:
    n = len(ds)
    shape = ds.window_shape
    joints = ds.poses.shape[1] if ds.poses.ndim == 3 else JOINTS
    head = CSID_MAGIC + struct.pack("<III", CSID_VERSION, n, joints) + struct.pack("<I", len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape)
    csi = np.ascontiguousarray(ds.csi, dtype="<f4").reshape(n, -1)
    poses = np.ascontiguousarray(ds.poses, dtype="<f4").reshape(n, -1)
    flags = ds.label_mask.astype(np.uint8)
    body = b"".join(csi[i].tobytes() + bytes([flags[i]]) + poses[i].tobytes() for i in range(n))
    return head + body


def dataset_from_bytes(buf: bytes, domain_id: str = "") -> DomainDataset:
    if buf[:4] != CSID_MAGIC:
        raise ConfigurationError("not a CSID dataset")
    version, n, joints, rank = struct.unpack_from("<IIII", buf, 4)
    if version != CSID_VERSION:
        raise ConfigurationError(f"unsupported CSID version {version}")
    shape = struct.unpack_from(f"<{rank}I", buf, 20)
    pos = 20 + 4 * rank
    per = int(np.prod(shape))
    rec = np.dtype([("csi", "<f4", (per,)), ("flag", "u1"), ("pose", "<f4", (2 * joints,))])
    if len(buf) - pos != n * rec.itemsize:
        raise ConfigurationError("CSID payload size does not match its header")
    arr = np.frombuffer(buf, dtype=rec, count=n, offset=pos)
    return DomainDataset(arr["csi"].reshape((n,) + tuple(shape)).astype(np.float32),
                         arr["pose"].reshape(n, joints, 2).astype(np.float32),
                         arr["flag"].astype(bool), domain_id)


def write_dataset(path, ds: DomainDataset):
    from .model import atomic_write

    atomic_write(path, dataset_to_bytes(ds))


def read_dataset(path, domain_id: str = "") -> DomainDataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read(), domain_id)
