"""Dataset layout, audio-feature windowing, and the synthetic identity generator.

Dataset directory layout (the on-disk contract consumed by :func:`load_dataset`):

    frames/NNNNNN.png        8-bit RGB frames
    cameras.jsonl            one {"frame_id", "K", "E"} record per frame
    manifest.json            n_frames, resolution, fps, modalities, clip_duration, ...
    expression.jsonl         optional, {"frame_id", "coeffs": [76 floats]}
    audio_features.npy       optional, float32 array of shape (n_clips, 29)
    factors.jsonl            synthetic ground truth only, {"frame_id", "factors": [m]}

The synthetic identity is a set of anisotropic Gaussian density blobs with
constant colors whose centers move as a linear function of m latent "expression"
factors.  Factor time series follow a smooth seeded random walk; cameras sweep
an orbit segment.  Ground-truth images are rendered from the analytic field
through the repo's own compositing quadrature at high sample count, so every
image is exactly reproducible from (spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .camera import CameraPose, Intrinsics, load_cameras, orbit_pose, save_cameras
from .errors import ShapeError, ValidationError
from .nnutil import derive_seed
from .renderer import RenderConfig, composite, rgb_to_uint8, sample_along_rays
from . import camera as camera_mod

CLIP_DURATION = 0.020  # seconds of audio per feature clip
EXPRESSION_DIM = 76
AUDIO_FEATURE_DIM = 29
AUDIO_WINDOW_STEPS = 16
WINDOW_PAST = 8  # clips before the frame's clip; the remaining 7 follow it


@dataclass
class FrameSample:
    image: np.ndarray                   # (H, W, 3) float32 in [0, 1]
    pose: CameraPose
    frame_id: int
    timestamp: float
    expression: np.ndarray | None = None    # (76,)
    audio_window: np.ndarray | None = None  # (16, 29)


@dataclass(frozen=True)
class AudioFeatureTrack:
    features: np.ndarray  # (n_clips, 29)
    clip_duration: float = CLIP_DURATION

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != AUDIO_FEATURE_DIM:
            raise ShapeError(f"audio features must be (n_clips, {AUDIO_FEATURE_DIM}), got {f.shape}")
        object.__setattr__(self, "features", f)


def window_audio(track: AudioFeatureTrack, frame_times) -> list[np.ndarray]:
    """Centered 16-clip windows (8 past, 7 future) with edge replication."""
    feats = track.features
    n_clips = feats.shape[0]
    if n_clips == 0:
        raise ValidationError("audio track is empty")
    windows = []
    offsets = np.arange(AUDIO_WINDOW_STEPS) - WINDOW_PAST
    for t in frame_times:
        center = int(np.floor(t / track.clip_duration))
        rows = np.clip(center + offsets, 0, n_clips - 1)
        windows.append(feats[rows])
    return windows


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Parametric scene: blobs, factor-driven deformations, and an orbit camera path."""

    m: int = 12
    n_blobs: int = 10
    extent: float = 1.0
    resolution: int = 64
    fps: float = 25.0
    seed: int = 7
    focal: float = 1.8
    orbit_radius: float = 2.4
    near: float = 1.2
    far: float = 4.0
    azimuth_amplitude: float = 2.6
    elevation_amplitude: float = 0.35
    base_position_scale: float = 0.16
    min_blob_scale: float = 0.10
    max_blob_scale: float = 0.125
    min_blob_amplitude: float = 8.0
    max_blob_amplitude: float = 14.0
    min_blob_color: float = 0.35
    max_blob_color: float = 0.66
    motion_budget: float = 0.46
    color_budget: float = 0.5
    motion_decay: float = 0.9
    walk_smoothness: float = 0.92
    walk_std: float = 0.65
    gt_oversampling: int = 8
    train_n_samples: int = 24

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("need at least one expression factor")
        if self.n_blobs < 1:
            raise ValidationError("need at least one blob")
        reach = self.base_position_scale + self.motion_budget + 3.0 * self.max_blob_scale
        if reach > self.extent:
            raise ValidationError(
                f"blobs can escape the render cube: reach {reach:.3f} > extent {self.extent}"
            )
        if self.max_blob_color * (1.0 + self.color_budget) > 1.0 or \
                self.min_blob_color * (1.0 - self.color_budget) < 0.0:
            raise ValidationError("color modulation can leave the [0, 1] range")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "SyntheticSceneSpec":
        return SyntheticSceneSpec(**json.loads(text))


class SceneModel:
    """Deterministic realization of a spec: blob geometry, factor maps, signal embeddings."""

    def __init__(self, spec: SyntheticSceneSpec):
        self.spec = spec
        rng = np.random.default_rng(derive_seed(spec.seed, "scene"))
        nb, m = spec.n_blobs, spec.m
        self.base_positions = rng.uniform(-spec.base_position_scale, spec.base_position_scale, (nb, 3))
        self.scales = rng.uniform(spec.min_blob_scale, spec.max_blob_scale, (nb, 3))
        self.amplitudes = rng.uniform(spec.min_blob_amplitude, spec.max_blob_amplitude, nb)
        self.colors = rng.uniform(spec.min_blob_color, spec.max_blob_color, (nb, 3))
        # Each factor acts locally: it displaces and recolors a couple of blobs
        # along fixed directions, with amplitudes decaying geometrically across
        # factors.  Per-blob worst-case sums are clamped to the budgets so the
        # scene stays valid for any factor vector in [-1, 1]^m.
        decay = spec.motion_decay ** np.arange(m)
        amps = 0.6 * spec.motion_budget * decay
        dirs = rng.normal(size=(m, nb, 3))
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        touch = np.zeros((m, nb))
        for j in range(m):
            touch[j, rng.choice(nb, size=min(2, nb), replace=False)] = 1.0
        self.maps = dirs * amps[:, None, None] * touch[:, :, None]
        self.maps = _clamp_budget(self.maps, spec.motion_budget)
        camps = 0.6 * spec.color_budget * decay
        ctouch = np.zeros((m, nb))
        for j in range(m):
            ctouch[j, rng.choice(nb, size=min(2, nb), replace=False)] = 1.0
        self.color_maps = (
            rng.choice([-1.0, 1.0], size=(m, nb, 3))
            * rng.uniform(0.5, 1.0, (m, nb, 3))
            * camps[:, None, None]
            * ctouch[:, :, None]
        )
        self.color_maps = _clamp_budget(self.color_maps, spec.color_budget)
        self.factor_amplitudes = amps
        self.expression_embed = _orthonormal_columns(
            EXPRESSION_DIM, m, derive_seed(spec.seed, "expression-embed")
        )
        self.audio_embed = _orthonormal_columns(
            AUDIO_FEATURE_DIM, m, derive_seed(spec.seed, "audio-embed")
        )

    def centers(self, factors) -> np.ndarray:
        f = np.asarray(factors, dtype=np.float64).reshape(self.spec.m)
        return self.base_positions + np.tensordot(f, self.maps, axes=1)

    def blob_colors(self, factors) -> np.ndarray:
        f = np.asarray(factors, dtype=np.float64).reshape(self.spec.m)
        modulated = self.colors * (1.0 + np.tensordot(f, self.color_maps, axes=1))
        return np.clip(modulated, 0.0, 1.0)

    def sample_field(self, factors, points):
        """Analytic density and color at world points: (N,) sigma, (N, 3) color."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        centers = self.centers(factors)
        colors = self.blob_colors(factors)
        sigma = np.zeros(pts.shape[0])
        color_acc = np.zeros((pts.shape[0], 3))
        for b in range(self.spec.n_blobs):
            d = (pts - centers[b]) / self.scales[b]
            w = self.amplitudes[b] * np.exp(-0.5 * np.sum(d * d, axis=1))
            sigma += w
            color_acc += w[:, None] * colors[b]
        color = color_acc / np.maximum(sigma, 1e-12)[:, None]
        return sigma, np.clip(color, 0.0, 1.0)

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(fx=self.spec.focal, fy=self.spec.focal)

    def pose_at(self, frame_idx: int, n_frames: int) -> CameraPose:
        spec = self.spec
        phase = frame_idx / max(n_frames, 1)
        azimuth = spec.azimuth_amplitude * np.sin(2 * np.pi * phase)
        elevation = spec.elevation_amplitude * np.sin(2 * np.pi * 2.3 * phase + 0.7)
        return orbit_pose(self.intrinsics(), azimuth, elevation, spec.orbit_radius)

    def factor_walk(self, n_frames: int) -> np.ndarray:
        """Smooth AR(1) factor trajectories in [-1, 1], shape (n_frames, m)."""
        spec = self.spec
        rng = np.random.default_rng(derive_seed(spec.seed, "walk"))
        rho = spec.walk_smoothness
        innovation = np.sqrt(1.0 - rho**2) * spec.walk_std
        f = rng.normal(0.0, spec.walk_std, spec.m)
        out = np.empty((n_frames, spec.m))
        for t in range(n_frames):
            f = rho * f + innovation * rng.normal(size=spec.m)
            out[t] = np.clip(f, -1.0, 1.0)
        return out


def _clamp_budget(maps: np.ndarray, budget: float) -> np.ndarray:
    """Rescale per-blob columns so worst-case sums over factors stay within budget."""
    worst = np.abs(maps).sum(axis=0).max(axis=-1)  # (n_blobs,)
    scale = np.minimum(1.0, budget / np.maximum(worst, 1e-12))
    return maps * scale[None, :, None]


def _orthonormal_columns(rows: int, cols: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mat = rng.normal(size=(rows, cols))
    q, r = np.linalg.qr(mat)
    return q * np.sign(np.diag(r))


def render_ground_truth(scene: SceneModel, factors, pose: CameraPose,
                        resolution: int | None = None,
                        n_samples: int | None = None) -> np.ndarray:
    """Render the analytic field through the repo compositing quadrature, float64."""
    spec = scene.spec
    res = resolution or spec.resolution
    n = n_samples or spec.gt_oversampling * spec.train_n_samples
    config = RenderConfig(
        n_samples=n, near=spec.near, far=spec.far, stratified=False,
        raw_resolution=(res, res), output_resolution=(res, res),
    )
    rays = camera_mod.generate_rays(pose, res, res, spec.near, spec.far)
    origins = rays.origins.reshape(-1, 3)
    dirs = rays.directions.reshape(-1, 3)
    depths = sample_along_rays(origins.shape[0], config, dtype=torch.float64).numpy()
    points = origins[:, None, :] + dirs[:, None, :] * depths[:, :, None]
    sigma, color = scene.sample_field(factors, points.reshape(-1, 3))
    rows = composite(
        torch.from_numpy(sigma.reshape(-1, n)),
        torch.from_numpy(color.reshape(-1, n, 3)),
        torch.from_numpy(depths),
        config,
    )
    return rows.rgb.numpy().reshape(res, res, 3)


def synth_generate(spec: SyntheticSceneSpec, n_frames: int, out_dir) -> np.ndarray:
    """Write a complete synthetic dataset; returns the (n_frames, m) factor matrix."""
    if n_frames < 1:
        raise ValidationError("n_frames must be positive")
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    scene = SceneModel(spec)
    factors = scene.factor_walk(n_frames)

    poses = {}
    for t in range(n_frames):
        pose = scene.pose_at(t, n_frames)
        poses[t] = pose
        image = render_ground_truth(scene, factors[t], pose)
        Image.fromarray(rgb_to_uint8(image)).save(out / "frames" / f"{t:06d}.png")
    save_cameras(out / "cameras.jsonl", poses)

    with open(out / "expression.jsonl", "w") as fh:
        for t in range(n_frames):
            coeffs = scene.expression_embed @ factors[t]
            fh.write(json.dumps({"frame_id": t, "coeffs": coeffs.tolist()}) + "\n")
    with open(out / "factors.jsonl", "w") as fh:
        for t in range(n_frames):
            fh.write(json.dumps({"frame_id": t, "factors": factors[t].tolist()}) + "\n")

    # Audio: one 29-channel feature per 20 ms clip, a fixed linear encoding of
    # the factor trajectory resampled at clip centers.
    n_clips = int(round(n_frames / spec.fps / CLIP_DURATION))
    frame_centers = (np.arange(n_frames) + 0.5) / spec.fps
    clip_centers = (np.arange(n_clips) + 0.5) * CLIP_DURATION
    clip_factors = np.stack(
        [np.interp(clip_centers, frame_centers, factors[:, j]) for j in range(spec.m)],
        axis=1,
    )
    audio = (clip_factors @ scene.audio_embed.T).astype(np.float32)
    np.save(out / "audio_features.npy", audio)

    manifest = {
        "format_version": 1,
        "n_frames": n_frames,
        "resolution": [spec.resolution, spec.resolution],
        "fps": spec.fps,
        "modalities": ["image", "expression", "audio"],
        "clip_duration": CLIP_DURATION,
        "near": spec.near,
        "far": spec.far,
        "extent": spec.extent,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return factors


def load_dataset(root) -> tuple[list[FrameSample], dict]:
    """Load frames ordered by id, joining cameras and any optional modalities."""
    root = Path(root)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    frame_files = sorted((root / "frames").glob("*.png"))
    frame_ids = [int(p.stem) for p in frame_files]
    poses = load_cameras(root / "cameras.jsonl")

    missing = [fid for fid in frame_ids if fid not in poses]
    if missing:
        raise ValidationError(f"no camera for frame ids {missing}")
    if len(poses) != len(frame_ids):
        raise ValidationError(
            f"camera/image count mismatch: {len(poses)} cameras for {len(frame_ids)} frames"
        )

    expressions = {}
    expr_path = root / "expression.jsonl"
    if expr_path.exists():
        with open(expr_path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    expressions[int(rec["frame_id"])] = np.asarray(rec["coeffs"], dtype=np.float32)

    fps = float(manifest.get("fps", 25.0))
    timestamps = {fid: fid / fps for fid in frame_ids}
    audio_windows = {}
    audio_path = root / "audio_features.npy"
    if audio_path.exists():
        track = AudioFeatureTrack(
            features=np.load(audio_path),
            clip_duration=float(manifest.get("clip_duration", CLIP_DURATION)),
        )
        wins = window_audio(track, [timestamps[fid] for fid in frame_ids])
        audio_windows = dict(zip(frame_ids, wins))

    samples = []
    for fid, path in zip(frame_ids, frame_files):
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
        samples.append(
            FrameSample(
                image=arr,
                pose=poses[fid],
                frame_id=fid,
                timestamp=timestamps[fid],
                expression=expressions.get(fid),
                audio_window=audio_windows.get(fid),
            )
        )
    samples.sort(key=lambda s: s.frame_id)
    return samples, manifest


def load_factors(root) -> np.ndarray:
    rows = {}
    with open(Path(root) / "factors.jsonl") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rows[int(rec["frame_id"])] = rec["factors"]
    return np.asarray([rows[i] for i in sorted(rows)])


def dataset_hash(root) -> str:
    """Stable content hash of a dataset directory (manifest, cameras, frames, extras)."""
    import hashlib

    root = Path(root)
    digest = hashlib.sha256()
    names = ["manifest.json", "cameras.jsonl", "expression.jsonl", "factors.jsonl",
             "audio_features.npy"]
    paths = [root / n for n in names if (root / n).exists()]
    paths += sorted((root / "frames").glob("*.png"))
    for path in paths:
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()
