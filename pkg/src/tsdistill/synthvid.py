"""Synthetic action clips with a few informative frames.

Each clip has a static, class-independent background plus Gaussian noise.
A class-specific coloured shape moves across ``signal_frames`` contiguous
frames at a random temporal position; all other frames carry no label
information.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from . import container
from .errors import ArgumentError, FormatError

# 5x5 glyphs keyed by label % 4, drawn at 3x scale (15x15 pixels)
_GLYPHS = {
    "square": ["#####", "#####", "#####", "#####", "#####"],
    "ring": ["#####", "#...#", "#...#", "#...#", "#####"],
    "plus": ["..#..", "..#..", "#####", "..#..", "..#.."],
    "cross": ["#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
}
_SHAPES = {k: np.kron(np.array([[c == "#" for c in row] for row in v]), np.ones((3, 3), bool))
           for k, v in _GLYPHS.items()}
PATTERN_SIDE = 15
SHAPE_NAMES = tuple(_SHAPES)

PALETTE = np.array([
    [1, 0, 0], [0, 0, 1], [0, 1, 0], [1, 1, 0], [1, 0, 1], [0, 1, 1],
], dtype=np.float64)

# compass directions, (dy, dx)
DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
SPEED = 2


@dataclass(frozen=True)
class SynthSpec:
    T: int = 16
    H: int = 32
    W: int = 32
    C: int = 3
    K: int = 8
    signal_frames: int = 2
    noise_level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.T, self.H, self.W) < 1:
            raise ArgumentError(f"clip extents must be positive: {self}")
        if self.C != 3:
            raise ArgumentError("patterns are coloured: C must be 3")
        if not 2 <= self.K <= len(SHAPE_NAMES) * len(PALETTE):
            raise ArgumentError(f"K must be in [2, {len(SHAPE_NAMES) * len(PALETTE)}], got {self.K}")
        if not 1 <= self.signal_frames <= self.T:
            raise ArgumentError(f"signal_frames must be in [1, T], got {self.signal_frames}")
        if self.noise_level < 0:
            raise ArgumentError("noise_level must be >= 0")
        if min(self.H, self.W) < PATTERN_SIDE:
            raise ArgumentError(f"frames must be at least {PATTERN_SIDE}x{PATTERN_SIDE}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LabeledClip:
    clip: np.ndarray
    label: int


def class_pattern(label: int):
    """``(mask, colour, (dy, dx))`` drawn for ``label``."""
    return (_SHAPES[SHAPE_NAMES[label % 4]], PALETTE[label // 4],
            DIRECTIONS[label % len(DIRECTIONS)])


def _background(rng, spec):
    coarse = rng.uniform(0.15, 0.45, size=(4, 4, spec.C))
    rows = np.arange(spec.H) * 4 // spec.H
    cols = np.arange(spec.W) * 4 // spec.W
    return coarse[rows][:, cols]


def generate_clip(spec: SynthSpec, label: int, seed: int) -> LabeledClip:
    """Deterministic in ``(spec, label, seed)``.

    Every random draw (background, placement, noise) depends only on
    ``(spec.seed, seed)``, so two labels with the same seed share everything
    except the drawn pattern.
    """
    if not 0 <= label < spec.K:
        raise ArgumentError(f"label {label} outside [0, {spec.K})")
    rng = np.random.default_rng([spec.seed, seed])
    bg = _background(rng, spec)
    t0 = int(rng.integers(0, spec.T - spec.signal_frames + 1))
    y0, x0 = int(rng.integers(0, spec.H)), int(rng.integers(0, spec.W))
    noise = rng.normal(0.0, 1.0, size=(spec.T, spec.H, spec.W, spec.C))

    clip = np.broadcast_to(bg, (spec.T, spec.H, spec.W, spec.C)).copy()
    mask, colour, (dy, dx) = class_pattern(label)
    my, mx = np.nonzero(mask)
    for m in range(spec.signal_frames):
        ys = (y0 + dy * SPEED * m + my) % spec.H
        xs = (x0 + dx * SPEED * m + mx) % spec.W
        clip[t0 + m, ys, xs] = colour
    if spec.noise_level > 0:
        clip += spec.noise_level * noise
    np.clip(clip, 0.0, 1.0, out=clip)
    return LabeledClip(clip.astype(np.float32), int(label))


def signal_start(spec: SynthSpec, seed: int) -> int:
    """First informative frame of the clip generated with ``seed``."""
    rng = np.random.default_rng([spec.seed, seed])
    _background(rng, spec)
    return int(rng.integers(0, spec.T - spec.signal_frames + 1))


def dataset_seeds(n: int, split: str, base: int = 0):
    """Per-clip seeds; splits never share a seed."""
    offset = {"train": 0, "test": 1 << 30, "val": 1 << 29}[split]
    return [base + offset + i for i in range(n)]


def balanced_labels(n: int, K: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7])
    return rng.permutation(np.arange(n) % K)


def generate_dataset(spec: SynthSpec, n: int, split: str = "train"):
    """``(clips, labels)`` arrays for ``n`` clips with balanced classes."""
    labels = balanced_labels(n, spec.K, spec.seed + (0 if split == "train" else 1))
    clips = np.empty((n, spec.T, spec.H, spec.W, spec.C), dtype=np.float32)
    for i, seed in enumerate(dataset_seeds(n, split)):
        clips[i] = generate_clip(spec, int(labels[i]), seed).clip
    return clips, labels.astype(np.int64)


def write_clip(path, lc: LabeledClip):
    container.write_clip_file(path, lc.clip, lc.label)


def read_clip(path) -> LabeledClip:
    clip, label = container.read_clip_file(path)
    return LabeledClip(clip, label)


MANIFEST = "manifest.txt"


def write_dataset(directory, clips, labels):
    os.makedirs(os.path.join(directory, "clips"), exist_ok=True)
    lines = []
    for i, (clip, label) in enumerate(zip(clips, labels)):
        rel = f"clips/{i:06d}.tsdc"
        write_clip(os.path.join(directory, rel), LabeledClip(clip, int(label)))
        lines.append(f"{rel} {int(label)}\n")
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        fh.writelines(lines)


def read_dataset(directory):
    """Load every clip listed in the manifest; returns ``(clips, labels)``."""
    path = os.path.join(directory, MANIFEST)
    clips, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'path label'")
            lc = read_clip(os.path.join(directory, parts[0]))
            if lc.label != int(parts[1]):
                raise FormatError(f"{path}:{lineno}: manifest label {parts[1]} != file label {lc.label}")
            clips.append(lc.clip)
            labels.append(lc.label)
    if not clips:
        raise FormatError(f"{path}: empty manifest")
    return np.stack(clips), np.asarray(labels, dtype=np.int64)
