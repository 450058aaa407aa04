"""Utterance-level data pipeline: manifests, normalization, windowing,
batching, and a synthetic corpus generator for desk-scale runs.

A manifest is UTF-8 CSV with header ``id,frames_dir,valence,arousal``; each
``frames_dir`` holds either a raw-tensor container ``frames.bin`` (one
[T,H,W,C] entry named "frames", values in 0..255) or zero-padded
``frame_000001.png``-style images.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint

RAW_CONTAINER = "frames.bin"

# synthetic-corpus encoding constants: valence -> mean brightness,
# arousal -> amplitude of a zero-mean sinusoidal pattern
SYNTH_BRIGHTNESS_SPAN = 0.6      # base = 127.5 * (1 + SPAN * valence)
SYNTH_AMP_MIN = 5.0
SYNTH_AMP_MAX = 50.0
SYNTH_FREQ = (3, 2)              # integer cycles across each axis
SYNTH_PATTERN_ABS_MEAN = (2.0 / math.pi) ** 2


class ManifestError(ValueError):
    """Raised on malformed or inconsistent manifest data."""


@dataclass
class Utterance:
    id: str
    frames_dir: Path
    valence: float
    arousal: float
    n_frames: int = 0
    video: str = ""

    @property
    def label(self):
        return np.array([self.valence, self.arousal])


@dataclass
class Sequence:
    """A fixed-length window into one utterance."""
    utterance_id: str
    frame_idx: np.ndarray        # [T] indices into the utterance's frames
    pad_mask: np.ndarray         # [T] bool, True on repeated-pad positions
    label: np.ndarray            # (valence, arousal)
    start: int


@dataclass
class SequenceBatch:
    frames: np.ndarray           # [B,T,H,W,C], values in [-1,1]
    labels: np.ndarray           # [B,2]
    source: list                 # utterance id per sequence
    pad_mask: np.ndarray         # [B,T] bool
    sequences: list = field(default_factory=list)


def bilinear_resize(img, side):
    """Resize [H,W,C] to [side,side,C] with bilinear interpolation."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h == side and w == side:
        return img.copy()

    def coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo)

    y0, y1, fy = coords(h, side)
    x0, x1, fx = coords(w, side)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def normalize_frame(pixels, side=None):
    """Map integer intensities in [0,255] to [-1,1]; optionally resize first."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError(f"pixel values outside [0,255]: "
                         f"min={arr.min()}, max={arr.max()}")
    if side is not None and arr.shape[:2] != (side, side):
        arr = bilinear_resize(arr, side)
    return arr / 127.5 - 1.0


def denormalize_frame(values):
    """Inverse of normalize_frame up to quantization."""
    return np.clip(np.rint((np.asarray(values) + 1.0) * 127.5), 0, 255)


def _frame_files(frames_dir):
    return sorted(p for p in frames_dir.iterdir()
                  if p.name.startswith("frame_") and p.suffix == ".png")


def _count_frames(frames_dir):
    raw = frames_dir / RAW_CONTAINER
    if raw.exists():
        return checkpoint.load(raw)["frames"].shape[0]
    files = _frame_files(frames_dir)
    if not files:
        raise ManifestError(f"no frames found in {frames_dir}")
    return len(files)


def load_manifest(path):
    """Parse a manifest CSV into Utterances, validating every row."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    utterances = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["id", "frames_dir", "valence", "arousal"]:
            raise ManifestError(f"{path}: bad header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            uid, rel_dir, v_text, a_text = row
            if uid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {uid!r}")
            seen.add(uid)
            try:
                valence, arousal = float(v_text), float(a_text)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: non-numeric label "
                                    f"({v_text!r}, {a_text!r})")
            frames_dir = (path.parent / rel_dir).resolve()
            if not frames_dir.is_dir():
                raise ManifestError(f"{path}:{lineno}: frames_dir missing: {frames_dir}")
            try:
                n = _count_frames(frames_dir)
            except (ManifestError, checkpoint.CheckpointError) as e:
                raise ManifestError(f"{path}:{lineno}: {e}")
            utterances.append(Utterance(uid, frames_dir, valence, arousal, n))
    return utterances


def load_frames(utterance, side):
    """Load, resize and normalize one utterance's frames to [T,side,side,C]."""
    raw = utterance.frames_dir / RAW_CONTAINER
    if raw.exists():
        stack = checkpoint.load(raw)["frames"]
    else:
        from PIL import Image
        frames = []
        for p in _frame_files(utterance.frames_dir):
            frames.append(np.asarray(Image.open(p).convert("RGB"), dtype=np.float64))
        stack = np.stack(frames)
    return np.stack([normalize_frame(fr, side) for fr in stack])


class FrameCache:
    """Memoizes normalized frame stacks per utterance id."""

    def __init__(self, utterances, side):
        self.side = side
        self._by_id = {u.id: u for u in utterances}
        self._cache = {}

    def get(self, uid):
        if uid not in self._cache:
            self._cache[uid] = load_frames(self._by_id[uid], self.side)
        return self._cache[uid]


def broadcast_labels(utterance):
    """Every frame carries the utterance's (valence, arousal) pair."""
    return [(utterance.valence, utterance.arousal)] * utterance.n_frames


def make_sequences(utterance, seq_len):
    """Split an utterance into length-`seq_len` windows.

    Consecutive non-overlapping windows; when a tail remains and the
    utterance has at least `seq_len` frames, the final window is the LAST
    `seq_len` frames (overlapping its predecessor). Shorter utterances yield
    one window right-padded by repeating the final frame, with pad_mask set.
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    n = utterance.n_frames
    label = utterance.label
    seqs = []
    if n < seq_len:
        idx = np.concatenate([np.arange(n), np.full(seq_len - n, n - 1)])
        mask = np.arange(seq_len) >= n
        return [Sequence(utterance.id, idx, mask, label, 0)]
    starts = list(range(0, n - seq_len + 1, seq_len))
    if starts[-1] + seq_len < n:
        starts.append(n - seq_len)
    for s in starts:
        idx = np.arange(s, s + seq_len)
        seqs.append(Sequence(utterance.id, idx, np.zeros(seq_len, bool), label, s))
    return seqs


def make_batches(sequences, batch_size, seed, mode="train"):
    """Seeded shuffle, then fixed-size groups; the trailing remainder is
    dropped in train mode and kept in eval mode."""
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    seqs = list(sequences)
    if mode == "train" and len(seqs) < batch_size:
        raise ValueError(f"training needs >= {batch_size} sequences, have {len(seqs)}")
    order = np.random.default_rng(seed).permutation(len(seqs))
    seqs = [seqs[i] for i in order]
    batches = []
    for i in range(0, len(seqs), batch_size):
        chunk = seqs[i:i + batch_size]
        if len(chunk) < batch_size and mode == "train":
            break
        batches.append(chunk)
    return batches


def assemble_batch(seqs, cache):
    """Materialize a list of Sequences into a SequenceBatch of frame data."""
    frames = np.stack([cache.get(s.utterance_id)[s.frame_idx] for s in seqs])
    labels = np.stack([s.label for s in seqs])
    pad = np.stack([s.pad_mask for s in seqs])
    return SequenceBatch(frames, labels, [s.utterance_id for s in seqs], pad,
                         list(seqs))


# -- synthetic corpus ----------------------------------------------------------


def synth_frame_stack(valence, arousal, n_frames, side, rng, noise_std=0.0):
    """Encode a label pair into frames: mean brightness tracks valence and
    the amplitude of a zero-mean sinusoid tracks arousal."""
    base = 127.5 * (1.0 + SYNTH_BRIGHTNESS_SPAN * valence)
    amp = SYNTH_AMP_MIN + (SYNTH_AMP_MAX - SYNTH_AMP_MIN) * arousal
    fx, fy = SYNTH_FREQ
    xs = np.arange(side) / side
    grid_y = np.sin(2 * math.pi * fy * xs)[:, None]
    frames = np.zeros((n_frames, side, side, 3))
    for t in range(n_frames):
        phase = 2 * math.pi * t / max(n_frames, 1)
        pattern = np.sin(2 * math.pi * fx * xs + phase)[None, :] * grid_y
        img = base + amp * pattern[..., None]
        if noise_std > 0:
            img = img + rng.normal(0.0, noise_std, img.shape)
        frames[t] = img
    return np.clip(np.rint(frames), 0, 255)


def decode_frame_stack(frames):
    """Invert synth_frame_stack's encoding (up to quantization)."""
    frames = np.asarray(frames, dtype=np.float64)
    mean = frames.mean()
    valence = (mean / 127.5 - 1.0) / SYNTH_BRIGHTNESS_SPAN
    amp = np.abs(frames - frames.mean(axis=(1, 2, 3), keepdims=True)).mean() \
        / SYNTH_PATTERN_ABS_MEAN
    arousal = (amp - SYNTH_AMP_MIN) / (SYNTH_AMP_MAX - SYNTH_AMP_MIN)
    return valence, arousal


def synth_corpus(out_dir, n_utterances, frames_range=(20, 60), side=32,
                 seed=0, noise_std=0.0, fmt="bin",
                 valence_range=(-1.0, 1.0), arousal_range=(0.0, 1.0)):
    """Generate a label-recoverable corpus on disk; returns the utterances.

    Deterministic under `seed`: regenerating produces byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    utterances = []
    for i in range(n_utterances):
        uid = f"utt_{i:03d}"
        v = round(float(rng.uniform(*valence_range)), 6)
        a = round(float(rng.uniform(*arousal_range)), 6)
        n = int(rng.integers(frames_range[0], frames_range[1] + 1))
        frames = synth_frame_stack(v, a, n, side, rng, noise_std)
        fdir = out_dir / uid
        fdir.mkdir(exist_ok=True)
        if fmt == "bin":
            checkpoint.save(fdir / RAW_CONTAINER, {"frames": frames})
        elif fmt == "png":
            from PIL import Image
            for t in range(n):
                Image.fromarray(frames[t].astype(np.uint8)).save(
                    fdir / f"frame_{t + 1:06d}.png")
        else:
            raise ValueError(f"unknown format {fmt!r}")
        rows.append((uid, uid, v, a))
        utterances.append(Utterance(uid, fdir, v, a, n))
    with open(out_dir / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "frames_dir", "valence", "arousal"])
        for uid, rel, v, a in rows:
            w.writerow([uid, rel, f"{v:.6f}", f"{a:.6f}"])
    return utterances


def worker_count():
    """Parallelism cap from AFFECTKIT_THREADS (default: machine cores)."""
    value = os.environ.get("AFFECTKIT_THREADS", "")
    try:
        n = int(value)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)
