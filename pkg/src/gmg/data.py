"""Deterministic sequence generation and the portable sequence file format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (ContractError, DtypeError, HeaderError, TruncationError,
                     ValidationError)

GLYPH_SIZE = 28

# seven-segment layout: a top, b top-right, c bottom-right, d bottom,
# e bottom-left, f top-left, g middle
_SEGMENTS = {
    "0": "abcdef", "1": "bc", "2": "abged", "3": "abgcd", "4": "fgbc",
    "5": "afgcd", "6": "afgedc", "7": "abc", "8": "abcdefg", "9": "abcdfg",
    "A": "abcefg", "C": "adef", "E": "adefg", "F": "aefg", "H": "bcefg",
    "U": "bcdef",
}


def build_glyphs() -> np.ndarray:
    """16 procedurally rasterized digit-like glyphs, float32 (16, 28, 28) in [0,1]."""
    lo, hi, mid, thick = 4, GLYPH_SIZE - 4, GLYPH_SIZE // 2, 4
    bars = {
        "a": (lo, lo + thick, lo, hi),
        "d": (hi - thick, hi, lo, hi),
        "g": (mid - thick // 2, mid + thick // 2, lo, hi),
        "f": (lo, mid, lo, lo + thick),
        "e": (mid, hi, lo, lo + thick),
        "b": (lo, mid, hi - thick, hi),
        "c": (mid, hi, hi - thick, hi),
    }
    glyphs = np.zeros((len(_SEGMENTS), GLYPH_SIZE, GLYPH_SIZE), dtype=np.float32)
    for idx, segs in enumerate(_SEGMENTS.values()):
        canvas = np.zeros((GLYPH_SIZE, GLYPH_SIZE), dtype=np.float32)
        for s in segs:
            r0, r1, c0, c1 = bars[s]
            canvas[r0:r1, c0:c1] = 1.0
        # one box-blur pass softens edges without moving the support
        padded = np.pad(canvas, 1)
        soft = sum(padded[dr:dr + GLYPH_SIZE, dc:dc + GLYPH_SIZE]
                   for dr in range(3) for dc in range(3)) / 9.0
        glyphs[idx] = soft / soft.max()
    return glyphs


@dataclass
class SequenceRecord:
    """A batch of frame sequences plus generation metadata."""

    tensor: np.ndarray          # (B, T, C, H, W) float32 in [0, 1]
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        t = self.tensor
        if t.ndim != 5:
            raise ValidationError(f"expected 5-d tensor, got shape {t.shape}")
        if t.dtype != np.float32:
            raise ValidationError(f"expected float32 tensor, got {t.dtype}")
        lo, hi = float(t.min(initial=0.0)), float(t.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"pixel values outside [0,1]: min {lo}, max {hi}")


def bounce_path(pos0: int, vel: int, steps: int, limit: int) -> list[int]:
    """1-d integer positions reflecting off [0, limit]."""
    pos, v, out = pos0, vel, []
    for _ in range(steps):
        out.append(pos)
        pos += v
        if pos < 0:
            pos, v = -pos, -v
        elif pos > limit:
            pos, v = 2 * limit - pos, -v
    return out


def render_bouncing(glyphs: np.ndarray, starts, velocities, n_frames: int,
                    size: int) -> np.ndarray:
    """Composite bouncing glyphs by per-pixel max; (T, 1, size, size) float32."""
    limit = size - GLYPH_SIZE
    frames = np.zeros((n_frames, 1, size, size), dtype=np.float32)
    for glyph, (r0, c0), (vr, vc) in zip(glyphs, starts, velocities):
        rows = bounce_path(r0, vr, n_frames, limit)
        cols = bounce_path(c0, vc, n_frames, limit)
        for t, (r, c) in enumerate(zip(rows, cols)):
            region = frames[t, 0, r:r + GLYPH_SIZE, c:c + GLYPH_SIZE]
            np.maximum(region, glyph, out=region)
    return frames


def gen_moving_mnist(seed: int, n_sequences: int, digits_source=None, *,
                     size: int = 64, t_in: int = 10, t_out: int = 10,
                     n_digits: int = 2):
    """Yield bouncing-glyph sequences, one record per sequence.

    Two glyphs start at random integer positions with integer per-axis
    velocities in [-3, 3] \\ {0}, reflect off the borders, and are composited
    by per-pixel max. Bit-identical for a given seed.
    """
    if n_sequences < 1:
        raise ContractError(f"n_sequences must be >= 1, got {n_sequences}")
    if size < GLYPH_SIZE:
        raise ContractError(f"frame size must be >= {GLYPH_SIZE}")
    glyphs = build_glyphs() if digits_source is None else np.asarray(digits_source, np.float32)
    rng = np.random.default_rng(seed)
    n_frames = t_in + t_out
    limit = size - GLYPH_SIZE
    for i in range(n_sequences):
        idx = rng.integers(0, len(glyphs), size=n_digits)
        starts = rng.integers(0, limit + 1, size=(n_digits, 2))
        speeds = rng.integers(1, 4, size=(n_digits, 2))
        signs = rng.choice([-1, 1], size=(n_digits, 2))
        vels = speeds * signs
        frames = render_bouncing(glyphs[idx], starts.tolist(), vels.tolist(),
                                 n_frames, size)
        yield SequenceRecord(
            frames[None],
            metadata={
                "source": "moving_mnist", "seed": int(seed), "index": i,
                "frame_interval": "unit-step", "t_in": t_in, "t_out": t_out,
                "glyphs": idx.tolist(), "starts": starts.tolist(),
                "velocities": vels.tolist(),
            })


def render_blobs(blobs, n_frames: int, size: int) -> np.ndarray:
    """Sum of drifting anisotropic Gaussians, clipped to [0,1]; (T,1,H,W)."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    frames = np.zeros((n_frames, 1, size, size), dtype=np.float64)
    for blob in blobs:
        cy, cx = blob["center"]
        vy, vx = blob["velocity"]
        sy, sx = blob["sigma"]
        theta = blob["theta"]
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        for t in range(n_frames):
            amp = blob["amplitude"] * np.exp(-blob["decay"] * t)
            gy, gx = sy * (1.0 + blob["growth"] * t), sx * (1.0 + blob["growth"] * t)
            dy, dx = ys - (cy + vy * t), xs - (cx + vx * t)
            ry = cos_t * dy - sin_t * dx
            rx = sin_t * dy + cos_t * dx
            frames[t, 0] += amp * np.exp(-0.5 * ((ry / gy) ** 2 + (rx / gx) ** 2))
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def gen_blob_sequences(seed: int, n_sequences: int, *, size: int = 32,
                       t_in: int = 10, t_out: int = 10, n_blobs: int = 2,
                       velocity_range=(-1.5, 1.5), growth_range=(-0.02, 0.05),
                       decay_range=(0.0, 0.08), amplitude_range=(0.6, 1.0),
                       sigma_range=(2.0, 5.0), scale: float | None = None):
    """Yield non-rigid blob sequences: translation, growth/shrink, amplitude decay.

    All blob parameters are logged in the record metadata so tests can replay
    frames analytically. Bit-identical for a given seed.
    """
    if n_sequences < 1:
        raise ContractError(f"n_sequences must be >= 1, got {n_sequences}")
    if size < 4:
        raise ContractError(f"frame size must be >= 4, got {size}")
    rng = np.random.default_rng(seed)
    n_frames = t_in + t_out
    margin = min(int(max(sigma_range)) + 2, size // 2 - 1)
    for i in range(n_sequences):
        blobs = []
        for _ in range(n_blobs):
            blobs.append({
                "center": rng.integers(margin, size - margin, size=2).tolist(),
                "velocity": rng.uniform(*velocity_range, size=2).round(4).tolist(),
                "sigma": rng.uniform(*sigma_range, size=2).round(4).tolist(),
                "theta": round(float(rng.uniform(0.0, np.pi)), 4),
                "growth": round(float(rng.uniform(*growth_range)), 4),
                "decay": round(float(rng.uniform(*decay_range)), 4),
                "amplitude": round(float(rng.uniform(*amplitude_range)), 4),
            })
        frames = render_blobs(blobs, n_frames, size)
        meta = {"source": "blobs", "seed": int(seed), "index": i,
                "frame_interval": "unit-step", "t_in": t_in, "t_out": t_out,
                "blobs": blobs}
        if scale is not None:
            meta["scale"] = float(scale)
        yield SequenceRecord(frames[None], metadata=meta)


# ---------------------------------------------------------------------------
# Sequence file format: per record
#   magic "GMGS" | u8 version=1 | u32 ndims=5 | 5*u32 dims (B,T,C,H,W)
#   | u8 dtype code (1 = float32) | raw little-endian payload
#   | u32 metadata byte length | UTF-8 JSON metadata
# ---------------------------------------------------------------------------

MAGIC = b"GMGS"
FORMAT_VERSION = 1
DTYPE_F32 = 1


def save_sequences(records, path) -> int:
    """Write records to ``path``; returns the number of records written."""
    n = 0
    with open(path, "wb") as fh:
        for rec in records:
            rec.validate()
            dims = rec.tensor.shape
            fh.write(MAGIC)
            fh.write(struct.pack("<BI", FORMAT_VERSION, len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(struct.pack("<B", DTYPE_F32))
            fh.write(np.ascontiguousarray(rec.tensor, dtype="<f4").tobytes())
            meta = json.dumps(rec.metadata, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            n += 1
    return n


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncationError(f"file ends inside {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def load_sequences(path) -> list[SequenceRecord]:
    """Read every record in ``path``; validates the [0,1] pixel range."""
    records = []
    with open(path, "rb") as fh:
        while True:
            magic = fh.read(4)
            if not magic:
                break
            if magic != MAGIC:
                raise HeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
            version, ndims = struct.unpack("<BI", _read_exact(fh, 5, "header"))
            if version != FORMAT_VERSION:
                raise HeaderError(f"unsupported format version {version}")
            if ndims != 5:
                raise HeaderError(f"expected 5 dims (B,T,C,H,W), header says {ndims}")
            dims = struct.unpack("<5I", _read_exact(fh, 20, "dims"))
            (dtype_code,) = struct.unpack("<B", _read_exact(fh, 1, "dtype"))
            if dtype_code != DTYPE_F32:
                raise DtypeError(f"unsupported dtype code {dtype_code}")
            count = int(np.prod(dims))
            payload = _read_exact(fh, count * 4, "payload")
            tensor = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
            (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
            meta_raw = _read_exact(fh, meta_len, "metadata")
            try:
                metadata = json.loads(meta_raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise HeaderError(f"metadata is not valid JSON: {e}") from e
            rec = SequenceRecord(tensor, metadata)
            rec.validate()
            records.append(rec)
    return records


def stack_records(records) -> tuple[np.ndarray, dict]:
    """Concatenate record batches; returns (tensor, shared metadata)."""
    if not records:
        raise ValidationError("no sequence records to stack")
    shapes = {r.tensor.shape[1:] for r in records}
    if len(shapes) > 1:
        raise ValidationError(f"records have mismatched shapes: {sorted(shapes)}")
    tensor = np.concatenate([r.tensor for r in records], axis=0)
    return tensor, dict(records[0].metadata)
