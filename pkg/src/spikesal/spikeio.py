"""Spike stream container, binary codec, and intensity representations.

A spike stream is a dense (frames, height, width) array of {0,1} produced
by an integrate-and-fire sensor sampling at ``rate_hz``. On disk the
stream is bit-packed frame-major then row-major, LSB-first within each
byte, each frame padded up to a whole byte count.

File header (little-endian): magic ``SPKS``, u16 version, u32 width,
u32 height, u64 frames, u32 rate_hz. 26 bytes total.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SPKS"
VERSION = 1
HEADER = struct.Struct("<4sHIIQI")

# refuse to materialize streams past this many bits (64 GiB dense)
MAX_TOTAL_BITS = 1 << 39

DEFAULT_FULL_SCALE = 255.0


class SpikeIOError(Exception):
    pass


class MalformedHeaderError(SpikeIOError):
    pass


class TruncatedPayloadError(SpikeIOError):
    pass


class DimensionOverflowError(SpikeIOError):
    pass


@dataclass
class SpikeStream:
    """Binary spike frames, shape (frames, height, width), values {0,1}."""

    bits: np.ndarray
    rate_hz: int = 20000

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if self.bits.ndim != 3:
            raise ValueError("spike stream must be (frames, height, width)")
        if self.bits.dtype != np.uint8:
            self.bits = self.bits.astype(np.uint8)

    @property
    def frames(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def width(self) -> int:
        return self.bits.shape[2]

    def slice(self, start: int, stop: int) -> "SpikeStream":
        if not (0 <= start < stop <= self.frames):
            raise ValueError(f"bad frame range [{start}, {stop})")
        return SpikeStream(self.bits[start:stop], self.rate_hz)


@dataclass
class Mask:
    """Binary ground-truth occupancy at one stream frame."""

    values: np.ndarray
    timestamp_frame: int

    def __post_init__(self):
        self.values = np.asarray(self.values).astype(np.uint8)
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("mask values must be 0/1")


def write_stream(path, stream: SpikeStream):
    f, h, w = stream.frames, stream.height, stream.width
    if w >= 1 << 32 or h >= 1 << 32 or f >= 1 << 64 or f * h * w > MAX_TOTAL_BITS:
        raise DimensionOverflowError(f"stream dims {f}x{h}x{w} overflow the format")
    if not np.isin(stream.bits, (0, 1)).all():
        raise ValueError("stream bits must be 0/1")
    flat = stream.bits.reshape(f, h * w)
    packed = np.packbits(flat, axis=1, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, w, h, f, stream.rate_hz))
        fh.write(packed.tobytes())


def read_stream(path) -> SpikeStream:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise MalformedHeaderError(f"{path}: too short for a header")
    magic, version, w, h, f, rate = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if w == 0 or h == 0 or f == 0:
        raise MalformedHeaderError(f"{path}: zero dimension in header")
    if f * h * w > MAX_TOTAL_BITS:
        raise DimensionOverflowError(f"{path}: {f}x{h}x{w} exceeds the size cap")
    frame_bytes = (h * w + 7) // 8
    expected = HEADER.size + f * frame_bytes
    if len(raw) < expected:
        raise TruncatedPayloadError(f"{path}: payload ends early "
                                    f"({len(raw)} of {expected} bytes)")
    if len(raw) > expected:
        raise MalformedHeaderError(f"{path}: trailing bytes after payload")
    packed = np.frombuffer(raw, dtype=np.uint8, offset=HEADER.size)
    packed = packed.reshape(f, frame_bytes)
    bits = np.unpackbits(packed, axis=1, count=h * w, bitorder="little")
    return SpikeStream(bits.reshape(f, h, w), rate_hz=rate)


# -- light intensity statistics ------------------------------------------------


def lis(frame: np.ndarray) -> float:
    """Light intensity scale of one frame: set bits / pixels, in [0, 1]."""
    frame = np.asarray(frame)
    return float(np.count_nonzero(frame)) / frame.size


def mean_lis(stream: SpikeStream) -> float:
    return float(stream.bits.mean())


# -- representations -----------------------------------------------------------


@dataclass
class SpikeRepr:
    """Real-valued image decoded from spike timing, values in [0, full_scale]."""

    values: np.ndarray
    full_scale: float = DEFAULT_FULL_SCALE


def isi_repr(stream: SpikeStream, at_frame: int,
             full_scale: float = DEFAULT_FULL_SCALE) -> SpikeRepr:
    """Inter-spike-interval intensity at one frame.

    Per pixel the interval is (next spike strictly after ``at_frame``)
    minus (nearest spike at or before ``at_frame``); the value is
    full_scale / interval. A pixel firing every frame therefore reads
    full_scale exactly. Pixels without such a bracketing pair inside the
    stream read 0.
    """
    if not 0 <= at_frame < stream.frames:
        raise ValueError(f"at_frame {at_frame} outside [0, {stream.frames})")
    bits = stream.bits
    before = bits[:at_frame + 1][::-1]
    has_prev = before.any(axis=0)
    prev = at_frame - before.argmax(axis=0)
    after = bits[at_frame + 1:]
    if after.shape[0] == 0:
        return SpikeRepr(np.zeros(bits.shape[1:], dtype=np.float64), full_scale)
    has_next = after.any(axis=0)
    nxt = at_frame + 1 + after.argmax(axis=0)
    both = has_prev & has_next
    dt = np.where(both, nxt - prev, 1).astype(np.float64)
    vals = np.where(both, full_scale / dt, 0.0)
    return SpikeRepr(vals, full_scale)


def spike_count_repr(stream: SpikeStream, window: int,
                     full_scale: float = DEFAULT_FULL_SCALE) -> SpikeRepr:
    """Firing-count intensity over the trailing ``window`` frames, scaled
    by full_scale / window. Alternative encoding, kept for ablation."""
    if window <= 0 or window > stream.frames:
        raise ValueError(f"window {window} outside [1, {stream.frames}]")
    counts = stream.bits[stream.frames - window:].sum(axis=0, dtype=np.float64)
    return SpikeRepr(counts * (full_scale / window), full_scale)


# -- PGM masks -----------------------------------------------------------------


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("pgm wants a 2-d uint8 array")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":  # comment line
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos, count=h * w)
    if data.size < h * w:
        raise ValueError(f"{path}: truncated pixel data")
    return data.reshape(h, w).copy()


def write_mask(path, mask: Mask):
    write_pgm(path, mask.values * np.uint8(255))


def read_mask(path, timestamp_frame: int) -> Mask:
    img = read_pgm(path)
    return Mask((img >= 128).astype(np.uint8), timestamp_frame)


# -- dataset manifest ----------------------------------------------------------


@dataclass
class MaskRef:
    path: str
    frame: int


@dataclass
class StreamEntry:
    path: str
    split: str            # "train" | "val"
    light: str            # "high" | "low"
    masks: list = field(default_factory=list)


@dataclass
class DatasetManifest:
    streams: list
    root: Path = Path(".")

    def entries(self, split: str | None = None):
        return [s for s in self.streams if split is None or s.split == split]


def save_manifest(path, manifest: DatasetManifest):
    doc = {"streams": [
        {"path": s.path, "split": s.split, "light": s.light,
         "masks": [{"path": m.path, "frame": m.frame} for m in s.masks]}
        for s in manifest.streams]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    root = path.parent
    streams = []
    for s in doc["streams"]:
        if s["split"] not in ("train", "val"):
            raise ValueError(f"unknown split {s['split']!r}")
        if s["light"] not in ("high", "low"):
            raise ValueError(f"unknown light tag {s['light']!r}")
        if not (root / s["path"]).exists():
            raise FileNotFoundError(f"manifest references missing {s['path']}")
        masks = []
        last = -1
        for m in s["masks"]:
            if not (root / m["path"]).exists():
                raise FileNotFoundError(f"manifest references missing {m['path']}")
            if m["frame"] <= last:
                raise ValueError(f"mask frames not strictly increasing in {s['path']}")
            last = m["frame"]
            masks.append(MaskRef(m["path"], m["frame"]))
        streams.append(StreamEntry(s["path"], s["split"], s["light"], masks))
    return DatasetManifest(streams, root)
