"""Encoded video assets: bitrate ladders, chunk-size tables, and quality mapping."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Ladders used throughout the experiments, in kbps.
SD_LADDER_KBPS = (350, 600, 1000, 2000, 3000)
UHD_LADDER_KBPS = (200, 400, 800, 1200, 2200, 3300, 5000, 6500, 8600, 10000, 12000, 16000, 20000)

# Common chunk durations, in seconds.
CHUNK_DURATION_SHORT_S = 2.133
CHUNK_DURATION_LONG_S = 2.667

BYTES_PER_KBIT_SECOND = 125  # 1 kbps sustained for 1 s = 1000/8 bytes


class ManifestError(ValueError):
    """Raised when a manifest file or its contents violate the format contract."""


class QualityMap(Enum):
    LINEAR = "linear"
    LOGARITHMIC = "logarithmic"


@dataclass(frozen=True)
class QualityMode:
    """How bitrates map to perceived quality units.

    linear: quality equals the bitrate in kbps.
    logarithmic: quality is ln(bitrate / r_min), diminishing returns at the top.
    """

    mode: QualityMap = QualityMap.LINEAR
    r_min_kbps: float | None = None

    def __post_init__(self):
        if self.mode is QualityMap.LOGARITHMIC:
            if self.r_min_kbps is None or self.r_min_kbps <= 0:
                raise ValueError("logarithmic quality requires r_min_kbps > 0")


@dataclass(frozen=True)
class BitrateLadder:
    levels_kbps: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels_kbps)
        if not levels:
            raise ValueError("bitrate ladder must be nonempty")
        if any(v <= 0 for v in levels):
            raise ValueError("bitrate ladder levels must be > 0")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("bitrate ladder must be strictly increasing")
        object.__setattr__(self, "levels_kbps", levels)

    def __len__(self) -> int:
        return len(self.levels_kbps)

    @property
    def min_kbps(self) -> float:
        return self.levels_kbps[0]

    @property
    def max_kbps(self) -> float:
        return self.levels_kbps[-1]

    def index_of(self, bitrate_kbps: float) -> int:
        for i, v in enumerate(self.levels_kbps):
            if v == bitrate_kbps:
                return i
        raise ValueError(f"bitrate {bitrate_kbps} kbps is not a ladder level {self.levels_kbps}")

    def quality_mode(self, mode: QualityMap = QualityMap.LINEAR) -> QualityMode:
        if mode is QualityMap.LOGARITHMIC:
            return QualityMode(mode, r_min_kbps=self.min_kbps)
        return QualityMode(mode)


def quality(bitrate_kbps: float, mode: QualityMode) -> float:
    """Quality units for one chunk encoded at `bitrate_kbps` under `mode`.

    Non-decreasing in bitrate for both modes.
    """
    if bitrate_kbps <= 0:
        raise ValueError("bitrate must be > 0")
    if mode.mode is QualityMap.LINEAR:
        return float(bitrate_kbps)
    return math.log(bitrate_kbps / mode.r_min_kbps)


@dataclass(frozen=True)
class VideoManifest:
    """Per-chunk, per-level sizes for one encoded video.

    sizes_bytes[k][j] is the size in bytes of chunk k at ladder level j;
    rows are chunks, columns follow the ladder order.
    """

    chunk_duration_s: float
    ladder: BitrateLadder
    sizes_bytes: tuple[tuple[int, ...], ...] = field(repr=False)

    def __post_init__(self):
        if self.chunk_duration_s <= 0:
            raise ManifestError("chunk_duration_s must be > 0")
        n_levels = len(self.ladder)
        rows = tuple(tuple(int(v) for v in row) for row in self.sizes_bytes)
        if not rows:
            raise ManifestError("manifest has no chunks")
        for k, row in enumerate(rows):
            if len(row) != n_levels:
                raise ManifestError(f"chunk {k}: expected {n_levels} sizes, got {len(row)}")
            for j, size in enumerate(row):
                if size <= 0:
                    raise ManifestError(f"chunk {k} level {j}: size must be > 0, got {size}")
            for j in range(1, n_levels):
                if row[j] < row[j - 1]:
                    raise ManifestError(
                        f"chunk {k}: size decreases from level {j - 1} ({row[j - 1]}) "
                        f"to level {j} ({row[j]})"
                    )
        object.__setattr__(self, "sizes_bytes", rows)

    @property
    def chunk_count(self) -> int:
        return len(self.sizes_bytes)

    @property
    def duration_s(self) -> float:
        """Nominal media duration of the whole video."""
        return self.chunk_count * self.chunk_duration_s

    def size(self, chunk: int, level: int) -> int:
        return self.sizes_bytes[chunk][level]

    def size_matrix(self) -> np.ndarray:
        return np.asarray(self.sizes_bytes, dtype=np.float64)

    def quality_levels(self, mode: QualityMode) -> np.ndarray:
        return np.asarray([quality(v, mode) for v in self.ladder.levels_kbps])


def load_manifest(path: str | os.PathLike) -> VideoManifest:
    """Load and validate a manifest file.

    Format: JSON object with `chunk_duration_s` (number), `bitrates_kbps`
    (array) and `sizes_bytes` (array of arrays, row = chunk, column = level).
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    for key in ("chunk_duration_s", "bitrates_kbps", "sizes_bytes"):
        if key not in doc:
            raise ManifestError(f"manifest {path}: missing field {key!r}")
    try:
        ladder = BitrateLadder(tuple(doc["bitrates_kbps"]))
    except ValueError as exc:
        raise ManifestError(f"manifest {path}: {exc}") from exc
    return VideoManifest(
        chunk_duration_s=float(doc["chunk_duration_s"]),
        ladder=ladder,
        sizes_bytes=tuple(tuple(row) for row in doc["sizes_bytes"]),
    )


def save_manifest(manifest: VideoManifest, path: str | os.PathLike) -> None:
    doc = {
        "chunk_duration_s": manifest.chunk_duration_s,
        "bitrates_kbps": list(manifest.ladder.levels_kbps),
        "sizes_bytes": [list(row) for row in manifest.sizes_bytes],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def synth_manifest(
    ladder: BitrateLadder,
    chunk_count: int,
    chunk_duration_s: float,
    seed: int,
    jitter: float = 0.15,
) -> VideoManifest:
    """Deterministic synthetic manifest: size = bitrate * duration * (1 + jitter).

    Jitter is drawn uniformly in [-jitter, +jitter] per (chunk, level) from
    `seed`; per-chunk monotonicity across levels is repaired by clamping up.
    """
    if chunk_count <= 0:
        raise ValueError("chunk_count must be > 0")
    if chunk_duration_s <= 0:
        raise ValueError("chunk_duration_s must be > 0")
    if not 0 <= jitter < 1:
        raise ValueError("jitter must be in [0, 1)")
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-jitter, jitter, size=(chunk_count, len(ladder)))
    nominal = np.asarray(ladder.levels_kbps) * BYTES_PER_KBIT_SECOND * chunk_duration_s
    sizes = np.rint(nominal[None, :] * (1.0 + noise)).astype(np.int64)
    sizes = np.maximum.accumulate(sizes, axis=1)  # repair monotonicity
    return VideoManifest(
        chunk_duration_s=chunk_duration_s,
        ladder=ladder,
        sizes_bytes=tuple(tuple(int(v) for v in row) for row in sizes),
    )
