"""IQ recording ingestion and split/partition/slice dataset construction.

A recording is one transmission from one device. Per scenario there are K
devices, M transmissions per device and P partitions per transmission,
giving S = P*M train/test splits. Partition p of transmission m across
all devices forms the split with index P*(m-1) + p. Each partition
yields 1200 stride-1 windows of 100 IQ samples ("slices"), taken from the
middle third of the recording; the last windows run up to 99 samples past
the partition, so a partition needs 1299 readable samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PARTITION_SLICES = 1200
SLICE_LEN = 100
PARTITION_SPAN = PARTITION_SLICES + SLICE_LEN - 1  # readable samples needed
TRAIN_SLICES = 1000  # 5:1 of 1200, contiguous block first
TEST_SLICES = 200

INPUT_MODES = ("I", "Q", "IQ", "R", "T", "RT")

MANIFEST_VERSION = 1


class DataError(Exception):
    """Malformed, truncated or inconsistent on-disk data."""


@dataclass
class Recording:
    device_id: int
    transmission_id: int
    i: np.ndarray  # float32
    q: np.ndarray  # float32
    sample_rate_hz: float | None = None
    source: str | None = None

    def __post_init__(self):
        if self.i.shape != self.q.shape or self.i.ndim != 1:
            raise ValueError("I and Q must be equal-length vectors")

    @property
    def sample_count(self) -> int:
        return int(self.i.size)


@dataclass
class Slice:
    window: np.ndarray  # 2x100, row 0 = I, row 1 = Q
    device_id: int
    slice_index: int  # 1-based within the partition

    def __post_init__(self):
        if self.window.shape != (2, SLICE_LEN):
            raise ValueError(f"slice window must be 2x{SLICE_LEN}")


@dataclass
class Split:
    """All slices of one (transmission, partition) pair across devices."""

    split_index: int
    X: np.ndarray            # [1200*K, 2, 100]
    y: np.ndarray            # device label per slice
    slice_indices: np.ndarray  # 1-based slice index within its partition
    train_mask: np.ndarray   # bool, 1000 train / 200 test per device

    @property
    def num_slices(self) -> int:
        return int(self.y.size)

    def train_set(self):
        return self.X[self.train_mask], self.y[self.train_mask]

    def test_set(self):
        return self.X[~self.train_mask], self.y[~self.train_mask]


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    num_devices: int
    transmissions: int
    partitions: int

    @property
    def num_splits(self) -> int:
        return self.partitions * self.transmissions


SCENARIOS = {
    "osu-indoor": ScenarioSpec("osu-indoor", 25, 1, 50),
    "osu-outdoor": ScenarioSpec("osu-outdoor", 25, 1, 50),
    "ne-wired": ScenarioSpec("ne-wired", 20, 3, 50),
    "ne-anechoic": ScenarioSpec("ne-anechoic", 20, 3, 50),
}


def custom_scenario(num_devices: int, transmissions: int, partitions: int) -> ScenarioSpec:
    if num_devices < 2:
        raise ValueError("a scenario needs at least 2 devices")
    if transmissions < 1 or partitions < 1:
        raise ValueError("transmissions and partitions must be >= 1")
    return ScenarioSpec("custom", num_devices, transmissions, partitions)


# ---------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------

def recording_paths(data_dir, device_id: int, transmission_id: int):
    stem = f"dev{device_id:03d}_tx{transmission_id:02d}"
    d = Path(data_dir)
    return d / f"{stem}.iq", d / f"{stem}.json"


def write_recording(rec: Recording, data_path, meta_path) -> None:
    interleaved = np.empty(2 * rec.sample_count, dtype="<f4")
    interleaved[0::2] = rec.i
    interleaved[1::2] = rec.q
    Path(data_path).write_bytes(interleaved.tobytes())
    meta = {
        "device_id": rec.device_id,
        "transmission_id": rec.transmission_id,
        "sample_count": rec.sample_count,
    }
    if rec.sample_rate_hz is not None:
        meta["sample_rate_hz"] = rec.sample_rate_hz
    Path(meta_path).write_text(json.dumps(meta, indent=2) + "\n")


def load_recording(data_path, meta_path) -> Recording:
    """Interleaved little-endian float32 I,Q plus a JSON sidecar."""
    try:
        meta = json.loads(Path(meta_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read metadata {meta_path}: {exc}") from exc
    for key in ("device_id", "transmission_id", "sample_count"):
        if key not in meta:
            raise DataError(f"metadata {meta_path} missing field {key!r}")
    raw = Path(data_path).read_bytes()
    if len(raw) % 8 != 0:
        raise DataError(f"{data_path}: truncated file "
                        f"({len(raw)} bytes is not a whole number of IQ pairs)")
    flat = np.frombuffer(raw, dtype="<f4")
    n = flat.size // 2
    if n != int(meta["sample_count"]):
        raise DataError(f"{data_path}: file holds {n} samples but metadata "
                        f"says {meta['sample_count']}")
    if not np.all(np.isfinite(flat)):
        raise DataError(f"{data_path}: non-finite samples")
    return Recording(device_id=int(meta["device_id"]),
                     transmission_id=int(meta["transmission_id"]),
                     i=flat[0::2].copy(), q=flat[1::2].copy(),
                     sample_rate_hz=meta.get("sample_rate_hz"),
                     source=str(data_path))


def load_scenario_recordings(data_dir, spec: ScenarioSpec) -> dict:
    """All recordings for a scenario, keyed by (device_id, transmission_id)."""
    out = {}
    for dev in range(spec.num_devices):
        for tx in range(1, spec.transmissions + 1):
            data_path, meta_path = recording_paths(data_dir, dev, tx)
            if not data_path.exists():
                raise DataError(f"missing recording for device {dev} "
                                f"transmission {tx}: {data_path}")
            out[(dev, tx)] = load_recording(data_path, meta_path)
    return out


# ---------------------------------------------------------------------
# split construction
# ---------------------------------------------------------------------

def split_index(m: int, p: int, P: int, M: int | None = None) -> int:
    if p < 1 or p > P:
        raise ValueError(f"partition index {p} out of range [1, {P}]")
    if m < 1 or (M is not None and m > M):
        raise ValueError(f"transmission index {m} out of range")
    return P * (m - 1) + p


def split_index_inverse(s: int, P: int) -> tuple[int, int]:
    """(m, p) for a split index in [1, P*M]."""
    if s < 1:
        raise ValueError("split index must be >= 1")
    return (s - 1) // P + 1, (s - 1) % P + 1


def partition_starts(recording: Recording, P: int) -> list[int]:
    """P evenly spaced partition start offsets within the middle third."""
    n = recording.sample_count
    L = n // 3
    if L < P * PARTITION_SPAN:
        raise DataError(
            f"recording for device {recording.device_id} transmission "
            f"{recording.transmission_id} too short: middle third is {L} "
            f"samples, need at least {P * PARTITION_SPAN} for {P} partitions "
            f"(short by {P * PARTITION_SPAN - L})")
    begin = L
    spacing = L // P
    starts = [begin + j * spacing for j in range(P)]
    assert all(s + PARTITION_SPAN <= n for s in starts)
    return starts


def slice_partition(recording: Recording, start: int) -> list[Slice]:
    """1200 overlapping stride-1 slices; windows may run past the partition."""
    if start < 0 or start + PARTITION_SPAN > recording.sample_count:
        raise DataError(f"partition at {start} needs {PARTITION_SPAN} readable "
                        f"samples, recording has {recording.sample_count}")
    seg_i = recording.i[start:start + PARTITION_SPAN]
    seg_q = recording.q[start:start + PARTITION_SPAN]
    from numpy.lib.stride_tricks import sliding_window_view

    wi = sliding_window_view(seg_i, SLICE_LEN)[:PARTITION_SLICES]
    wq = sliding_window_view(seg_q, SLICE_LEN)[:PARTITION_SLICES]
    return [Slice(window=np.stack([wi[k], wq[k]]), device_id=recording.device_id,
                  slice_index=k + 1)
            for k in range(PARTITION_SLICES)]


def make_split(spec: ScenarioSpec, recordings: dict, m: int, p: int) -> Split:
    """Union over devices of partition p of transmission m, with 5:1 split."""
    if m < 1 or m > spec.transmissions:
        raise ValueError(f"transmission {m} out of range: scenario has "
                         f"M={spec.transmissions}")
    windows, labels, sidx, train = [], [], [], []
    for dev in range(spec.num_devices):
        rec = recordings.get((dev, m))
        if rec is None:
            raise DataError(f"missing recording for device {dev} transmission {m}")
        start = partition_starts(rec, spec.partitions)[p - 1]
        for sl in slice_partition(rec, start):
            windows.append(sl.window)
            labels.append(dev)
            sidx.append(sl.slice_index)
            train.append(sl.slice_index <= TRAIN_SLICES)
    return Split(split_index=split_index(m, p, spec.partitions, spec.transmissions),
                 X=np.stack(windows),
                 y=np.asarray(labels, dtype=np.int64),
                 slice_indices=np.asarray(sidx, dtype=np.int64),
                 train_mask=np.asarray(train, dtype=bool))


# ---------------------------------------------------------------------
# input modes
# ---------------------------------------------------------------------

def input_transform(window: np.ndarray, mode: str) -> np.ndarray:
    """Map a 2x100 (I; Q) window to the requested input representation.

    Polar modes use R = sqrt(I^2 + Q^2) and T = atan2(Q, I); single-input
    modes zero out the other row. Accepts a batch [..., 2, 100] too.
    """
    mode = mode.upper()
    if mode not in INPUT_MODES:
        raise ValueError(f"unknown input mode {mode!r}")
    w = np.asarray(window)
    i, q = w[..., 0, :], w[..., 1, :]
    zero = np.zeros_like(i)
    if mode == "IQ":
        return w.copy()
    if mode == "I":
        return np.stack([i, zero], axis=-2)
    if mode == "Q":
        return np.stack([zero, q], axis=-2)
    r = np.sqrt(i * i + q * q)
    t = np.arctan2(q, i)
    if mode == "RT":
        return np.stack([r, t], axis=-2)
    if mode == "R":
        return np.stack([r, zero], axis=-2)
    return np.stack([zero, t], axis=-2)  # T


# ---------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------

def split_manifest(spec: ScenarioSpec, recordings: dict, m: int, p: int) -> dict:
    entries = []
    for dev in range(spec.num_devices):
        rec = recordings.get((dev, m))
        if rec is None:
            raise DataError(f"missing recording for device {dev} transmission {m}")
        start = partition_starts(rec, spec.partitions)[p - 1]
        entries.append({
            "device_id": dev,
            "transmission_id": m,
            "start_offset": int(start),
            "train_range": [1, TRAIN_SLICES],
            "test_range": [TRAIN_SLICES + 1, PARTITION_SLICES],
        })
    return {
        "version": MANIFEST_VERSION,
        "scenario": spec.name,
        "num_devices": spec.num_devices,
        "transmissions": spec.transmissions,
        "partitions": spec.partitions,
        "split_index": split_index(m, p, spec.partitions, spec.transmissions),
        "devices": entries,
    }


def write_manifests(spec: ScenarioSpec, recordings: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in range(1, spec.transmissions + 1):
        for p in range(1, spec.partitions + 1):
            man = split_manifest(spec, recordings, m, p)
            path = out_dir / f"split{man['split_index']:04d}.json"
            path.write_text(json.dumps(man, indent=2) + "\n")
            paths.append(path)
    return paths


def split_from_manifest(manifest: dict, recordings: dict) -> Split:
    """Reconstruct the exact Split a manifest describes."""
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest.get('version')}")
    windows, labels, sidx, train = [], [], [], []
    for entry in manifest["devices"]:
        dev, m = entry["device_id"], entry["transmission_id"]
        rec = recordings.get((dev, m))
        if rec is None:
            raise DataError(f"missing recording for device {dev} transmission {m}")
        lo, hi = entry["train_range"]
        for sl in slice_partition(rec, entry["start_offset"]):
            windows.append(sl.window)
            labels.append(dev)
            sidx.append(sl.slice_index)
            train.append(lo <= sl.slice_index <= hi)
    return Split(split_index=int(manifest["split_index"]),
                 X=np.stack(windows),
                 y=np.asarray(labels, dtype=np.int64),
                 slice_indices=np.asarray(sidx, dtype=np.int64),
                 train_mask=np.asarray(train, dtype=bool))
