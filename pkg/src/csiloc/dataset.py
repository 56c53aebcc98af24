"""Fingerprint maps: construction, stratified splits, binary persistence, fusion windows.

Binary layout (all little-endian)::

    0   8s  magic b"CSIFPDS\\0"
    8   B   version (1)
    9   B   n_tx
    10  B   cell_shift
    11  B   reserved
    12  I   feature width (n_tx * 2 * n_rb)
    16  Q   record count
    24  H   n_rb
    26  6x  reserved
    32  32s scene digest (sha256)
    64  32s body digest (sha256 of everything from byte 96 on)
    96  normalization mean, then scale, width float64 each
    ..  records: x f64, y f64, rp_index i64 (-1 = none), slot i64, width x f64
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelParams, Scene, synth_stream
from .errors import FormatError, ParameterError, SplitError, WindowError

MAGIC = b"CSIFPDS\x00"
VERSION = 1
_HEADER = struct.Struct("<8sBBBBIQH6x")
_PREAMBLE = _HEADER.size + 64


@dataclass(frozen=True)
class Layout:
    """What produced the feature vectors: CRS comb and antenna count."""

    n_rb: int
    n_tx: int = 1
    cell_shift: int = 0

    @property
    def width(self) -> int:
        return self.n_tx * 2 * self.n_rb

    def digest(self) -> str:
        return hashlib.sha256(f"crs:{self.n_rb}:{self.n_tx}:{self.cell_shift}".encode()).hexdigest()

    @classmethod
    def of(cls, scene: Scene) -> "Layout":
        return cls(scene.n_rb, scene.n_tx, scene.cell_shift)


@dataclass(frozen=True)
class FingerprintRecord:
    location: tuple[float, float]
    rp_index: int | None
    slot: int
    snapshot: np.ndarray


@dataclass(frozen=True, eq=False)
class FingerprintDataset:
    """Columnar, read-only collection of fingerprint records.

    ``features`` holds the raw amplitude snapshots; ``norm_mean`` and
    ``norm_scale`` are the standardization applied by :meth:`normalized`.
    """

    layout: Layout
    scene_digest: str
    locations: np.ndarray
    rp_index: np.ndarray
    slots: np.ndarray
    features: np.ndarray
    norm_mean: np.ndarray
    norm_scale: np.ndarray

    def __post_init__(self):
        n = len(self.locations)
        w = self.layout.width
        for name, arr, shape in (
            ("locations", self.locations, (n, 2)),
            ("rp_index", self.rp_index, (n,)),
            ("slots", self.slots, (n,)),
            ("features", self.features, (n, w)),
            ("norm_mean", self.norm_mean, (w,)),
            ("norm_scale", self.norm_scale, (w,)),
        ):
            if arr.shape != shape:
                raise ParameterError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
        if not (self.norm_scale > 0).all():
            raise ParameterError("normalization scale entries must be > 0")

    def __len__(self) -> int:
        return len(self.locations)

    def record(self, i: int) -> FingerprintRecord:
        rp = int(self.rp_index[i])
        return FingerprintRecord(
            location=(float(self.locations[i, 0]), float(self.locations[i, 1])),
            rp_index=None if rp < 0 else rp,
            slot=int(self.slots[i]),
            snapshot=self.features[i],
        )

    @property
    def records(self) -> list[FingerprintRecord]:
        return [self.record(i) for i in range(len(self))]

    def normalize(self, snapshots) -> np.ndarray:
        return (np.asarray(snapshots, dtype=np.float64) - self.norm_mean) / self.norm_scale

    def normalized(self) -> np.ndarray:
        return self.normalize(self.features)

    def subset(self, idx) -> "FingerprintDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return FingerprintDataset(
            self.layout, self.scene_digest, self.locations[idx].copy(), self.rp_index[idx].copy(),
            self.slots[idx].copy(), self.features[idx].copy(), self.norm_mean, self.norm_scale,
        )

    def with_normalization(self, mean, scale) -> "FingerprintDataset":
        return FingerprintDataset(
            self.layout, self.scene_digest, self.locations, self.rp_index, self.slots,
            self.features, np.asarray(mean, dtype=np.float64), np.asarray(scale, dtype=np.float64),
        )

    def content_hash(self) -> str:
        return hashlib.sha256(dataset_bytes(self)).hexdigest()


def standardization(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and standard deviation; constant features get scale 1."""
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[~(scale > 0)] = 1.0
    return mean, scale


def from_arrays(scene_or_layout, locations, rp_index, slots, features, scene_digest: str | None = None,
                normalization=None) -> FingerprintDataset:
    if isinstance(scene_or_layout, Scene):
        layout = Layout.of(scene_or_layout)
        scene_digest = scene_digest or scene_or_layout.digest()
    else:
        layout = scene_or_layout
        scene_digest = scene_digest or "0" * 64
    features = np.asarray(features, dtype=np.float64).reshape(-1, layout.width)
    mean, scale = normalization if normalization is not None else standardization(features)
    return FingerprintDataset(
        layout, scene_digest,
        np.asarray(locations, dtype=np.float64).reshape(-1, 2).copy(),
        np.asarray(rp_index, dtype=np.int64).copy(),
        np.asarray(slots, dtype=np.int64).copy(),
        features.copy(), np.asarray(mean, dtype=np.float64), np.asarray(scale, dtype=np.float64),
    )


def collect(scene: Scene, params: ChannelParams, points, slots, rp_index=None) -> FingerprintDataset:
    """Amplitude snapshots for every point over the given slot indices."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    slots = np.asarray(slots, dtype=np.int64)
    feats = np.empty((len(points) * len(slots), scene.feature_width))
    for p, loc in enumerate(points):
        csi = synth_stream(scene, params, loc, slots)
        feats[p * len(slots):(p + 1) * len(slots)] = np.abs(csi).reshape(len(slots), -1)
    rp = np.full(len(points), -1, dtype=np.int64) if rp_index is None else np.asarray(rp_index)
    return from_arrays(
        scene, np.repeat(points, len(slots), axis=0), np.repeat(rp, len(slots)),
        np.tile(slots, len(points)), feats,
    )


def build_map(scene: Scene, params: ChannelParams, slots_per_rp: int) -> FingerprintDataset:
    """One record per (RP, slot), RP-major, normalized over all records."""
    if int(slots_per_rp) != slots_per_rp or slots_per_rp < 1:
        raise ParameterError(f"slots_per_rp must be >= 1, got {slots_per_rp}")
    return collect(scene, params, scene.rp_locations, np.arange(slots_per_rp), np.arange(scene.m))


def _allocate(n: int, fractions) -> list[int]:
    raw = np.asarray(fractions) * n
    sizes = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    while (sizes == 0).any():
        sizes[np.argmax(sizes)] -= 1
        sizes[np.argmin(sizes)] += 1
    return sizes.tolist()


def split(dataset: FingerprintDataset, fractions=(0.5, 0.25, 0.25), seed: int = 0):
    """Stratified (by ``rp_index``) train/val/test partition.

    Normalization is recomputed on the training part and shared by all three.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for stratum in np.unique(dataset.rp_index):
        members = np.flatnonzero(dataset.rp_index == stratum)
        if len(members) < 3:
            raise SplitError(f"stratum rp_index={stratum} has {len(members)} records, need at least 3")
        perm = members[rng.permutation(len(members))]
        start = 0
        for part, size in zip(parts, _allocate(len(members), fractions)):
            part.append(perm[start:start + size])
            start += size
    subsets = [dataset.subset(np.sort(np.concatenate(p))) for p in parts]
    mean, scale = standardization(subsets[0].features)
    return tuple(s.with_normalization(mean, scale) for s in subsets)


# --- persistence ---------------------------------------------------------------

def _record_dtype(width: int) -> np.dtype:
    return np.dtype([("x", "<f8"), ("y", "<f8"), ("rp", "<i8"), ("slot", "<i8"), ("amp", "<f8", (width,))])


def dataset_bytes(dataset: FingerprintDataset) -> bytes:
    w = dataset.layout.width
    recs = np.empty(len(dataset), dtype=_record_dtype(w))
    recs["x"] = dataset.locations[:, 0]
    recs["y"] = dataset.locations[:, 1]
    recs["rp"] = dataset.rp_index
    recs["slot"] = dataset.slots
    recs["amp"] = dataset.features
    body = (
        dataset.norm_mean.astype("<f8").tobytes()
        + dataset.norm_scale.astype("<f8").tobytes()
        + recs.tobytes()
    )
    lay = dataset.layout
    header = _HEADER.pack(MAGIC, VERSION, lay.n_tx, lay.cell_shift, 0, w, len(dataset), lay.n_rb)
    return header + bytes.fromhex(dataset.scene_digest) + hashlib.sha256(body).digest() + body


def write_dataset(dataset: FingerprintDataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dataset_bytes(dataset))
    tmp.replace(path)


def parse_dataset(blob: bytes) -> FingerprintDataset:
    if len(blob) < _HEADER.size:
        raise FormatError(f"truncated header: expected {_HEADER.size} bytes, got {len(blob)}", len(blob))
    magic, version, n_tx, cell_shift, _, width, count, n_rb = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}", 8)
    if n_tx not in (1, 2, 4) or cell_shift > 5 or n_rb < 1 or width != n_tx * 2 * n_rb:
        raise FormatError(f"inconsistent layout n_rb={n_rb} n_tx={n_tx} width={width}", 9)
    dtype = _record_dtype(width)
    expected = _PREAMBLE + 16 * width + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(f"length mismatch: expected {expected} bytes, got {len(blob)}", min(len(blob), expected))
    scene_digest = blob[32:64].hex()
    body = blob[_PREAMBLE:]
    if hashlib.sha256(body).digest() != blob[64:96]:
        raise FormatError("body digest mismatch", 64)
    mean = np.frombuffer(body, "<f8", width, 0).astype(np.float64)
    scale = np.frombuffer(body, "<f8", width, 8 * width).astype(np.float64)
    recs = np.frombuffer(body, dtype, count, 16 * width)
    try:
        return FingerprintDataset(
            Layout(n_rb, n_tx, cell_shift), scene_digest,
            np.column_stack([recs["x"], recs["y"]]).astype(np.float64),
            recs["rp"].astype(np.int64), recs["slot"].astype(np.int64),
            recs["amp"].astype(np.float64).reshape(count, width), mean, scale,
        )
    except ParameterError as exc:
        raise FormatError(str(exc), _PREAMBLE) from exc


def read_dataset(path) -> FingerprintDataset:
    return parse_dataset(Path(path).read_bytes())


def export_jsonl(dataset: FingerprintDataset, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(dataset)):
            rp = int(dataset.rp_index[i])
            fh.write(json.dumps({
                "x": float(dataset.locations[i, 0]),
                "y": float(dataset.locations[i, 1]),
                "rp_index": None if rp < 0 else rp,
                "slot": int(dataset.slots[i]),
                "amplitudes": dataset.features[i].tolist(),
            }) + "\n")


# --- fusion windows ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FusionWindow:
    estimates: np.ndarray  # (s, 2), slot order
    truth: tuple[float, float]
    window_id: int

    def __len__(self) -> int:
        return len(self.estimates)


def window_arrays(estimates, truths, slots, s: int, stride: int | None = None, bounds=None):
    """Cut per-truth slot-ordered streams into windows of length ``s``.

    ``stride`` defaults to ``s`` (disjoint windows, tail dropped); ``stride=1``
    gives sliding windows. Returns ``(windows (n, s, 2), truths (n, 2),
    group (n,))`` with groups numbered by first appearance.
    """
    est = np.asarray(estimates, dtype=np.float64).reshape(-1, 2)
    tru = np.asarray(truths, dtype=np.float64).reshape(-1, 2)
    slots = np.asarray(slots, dtype=np.int64).reshape(-1)
    if not len(est) == len(tru) == len(slots):
        raise ParameterError("estimates, truths and slots must have equal length")
    if int(s) != s or s < 1:
        raise ParameterError(f"window length must be >= 1, got {s}")
    stride = s if stride is None else stride
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if bounds is not None:
        xmin, ymin, xmax, ymax = bounds
        mx, my = 0.1 * (xmax - xmin), 0.1 * (ymax - ymin)
        inside = ((est[:, 0] >= xmin - mx) & (est[:, 0] <= xmax + mx)
                  & (est[:, 1] >= ymin - my) & (est[:, 1] <= ymax + my))
        if not inside.all():
            raise WindowError(f"estimate {tuple(map(float, est[~inside][0]))} outside expanded area bounds")

    _, first, inverse = np.unique(tru, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    windows, wtruth, wgroup = [], [], []
    for g, u in enumerate(np.argsort(first, kind="stable")):
        members = np.flatnonzero(inverse == u)
        members = members[np.argsort(slots[members], kind="stable")]
        if len(members) < s:
            raise WindowError(
                f"group at truth {tuple(map(float, tru[members[0]]))} has {len(members)} estimates, window needs {s}")
        for start in range(0, len(members) - s + 1, stride):
            windows.append(est[members[start:start + s]])
            wtruth.append(tru[members[0]])
            wgroup.append(g)
    return np.array(windows).reshape(-1, s, 2), np.array(wtruth).reshape(-1, 2), np.array(wgroup, dtype=np.int64)


def make_fusion_windows(estimates, s: int, stride: int | None = None, bounds=None) -> list[FusionWindow]:
    """``estimates`` is a sequence of ``(estimate_xy, truth_xy, slot)`` triples."""
    if not estimates:
        return []
    est = [getattr(e, "xy", e) for e, _, _ in estimates]
    tru = [t for _, t, _ in estimates]
    slots = [sl for _, _, sl in estimates]
    w, t, _ = window_arrays(est, tru, slots, s, stride, bounds)
    return [FusionWindow(w[i], (float(t[i, 0]), float(t[i, 1])), i) for i in range(len(w))]
