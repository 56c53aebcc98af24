"""Single-snapshot localizers: KNN, WKNN and the slot-based localization network (SLN)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .dataset import FingerprintDataset
from .errors import ParameterError

WKNN_EPS = 1e-9
SLN_HIDDEN = (256, 256, 256, 256)
SLN_DROPOUT = 0.3


@dataclass(frozen=True)
class LocationEstimate:
    xy: tuple[float, float]
    source: str

    def __post_init__(self):
        if not np.isfinite(self.xy).all():
            raise ParameterError(f"non-finite estimate {self.xy}")


def _check_layout(expected: str, dataset: FingerprintDataset) -> None:
    if dataset.layout.digest() != expected:
        raise ParameterError("snapshot layout does not match the layout this localizer was built for")


class KnnLocator:
    """Exact k-nearest-neighbour search over a standardized fingerprint map.

    Neighbours are ordered by Euclidean distance, ties broken by the lower
    record index. ``backend="kdtree"`` uses a scipy kd-tree to find candidates;
    the final ordering is always recomputed exactly so both backends agree.
    """

    def __init__(self, fmap: FingerprintDataset, k: int, weighted: bool = False, backend: str = "linear"):
        if len(fmap) == 0:
            raise ParameterError("empty fingerprint map")
        if int(k) != k or k < 1:
            raise ParameterError(f"k must be >= 1, got {k}")
        if k > len(fmap):
            raise ParameterError(f"k={k} exceeds the {len(fmap)} records in the map")
        if backend not in ("linear", "kdtree"):
            raise ParameterError(f"unknown backend {backend!r}")
        self.k = int(k)
        self.weighted = weighted
        self.backend = backend
        self.fmap = fmap
        self.points = fmap.normalized()
        self.sq_norms = (self.points ** 2).sum(axis=1)
        self.targets = fmap.locations
        self.layout_digest = fmap.layout.digest()
        self._tree = None
        if backend == "kdtree":
            from scipy.spatial import cKDTree
            self._tree = cKDTree(self.points)

    def _finish(self, q: np.ndarray, cand: np.ndarray):
        d = np.sqrt(((self.points[cand] - q) ** 2).sum(axis=1))
        order = np.lexsort((cand, d))[: self.k]
        return cand[order], d[order]

    def neighbors(self, snapshots, chunk: int = 256):
        """Indices and distances of the k nearest records, shape ``(n, k)`` each."""
        raw = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
        if raw.shape[1] != self.points.shape[1]:
            raise ParameterError(f"snapshot width {raw.shape[1]} != map width {self.points.shape[1]}")
        q_all = self.fmap.normalize(raw)
        idx = np.empty((len(q_all), self.k), dtype=np.int64)
        dist = np.empty((len(q_all), self.k))
        k = self.k
        for start in range(0, len(q_all), chunk):
            q = q_all[start:start + chunk]
            if self._tree is None:
                d2 = (q ** 2).sum(axis=1)[:, None] + self.sq_norms[None, :] - 2.0 * q @ self.points.T
                kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
                slack = 1e-9 * (1.0 + np.abs(d2).max(axis=1))
            for j, row in enumerate(q):
                if self._tree is None:
                    cand = np.flatnonzero(d2[j] <= kth[j] + slack[j])
                else:
                    dk, _ = self._tree.query(row, k=k)
                    radius = float(np.max(dk)) * (1 + 1e-9) + 1e-12
                    cand = np.asarray(sorted(self._tree.query_ball_point(row, radius)), dtype=np.int64)
                idx[start + j], dist[start + j] = self._finish(row, cand)
        return idx, dist

    def combine(self, idx, dist, weighted: bool | None = None) -> np.ndarray:
        """Turn neighbour indices/distances into position estimates."""
        weighted = self.weighted if weighted is None else weighted
        locs = self.targets[idx]
        if not weighted:
            return locs.mean(axis=1)
        w = 1.0 / (dist + WKNN_EPS)
        w /= w.sum(axis=1, keepdims=True)
        return (w[:, :, None] * locs).sum(axis=1)

    def locate_many(self, snapshots) -> np.ndarray:
        return self.combine(*self.neighbors(snapshots))

    def locate_dataset(self, dataset: FingerprintDataset) -> np.ndarray:
        _check_layout(self.layout_digest, dataset)
        return self.locate_many(dataset.features)


def knn_locate(snapshot, fmap: FingerprintDataset, k: int) -> LocationEstimate:
    xy = KnnLocator(fmap, k).locate_many(snapshot)[0]
    return LocationEstimate((float(xy[0]), float(xy[1])), "knn")


def wknn_locate(snapshot, fmap: FingerprintDataset, k: int) -> LocationEstimate:
    xy = KnnLocator(fmap, k, weighted=True).locate_many(snapshot)[0]
    return LocationEstimate((float(xy[0]), float(xy[1])), "wknn")


class SlnLocalizer:
    """Softmax classifier over reference points plus the probability-weighted position."""

    def __init__(self, model: nn.MlpModel, rp_locations, norm_mean, norm_scale, layout_digest: str):
        rp = np.asarray(rp_locations, dtype=np.float64).reshape(-1, 2)
        if model.head != "softmax" or model.output_width != len(rp):
            raise ParameterError(f"model output width {model.output_width} != {len(rp)} reference points")
        self.model = model
        self.rp_locations = rp
        self.norm_mean = np.asarray(norm_mean, dtype=np.float64)
        self.norm_scale = np.asarray(norm_scale, dtype=np.float64)
        self.layout_digest = layout_digest

    def probabilities(self, snapshots) -> np.ndarray:
        x = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
        if x.shape[1] != self.model.input_width:
            raise ParameterError(f"snapshot width {x.shape[1]} != model input width {self.model.input_width}")
        out = []
        for start in range(0, len(x), 4096):
            out.append(nn.forward(self.model, (x[start:start + 4096] - self.norm_mean) / self.norm_scale)[0])
        return np.concatenate(out)

    def locate_many(self, snapshots) -> np.ndarray:
        return self.probabilities(snapshots) @ self.rp_locations

    def locate_dataset(self, dataset: FingerprintDataset) -> np.ndarray:
        _check_layout(self.layout_digest, dataset)
        return self.locate_many(dataset.features)

    def save(self, path) -> None:
        nn.save_model(
            self.model, path,
            metadata={"kind": "sln", "layout_digest": self.layout_digest},
            arrays={"rp_locations": self.rp_locations, "norm_mean": self.norm_mean,
                    "norm_scale": self.norm_scale},
        )

    @classmethod
    def load(cls, path) -> "SlnLocalizer":
        model, meta, arrays = nn.load_container(path)
        if meta.get("kind") != "sln":
            raise nn.FormatError(f"{path} is not an SLN container (kind={meta.get('kind')!r})")
        return cls(model, arrays["rp_locations"], arrays["norm_mean"], arrays["norm_scale"],
                   meta["layout_digest"])


def sln_infer(localizer: SlnLocalizer, snapshot):
    """Probability vector over RPs and the expectation of the RP coordinates under it."""
    snapshot = np.asarray(snapshot, dtype=np.float64)
    if snapshot.ndim != 1:
        raise ParameterError("sln_infer takes a single snapshot vector")
    probs = localizer.probabilities(snapshot)[0]
    xy = probs @ localizer.rp_locations
    return probs, LocationEstimate((float(xy[0]), float(xy[1])), "sln")


def estimate_from_probabilities(probs, rp_locations) -> np.ndarray:
    return np.asarray(probs, dtype=np.float64) @ np.asarray(rp_locations, dtype=np.float64)


def train_sln(map_train: FingerprintDataset, map_val: FingerprintDataset, rp_locations,
              config: nn.TrainConfig, hidden=SLN_HIDDEN, dropout: float = SLN_DROPOUT,
              labels_override=None):
    """Fit the SLN with cross-entropy on one-hot RP labels.

    Both maps are standardized with ``map_train``'s normalization. Returns the
    localizer and the training history.
    """
    rp_locations = np.asarray(getattr(rp_locations, "rp_locations", rp_locations), dtype=np.float64)
    m = len(rp_locations)
    for name, ds in (("train", map_train), ("val", map_val)):
        if (ds.rp_index < 0).any():
            raise ParameterError(f"{name} map contains records without an rp_index")
        if (ds.rp_index >= m).any():
            raise ParameterError(f"{name} map rp_index out of range for {m} reference points")
    _check_layout(map_train.layout.digest(), map_val)
    x_tr = map_train.normalized()
    x_va = map_train.normalize(map_val.features)
    y_tr_labels = map_train.rp_index if labels_override is None else labels_override
    model = nn.build_mlp(map_train.layout.width, list(hidden), m, "softmax", dropout, seed=config.seed)
    trained, history = nn.train(
        model, (x_tr, nn.one_hot(y_tr_labels, m)), (x_va, nn.one_hot(map_val.rp_index, m)),
        "cross_entropy", config,
    )
    loc = SlnLocalizer(trained, rp_locations, map_train.norm_mean, map_train.norm_scale,
                       map_train.layout.digest())
    return loc, history


def top1_accuracy(localizer: SlnLocalizer, dataset: FingerprintDataset) -> float:
    probs = localizer.probabilities(dataset.features)
    return float((probs.argmax(axis=1) == dataset.rp_index).mean())
