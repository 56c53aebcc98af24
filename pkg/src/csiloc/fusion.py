"""Temporal fusion of s consecutive slot estimates: mean, median and the fusion network (FN)."""

from __future__ import annotations

import numpy as np

from . import nn
from .dataset import FusionWindow
from .errors import ParameterError
from .localizers import LocationEstimate

FN_HIDDEN = (100, 64, 48, 12)


def _window_xy(window) -> np.ndarray:
    est = np.asarray(getattr(window, "estimates", window), dtype=np.float64)
    if est.ndim != 2 or est.shape[1] != 2 or len(est) == 0:
        raise ParameterError(f"window must be a nonempty (s, 2) array, got shape {est.shape}")
    return est


def fuse_mean(window) -> LocationEstimate:
    xy = _window_xy(window).mean(axis=0)
    return LocationEstimate((float(xy[0]), float(xy[1])), "fusion")


def fuse_median(window) -> LocationEstimate:
    """Coordinatewise median; the midpoint of the central pair for even lengths."""
    xy = np.median(_window_xy(window), axis=0)
    return LocationEstimate((float(xy[0]), float(xy[1])), "fusion")


def as_window_arrays(windows, truths=None):
    """Accept a list of :class:`FusionWindow` or ``(n, s, 2)`` arrays."""
    if truths is None:
        windows = list(windows)
        if not windows or not isinstance(windows[0], FusionWindow):
            raise ParameterError("pass FusionWindow objects or explicit truths")
        return (np.array([w.estimates for w in windows], dtype=np.float64),
                np.array([w.truth for w in windows], dtype=np.float64))
    return np.asarray(windows, dtype=np.float64), np.asarray(truths, dtype=np.float64).reshape(-1, 2)


class FusionNet:
    """MLP over a flattened window of slot estimates, in a scene-normalized frame.

    Coordinates are mapped so the scene bounds become ``[-1, 1]^2``. With
    ``residual`` set, the network predicts a correction on top of the window
    mean (its output layer starts at zero, so an untrained net is mean fusion).
    """

    def __init__(self, model: nn.MlpModel, s: int, bounds, residual: bool = True):
        if model.input_width != 2 * s or model.output_width != 2 or model.head != "linear":
            raise ParameterError(f"FN model must map {2 * s} inputs to 2 linear outputs")
        xmin, ymin, xmax, ymax = (float(v) for v in bounds)
        self.model = model
        self.s = int(s)
        self.bounds = (xmin, ymin, xmax, ymax)
        self.center = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
        self.half = np.array([(xmax - xmin) / 2, (ymax - ymin) / 2])
        self.residual = residual

    def to_frame(self, xy) -> np.ndarray:
        return (np.asarray(xy, dtype=np.float64) - self.center) / self.half

    def from_frame(self, z) -> np.ndarray:
        return np.asarray(z) * self.half + self.center

    def inputs(self, windows: np.ndarray):
        z = self.to_frame(windows)
        return z.reshape(len(z), -1), z.mean(axis=1)

    def fuse_many(self, windows) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[1:] != (self.s, 2):
            raise ParameterError(f"windows must have shape (n, {self.s}, 2), got {windows.shape}")
        flat, base = self.inputs(windows)
        out = nn.forward(self.model, flat)[0]
        if self.residual:
            out = out + base
        return self.from_frame(out)

    def save(self, path) -> None:
        nn.save_model(self.model, path,
                      metadata={"kind": "fn", "s": self.s, "residual": self.residual},
                      arrays={"bounds": np.array(self.bounds)})

    @classmethod
    def load(cls, path) -> "FusionNet":
        model, meta, arrays = nn.load_container(path)
        if meta.get("kind") != "fn":
            raise nn.FormatError(f"{path} is not an FN container (kind={meta.get('kind')!r})")
        return cls(model, meta["s"], arrays["bounds"], meta["residual"])


def fn_infer(net: FusionNet, window) -> LocationEstimate:
    est = _window_xy(window)
    if len(est) != net.s:
        raise ParameterError(f"window length {len(est)} != FN window length {net.s}")
    xy = net.fuse_many(est[None])[0]
    return LocationEstimate((float(xy[0]), float(xy[1])), "fusion")


def build_fn(s: int, bounds, hidden=FN_HIDDEN, residual: bool = True, seed: int = 0) -> FusionNet:
    model = nn.build_mlp(2 * s, list(hidden), 2, "linear", 0.0, seed=seed)
    if residual:
        model.layers[-1].weights[:] = 0.0
        model.layers[-1].biases[:] = 0.0
    return FusionNet(model, s, bounds, residual)


def train_fn(windows_train, windows_val, config: nn.TrainConfig, bounds, truths_train=None,
             truths_val=None, hidden=FN_HIDDEN, residual: bool = True):
    """Fit the FN with squared error against the window truths (meters in, meters out)."""
    w_tr, t_tr = as_window_arrays(windows_train, truths_train)
    w_va, t_va = as_window_arrays(windows_val, truths_val)
    if w_tr.ndim != 3 or w_tr.shape[1:] != w_va.shape[1:]:
        raise ParameterError("training and validation windows must share one length")
    net = build_fn(w_tr.shape[1], bounds, hidden, residual, seed=config.seed)
    x_tr, base_tr = net.inputs(w_tr)
    x_va, base_va = net.inputs(w_va)
    y_tr = net.to_frame(t_tr) - (base_tr if residual else 0.0)
    y_va = net.to_frame(t_va) - (base_va if residual else 0.0)
    model, history = nn.train(net.model, (x_tr, y_tr), (x_va, y_va), "mse", config)
    return FusionNet(model, net.s, bounds, residual), history
