"""End-to-end experiment: map generation, training, slot inference, fusion, reports.

Each stage reads its inputs from and writes its artifacts to one output
directory, so the CLI can run stages one at a time or all at once.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import nn
from .channel import ChannelParams, Scene, channel_from_config, scene_from_config
from .config import Config
from .dataset import FingerprintDataset
from .fusion import FusionNet, train_fn
from .localizers import KnnLocator, SlnLocalizer, train_sln
from .metrics import ErrorReport, format_table, write_summary

log = logging.getLogger(__name__)

SLN_DEFAULTS = nn.TrainConfig(learning_rate=1e-3, batch_size=128, max_epochs=60, patience=10)
FN_DEFAULTS = nn.TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=300, patience=30)

METHODS = ("knn", "wknn", "sln", "sln+fn", "sln+mean", "sln+median")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Settings:
    """Everything an experiment needs, resolved from a config file."""

    config: Config
    scene: Scene
    channel: ChannelParams
    seed: int
    slots_per_rp: int
    split_fractions: tuple[float, float, float]
    knn_k: int
    knn_backend: str
    window: int
    eval_points: str
    eval_windows: int
    eval_slot_offset: int
    fn_val_fraction: float
    fn_residual: bool
    sln_train: nn.TrainConfig
    fn_train: nn.TrainConfig
    output_dir: Path

    @classmethod
    def from_config(cls, cfg: Config, output_dir=None, seed: int | None = None) -> "Settings":
        if seed is not None:
            cfg = cfg.with_overrides(seed=seed)
        seed = cfg.get_int("seed", 0)
        if "rng_seed" not in cfg:
            cfg = cfg.with_overrides(rng_seed=seed)
        scene = scene_from_config(cfg)
        outdoor = cfg.get_str("scene", "indoor") == "outdoor"
        slots_per_rp = cfg.get_int("slots_per_rp", 2000)
        fractions = cfg.get_floats("split_fractions", (0.5, 0.25, 0.25))
        return cls(
            config=cfg,
            scene=scene,
            channel=channel_from_config(cfg),
            seed=seed,
            slots_per_rp=slots_per_rp,
            split_fractions=tuple(fractions),
            knn_k=cfg.get_int("knn_k", 8 if outdoor else 5),
            knn_backend=cfg.get_str("knn_backend", "linear"),
            window=cfg.get_int("window", 50),
            eval_points=cfg.get_str("eval_points", "tp"),
            eval_windows=cfg.get_int("eval_windows_per_point", 10),
            eval_slot_offset=cfg.get_int("eval_slot_offset", slots_per_rp),
            fn_val_fraction=cfg.get_float("fn_val_fraction", 0.2),
            fn_residual=cfg.get_bool("fn_residual", True),
            sln_train=nn.TrainConfig.from_config(cfg, "sln_", SLN_DEFAULTS, seed),
            fn_train=nn.TrainConfig.from_config(cfg, "fn_", FN_DEFAULTS, seed),
            output_dir=Path(output_dir or cfg.get_str("output_dir", "out")),
        )

    @property
    def eval_locations(self) -> np.ndarray:
        if self.eval_points == "rp":
            return self.scene.rp_locations
        if self.eval_points == "tp":
            return self.scene.tp_locations
        raise ValueError(f"eval_points must be 'tp' or 'rp', got {self.eval_points!r}")


class Experiment:
    def __init__(self, settings: Settings):
        self.s = settings
        self.out = settings.output_dir
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def _stage(self, name: str, fn):
        log.info("stage %s", name)
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    # -- stages --------------------------------------------------------------

    def gen_scene(self) -> Scene:
        def run():
            self.path("scene.cfg").write_text(self.s.scene.to_config().dumps())
            self.path("channel.cfg").write_text(self.s.channel.to_config().dumps())
            self.path("config.resolved").write_text(self.s.config.dumps())
            return self.s.scene
        return self._stage("gen-scene", run)

    def build_map(self) -> FingerprintDataset:
        def run():
            fmap = ds.build_map(self.s.scene, self.s.channel, self.s.slots_per_rp)
            ds.write_dataset(fmap, self.path("map.bin"))
            return fmap
        return self._stage("build-map", run)

    def split(self):
        def run():
            fmap = ds.read_dataset(self.path("map.bin"))
            parts = ds.split(fmap, self.s.split_fractions, self.s.seed)
            for name, part in zip(("train", "val", "test"), parts):
                ds.write_dataset(part, self.path(f"{name}.bin"))
            return parts
        return self._stage("split", run)

    def train_sln(self) -> SlnLocalizer:
        def run():
            train = ds.read_dataset(self.path("train.bin"))
            val = ds.read_dataset(self.path("val.bin"))
            loc, history = train_sln(train, val, self.s.scene.rp_locations, self.s.sln_train)
            loc.save(self.path("sln.model"))
            nn.write_history(history, self.path("sln_history.csv"))
            return loc
        return self._stage("train-sln", run)

    def infer_slot(self):
        """SLN estimates on the held-out map part (FN training data) and on the evaluation streams."""
        def run():
            loc = SlnLocalizer.load(self.path("sln.model"))
            test = ds.read_dataset(self.path("test.bin"))
            _write_estimates(self.path("fn_source.csv"), test.locations, test.slots, loc.locate_dataset(test))
            n_slots = self.s.window * self.s.eval_windows
            slots = np.arange(self.s.eval_slot_offset, self.s.eval_slot_offset + n_slots)
            evalset = ds.collect(self.s.scene, self.s.channel, self.s.eval_locations, slots)
            ds.write_dataset(evalset, self.path("eval.bin"))
            _write_estimates(self.path("eval_sln.csv"), evalset.locations, evalset.slots,
                             loc.locate_dataset(evalset))
        return self._stage("infer-slot", run)

    def train_fn(self) -> FusionNet:
        def run():
            truths, slots, est = _read_estimates(self.path("fn_source.csv"))
            windows, wtruth, _ = ds.window_arrays(est, truths, slots, self.s.window)
            rng = np.random.default_rng([self.s.seed, 7])
            perm = rng.permutation(len(windows))
            n_val = max(1, int(round(self.s.fn_val_fraction * len(windows))))
            va, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
            net, history = train_fn(windows[tr], windows[va], self.s.fn_train, self.s.scene.area_bounds,
                                    wtruth[tr], wtruth[va], residual=self.s.fn_residual)
            net.save(self.path("fn.model"))
            nn.write_history(history, self.path("fn_history.csv"))
            return net
        return self._stage("train-fn", run)

    def evaluate(self) -> list[ErrorReport]:
        def run():
            train = ds.read_dataset(self.path("train.bin"))
            evalset = ds.read_dataset(self.path("eval.bin"))
            truths, slots, sln_est = _read_estimates(self.path("eval_sln.csv"))
            net = FusionNet.load(self.path("fn.model"))
            scene_digest = self.s.scene.digest()
            cfg_digest = self.s.config.digest()

            knn = KnnLocator(train, self.s.knn_k, backend=self.s.knn_backend)
            idx, dist = knn.neighbors(evalset.features)
            windows, wtruth, _ = ds.window_arrays(sln_est, truths, slots, self.s.window)
            estimates = {
                "knn": (knn.combine(idx, dist, weighted=False), evalset.locations),
                "wknn": (knn.combine(idx, dist, weighted=True), evalset.locations),
                "sln": (sln_est, truths),
                "sln+fn": (net.fuse_many(windows), wtruth),
                "sln+mean": (windows.mean(axis=1), wtruth),
                "sln+median": (np.median(windows, axis=1), wtruth),
            }
            reports = [ErrorReport.build(m, *estimates[m], scene_digest, cfg_digest) for m in METHODS]
            rdir = self.path("reports")
            rdir.mkdir(exist_ok=True)
            for r in reports:
                r.write(rdir)
            write_summary(reports, rdir / "summary.json")
            return reports
        return self._stage("evaluate", run)

    def run_all(self) -> dict[str, ErrorReport]:
        self.gen_scene()
        self.build_map()
        self.split()
        self.train_sln()
        self.infer_slot()
        self.train_fn()
        return {r.method: r for r in self.evaluate()}


def report_table(output_dir) -> str:
    summaries = json.loads((Path(output_dir) / "reports" / "summary.json").read_text())
    return format_table(summaries)


def _write_estimates(path, truths, slots, estimates) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_true", "y_true", "slot", "x_est", "y_est"])
        for t, sl, e in zip(truths, slots, estimates):
            w.writerow([repr(float(t[0])), repr(float(t[1])), int(sl), repr(float(e[0])), repr(float(e[1]))])


def _read_estimates(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    arr = np.array([[float(v) for v in row] for row in rows]).reshape(-1, 5)
    return arr[:, 0:2], arr[:, 2].astype(np.int64), arr[:, 3:5]


def run_experiment(config, output_dir=None, seed: int | None = None) -> dict[str, ErrorReport]:
    """Run every stage for a config file (or :class:`Config`) and return the reports by method."""
    cfg = config if isinstance(config, Config) else Config.load(config)
    return Experiment(Settings.from_config(cfg, output_dir, seed)).run_all()
