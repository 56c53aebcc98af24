"""Recompute the moderate-noise SLN accuracy calibration.

Builds the indoor map on the channel in thresholds.cfg, then prints 1-NN and
SLN top-1 accuracy on the validation part. The 0.90 threshold sits below
both numbers.

    python golden/calibrate_moderate.py
"""

from pathlib import Path

from csiloc import dataset as ds, nn
from csiloc.channel import ChannelParams, indoor_scene
from csiloc.config import Config
from csiloc.localizers import KnnLocator, top1_accuracy, train_sln


def main():
    cfg = Config.load(Path(__file__).with_name("thresholds.cfg"))
    scene = indoor_scene()
    params = ChannelParams(rician_k=cfg.get_float("moderate_rician_k"),
                           noise_sigma=cfg.get_float("moderate_noise_sigma"),
                           rng_seed=cfg.get_int("moderate_rng_seed"))
    fmap = ds.build_map(scene, params, cfg.get_int("moderate_slots_per_rp"))
    tr, va, _ = ds.split(fmap, (0.6, 0.2, 0.2), seed=0)
    idx, _ = KnnLocator(tr, 1).neighbors(va.features)
    knn_acc = float((tr.rp_index[idx[:, 0]] == va.rp_index).mean())
    loc, _ = train_sln(tr, va, scene.rp_locations, nn.TrainConfig(max_epochs=150, patience=10))
    print(f"1-NN accuracy {knn_acc:.4f}")
    print(f"SLN accuracy  {top1_accuracy(loc, va):.4f}")
    print(f"threshold     {cfg.get_float('sln_accuracy_min'):.2f}")


if __name__ == "__main__":
    main()
