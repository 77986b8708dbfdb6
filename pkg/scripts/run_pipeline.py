"""End-to-end desk-scale run: synthesize data, train both networks, run the
pipeline on held-out vehicles and compare refined against unrefined PSNR.

    python3 scripts/run_pipeline.py OUT_DIR [--train 8] [--eval 3] [--size 128]
"""

import argparse
import json
import logging
import time
from pathlib import Path

from carsplat.harness.pipeline import PipelineConfig, run_suite
from carsplat.kinnet.train import TrainConfig, kin_errors, seg_accuracy, train_kin, train_seg
from carsplat.synth import generate_suite, load_sample


def load_suite(directory):
    return [load_sample(p) for p in sorted(Path(directory).iterdir()) if (p / "points.ply").exists()]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--train", type=int, default=8)
    ap.add_argument("--eval", type=int, default=3)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--seg-epochs", type=int, default=500)
    ap.add_argument("--kin-epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    t0 = time.time()
    generate_suite(out / "train", args.train, seed=args.seed, with_gaussians=False)
    generate_suite(out / "eval", args.eval, seed=args.seed + 1000)
    data = load_suite(out / "train")

    seg = train_seg(data, TrainConfig(epochs=args.seg_epochs), log_every=25)
    kin = train_kin(data, TrainConfig(epochs=args.kin_epochs), log_every=25)
    seg.net.save(out / "seg")
    kin.net.save(out / "kin")
    timing = {"train": time.time() - t0}
    stats = {"seg_accuracy": seg_accuracy(seg.net, data), "seg_epochs": len(seg.history),
             "kin_errors": kin_errors(kin.net, data)}

    cfg = PipelineConfig(image_size=args.size)
    _, summary = run_suite(out / "eval", seg.net, kin.net, cfg, out / "pipeline")
    timing["total"] = time.time() - t0
    result = {**summary, **stats, "timing": timing}
    (out / "result.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
