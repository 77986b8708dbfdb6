"""Network sanity runs: single-sample overfits and the 8-car training curve.

    python3 scripts/train_sanity.py OUT.json [--epochs 500]
"""

import argparse
import json
import logging
import time

import numpy as np

from carsplat.kinnet.train import AugmentConfig, TrainConfig, kin_errors, seg_accuracy, train_kin, train_seg
from carsplat.synth import CarSpec, generate, random_spec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--overfit-lr", type=float, default=5e-3)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    res = {}
    sample, _ = generate(CarSpec())
    off = AugmentConfig(enabled=False)
    t = time.time()
    seg = train_seg([sample], TrainConfig(epochs=200, lr=args.overfit_lr, augment=off))
    res["overfit_seg"] = {"accuracy": seg_accuracy(seg.net, [sample]), "seconds": time.time() - t,
                          "loss": [h.loss for h in seg.history]}
    t = time.time()
    kin = train_kin([sample], TrainConfig(epochs=200, augment=off))
    joint, hinge = kin_errors(kin.net, [sample])
    res["overfit_kin"] = {"joint_error": joint, "hinge_error": hinge, "seconds": time.time() - t}

    rng = np.random.default_rng(0)
    cars = [generate(random_spec(rng, seed=int(rng.integers(2 ** 31))))[0] for _ in range(8)]
    t = time.time()
    eight = train_seg(cars, TrainConfig(epochs=args.epochs), log_every=25)
    acc = [h.accuracy for h in eight.history]
    res["eight_cars"] = {"train_accuracy": acc, "clean_accuracy": seg_accuracy(eight.net, cars),
                         "first_epoch_at_95": next((i for i, a in enumerate(acc) if a >= 0.95), None),
                         "seconds": time.time() - t}
    with open(args.out, "w") as fh:
        json.dump(res, fh, indent=1)
    print(json.dumps({k: {kk: vv for kk, vv in v.items() if not isinstance(vv, list)} for k, v in res.items()},
                     indent=2))


if __name__ == "__main__":
    main()
