"""Train the sampling baselines and the TSD pipeline, then compare them at few frames.

Writes ``trend.csv`` (variant,T,T_s,Q,accuracy) to ``--out``. The defaults
reproduce the acceptance schedule; ``--scale 0.1`` gives a quick smoke run.

    python scripts/few_frame_trend.py --out runs/trend
"""
import argparse
import logging
import os
import time

from tsdistill import synthvid, train
from tsdistill.nets import NetConfig
from tsdistill.synthvid import SynthSpec

log = logging.getLogger("few_frame_trend")


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs/trend")
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies every step count")
    ap.add_argument("--n-train", type=int, default=4000)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    os.makedirs(args.out, exist_ok=True)

    spec, net_cfg = SynthSpec(seed=args.seed), NetConfig()
    x_train, y_train = synthvid.generate_dataset(spec, args.n_train, "train")
    x_test, y_test = synthvid.generate_dataset(spec, args.n_test, "test")

    def steps(n):
        return max(1, int(n * args.scale))

    models = {}
    for variant, n in (("uniform", 3000), ("rand", 3000), ("i3d", 1000)):
        start = time.perf_counter()
        cfg = train.TrainConfig(variant=variant, seed=args.seed, base_steps=steps(n),
                                base_decay_steps=max(1, steps(n) * 3 // 4))
        models[variant], curves = train.train_variant(x_train, y_train, net_cfg, cfg)
        train.write_loss_csv(os.path.join(args.out, f"loss_{variant}.csv"), curves["base"])
        log.info("%s trained in %.0fs", variant, time.perf_counter() - start)

    start = time.perf_counter()
    n = steps(400)
    cfg = train.TrainConfig(variant="tsd", seed=args.seed, stage1_steps=n, stage2_steps=n,
                            stage1_decay_steps=max(1, n * 3 // 4),
                            stage2_decay_steps=max(1, n * 3 // 4))
    models["tsd"], curves = train.train_variant(x_train, y_train, net_cfg, cfg,
                                                init_main=models["uniform"].main)
    for stage, losses in curves.items():
        train.write_loss_csv(os.path.join(args.out, f"loss_tsd_{stage}.csv"), losses)
    log.info("tsd trained in %.0fs", time.perf_counter() - start)

    reports = []
    for q in (1, 3):
        for variant in ("tsd", "uniform", "rand"):
            reports.append(train.evaluate_qclips(models[variant], x_test, y_test, variant, 16, 4, q,
                                                 args.seed, net_cfg))
        # plain recognizer on 4 consecutive frames, and on the full window
        reports.append(train.evaluate_qclips(models["i3d"], x_test, y_test, "i3d", 4, 4, q,
                                             args.seed, net_cfg))
        reports.append(train.evaluate_qclips(models["i3d"], x_test, y_test, "i3d", 16, 16, q,
                                             args.seed, net_cfg))
    for r in reports:
        log.info("%-8s T=%-2d T_s=%-2d Q=%d accuracy %.3f", r.variant, r.T, r.T_s, r.Q, r.accuracy)
    train.write_eval_csv(os.path.join(args.out, "trend.csv"), reports)


if __name__ == "__main__":
    main()
