"""Desk-scale learning experiment: simulate a phantom corpus, train the GAN, report metrics.

    python scripts/run_experiment.py --out runs/exp --steps 2000
"""

import argparse
import dataclasses
import logging
import time

from holobf.pipeline import PipelineConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/experiment")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--lr", type=float, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = PipelineConfig(steps=args.steps, seed=args.seed)
    if args.lr is not None:
        cfg = dataclasses.replace(cfg, learning_rate=args.lr)
    t0 = time.time()
    corpus, result, s = run(cfg, args.out)
    print(f"patches: {len(corpus.dataset)}  val: {s.n_val}  time: {time.time() - t0:.0f}s")
    print(f"val L1: step 0 {s.initial_val_l1:.4f} -> final {s.final_val_l1:.4f} "
          f"(ratio {s.final_val_l1 / s.initial_val_l1:.3f})")
    print(f"SSIM output {s.ssim_output:.4f} vs input amplitude {s.ssim_input:.4f} "
          f"(gain {s.ssim_output - s.ssim_input:+.4f})")
    print(f"contrast closer to target on {100 * s.contrast_closer_fraction:.1f}% of val patches")
    print(f"colour correct on {100 * s.color_correct_fraction:.1f}% of {s.n_color_particles} in-focus particles")


if __name__ == "__main__":
    main()
