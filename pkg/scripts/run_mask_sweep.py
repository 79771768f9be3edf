"""Mask-ratio sweep on the desk-scale synthetic corpus.

One full pretrain+finetune per (alpha, seed); with the default grid and three
seeds that is fifteen runs, roughly half an hour on a laptop CPU.

    python3 scripts/run_mask_sweep.py --out /tmp/sweep --seeds 0 1 2
"""

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mirep.pipeline import prepare_downstream, prepare_pretraining
from mirep.synth import synth_dataset
from mirep.train import MASK_GRID, TrainConfig, mask_sweep, summarize

from run_desk_experiment import CSV_FIELDS, desk_configs


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--pretrain-epochs", type=int, default=40)
    ap.add_argument("--alphas", type=float, nargs="+", default=list(MASK_GRID))
    args = ap.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    pre_man = synth_dataset(args.out / "pre", n_subjects=8, trials_per_class=100,
                            duration=2.0, seed=101, name="synth")
    down_man = synth_dataset(args.out / "down", n_subjects=2,
                             trials_per_class=100, duration=2.0, seed=202,
                             name="synth")
    pre_trials, names, _retained, _refs = prepare_pretraining([pre_man])
    down = prepare_downstream(down_man)

    tok, enc, train = desk_configs(args.pretrain_epochs)
    train = TrainConfig(alpha=train.alpha, lr=train.lr, batch=train.batch,
                        epochs_pretrain=train.epochs_pretrain,
                        epochs_finetune=train.epochs_finetune,
                        seeds=tuple(args.seeds))
    rows = mask_sweep(pre_trials, down, train, tok, enc,
                      alphas=tuple(args.alphas), n_classes=len(names))
    print(f"sweep: {time.time() - t0:.0f}s", flush=True)

    with open(args.out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)

    summary = summarize(rows, group_keys=("alpha",))
    means = []
    for key, stats in summary.items():
        means.append(stats["mean"])
        print(f"alpha={key[0]:<5} mean={stats['mean']:6.2f}  "
              f"std={stats['std']:5.2f}  n={stats['n']}")
    print(f"spread (max-min): {max(means) - min(means):.2f} points")
    return 0


if __name__ == "__main__":
    sys.exit(main())
