"""Desk-scale ablation experiment on synthetic motor imagery.

Generates a small pretraining corpus (8 subjects) plus 2 held-out downstream
subjects, harmonizes everything, then runs the {full, no_pretrain, no_selfsup}
ablation triple under shared seeds and splits.  Takes about ten minutes on
a laptop CPU.

    python3 scripts/run_desk_experiment.py --out /tmp/desk --seeds 0 1 2
"""

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mirep.model import EncoderConfig
from mirep.pipeline import prepare_downstream, prepare_pretraining
from mirep.synth import SynthSpec, synth_dataset
from mirep.tokenizer import TokenizerConfig
from mirep.train import TrainConfig, ablation_suite, summarize

CSV_FIELDS = ("dataset", "subject", "seed", "variant", "alpha", "split", "accuracy")


def desk_configs(pretrain_epochs: int):
    tok = TokenizerConfig(k_t=25, s_t=5, F=8, pool_len=8, D=64)
    enc = EncoderConfig(layers=2, D=64, heads=4, ff_mult=4, dropout=0.1,
                        decoder_layers=1, max_tokens=16)
    train = TrainConfig(alpha=0.5, lr=1e-3, batch=64,
                        epochs_pretrain=pretrain_epochs, epochs_finetune=10)
    return tok, enc, train


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--pretrain-epochs", type=int, default=40)
    ap.add_argument("--subjects", type=int, default=8)
    ap.add_argument("--trials-per-class", type=int, default=100)
    ap.add_argument("--duration", type=float, default=2.0)
    ap.add_argument("--noise-amp", type=float, default=1.0)
    ap.add_argument("--down-rhythm-hz", type=float, default=None,
                    help="shift downstream subjects' rhythm center (default: same)")
    args = ap.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = SynthSpec(noise_amp=args.noise_amp)
    down_spec = spec
    if args.down_rhythm_hz is not None:
        down_spec = SynthSpec(noise_amp=args.noise_amp,
                              rhythm_hz=args.down_rhythm_hz)
    pre_man = synth_dataset(args.out / "pre", n_subjects=args.subjects,
                            trials_per_class=args.trials_per_class,
                            duration=args.duration, seed=101, name="synth",
                            spec=spec)
    down_man = synth_dataset(args.out / "down", n_subjects=2,
                             trials_per_class=args.trials_per_class,
                             duration=args.duration, seed=202, name="synth",
                             spec=down_spec)
    print(f"corpus: {time.time() - t0:.0f}s", flush=True)

    pre_trials, names, retained, _refs = prepare_pretraining([pre_man])
    down = prepare_downstream(down_man)
    print(f"retained: {retained}  labels: {names}", flush=True)

    tok, enc, train = desk_configs(args.pretrain_epochs)
    train = TrainConfig(alpha=train.alpha, lr=train.lr, batch=train.batch,
                        epochs_pretrain=train.epochs_pretrain,
                        epochs_finetune=train.epochs_finetune,
                        seeds=tuple(args.seeds))
    rows, _states = ablation_suite(pre_trials, down, train, tok, enc,
                                   n_classes=len(names))
    print(f"suite: {time.time() - t0:.0f}s", flush=True)

    with open(args.out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)

    summary = summarize(rows)
    for key, stats in summary.items():
        print(f"{key[0]:12s} mean={stats['mean']:6.2f}  std={stats['std']:5.2f}  "
              f"n={stats['n']}")
    full = summary[("full",)]["mean"]
    no_ss = summary[("no_selfsup",)]["mean"]
    no_pt = summary[("no_pretrain",)]["mean"]
    ok = full >= no_ss >= no_pt and full >= 85.0
    print(f"ordering full>=no_selfsup>=no_pretrain and full>=85: {ok}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
