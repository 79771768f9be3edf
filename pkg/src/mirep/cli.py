"""Command-line surface: synth, preprocess, pretrain, finetune, eval, ablate,
sweep.

One executable, subcommand style.  A JSON config file provides defaults and
explicit flags win over it.  Every run writes deterministic artifacts
(checkpoints, CSV reports with the fixed schema, a resolved-config echo);
wall-clock timestamps go only to a sidecar run.log so reruns stay
byte-identical.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DatasetManifest, SessionEntry, SubjectEntry,
                   load_manifest, save_manifest, split_calibration,
                   write_trial_file)
from .dsp import FilterSpec, ResampleSpec
from .model import EncoderConfig
from .pipeline import PreprocSpec, prepare_downstream, prepare_pretraining
from .spatial import (TemplateSpec, ea_reference, ea_whiten,
                      save_align_reference)
from .synth import synth_dataset
from .tokenizer import TokenizerConfig
from .train import (MASK_GRID, TrainConfig, ablation_suite, evaluate_trials,
                    finetune, mask_sweep, pretrain, summarize)

__all__ = ["main"]

CSV_FIELDS = ("dataset", "subject", "seed", "variant", "alpha", "split", "accuracy")

_CONFIG_SECTIONS = {
    "filter": FilterSpec,
    "resample": ResampleSpec,
    "template": TemplateSpec,
    "tokenizer": TokenizerConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
}
# the montage itself is not JSON material; only the electrode list is settable
_SECTION_KEY_BLOCKLIST = {"template": {"montage"}}


class UsageError(Exception):
    """Bad flags or config schema; maps to exit code 2."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(doc) - set(_CONFIG_SECTIONS)
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}; "
                         f"known: {sorted(_CONFIG_SECTIONS)}")
    for section, cls in _CONFIG_SECTIONS.items():
        body = doc.get(section, {})
        if not isinstance(body, dict):
            raise UsageError(f"config section {section!r} must be an object")
        valid = {f.name for f in dataclasses.fields(cls)}
        valid -= _SECTION_KEY_BLOCKLIST.get(section, set())
        bad = set(body) - valid
        if bad:
            raise UsageError(f"unknown keys in config section {section!r}: "
                             f"{sorted(bad)}; known: {sorted(valid)}")
    return doc


def _build(cls, section: dict, **overrides):
    """Dataclass from config section, with non-None flag overrides winning."""
    kv = dict(section)
    kv.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kv)
    except (TypeError, ValueError, KeyError) as e:
        raise UsageError(f"bad {cls.__name__}: {e}")


def _preproc_spec(cfg: dict) -> PreprocSpec:
    return PreprocSpec(
        filter=_build(FilterSpec, cfg.get("filter", {})),
        resample=_build(ResampleSpec, cfg.get("resample", {})),
        template=_build(TemplateSpec, cfg.get("template", {})),
    )


def _resolved_config(**parts) -> dict:
    out = {}
    for name, obj in parts.items():
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            out[name] = dataclasses.asdict(obj)
        else:
            out[name] = obj
    return out


def _write_rows(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in CSV_FIELDS})


def _write_report(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _sidecar_log(out_dir: Path, argv, t0: float) -> None:
    # the one place wall-clock time is allowed
    stamp = time.strftime("%Y-%m-%d %H:%M:%S", time.localtime())
    with open(out_dir / "run.log", "a") as fh:
        fh.write(f"{stamp} argv={argv} elapsed={time.time() - t0:.1f}s\n")


def _load_manifests(paths) -> list[DatasetManifest]:
    return [load_manifest(Path(p)) for p in paths]


def _write_harmonized(trials, names, out_dir: Path, dataset_name: str) -> DatasetManifest:
    """Persist whitened trials as a new on-disk dataset."""
    trial_dir = out_dir / "trials"
    trial_dir.mkdir(parents=True, exist_ok=True)
    per_subject: dict[str, dict[str, list[str]]] = {}
    for i, t in enumerate(trials):
        rel = f"trials/{t.subject_id}_{t.session_id}_t{i:05d}.mirp"
        write_trial_file(t, out_dir / rel)
        per_subject.setdefault(t.subject_id, {}).setdefault(t.session_id, []).append(rel)
    subjects = tuple(
        SubjectEntry(id=sub, sessions=tuple(
            SessionEntry(id=ses, trials=tuple(rels))
            for ses, rels in sorted(sessions.items())))
        for sub, sessions in sorted(per_subject.items()))
    manifest = DatasetManifest(name=dataset_name, fs=trials[0].fs,
                               channels=trials[0].channels, label_vocab=names,
                               subjects=subjects, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args, cfg: dict) -> int:
    if args.subjects < 1:
        raise UsageError("--subjects must be >= 1")
    if args.trials_per_class < 1:
        raise UsageError("--trials-per-class must be >= 1")
    out = Path(args.out)
    man = synth_dataset(out, n_subjects=args.subjects,
                        trials_per_class=args.trials_per_class,
                        classes=tuple(args.classes), fs=args.fs,
                        duration=args.duration, seed=args.seed, name=args.name)
    n = sum(len(ses.trials) for sub in man.subjects for ses in sub.sessions)
    print(f"wrote {n} trials for {len(man.subjects)} subjects to {out}")
    return 0


def cmd_preprocess(args, cfg: dict) -> int:
    spec = _preproc_spec(cfg)
    manifests = _load_manifests(args.data)
    trials, names, retained, refs = prepare_pretraining(
        manifests, spec, screening=not args.no_screening,
        threshold=args.threshold, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_harmonized(trials, names, out, "harmonized")
    align_dir = out / "align"
    align_dir.mkdir(exist_ok=True)
    for (sub, ses), ref in sorted(refs.items()):
        save_align_reference(ref, align_dir / f"{sub}_{ses}.json")
    _write_report(out / "report.json", {
        "labels": list(names),
        "retained": {k: list(v) for k, v in sorted(retained.items())},
        "config": _resolved_config(filter=spec.filter, resample=spec.resample,
                                   template=list(spec.template.electrodes),
                                   screening=not args.no_screening,
                                   threshold=args.threshold),
    })
    for ds in sorted(retained):
        print(f"retained [{ds}]: {' '.join(retained[ds]) or '(none)'}")
    return 0


def _train_bundle(args, cfg: dict) -> tuple[TokenizerConfig, EncoderConfig, TrainConfig]:
    tok = _build(TokenizerConfig, cfg.get("tokenizer", {}))
    enc = _build(EncoderConfig, cfg.get("encoder", {}))
    train = _build(TrainConfig, cfg.get("train", {}),
                   alpha=getattr(args, "alpha", None),
                   lr=getattr(args, "lr", None),
                   batch=getattr(args, "batch", None),
                   epochs_pretrain=getattr(args, "epochs", None),
                   epochs_finetune=getattr(args, "finetune_epochs", None),
                   seeds=tuple(args.seed_list) if getattr(args, "seed_list", None) else None,
                   ablation=getattr(args, "ablation", None),
                   finetune_fraction=getattr(args, "fraction", None))
    return tok, enc, train


def cmd_pretrain(args, cfg: dict) -> int:
    tok, enc, train = _train_bundle(args, cfg)
    if train.ablation == "no_pretrain":
        raise UsageError("ablation 'no_pretrain' skips this stage entirely; "
                         "use 'full' or 'no_selfsup'")
    manifests = _load_manifests(args.data)
    spec = _preproc_spec(cfg)
    trials, names, retained, _refs = prepare_pretraining(
        manifests, spec, screening=not args.no_screening,
        threshold=args.threshold, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = "+".join(man.name for man in manifests)
    rows, histories = [], {}
    for seed in train.seeds:
        state, hist = pretrain(trials, train, seed, tok, enc,
                               n_classes=len(names))
        save_checkpoint(state, out / f"model_s{seed}.ckpt",
                        extra={"labels": list(names), "seed": seed,
                               "variant": train.ablation})
        histories[str(seed)] = hist
        rows.append({"dataset": corpus, "subject": "*", "seed": seed,
                     "variant": train.ablation, "alpha": train.alpha,
                     "split": "train",
                     "accuracy": evaluate_trials(state, trials)})
    _write_rows(out / "results.csv", rows)
    _write_report(out / "report.json", {
        "labels": list(names),
        "retained": {k: list(v) for k, v in sorted(retained.items())},
        "history": histories,
        "config": _resolved_config(tokenizer=tok, encoder=enc, train=train),
    })
    for r in rows:
        print(f"seed {r['seed']}: train accuracy {r['accuracy']:.2f}")
    return 0


def cmd_finetune(args, cfg: dict) -> int:
    tok, enc, train = _train_bundle(args, cfg)
    state, extra = load_checkpoint(args.checkpoint)
    man = load_manifest(Path(args.data))
    spec = _preproc_spec(cfg)
    down = prepare_downstream(man, spec, jobs=args.jobs)
    subjects = args.subject or sorted(down)
    missing = [s for s in subjects if s not in down]
    if missing:
        raise UsageError(f"subjects {missing} not in dataset "
                         f"{sorted(down)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, reports = [], {}
    for subject in subjects:
        for seed in train.seeds:
            tuned, rep = finetune(state, down[subject], train, seed)
            save_checkpoint(tuned, out / f"tuned_{subject}_s{seed}.ckpt",
                            extra={"subject": subject, "seed": seed})
            reports[f"{subject}/s{seed}"] = dataclasses.asdict(rep)
            rows.append({"dataset": man.name, "subject": subject, "seed": seed,
                         "variant": extra.get("variant", "full"),
                         "alpha": train.alpha, "split": "test",
                         "accuracy": rep.acc_at_report})
    _write_rows(out / "results.csv", rows)
    _write_report(out / "report.json", {
        "reports": reports,
        "config": _resolved_config(tokenizer=tok, encoder=enc, train=train),
    })
    for r in rows:
        print(f"{r['subject']} seed {r['seed']}: test accuracy {r['accuracy']:.2f}")
    return 0


def cmd_eval(args, cfg: dict) -> int:
    state, extra = load_checkpoint(args.checkpoint)
    man = load_manifest(Path(args.data))
    spec = _preproc_spec(cfg)
    train = _build(TrainConfig, cfg.get("train", {}),
                   finetune_fraction=getattr(args, "fraction", None))
    down = prepare_downstream(man, spec, jobs=args.jobs)
    subjects = args.subject or sorted(down)
    rows = []
    for subject in subjects:
        if subject not in down:
            raise UsageError(f"subject {subject!r} not in dataset {sorted(down)}")
        cal, test = split_calibration(down[subject], train.finetune_fraction)
        ref = ea_reference(cal)
        test_w = [ea_whiten(t, ref) for t in test]
        acc = evaluate_trials(state, test_w)
        rows.append({"dataset": man.name, "subject": subject, "seed": -1,
                     "variant": "eval", "alpha": train.alpha, "split": "test",
                     "accuracy": acc})
        print(f"{subject}: test accuracy {acc:.2f} "
              f"(no adaptation, reference from {len(cal)} calibration trials)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "results.csv", rows)
    return 0


def cmd_ablate(args, cfg: dict) -> int:
    tok, enc, train = _train_bundle(args, cfg)
    manifests = _load_manifests(args.data)
    spec = _preproc_spec(cfg)
    trials, names, retained, _refs = prepare_pretraining(
        manifests, spec, screening=not args.no_screening,
        threshold=args.threshold, jobs=args.jobs)
    down_man = load_manifest(Path(args.downstream))
    down = prepare_downstream(down_man, spec, jobs=args.jobs)
    rows, states = ablation_suite(trials, down, train, tok, enc,
                                  dataset=down_man.name, n_classes=len(names))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (variant, seed), state in states.items():
        save_checkpoint(state, out / f"model_{variant}_s{seed}.ckpt",
                        extra={"labels": list(names), "seed": seed,
                               "variant": variant})
    _write_rows(out / "results.csv", rows)
    summary = summarize(rows)
    _write_report(out / "report.json", {
        "summary": {k[0]: v for k, v in summary.items()},
        "retained": {k: list(v) for k, v in sorted(retained.items())},
        "config": _resolved_config(tokenizer=tok, encoder=enc, train=train),
    })
    for key, stats in summary.items():
        print(f"{key[0]:12s} mean={stats['mean']:6.2f} std={stats['std']:5.2f} "
              f"n={stats['n']}")
    return 0


def cmd_sweep(args, cfg: dict) -> int:
    tok, enc, train = _train_bundle(args, cfg)
    manifests = _load_manifests(args.data)
    spec = _preproc_spec(cfg)
    trials, names, _retained, _refs = prepare_pretraining(
        manifests, spec, screening=not args.no_screening,
        threshold=args.threshold, jobs=args.jobs)
    down_man = load_manifest(Path(args.downstream))
    down = prepare_downstream(down_man, spec, jobs=args.jobs)
    alphas = tuple(args.alphas) if args.alphas else MASK_GRID
    rows = mask_sweep(trials, down, train, tok, enc, alphas=alphas,
                      dataset=down_man.name, n_classes=len(names))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "results.csv", rows)
    summary = summarize(rows, group_keys=("alpha",))
    _write_report(out / "report.json", {
        "summary": {str(k[0]): v for k, v in summary.items()},
        "config": _resolved_config(tokenizer=tok, encoder=enc, train=train,
                                   alphas=list(alphas)),
    })
    for key, stats in summary.items():
        print(f"alpha={key[0]:<5} mean={stats['mean']:6.2f} std={stats['std']:5.2f} "
              f"n={stats['n']}")
    return 0


# -- argument plumbing ----------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags win")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker threads for per-trial preprocessing (default 1)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, help="mask ratio (default 0.5)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    p.add_argument("--batch", type=int, help="batch size (default 64)")
    p.add_argument("--epochs", type=int, help="pretraining epochs (default 100)")
    p.add_argument("--finetune-epochs", type=int,
                   help="fine-tuning epochs (default 10)")
    p.add_argument("--seed-list", type=int, nargs="+", metavar="SEED",
                   help="seeds to run (default 0 1 2)")
    p.add_argument("--fraction", type=float,
                   help="calibration fraction (default 0.3)")


def _add_screening_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-screening", action="store_true",
                   help="skip the CSP+LDA subject gate")
    p.add_argument("--threshold", type=float, default=0.6,
                   help="screening CV-accuracy threshold (default 0.6)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mirep",
        description="harmonize heterogeneous EEG and train motor-imagery models")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, default=2, help="subject count (default 2)")
    p.add_argument("--trials-per-class", type=int, default=20,
                   help="trials per class per subject (default 20)")
    p.add_argument("--classes", nargs="+", default=["left_hand", "right_hand"],
                   help="class names (default left_hand right_hand)")
    p.add_argument("--fs", type=float, default=250.0, help="sampling rate (default 250)")
    p.add_argument("--duration", type=float, default=4.0,
                   help="trial length in seconds (default 4.0)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--name", default="synth", help="dataset name (default synth)")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="harmonize datasets into template space")
    p.add_argument("--data", nargs="+", required=True, metavar="MANIFEST",
                   help="dataset manifest.json paths")
    p.add_argument("--out", required=True, help="output directory")
    _add_screening_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("pretrain", help="joint masked-reconstruction + classification")
    p.add_argument("--data", nargs="+", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=("full", "no_selfsup"),
                   help="pretraining variant (default full)")
    _add_screening_flags(p)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="few-shot adaptation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--subject", nargs="*", help="subject ids (default: all)")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint without training")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--subject", nargs="*", help="subject ids (default: all)")
    p.add_argument("--out", help="optional directory for results.csv")
    p.add_argument("--fraction", type=float,
                   help="calibration fraction for the alignment reference")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="full / no_pretrain / no_selfsup comparison")
    p.add_argument("--data", nargs="+", required=True, metavar="MANIFEST",
                   help="pretraining manifests")
    p.add_argument("--downstream", required=True, metavar="MANIFEST",
                   help="downstream dataset manifest")
    p.add_argument("--out", required=True)
    _add_screening_flags(p)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", help="mask-ratio sweep")
    p.add_argument("--data", nargs="+", required=True, metavar="MANIFEST")
    p.add_argument("--downstream", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True)
    p.add_argument("--alphas", type=float, nargs="+",
                   help=f"mask ratios (default {' '.join(map(str, MASK_GRID))})")
    _add_screening_flags(p)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    t0 = time.time()
    try:
        cfg = _load_config(args.config)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        rc = args.fn(args, cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = getattr(args, "out", None)
    if rc == 0 and out:
        _sidecar_log(Path(out), argv, t0)
    return rc


if __name__ == "__main__":
    sys.exit(main())
