"""Joint pretraining, few-shot fine-tuning, evaluation, ablations, mask sweep.

Pretraining minimizes L_rec + L_cls per step on class-balanced batches drawn
from the union of harmonized datasets: the masked branch goes through the
decoder for the reconstruction term, the unmasked branch is pooled for the
classification term, and one Adam update follows.  Fine-tuning drops the
reconstruction branch entirely (supervised only), fits its Euclidean-alignment
reference on the chronological calibration split alone, and reports test
accuracy at epoch 10 and at the best epoch.

Every run is a pure function of (seed, config, data): all randomness flows
from named SeedSequence streams, so checkpoints and reports are bit-identical
across reruns.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Trial, split_calibration
from .model import (EncoderConfig, ModelState, ce_loss, decode, encode,
                    head_logits, init_model, joint_loss, mask_apply,
                    pool_tokens, rec_loss, swap_head, tokenize_batch)
from .optim import Adam
from .spatial import ea_reference, ea_whiten
from .tokenizer import TokenizerConfig, token_count

__all__ = [
    "TrainConfig", "FinetuneReport", "sample_mask_set", "stack_trials",
    "pretrain", "finetune", "evaluate", "ablation_suite", "mask_sweep",
    "copy_state", "split_fingerprint", "ABLATION_VARIANTS", "MASK_GRID",
]

ABLATION_VARIANTS = ("full", "no_pretrain", "no_selfsup")
MASK_GRID = (0.1, 0.25, 0.5, 0.75, 0.9)

# named sub-streams hanging off the run seed
_STREAM_BATCH = 1
_STREAM_MASK = 2
_STREAM_DROPOUT = 3
_STREAM_FINETUNE = 4


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    lr: float = 1e-3
    batch: int = 64
    epochs_pretrain: int = 100
    epochs_finetune: int = 10
    seeds: tuple[int, ...] = (0, 1, 2)
    ablation: str = "full"
    finetune_fraction: float = 0.3
    freeze_body: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.finetune_fraction < 1.0:
            raise ValueError("finetune_fraction must lie in (0, 1)")
        if self.batch < 1 or self.epochs_pretrain < 1 or self.epochs_finetune < 1:
            raise ValueError("batch and epoch counts must be >= 1")
        if self.ablation not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        object.__setattr__(self, "seeds", tuple(self.seeds))


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def sample_mask_set(h_prime: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform mask set without replacement, |M| = round(alpha * H').

    Rounding is round-half-up so alpha=0.5, H'=25 gives 13.  Degenerate sizes
    are clamped into [1, H'-1] with a warning.
    """
    if h_prime < 2:
        raise ValueError(f"cannot mask a sequence of {h_prime} tokens")
    size = int(np.floor(alpha * h_prime + 0.5))
    if size < 1 or size > h_prime - 1:
        clamped = min(max(size, 1), h_prime - 1)
        warnings.warn(
            f"mask size {size} for alpha={alpha}, H'={h_prime} clamped to {clamped}",
            stacklevel=2)
        size = clamped
    idx = rng.choice(h_prime, size=size, replace=False)
    return np.sort(idx)


def stack_trials(trials) -> tuple[np.ndarray, np.ndarray]:
    """Stack same-shape labeled trials into (X, y); X as float32."""
    trials = list(trials)
    if not trials:
        raise ValueError("empty trial list")
    shapes = {t.data.shape for t in trials}
    if len(shapes) != 1:
        raise ValueError(f"trials disagree in shape: {sorted(shapes)}")
    if any(t.label is None for t in trials):
        raise ValueError("unlabeled trial in a supervised set")
    x = np.stack([t.data for t in trials]).astype(np.float32)
    y = np.array([t.label for t in trials], dtype=np.int64)
    return x, y


class _BalancedBatches:
    """Exact-even class batches from per-class shuffled queues.

    batch // n_classes trials are drawn from every class each step; a queue
    reshuffles when it runs out, so minority classes recycle within an epoch.
    """

    def __init__(self, labels: np.ndarray, batch: int, rng: np.random.Generator):
        self.rng = rng
        self.by_class = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
        self.per_class = max(1, batch // len(self.by_class))
        self.n_total = len(labels)
        self._queues = {c: self._fresh(c) for c in self.by_class}

    def _fresh(self, c: int) -> list[int]:
        order = self.by_class[c].copy()
        self.rng.shuffle(order)
        return list(order)

    def steps_per_epoch(self) -> int:
        return max(1, -(-self.n_total // (self.per_class * len(self.by_class))))

    def next_batch(self) -> np.ndarray:
        picks = []
        for c in sorted(self.by_class):
            q = self._queues[c]
            while len(q) < self.per_class:
                q.extend(self._fresh(c))
            picks.extend(q[:self.per_class])
            del q[:self.per_class]
        return np.array(picks, dtype=np.int64)


def _assert_no_test(trials, where: str) -> None:
    for t in trials:
        if t.role == "test":
            raise ValueError(f"test trial ({t.subject_id}/{t.session_id}) reached {where}")


def pretrain(trials, config: TrainConfig, seed: int,
             tok_cfg: TokenizerConfig = TokenizerConfig(),
             enc_cfg: EncoderConfig = EncoderConfig(),
             n_classes: int | None = None) -> tuple[ModelState, dict]:
    """Joint pretraining over already-harmonized trials.

    Returns the trained state and a history dict with per-epoch mean losses
    ("rec", "cls", "total").  With ablation == "no_selfsup" the reconstruction
    branch is never built and "rec" stays at 0.
    """
    trials = list(trials)
    _assert_no_test(trials, "pretrain")
    x_all, y_all = stack_trials(trials)
    n_classes = n_classes if n_classes is not None else int(y_all.max()) + 1
    h_prime = token_count(x_all.shape[2], tok_cfg)
    if h_prime > enc_cfg.max_tokens:
        raise ValueError(f"H'={h_prime} exceeds positional capacity {enc_cfg.max_tokens}")

    state = init_model(tok_cfg, enc_cfg, x_all.shape[1], n_classes, seed)
    opt = Adam(state.params, lr=config.lr)
    batch_rng = _stream(seed, _STREAM_BATCH)
    mask_rng = _stream(seed, _STREAM_MASK)
    drop_rng = _stream(seed, _STREAM_DROPOUT)
    batches = _BalancedBatches(y_all, config.batch, batch_rng)
    with_rec = config.ablation != "no_selfsup"

    history = {"rec": [], "cls": [], "total": []}
    for _epoch in range(config.epochs_pretrain):
        rec_sum = cls_sum = tot_sum = 0.0
        steps = batches.steps_per_epoch()
        for _step in range(steps):
            idx = batches.next_batch()
            x, y = x_all[idx], y_all[idx]
            tokens = tokenize_batch(state, x)
            if with_rec:
                mask_bool = np.zeros((len(idx), h_prime), dtype=bool)
                for b in range(len(idx)):
                    mask_bool[b, sample_mask_set(h_prime, config.alpha, mask_rng)] = True
                masked = mask_apply(tokens, mask_bool, state.params["mask_embedding"])
                z_hat = decode(state, encode(state, masked, train=True, rng=drop_rng),
                               train=True, rng=drop_rng)
                l_rec = rec_loss(z_hat, tokens, mask_bool)
            ctx = encode(state, tokens, train=True, rng=drop_rng)
            l_cls = ce_loss(head_logits(state, pool_tokens(ctx)), y)
            loss = joint_loss(l_rec, l_cls) if with_rec else l_cls
            opt.zero_grad()
            loss.backward()
            opt.step()
            rec_sum += float(l_rec.data) if with_rec else 0.0
            cls_sum += float(l_cls.data)
            tot_sum += float(loss.data)
        history["rec"].append(rec_sum / steps)
        history["cls"].append(cls_sum / steps)
        history["total"].append(tot_sum / steps)
    return state, history


def copy_state(state: ModelState) -> ModelState:
    """Independent copy so fine-tuning cannot touch the pretrained weights."""
    from .autograd import parameter
    params = {k: parameter(p.data.copy(), k) for k, p in state.params.items()}
    return ModelState(tok_cfg=state.tok_cfg, enc_cfg=state.enc_cfg,
                      n_channels=state.n_channels, n_classes=state.n_classes,
                      params=params, dtype=state.dtype)


def split_fingerprint(cal, test) -> str:
    """Digest of a calibration/test split, for controlled-comparison checks."""
    h = hashlib.sha256()
    for tag, group in (("cal", cal), ("test", test)):
        for t in group:
            h.update(tag.encode())
            h.update(f"{t.subject_id}/{t.session_id}/{t.label}".encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class FinetuneReport:
    acc_per_epoch: tuple[float, ...]
    probe_acc: float
    acc_at_report: float      # epoch min(10, epochs_finetune)
    best_acc: float
    best_epoch: int
    n_cal: int
    n_test: int
    split_hash: str
    loss_per_epoch: tuple[float, ...] = field(default=())


def finetune(state: ModelState, subject_trials, config: TrainConfig,
             seed: int) -> tuple[ModelState, FinetuneReport]:
    """Few-shot supervised fine-tuning on one subject.

    subject_trials are template-space (pre-alignment) trials in acquisition
    order.  The alignment reference is fitted on the calibration split only;
    masking is disabled; the head is re-initialized when the class count
    changes.  The incoming state is copied, never mutated.
    """
    trials = list(subject_trials)
    cal, test = split_calibration(trials, config.finetune_fraction)
    labels = sorted({t.label for t in trials})
    n_classes = len(labels)
    per_class = {c: sum(1 for t in cal if t.label == c) for c in labels}
    if min(per_class.values(), default=0) < 1:
        raise ValueError(f"calibration split lacks a class: {per_class}")

    split_hash = split_fingerprint(cal, test)
    ref = ea_reference(cal)
    cal_w = [ea_whiten(t, ref) for t in cal]
    test_w = [ea_whiten(t, ref) for t in test]

    work = copy_state(state)
    if work.n_classes != n_classes:
        work = swap_head(work, n_classes, seed)
    # dense label ids for the head, in sorted original order
    remap = {lab: i for i, lab in enumerate(labels)}
    x_cal, y_cal = stack_trials(cal_w)
    x_test, y_test = stack_trials(test_w)
    y_cal = np.array([remap[int(v)] for v in y_cal], dtype=np.int64)
    y_test = np.array([remap[int(v)] for v in y_test], dtype=np.int64)

    if config.freeze_body:
        trainable = {k: p for k, p in work.params.items() if k.startswith("head.")}
    else:
        trainable = work.params
    opt = Adam(trainable, lr=config.lr)
    batch_rng = _stream(seed, _STREAM_FINETUNE)
    drop_rng = _stream(seed, _STREAM_DROPOUT + 10)
    batches = _BalancedBatches(y_cal, min(config.batch, len(y_cal)), batch_rng)

    probe = evaluate(work, x_test, y_test)
    accs, losses = [], []
    for _epoch in range(config.epochs_finetune):
        loss_sum = 0.0
        steps = batches.steps_per_epoch()
        for _step in range(steps):
            idx = batches.next_batch()
            tokens = tokenize_batch(work, x_cal[idx])
            ctx = encode(work, tokens, train=True, rng=drop_rng)
            loss = ce_loss(head_logits(work, pool_tokens(ctx)), y_cal[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(loss.data)
        losses.append(loss_sum / steps)
        accs.append(evaluate(work, x_test, y_test))

    report_epoch = min(10, len(accs))
    best_epoch = int(np.argmax(accs)) + 1
    report = FinetuneReport(
        acc_per_epoch=tuple(accs), probe_acc=probe,
        acc_at_report=accs[report_epoch - 1], best_acc=accs[best_epoch - 1],
        best_epoch=best_epoch, n_cal=len(cal), n_test=len(test),
        split_hash=split_hash, loss_per_epoch=tuple(losses))
    return work, report


def evaluate(state: ModelState, x: np.ndarray, y: np.ndarray,
             chunk: int = 256) -> float:
    """Accuracy in percent; argmax over logits, dropout off."""
    correct = 0
    for lo in range(0, len(x), chunk):
        tokens = tokenize_batch(state, x[lo:lo + chunk])
        logits = head_logits(state, pool_tokens(encode(state, tokens))).data
        correct += int((logits.argmax(axis=1) == y[lo:lo + chunk]).sum())
    return 100.0 * correct / len(x)


def evaluate_trials(state: ModelState, trials) -> float:
    x, y = stack_trials(trials)
    return evaluate(state, x, y)


def ablation_suite(pretrain_trials, downstream_subjects: dict, config: TrainConfig,
                   tok_cfg: TokenizerConfig = TokenizerConfig(),
                   enc_cfg: EncoderConfig = EncoderConfig(),
                   variants=ABLATION_VARIANTS, dataset: str = "synth",
                   n_classes: int | None = None):
    """Run {full, no_pretrain, no_selfsup} under identical seeds and splits.

    downstream_subjects maps subject id to its template-space trials in
    acquisition order.  Returns (rows, states) where rows follow the flat CSV
    schema and states maps (variant, seed) to the pretrained ModelState.
    """
    rows = []
    states: dict[tuple[str, int], ModelState] = {}
    split_hashes: dict[tuple[str, int], str] = {}
    for variant in variants:
        vcfg = replace(config, ablation=variant)
        for seed in config.seeds:
            if variant == "no_pretrain":
                first = next(iter(downstream_subjects.values()))
                if n_classes is None:
                    labs = {t.label for ts in downstream_subjects.values() for t in ts}
                    nc = len(labs)
                else:
                    nc = n_classes
                state = init_model(tok_cfg, enc_cfg, first[0].n_channels,
                                   max(nc, 2), seed)
            else:
                state, _history = pretrain(pretrain_trials, vcfg, seed,
                                           tok_cfg, enc_cfg, n_classes=n_classes)
            states[(variant, seed)] = state
            for subject, trials in downstream_subjects.items():
                _tuned, rep = finetune(state, trials, vcfg, seed)
                key = (subject, seed)
                prior = split_hashes.setdefault(key, rep.split_hash)
                if prior != rep.split_hash:
                    raise AssertionError(
                        f"split drift for {subject} seed {seed} across variants")
                rows.append({
                    "dataset": dataset, "subject": subject, "seed": seed,
                    "variant": variant, "alpha": config.alpha, "split": "test",
                    "accuracy": rep.acc_at_report,
                })
    return rows, states


def mask_sweep(pretrain_trials, downstream_subjects: dict, config: TrainConfig,
               tok_cfg: TokenizerConfig = TokenizerConfig(),
               enc_cfg: EncoderConfig = EncoderConfig(),
               alphas=MASK_GRID, dataset: str = "synth",
               n_classes: int | None = None):
    """Full pretrain+finetune per mask ratio per seed; returns flat rows."""
    rows = []
    for alpha in alphas:
        acfg = replace(config, alpha=alpha, ablation="full")
        for seed in config.seeds:
            state, _ = pretrain(pretrain_trials, acfg, seed, tok_cfg, enc_cfg,
                                n_classes=n_classes)
            for subject, trials in downstream_subjects.items():
                _tuned, rep = finetune(state, trials, acfg, seed)
                rows.append({
                    "dataset": dataset, "subject": subject, "seed": seed,
                    "variant": "full", "alpha": alpha, "split": "test",
                    "accuracy": rep.acc_at_report,
                })
    return rows


def summarize(rows, group_keys=("variant",)) -> dict:
    """Mean and std of accuracy per group, recomputable from the rows."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        key = tuple(r[k] for k in group_keys)
        groups.setdefault(key, []).append(r["accuracy"])
    return {key: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
            for key, v in sorted(groups.items())}
