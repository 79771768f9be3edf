"""Harmonization orchestration: filter, resample, template, screening, EA.

This is the glue between the manifest-level world and the training-level
world.  Pretraining preparation loads every subject, applies the temporal
steps and the channel template, optionally screens subjects with the
within-subject CSP+LDA gate, relabels everything into the unified vocabulary,
and whitens per subject-session.  Downstream preparation stops before
alignment: the fine-tuning stage fits its reference on the calibration split
only.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .csp import cv_accuracy
from .data import DatasetManifest, Trial, UNIFIED_VOCAB, iter_trials
from .dsp import FilterSpec, ResampleSpec, bandpass, resample
from .spatial import (AlignReference, TemplateSpec, apply_template, ea_reference,
                      ea_whiten, template_weights)

__all__ = [
    "PreprocSpec", "harmonize_trial", "harmonize_subject",
    "align_per_session", "prepare_pretraining", "prepare_downstream",
]


@dataclass(frozen=True)
class PreprocSpec:
    filter: FilterSpec = FilterSpec()
    resample: ResampleSpec = ResampleSpec()
    template: TemplateSpec = field(default_factory=TemplateSpec)


def harmonize_trial(trial: Trial, spec: PreprocSpec, weights=None) -> Trial:
    """bandpass -> resample -> channel template; returns a template-space trial."""
    if weights is None:
        weights = template_weights(trial.channels, spec.template)
    out = bandpass(trial, spec.filter)
    out = resample(out, spec.resample)
    return apply_template(out, weights)


def harmonize_subject(manifest: DatasetManifest, subject_id: str,
                      spec: PreprocSpec, role: str = "",
                      jobs: int = 1) -> list[Trial]:
    trials = list(iter_trials(manifest, subject_id=subject_id, role=role))
    if not trials:
        raise ValueError(f"subject {subject_id} has no trials")
    weights = template_weights(trials[0].channels, spec.template)
    if jobs > 1:
        # trials are independent, so a thread pool preserves order and output
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda t: harmonize_trial(t, spec, weights),
                                 trials))
    return [harmonize_trial(t, spec, weights) for t in trials]


def align_per_session(trials) -> tuple[list[Trial], dict[tuple[str, str], AlignReference]]:
    """Whiten trials with one reference per (subject, session) group."""
    groups: dict[tuple[str, str], list[Trial]] = {}
    for t in trials:
        groups.setdefault((t.subject_id, t.session_id), []).append(t)
    refs = {key: ea_reference(group) for key, group in groups.items()}
    out = [ea_whiten(t, refs[(t.subject_id, t.session_id)]) for t in trials]
    return out, refs


def _unified_name(manifest: DatasetManifest, label: int) -> str:
    name = manifest.label_vocab[label]
    if name not in UNIFIED_VOCAB:
        raise ValueError(f"label {name!r} outside the unified vocabulary {UNIFIED_VOCAB}")
    return name


def _crop_common_length(trials: list[Trial]) -> list[Trial]:
    t_min = min(t.n_samples for t in trials)
    return [t if t.n_samples == t_min
            else replace(t, data=np.ascontiguousarray(t.data[:, :t_min]))
            for t in trials]


def prepare_pretraining(manifests, spec: PreprocSpec = PreprocSpec(),
                        screening: bool = True, threshold: float = 0.6,
                        folds: int = 5, jobs: int = 1):
    """Full harmonization of the pretraining corpus.

    Returns (trials, label_names, retained, refs): whitened trials tagged
    role="pretrain" with dense unified labels, the label-name tuple defining
    the head order, the retained subject ids per dataset, and the alignment
    references per (subject, session).
    """
    collected: list[tuple[Trial, str]] = []
    retained: dict[str, tuple[str, ...]] = {}
    for manifest in manifests:
        kept = []
        for sub in manifest.subjects:
            trials = harmonize_subject(manifest, sub.id, spec, role="pretrain",
                                       jobs=jobs)
            if screening and cv_accuracy(trials, folds=folds) < threshold:
                continue
            kept.append(sub.id)
            for t in trials:
                collected.append((t, _unified_name(manifest, t.label)))
        retained[manifest.name] = tuple(kept)
    if not collected:
        raise ValueError("no subjects survived screening")

    names = tuple(sorted({nm for _t, nm in collected}, key=UNIFIED_VOCAB.index))
    ids = {nm: i for i, nm in enumerate(names)}
    relabeled = [replace(t, label=ids[nm]) for t, nm in collected]
    relabeled = _crop_common_length(relabeled)
    whitened, refs = align_per_session(relabeled)
    return whitened, names, retained, refs


def prepare_downstream(manifest: DatasetManifest, spec: PreprocSpec = PreprocSpec(),
                       jobs: int = 1):
    """Template-space trials per downstream subject with unified labels.

    No alignment here: fine-tuning fits its reference on the calibration
    split, never on test trials.
    """
    out: dict[str, list[Trial]] = {}
    for sub in manifest.subjects:
        trials = harmonize_subject(manifest, sub.id, spec, jobs=jobs)
        trials = [replace(t, label=UNIFIED_VOCAB.index(_unified_name(manifest, t.label)))
                  for t in trials]
        out[sub.id] = _crop_common_length(trials)
    return out
