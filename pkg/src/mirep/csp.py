"""Common spatial patterns with a closed-form LDA, used two ways:

as the classical baseline, and as the within-subject screening classifier that
drops subjects whose data carries no decodable motor-imagery signal.

CSP solves the generalized eigenproblem S1 w = lambda (S1 + S2) w on
trace-normalized class covariances and keeps the m largest- and m smallest-
eigenvalue filters.  Features are log-variances of the filtered trials; the
LDA is the textbook two-class solution w = Sw^-1 (mu1 - mu0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data import DatasetManifest, Trial, iter_trials

__all__ = ["CspLdaModel", "csp_fit", "csp_features", "csp_predict",
           "cv_accuracy", "screen_subjects"]

_RIDGE = 1e-10


@dataclass(frozen=True)
class CspLdaModel:
    csp_filters: np.ndarray   # 2m x C, rows ordered by descending eigenvalue
    eigenvalues: np.ndarray   # matching generalized eigenvalues, descending
    lda_w: np.ndarray
    lda_b: float

    def __post_init__(self) -> None:
        for name in ("csp_filters", "eigenvalues", "lda_w"):
            m = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            m.setflags(write=False)
            object.__setattr__(self, name, m)


def _class_cov(trials) -> np.ndarray:
    cov = None
    for tr in trials:
        x = tr.data.astype(np.float64)
        s = x @ x.T
        t = np.trace(s)
        if t <= 0:
            raise ValueError("trial with zero power, cannot normalize covariance")
        s = s / t
        cov = s if cov is None else cov + s
    if cov is None:
        raise ValueError("empty class")
    cov /= max(1, len(trials))
    return cov


def csp_fit(trials_a, trials_b, m: int = 3) -> CspLdaModel:
    trials_a, trials_b = list(trials_a), list(trials_b)
    s1 = _class_cov(trials_a)
    s2 = _class_cov(trials_b)
    c = s1.shape[0]
    m = min(m, c // 2) or 1
    comp = s1 + s2 + _RIDGE * np.trace(s1 + s2) * np.eye(c)
    evals, evecs = linalg.eigh(s1, comp)   # ascending
    order = np.argsort(evals)[::-1]
    keep = np.concatenate([order[:m], order[-m:]])
    filters = evecs[:, keep].T
    eigenvalues = evals[keep]

    feats = np.array([_logvar(filters, tr) for tr in trials_a + trials_b])
    labels = np.array([0] * len(trials_a) + [1] * len(trials_b))
    w, b = _lda_fit(feats, labels)
    return CspLdaModel(csp_filters=filters, eigenvalues=eigenvalues,
                       lda_w=w, lda_b=b)


def _logvar(filters: np.ndarray, trial: Trial) -> np.ndarray:
    y = filters @ trial.data.astype(np.float64)
    v = y.var(axis=1)
    return np.log(np.maximum(v, 1e-300))


def csp_features(model: CspLdaModel, trial: Trial) -> np.ndarray:
    return _logvar(model.csp_filters, trial)


def _lda_fit(feats: np.ndarray, labels: np.ndarray):
    x0, x1 = feats[labels == 0], feats[labels == 1]
    mu0, mu1 = x0.mean(axis=0), x1.mean(axis=0)
    d = feats.shape[1]
    sw = np.zeros((d, d))
    for grp, mu in ((x0, mu0), (x1, mu1)):
        xc = grp - mu
        sw += xc.T @ xc
    sw /= max(1, len(feats) - 2)
    sw += _RIDGE * max(np.trace(sw), 1.0) * np.eye(d)
    w = linalg.solve(sw, mu1 - mu0, assume_a="pos")
    b = -0.5 * float(w @ (mu0 + mu1)) + math.log(len(x1) / len(x0))
    return w, float(b)


def csp_predict(model: CspLdaModel, trial: Trial) -> int:
    score = float(model.lda_w @ csp_features(model, trial)) + model.lda_b
    return 1 if score > 0 else 0


def cv_accuracy(trials, folds: int = 5, m: int = 3) -> float:
    """Stratified k-fold accuracy of CSP+LDA on one subject's own trials.

    Fold assignment is deterministic: within each class, trial i goes to fold
    i mod k in the order given.
    """
    trials = list(trials)
    by_class: dict[int, list[Trial]] = {}
    for tr in trials:
        if tr.label is None:
            raise ValueError("unlabeled trial in screening set")
        by_class.setdefault(tr.label, []).append(tr)
    if len(by_class) != 2:
        raise ValueError(f"screening needs exactly 2 classes, got {sorted(by_class)}")
    for lbl, group in by_class.items():
        if len(group) < 2 * folds:
            raise ValueError(
                f"class {lbl} has {len(group)} trials; need at least {2 * folds}")
    labels = sorted(by_class)
    correct = total = 0
    for k in range(folds):
        train_a = [t for i, t in enumerate(by_class[labels[0]]) if i % folds != k]
        train_b = [t for i, t in enumerate(by_class[labels[1]]) if i % folds != k]
        test = [(t, 0) for i, t in enumerate(by_class[labels[0]]) if i % folds == k]
        test += [(t, 1) for i, t in enumerate(by_class[labels[1]]) if i % folds == k]
        model = csp_fit(train_a, train_b, m=m)
        for tr, truth in test:
            correct += int(csp_predict(model, tr) == truth)
            total += 1
    return correct / total


def screen_subjects(manifest: DatasetManifest, threshold: float = 0.6,
                    folds: int = 5, m: int = 3,
                    trials_by_subject: dict | None = None) -> tuple[str, ...]:
    """Retain subjects whose within-subject CSP+LDA CV accuracy meets threshold.

    trials_by_subject lets callers pass preprocessed trials; otherwise trials
    are loaded straight from the manifest.
    """
    retained = []
    for sub in manifest.subjects:
        if trials_by_subject is not None:
            trials = trials_by_subject[sub.id]
        else:
            trials = list(iter_trials(manifest, subject_id=sub.id))
        if cv_accuracy(trials, folds=folds, m=m) >= threshold:
            retained.append(sub.id)
    return tuple(retained)
