"""CSP+LDA baseline against closed-form 2x2 oracles.

For two known diagonal class covariances the generalized eigenproblem has an
analytic solution, so the learned filters can be checked directly; everything
else is behavioral (separable data classifies perfectly, shuffled labels drop
to chance).
"""

import numpy as np
import pytest

from mirep.csp import (csp_features, csp_fit, csp_predict, cv_accuracy,
                       screen_subjects)
from mirep.data import Trial, iter_trials
from mirep.synth import synth_dataset


def _trial(data, label):
    data = np.asarray(data, dtype=np.float64)
    return Trial(data=data, label=label, fs=250.0,
                 channels=tuple(f"ch{i}" for i in range(data.shape[0])))


def _gauss_trials(rng, cov_diag, label, n, t_len=512):
    scale = np.sqrt(np.asarray(cov_diag))[:, None]
    return [_trial(scale * rng.standard_normal((len(cov_diag), t_len)), label)
            for _ in range(n)]


class TestCspFit:
    def test_equal_covariances_give_half_eigenvalues(self):
        rng = np.random.default_rng(0)
        a = _gauss_trials(rng, [1.0, 1.0], 0, 40)
        b = _gauss_trials(rng, [1.0, 1.0], 1, 40)
        model = csp_fit(a, b, m=1)
        np.testing.assert_allclose(model.eigenvalues, 0.5, atol=0.05)

    def test_variance_axis_recovered(self):
        # class 0 concentrates variance on axis 0, class 1 on axis 1; the top
        # CSP filter must align with an axis (cosine similarity >= 0.99)
        rng = np.random.default_rng(1)
        a = _gauss_trials(rng, [9.0, 1.0], 0, 60)
        b = _gauss_trials(rng, [1.0, 9.0], 1, 60)
        model = csp_fit(a, b, m=1)
        top = model.csp_filters[0]
        cos = abs(top[0]) / np.linalg.norm(top)
        assert cos >= 0.99

    def test_filter_count(self):
        rng = np.random.default_rng(2)
        a = _gauss_trials(rng, [2.0, 1.0, 1.0, 1.0], 0, 30)
        b = _gauss_trials(rng, [1.0, 1.0, 1.0, 2.0], 1, 30)
        model = csp_fit(a, b, m=2)
        assert model.csp_filters.shape == (4, 4)
        # eigenvalues kept in descending order: extremes first and last
        ev = model.eigenvalues
        assert ev[0] >= ev[1] >= ev[2] >= ev[3]

    def test_features_are_log_variances(self):
        rng = np.random.default_rng(3)
        a = _gauss_trials(rng, [4.0, 1.0], 0, 20)
        b = _gauss_trials(rng, [1.0, 4.0], 1, 20)
        model = csp_fit(a, b, m=1)
        f = csp_features(model, a[0])
        assert f.shape == (2,)
        assert np.isfinite(f).all()


class TestLda:
    def test_separable_data_classifies_perfectly(self):
        rng = np.random.default_rng(4)
        a = _gauss_trials(rng, [16.0, 1.0], 0, 30)
        b = _gauss_trials(rng, [1.0, 16.0], 1, 30)
        model = csp_fit(a, b, m=1)
        preds_a = [csp_predict(model, t) for t in a]
        preds_b = [csp_predict(model, t) for t in b]
        assert preds_a == [0] * 30
        assert preds_b == [1] * 30


class TestCrossValidation:
    def _synth_subject(self, tmp_path, seed=0, shuffle=False):
        man = synth_dataset(tmp_path, n_subjects=1, trials_per_class=20,
                            duration=2.0, seed=seed)
        trials = list(iter_trials(man))
        if shuffle:
            rng = np.random.default_rng(99)
            labels = [t.label for t in trials]
            rng.shuffle(labels)
            from dataclasses import replace
            trials = [replace(t, label=l) for t, l in zip(trials, labels)]
        return man, trials

    def test_synthetic_subject_above_90(self, tmp_path):
        _, trials = self._synth_subject(tmp_path / "a")
        assert cv_accuracy(trials, folds=5) >= 0.9

    def test_shuffled_labels_near_chance(self, tmp_path):
        _, trials = self._synth_subject(tmp_path / "a", shuffle=True)
        assert cv_accuracy(trials, folds=5) < 0.6

    def test_deterministic(self, tmp_path):
        _, trials = self._synth_subject(tmp_path / "a")
        assert cv_accuracy(trials) == cv_accuracy(trials)

    def test_requires_two_classes(self):
        rng = np.random.default_rng(5)
        trials = _gauss_trials(rng, [1.0, 1.0], 0, 20)
        with pytest.raises(ValueError, match="2 classes"):
            cv_accuracy(trials)

    def test_requires_enough_per_class(self):
        rng = np.random.default_rng(6)
        trials = (_gauss_trials(rng, [1.0, 1.0], 0, 4)
                  + _gauss_trials(rng, [1.0, 1.0], 1, 4))
        with pytest.raises(ValueError):
            cv_accuracy(trials, folds=5)


class TestScreening:
    def test_clean_retained(self, tmp_path):
        man = synth_dataset(tmp_path, n_subjects=2, trials_per_class=20,
                            duration=2.0, seed=8)
        assert screen_subjects(man, threshold=0.6) == ("S00", "S01")

    def test_shuffled_excluded(self, tmp_path):
        from dataclasses import replace
        man = synth_dataset(tmp_path, n_subjects=2, trials_per_class=20,
                            duration=2.0, seed=8)
        by_subject = {}
        for sub in man.subjects:
            trials = list(iter_trials(man, subject_id=sub.id))
            if sub.id == "S01":
                rng = np.random.default_rng(99)
                labels = [t.label for t in trials]
                rng.shuffle(labels)
                trials = [replace(t, label=l) for t, l in zip(trials, labels)]
            by_subject[sub.id] = trials
        kept = screen_subjects(man, threshold=0.6, trials_by_subject=by_subject)
        assert kept == ("S00",)
