"""End-to-end harmonization: raw heterogeneous datasets to training-ready
trials in template space.
"""

import numpy as np
import pytest

from mirep.data import UNIFIED_VOCAB, iter_trials
from mirep.pipeline import (PreprocSpec, harmonize_subject, harmonize_trial,
                            prepare_downstream, prepare_pretraining)
from mirep.spatial import TEMPLATE_23
from mirep.synth import synth_dataset


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    return synth_dataset(d, n_subjects=3, trials_per_class=20,
                         duration=2.0, seed=21)


class TestHarmonizeTrial:
    def test_output_space(self, corpus):
        t = next(iter_trials(corpus))
        out = harmonize_trial(t, PreprocSpec())
        assert out.channels == TEMPLATE_23
        assert out.fs == 250.0
        assert out.n_channels == 23

    def test_resamples_foreign_rate(self, corpus):
        from dataclasses import replace
        t = next(iter_trials(corpus))
        # pretend the recording came from a 500 Hz amplifier
        t500 = replace(t, fs=500.0)
        out = harmonize_trial(t500, PreprocSpec())
        assert out.fs == 250.0
        assert out.n_samples == t500.n_samples // 2


class TestPreparePretraining:
    def test_whitened_and_labeled(self, corpus):
        trials, names, retained, refs = prepare_pretraining([corpus])
        assert names == ("left_hand", "right_hand")
        assert retained == {"synth": ("S00", "S01", "S02")}
        assert set(refs) == {("S00", "s0"), ("S01", "s0"), ("S02", "s0")}
        assert all(t.role == "pretrain" for t in trials)
        assert {t.label for t in trials} == {0, 1}

        # per subject-session, the whitened mean covariance is the identity
        for (sub, ses), _ref in refs.items():
            group = [t for t in trials if t.subject_id == sub]
            acc = sum(t.data @ t.data.T for t in group) / len(group)
            assert np.linalg.norm(acc - np.eye(23), "fro") < 1e-6

    def test_screening_drops_shuffled_subject(self, corpus, tmp_path):
        # corrupt one subject by shuffling labels on disk, then re-prepare
        import json
        from dataclasses import replace as dc_replace

        from mirep.data import (load_manifest, read_trial_file,
                                write_trial_file)

        man2 = synth_dataset(tmp_path / "c", n_subjects=2, trials_per_class=20,
                             duration=2.0, seed=33)
        rng = np.random.default_rng(5)
        victims = [p for p in sorted((tmp_path / "c").glob("S01_*.mirp"))]
        labels = [read_trial_file(p).label for p in victims]
        rng.shuffle(labels)
        for p, lab in zip(victims, labels):
            t = read_trial_file(p)
            write_trial_file(dc_replace(t, label=lab), p)
        man2 = load_manifest(tmp_path / "c" / "manifest.json")

        _trials, _names, retained, _refs = prepare_pretraining([man2])
        assert retained["synth"] == ("S00",)

    def test_screening_can_be_disabled(self, corpus):
        _trials, _names, retained, _refs = prepare_pretraining(
            [corpus], screening=False)
        assert retained == {"synth": ("S00", "S01", "S02")}


class TestPrepareDownstream:
    def test_template_space_no_alignment(self, corpus):
        down = prepare_downstream(corpus)
        assert set(down) == {"S00", "S01", "S02"}
        for trials in down.values():
            assert all(t.channels == TEMPLATE_23 for t in trials)
            assert all(t.role == "" for t in trials)
            # labels are unified-vocabulary indices
            assert {t.label for t in trials} <= set(range(len(UNIFIED_VOCAB)))

    def test_acquisition_order_preserved(self, corpus):
        down = prepare_downstream(corpus)
        labels = [t.label for t in down["S00"][:6]]
        assert labels == [0, 1, 0, 1, 0, 1]


class TestHarmonizeSubject:
    def test_unknown_subject_rejected(self, corpus):
        with pytest.raises(ValueError, match="no trials"):
            harmonize_subject(corpus, "S99", PreprocSpec())
