"""Channel-template interpolation and Euclidean alignment.

Weight examples are worked by hand from the inverse-distance definition;
whitening examples use diagonal covariances where the inverse square root is
available in closed form.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirep.data import Trial
from mirep.montage import get_standard_1010
from mirep.spatial import (TEMPLATE_23, AlignReference, TemplateSpec,
                           apply_template, ea_reference, ea_whiten,
                           electrode_distances, interp_weights,
                           load_align_reference, save_align_reference,
                           template_weights)


def _trial(data, channels, role=""):
    return Trial(data=np.asarray(data, dtype=np.float64), label=0, fs=250.0,
                 channels=channels, role=role)


class TestDistances:
    def test_central_row_unit_distance(self):
        # C3 and C4 project to (-0.5, 0) and (0.5, 0), so their distance is 1
        m = get_standard_1010()
        d = electrode_distances(("C3",), ("C4",), m)
        assert d.shape == (1, 1)
        assert abs(d[0, 0] - 1.0) < 1e-12

    def test_mirror_symmetry(self):
        m = get_standard_1010()
        d_l = electrode_distances(("C3",), ("FC3",), m)
        d_r = electrode_distances(("C4",), ("FC4",), m)
        assert abs(d_l[0, 0] - d_r[0, 0]) < 1e-12

    def test_self_distance_zero(self):
        m = get_standard_1010()
        d = electrode_distances(TEMPLATE_23, TEMPLATE_23, m)
        assert np.allclose(np.diag(d), 0.0)
        assert (d >= 0).all()


class TestInterpWeights:
    def test_zero_distance_one_hot(self):
        w = interp_weights(np.array([[0.0, 1.2, 3.0]]), ("a", "b", "c"), ("t",))
        np.testing.assert_array_equal(w.matrix, [[1.0, 0.0, 0.0]])

    def test_tie_splits_evenly(self):
        w = interp_weights(np.array([[2.0, 2.0]]), ("a", "b"), ("t",))
        np.testing.assert_allclose(w.matrix, [[0.5, 0.5]])

    def test_inverse_distance_ratios(self):
        # distances 1, 2, 2 -> unnormalized 1, 1/2, 1/2 -> weights 1/2, 1/4, 1/4
        w = interp_weights(np.array([[1.0, 2.0, 2.0]]), ("a", "b", "c"), ("t",))
        np.testing.assert_allclose(w.matrix, [[0.5, 0.25, 0.25]])

    def test_multiple_zero_hits_takes_first(self):
        w = interp_weights(np.array([[1.0, 0.0, 0.0]]), ("a", "b", "c"), ("t",))
        np.testing.assert_array_equal(w.matrix, [[0.0, 1.0, 0.0]])

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            interp_weights(np.array([[-1.0, 2.0]]), ("a", "b"), ("t",))

    def test_all_infinite_row_rejected(self):
        with pytest.raises(ValueError, match="infinite"):
            interp_weights(np.array([[np.inf, np.inf]]), ("a", "b"), ("t",))

    def test_tiny_distances_do_not_overflow(self):
        w = interp_weights(np.array([[1e-320, 2e-320]]), ("a", "b"), ("t",))
        assert np.isfinite(w.matrix).all()
        np.testing.assert_allclose(w.matrix.sum(axis=1), 1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 2**31 - 1))
    def test_rows_sum_to_one_property(self, n_t, n_s, seed):
        rng = np.random.default_rng(seed)
        d = rng.uniform(1e-6, 2.0, size=(n_t, n_s))
        w = interp_weights(d, tuple(f"s{i}" for i in range(n_s)),
                           tuple(f"t{i}" for i in range(n_t)))
        np.testing.assert_allclose(w.matrix.sum(axis=1), 1.0, atol=1e-9)
        assert (w.matrix >= 0).all() and (w.matrix <= 1 + 1e-12).all()


class TestTemplateWeights:
    def test_identity_when_source_equals_template(self):
        w = template_weights(TEMPLATE_23)
        np.testing.assert_array_equal(w.matrix, np.eye(23))

    def test_case_insensitive_source_names(self):
        w = template_weights(tuple(c.upper() for c in TEMPLATE_23))
        np.testing.assert_array_equal(w.matrix, np.eye(23))

    def test_unknown_source_channel_rejected(self):
        with pytest.raises(KeyError):
            template_weights(("C3", "NOSUCH"))

    def test_apply_identity(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((23, 40))
        t = _trial(x, TEMPLATE_23)
        out = apply_template(t, template_weights(TEMPLATE_23))
        np.testing.assert_allclose(out.data, x)
        assert out.channels == TEMPLATE_23

    def test_apply_single_source_broadcasts(self):
        x = np.arange(10, dtype=np.float64)[None, :]
        t = _trial(x, ("Cz",))
        out = apply_template(t, template_weights(("Cz",)))
        assert out.data.shape == (23, 10)
        # every template row is a convex combination of one channel
        for row in out.data:
            np.testing.assert_allclose(row, x[0])

    def test_apply_preserves_constant_signals(self):
        # rows sum to 1, so a spatially constant signal passes through
        x = np.full((5, 20), 3.25)
        chans = ("C3", "C4", "Cz", "FC1", "CP2")
        t = _trial(x, chans)
        out = apply_template(t, template_weights(chans))
        np.testing.assert_allclose(out.data, 3.25, atol=1e-12)

    def test_channel_mismatch_rejected(self):
        t = _trial(np.zeros((2, 5)), ("C3", "C4"))
        w = template_weights(("C3", "Cz"))
        with pytest.raises(ValueError, match="mismatch"):
            apply_template(t, w)


def _cov_trials(cov_diag, n_trials=64, t_len=4096, seed=0):
    """Trials whose per-sample covariance is diag(cov_diag) in expectation.

    Deterministic construction: scaled orthonormal rows, so (1/T) X X^T is
    exactly diagonal per trial.
    """
    c = len(cov_diag)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_trials):
        q, _ = np.linalg.qr(rng.standard_normal((t_len, c)))
        x = (q * np.sqrt(t_len)).T * np.sqrt(np.asarray(cov_diag))[:, None]
        out.append(_trial(x, tuple(f"ch{i}" for i in range(c))))
    return out


class TestEuclideanAlignment:
    def test_isotropic_example(self):
        # every trial has X X^T = 4 T I  ->  R_bar ~ 4T I, whitening scales by 1/(2 sqrt(T))
        trials = _cov_trials([4.0, 4.0], n_trials=8, t_len=256)
        ref = ea_reference(trials)
        t_len = 256
        np.testing.assert_allclose(ref.R_inv_sqrt,
                                   np.eye(2) / (2.0 * np.sqrt(t_len)),
                                   rtol=1e-6, atol=1e-12)

    def test_diagonal_example(self):
        # diag(4, 9) per-sample covariance -> inverse sqrt diag(1/2, 1/3) up to sqrt(T)
        t_len = 1024
        trials = _cov_trials([4.0, 9.0], n_trials=8, t_len=t_len)
        ref = ea_reference(trials)
        want = np.diag([0.5, 1.0 / 3.0]) / np.sqrt(t_len)
        np.testing.assert_allclose(ref.R_inv_sqrt, want, rtol=1e-5, atol=1e-9)

    def test_inverse_sqrt_identity(self):
        rng = np.random.default_rng(7)
        trials = [_trial(rng.standard_normal((4, 300)), ("a", "b", "c", "d"))
                  for _ in range(20)]
        ref = ea_reference(trials)
        ident = ref.R_inv_sqrt @ ref.R_bar @ ref.R_inv_sqrt
        np.testing.assert_allclose(ident, np.eye(4), atol=1e-10)

    def test_whitened_mean_covariance_is_identity(self):
        rng = np.random.default_rng(11)
        mix = rng.standard_normal((5, 5))
        trials = [_trial(mix @ rng.standard_normal((5, 400)), tuple("abcde"))
                  for _ in range(30)]
        ref = ea_reference(trials)
        white = [ea_whiten(t, ref) for t in trials]
        acc = sum(t.data @ t.data.T for t in white) / len(white)
        assert np.linalg.norm(acc - np.eye(5), "fro") <= 1e-6

    def test_scale_invariance_exact(self):
        # the ridge is proportional to the trace, so scaling all trials by g
        # scales R_bar by g^2 and leaves the whitened output unchanged
        rng = np.random.default_rng(3)
        trials = [_trial(rng.standard_normal((3, 200)), ("a", "b", "c"))
                  for _ in range(10)]
        scaled = [_trial(t.data * 37.5, t.channels) for t in trials]
        w1 = ea_whiten(trials[0], ea_reference(trials)).data
        w2 = ea_whiten(scaled[0], ea_reference(scaled)).data
        np.testing.assert_allclose(w1, w2, rtol=1e-9)

    def test_rank_deficient_trials_survive(self):
        # T < C makes each X X^T singular; the ridge and eigenvalue floor must
        # keep the inverse square root finite
        rng = np.random.default_rng(9)
        trials = [_trial(rng.standard_normal((6, 3)), tuple("abcdef"))
                  for _ in range(4)]
        ref = ea_reference(trials)
        assert np.isfinite(ref.R_inv_sqrt).all()
        out = ea_whiten(trials[0], ref)
        assert np.isfinite(out.data).all()

    def test_test_role_rejected(self):
        t = _trial(np.ones((2, 8)), ("a", "b"), role="test")
        with pytest.raises(ValueError, match="test trial"):
            ea_reference([t])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ea_reference([])

    def test_channel_count_mismatch(self):
        ref = ea_reference([_trial(np.ones((2, 8)), ("a", "b"))])
        with pytest.raises(ValueError):
            ea_whiten(_trial(np.ones((3, 8)), ("a", "b", "c")), ref)

    def test_reference_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        trials = [_trial(rng.standard_normal((3, 100)), ("a", "b", "c"))
                  for _ in range(5)]
        ref = ea_reference(trials)
        p = tmp_path / "ref.json"
        save_align_reference(ref, p)
        back = load_align_reference(p)
        np.testing.assert_array_equal(back.R_bar, ref.R_bar)
        np.testing.assert_array_equal(back.R_inv_sqrt, ref.R_inv_sqrt)
        assert back.n == ref.n and back.epsilon == ref.epsilon


class TestTemplateSpec:
    def test_default_covers_motor_strip(self):
        spec = TemplateSpec()
        assert len(spec.electrodes) == 23
        for probe in ("C3", "C4", "Cz", "T7", "T8"):
            assert probe in spec.electrodes

    def test_duplicate_electrodes_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            TemplateSpec(electrodes=("C3", "c3"))
