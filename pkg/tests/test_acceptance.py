"""Release gate for the whole toolkit.

Covers gradient fidelity of the full model, probability and similarity
invariants, the preprocessing chain at a high sample rate, PCA against an
eigendecomposition oracle, attribution guarantees, and the synthetic
cross-subject benchmark. The benchmark tests train full-size models and
take tens of minutes combined; everything else is quick.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from aadtk import model as mm
from aadtk import tensor as tt
from aadtk.attribution import channel_importance, difference_map, expected_gradients
from aadtk.data import FeatureTensor, load_manifest, make_fold_splits
from aadtk.dsp import common_average_reference, design_bandpass, pca_fit, resample
from aadtk.model import ModelConfig
from aadtk.synthetic import SynthConfig, generate
from aadtk.training import TrainConfig, cross_validate, run_fold, train, train_mmm
from gradcheck import finite_difference_gradient, rel_error
from test_attribution import FakeSample, linear_score_fn, make_sample, randomized_params
from test_training import TINY, toy_arrays

GRAD_TOL = 1e-3
GRAD_BUDGET_S = 60.0
PROB_TOL = 1e-6
COSINE_TOL = 1e-6
PASSBAND_RIPPLE_DB = 1.0
STOPBAND_DB = -20.0
VARIANCE_RTOL = 1e-6
ORTHO_TOL = 1e-5
LINEAR_ATTR_TOL = 1e-5
COMPLETENESS_REL = 0.05

# One epoch at this rate is enough on the synthetic benchmark; see the
# per-test budgets below.
BENCH = TrainConfig(
    learning_rate=1e-3, batch_size=32, max_epochs=1, early_stop_patience=1, seed=0
)


# ---------------------------------------------------------------------------
# gradient fidelity


def _broken_symmetry_params(cfg: ModelConfig, seed: int) -> mm.ModelParams:
    # the prescribed init zeroes biases and attention, which would hide
    # gradient bugs behind zero-valued paths
    params = mm.init_params(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    for name, t in params.named_parameters():
        if name == "attn_logits" or name.endswith(("bias", "shift")):
            t.data = rng.uniform(-0.3, 0.3, t.data.shape)
        elif name == "w" or name.endswith("scale"):
            t.data = 1.0 + rng.uniform(-0.3, 0.3, t.data.shape)
    return params


def test_every_parameter_gradient_matches_finite_differences():
    t0 = time.monotonic()
    cfg = ModelConfig(eeg_channels=4, latent_dim=8, virtual_channels=4, n_res_blocks=2)
    params = _broken_symmetry_params(cfg, seed=7)
    rng = np.random.default_rng(17)
    e = tt.Tensor(rng.standard_normal((2, 4, 16)))
    s1 = tt.Tensor(rng.standard_normal((2, 8, 16)))
    s2 = tt.Tensor(rng.standard_normal((2, 8, 16)))
    y = np.array([1, 2])

    def forward():
        scores = mm.stream_scores(e, [s1, s2], params)
        return mm.loss(scores, y, cfg.temperature).item()

    tape = tt.Tape()
    scores = mm.stream_scores(e, [s1, s2], params, tape)
    tt.backward(mm.loss(scores, y, cfg.temperature, tape), tape)
    grads = {name: t.grad.copy() for name, t in params.named_parameters()}

    bad = []
    for name, t in params.named_parameters():
        fd = finite_difference_gradient(forward, t.data)
        err = rel_error(grads[name], fd)
        if not err < GRAD_TOL:
            bad.append((name, err))
    assert not bad, f"gradient mismatches: {bad}"
    assert time.monotonic() - t0 < GRAD_BUDGET_S


# ---------------------------------------------------------------------------
# probability and similarity invariants, 100 random instances each


TAU_GRID = (0.01, 0.05, 1.0, 10.0)


def _instances():
    """Ten independent parameter draws, ten inputs each."""
    for pseed in range(10):
        params = randomized_params(TINY, seed=pseed)
        rng = np.random.default_rng([41, pseed])
        e = rng.standard_normal((10, 4, 16)).astype(np.float32)
        s1 = rng.standard_normal((10, 8, 16)).astype(np.float32)
        s2 = rng.standard_normal((10, 8, 16)).astype(np.float32)
        yield params, tt.Tensor(e), tt.Tensor(s1), tt.Tensor(s2)


class TestClassifierInvariants:
    def test_stream_probabilities_sum_to_one(self):
        n = 0
        for params, e, s1, s2 in _instances():
            for tau in TAU_GRID:
                p1, p2, _ = mm.classify(e, s1, s2, params, temperature=tau)
                np.testing.assert_allclose(p1 + p2, 1.0, atol=PROB_TOL)
            n += e.shape[0]
        assert n >= 100

    def test_predicted_stream_ignores_temperature(self):
        n = 0
        for params, e, s1, s2 in _instances():
            preds = [mm.classify(e, s1, s2, params, temperature=tau)[2] for tau in TAU_GRID]
            for other in preds[1:]:
                np.testing.assert_array_equal(preds[0], other)
            n += e.shape[0]
        assert n >= 100

    def test_cosine_similarity_ignores_positive_scaling(self):
        rng = np.random.default_rng(23)
        a = rng.standard_normal((100, 17))
        b = rng.standard_normal((100, 17))
        base = tt.cosine_similarity(tt.Tensor(a), tt.Tensor(b)).data
        for alpha, beta in [(1e-3, 1.0), (1.0, 1e3), (0.25, 7.5), (1e3, 1e-3)]:
            got = tt.cosine_similarity(tt.Tensor(alpha * a), tt.Tensor(beta * b)).data
            np.testing.assert_allclose(got, base, atol=COSINE_TOL)

    def test_swapping_streams_swaps_probabilities_and_prediction(self):
        n = 0
        for params, e, s1, s2 in _instances():
            p1, p2, yhat = mm.classify(e, s1, s2, params)
            q1, q2, yswp = mm.classify(e, s2, s1, params)
            np.testing.assert_array_equal(q1, p2)
            np.testing.assert_array_equal(q2, p1)
            np.testing.assert_array_equal(yswp, 3 - yhat)
            n += e.shape[0]
        assert n >= 100


# ---------------------------------------------------------------------------
# preprocessing chain at 10 kHz


class TestPreprocessingAtHighRate:
    FS = 10_000.0

    def test_bandpass_frequency_response(self):
        """Flat within 1 dB over 2 to 28 Hz, at least 20 dB down at the
        0.05 Hz and 48 Hz probes. Measured from the DFT of the taps."""
        taps = design_bandpass(self.FS).taps
        n_fft = 200_000
        df = self.FS / n_fft  # 0.05 Hz bins
        db = 20.0 * np.log10(np.abs(np.fft.rfft(taps, n=n_fft)) + 1e-300)

        def at(hz):
            return db[round(hz / df)]

        assert at(0.05) <= STOPBAND_DB
        assert at(48.0) <= STOPBAND_DB
        band = db[round(2.0 / df) : round(28.0 / df) + 1]
        assert np.abs(band).max() <= PASSBAND_RIPPLE_DB

    def test_reference_removes_the_channel_mean(self):
        rng = np.random.default_rng(31)
        x = FeatureTensor(rng.standard_normal((8, 500)), self.FS)
        out = common_average_reference(x)
        assert np.abs(out.data.mean(axis=0)).max() < 1e-6

    def test_resampled_length_is_exact(self):
        # 64 s at 10 kHz must land on exactly 64 * 64 output samples
        rng = np.random.default_rng(37)
        x = FeatureTensor(rng.standard_normal((2, 640_000)).astype(np.float32), self.FS)
        assert resample(x, 64.0).data.shape == (2, 4096)


# ---------------------------------------------------------------------------
# PCA against an eigendecomposition oracle


@pytest.mark.parametrize("seed", range(5))
def test_pca_matches_covariance_eigendecomposition(seed):
    rng = np.random.default_rng([29, seed])
    x = rng.standard_normal((50, 12))
    m = pca_fit(x, k=4)
    top = np.linalg.eigvalsh(np.cov(x, rowvar=False))[::-1][:4]
    np.testing.assert_allclose(m.explained_variance, top, rtol=VARIANCE_RTOL, atol=1e-12)
    gram = m.components @ m.components.T
    assert np.abs(gram - np.eye(4)).max() <= ORTHO_TOL


# ---------------------------------------------------------------------------
# attribution guarantees


def _margin(params, sample, eeg: np.ndarray) -> float:
    """Score gap in favor of the labeled stream."""
    scores = mm.stream_scores(
        tt.Tensor(eeg), [tt.Tensor(sample.s1), tt.Tensor(sample.s2)], params
    ).data
    sign = 1.0 if sample.y == 1 else -1.0
    return float(sign * (scores[0] - scores[1]))


class TestAttributionGuarantees:
    @pytest.mark.parametrize("y", [1, 2])
    def test_linear_readout_recovers_the_closed_form_map(self, y):
        sample = make_sample(seed=11, y=y)
        rng = np.random.default_rng(12)
        m_weights = rng.standard_normal(sample.eeg.shape).astype(np.float32)
        attr = expected_gradients(
            linear_score_fn(m_weights),
            sample,
            [np.zeros_like(sample.eeg)],
            n_draws=256,
            seed=0,
        )
        sign = 1.0 if y == 1 else -1.0
        want = sign * m_weights.astype(np.float64) * sample.eeg.astype(np.float64)
        np.testing.assert_allclose(attr, want, atol=LINEAR_ATTR_TOL)

    def test_attributions_sum_to_the_score_difference(self):
        """256 path draws from a zero baseline reconstruct the margin
        within 5% on a trained model."""
        cfg = TrainConfig(
            learning_rate=2e-3, batch_size=16, max_epochs=25, early_stop_patience=25, seed=0
        )
        best, _ = train(
            randomized_params(TINY, seed=0),
            toy_arrays(n=64, noise=0.1, seed=0),
            toy_arrays(n=32, noise=0.1, seed=1),
            cfg,
        )
        held = toy_arrays(n=4, noise=0.1, seed=2)
        for i in range(held.n):
            # scores are nearly scale-free along the ray from zero, so the
            # integrand concentrates near the baseline; shrinking the input
            # keeps the uniform draws dense across that region
            sample = FakeSample(
                eeg=(0.1 * held.eeg[i]).astype(np.float32),
                s1=held.s1[i],
                s2=held.s2[i],
                y=int(held.y[i]),
            )
            zero = np.zeros_like(sample.eeg)
            want = _margin(best, sample, sample.eeg) - _margin(best, sample, zero)
            assert abs(want) > 0.05  # the reconstruction target must not be degenerate
            for seed in (0, 1, 2):
                got = expected_gradients(best, sample, [zero], n_draws=256, seed=seed).sum()
                assert abs(got - want) <= COMPLETENESS_REL * abs(want)

    def test_disjoint_pathways_separate_in_the_difference_map(self):
        """Two models hard-gated to opposite channel halves must produce a
        difference map that is positive on the first model's half and
        negative on the other."""
        cfg = ModelConfig(eeg_channels=8, latent_dim=8, virtual_channels=8, n_res_blocks=1)
        first = randomized_params(cfg, seed=3)
        second = randomized_params(cfg, seed=3)
        gate = 30.0  # softmax weight ratio e^60, the off half is dead
        first.attn_logits.data[:, :4] = gate
        first.attn_logits.data[:, 4:] = -gate
        second.attn_logits.data[:, :4] = -gate
        second.attn_logits.data[:, 4:] = gate

        sample = make_sample(c=8, f=8, t=32, seed=4)
        zero = [np.zeros_like(sample.eeg)]
        imp_first = channel_importance(
            [expected_gradients(first, sample, zero, n_draws=64, seed=0)]
        )
        imp_second = channel_importance(
            [expected_gradients(second, sample, zero, n_draws=64, seed=0)]
        )
        d = difference_map(imp_first, imp_second)
        assert (d[:4] > 0).all()
        assert (d[4:] < 0).all()


# ---------------------------------------------------------------------------
# synthetic benchmark, full scale: 28 subjects x 10 sessions x 64 s


def test_both_match_mismatch_streams_learn_equally_well(tmp_path):
    man = generate(SynthConfig(unattended_gain=1.0, seed=0), tmp_path / "dual")
    _, att = train_mmm(man, 5.0, "attended", BENCH)
    _, unatt = train_mmm(man, 5.0, "unattended", BENCH)
    assert att.test_accuracy > 0.80
    assert unatt.test_accuracy > 0.80
    assert abs(att.test_accuracy - unatt.test_accuracy) < 0.05


def test_longer_windows_do_not_reduce_accuracy(tmp_path):
    """With noisy recordings, 5 s decisions average out noise that 1 s
    decisions cannot. Mean over three seeds on the first fold."""
    man = generate(SynthConfig(noise_sd=1.0, seed=0), tmp_path / "noisy")

    def fold0_accuracy(window_s, seed):
        cfg = TrainConfig(
            learning_rate=1e-3, batch_size=32, max_epochs=1, early_stop_patience=1, seed=seed
        )
        fold = make_fold_splits(man.subjects(), seed)[0]
        _, rep = run_fold(man, fold, window_s, "aad", cfg, ModelConfig())
        return rep.test_accuracy

    seeds = (0, 1, 2)
    acc_1s = np.mean([fold0_accuracy(1.0, s) for s in seeds])
    acc_5s = np.mean([fold0_accuracy(5.0, s) for s in seeds])
    assert acc_5s >= acc_1s


def test_held_out_subjects_decode_only_when_coupled(tmp_path):
    """Strong coupling must cross 85% mean accuracy over the 7-fold split;
    with the coupling removed the same pipeline must sit at chance.
    The whole check has a 30 minute budget."""
    t0 = time.monotonic()

    coupled = cross_validate(
        generate(SynthConfig(seed=0), tmp_path / "strong"), 5.0, "aad", BENCH
    )
    assert not coupled.failures
    assert len(coupled.accuracies) == 7
    assert coupled.mean_accuracy >= 0.85

    control = cross_validate(
        generate(SynthConfig(coupling_gain=0.0, unattended_gain=0.0, seed=0), tmp_path / "none"),
        5.0,
        "aad",
        BENCH,
    )
    assert not control.failures
    assert 0.45 <= control.mean_accuracy <= 0.55

    assert time.monotonic() - t0 <= 1800.0


@pytest.mark.skipif(
    "AADTK_REAL_DATASET_ROOT" not in os.environ,
    reason="set AADTK_REAL_DATASET_ROOT to run against real recordings",
)
def test_real_recordings_reproduce_the_reported_accuracy():
    root = Path(os.environ["AADTK_REAL_DATASET_ROOT"])
    rep = cross_validate(load_manifest(root / "manifest.json"), 5.0, "aad", TrainConfig(seed=0))
    assert not rep.failures
    assert abs(rep.mean_accuracy - 0.7270) <= 0.05
