"""Small-scale fading generators and subcarrier covariance."""

import numpy as np
import pytest
from scipy.stats import ks_2samp

from gfmimo.channel import (PRB_PILOT_SUBCARRIERS, TapProfile,
                            coherence_bandwidth_hz, dump_realization,
                            gen_correlated_surrogate, gen_iid_rayleigh,
                            load_realization, smallscale_variance,
                            subband_count, subcarrier_covariance)
from gfmimo.scenario import Scenario, UEPopulation


def unit_population(n, beta=None):
    beta = np.ones(n) if beta is None else np.asarray(beta, dtype=float)
    return UEPopulation(distance_m=np.ones(n), angle_rad=np.zeros(n),
                        beta=beta, eta=np.ones(n),
                        retained=np.ones(n, dtype=bool), authorized=np.arange(n))


def ci_scenario(**kw):
    defaults = dict(M=2, K_total=4, lambda_active=1.0, n_subbands=1,
                    pilot_mode="gold-ci", tau=24, detector_id="ml",
                    channel_model="iid", rng_seed=0)
    defaults.update(kw)
    return Scenario(**defaults)


class TestIidRayleigh:
    def test_zero_beta_zeroes_channel(self):
        sc = ci_scenario()
        pop = unit_population(4, beta=[1.0, 0.0, 2.0, 1.0])
        g = gen_iid_rayleigh(sc, pop, np.random.default_rng(0)).g
        assert np.abs(g[:, 1, :]).max() == 0.0
        assert np.abs(g[:, 0, :]).max() > 0.0

    def test_unit_power(self):
        sc = ci_scenario(M=10, K_total=100)
        pop = unit_population(100)
        rng = np.random.default_rng(1)
        g = np.concatenate([gen_iid_rayleigh(sc, pop, rng).g.ravel()
                            for _ in range(100)])
        assert g.size >= 10**5
        assert abs(np.mean(np.abs(g) ** 2) - 1.0) < 0.01

    def test_cross_antenna_independence(self):
        sc = ci_scenario(M=2, K_total=1000)
        pop = unit_population(1000)
        rng = np.random.default_rng(2)
        acc, n = 0.0, 0
        for _ in range(100):
            g = gen_iid_rayleigh(sc, pop, rng).g[:, :, 0]
            acc += np.sum(g[0] * np.conj(g[1]))
            n += g.shape[1]
        # sample cross-covariance of CN(0,1) pairs: std 1/sqrt(n)
        assert abs(acc / n) < 3.0 / np.sqrt(n)


class TestSurrogate:
    def test_single_tap_is_flat(self):
        sc = ci_scenario(channel_model="tdl", n_taps=1, n_subbands=6)
        pop = unit_population(4)
        g = gen_correlated_surrogate(sc, pop, np.random.default_rng(3)).g
        assert np.abs(g - g[:, :, :1]).max() < 1e-12

    def test_adjacent_subcarrier_correlation_exceeds_090(self):
        # Oracle: continuous exponential-profile correlation
        # 1/sqrt(1 + (2 pi df s)^2) at df = 30 kHz, s = 363 ns is 0.9977.
        sc = ci_scenario(channel_model="tdl", n_taps=48,
                         pilot_mode="gold-prb", tau=24, tau_c=168,
                         detector_id="prb-ml", estimator_id="prb",
                         M=4, K_total=500)
        pop = unit_population(500)
        rng = np.random.default_rng(4)
        num, p0, p1 = 0.0, 0.0, 0.0
        for _ in range(20):
            g = gen_correlated_surrogate(sc, pop, rng).g
            a, b = g[:, :, 0].ravel(), g[:, :, 1].ravel()
            num += np.sum(a * np.conj(b))
            p0 += np.sum(np.abs(a) ** 2)
            p1 += np.sum(np.abs(b) ** 2)
        corr = abs(num) / np.sqrt(p0 * p1)
        assert corr > 0.9
        continuous = 1.0 / np.sqrt(1.0 + (2 * np.pi * 30e3 * 363e-9) ** 2)
        assert abs(corr - continuous) < 0.02

    def test_cross_antenna_covariance_500x_below_variance(self):
        sc = ci_scenario(M=2, K_total=1000, channel_model="tdl", n_taps=16)
        pop = unit_population(1000)
        rng = np.random.default_rng(4)
        acc, var, n = 0.0, 0.0, 0
        for _ in range(100):
            g = gen_correlated_surrogate(sc, pop, rng).g[:, :, 0]
            acc += np.sum(g[0] * np.conj(g[1]))
            var += np.sum(np.abs(g[0]) ** 2)
            n += g.shape[1]
        assert n == 10**5
        assert abs(acc / n) <= (var / n) / 500.0

    def test_correlation_non_increasing_in_spacing(self):
        prof = TapProfile.exponential(363e-9, 48)
        df = np.arange(0, 12) * 30e3
        mags = np.abs(prof.frequency_correlation(df))
        assert (np.diff(mags) < 0).all()

    def test_realizations_finite(self):
        sc = ci_scenario(channel_model="tdl", n_taps=8, n_subbands=3,
                         antenna_corr=0.4)
        pop = unit_population(4, beta=[1e-12, 1.0, 3.0, 0.5])
        g = gen_correlated_surrogate(sc, pop, np.random.default_rng(5)).g
        assert np.isfinite(g).all()

    def test_one_tap_matches_iid_in_distribution(self):
        sc = ci_scenario(M=1, K_total=10_000, channel_model="tdl", n_taps=1)
        pop = unit_population(10_000)
        h_tdl = gen_correlated_surrogate(sc, pop, np.random.default_rng(6)).g.ravel()
        h_iid = gen_iid_rayleigh(sc, pop, np.random.default_rng(7)).g.ravel()
        assert ks_2samp(np.abs(h_tdl), np.abs(h_iid)).pvalue > 0.01

    def test_invalid_profile_rejected(self):
        with pytest.raises(ValueError):
            TapProfile.exponential(-1e-9, 4)
        with pytest.raises(ValueError):
            TapProfile.exponential(1e-9, 0)


class TestSubcarrierCovariance:
    def prb_scenario(self, **kw):
        defaults = dict(M=2, K_total=3, lambda_active=1.0, tau=24, tau_c=168,
                        pilot_mode="gold-prb", detector_id="prb-ml",
                        estimator_id="prb", channel_model="tdl", n_taps=12,
                        rng_seed=0)
        defaults.update(kw)
        return Scenario(**defaults)

    def test_single_tap_rank_one_structure(self):
        sc = self.prb_scenario(n_taps=1)
        pop = unit_population(3, beta=[0.5, 1.0, 2.0])
        cov = subcarrier_covariance(sc, pop, mode="analytic")
        for k, b in enumerate([0.5, 1.0, 2.0]):
            assert np.abs(cov[k] - b * np.ones((6, 6))).max() < 1e-12

    def test_diagonal_equals_beta_times_smallscale_variance(self):
        sc = self.prb_scenario()
        pop = unit_population(3, beta=[0.5, 1.0, 2.0])
        cov = subcarrier_covariance(sc, pop, mode="analytic")
        var = smallscale_variance(sc)
        diag = np.diagonal(cov, axis1=1, axis2=2).real
        assert np.allclose(diag, np.outer([0.5, 1.0, 2.0], np.full(6, var)),
                           rtol=0.02)

    def test_sample_matches_analytic(self):
        sc = self.prb_scenario()
        pop = unit_population(3)
        analytic = subcarrier_covariance(sc, pop, mode="analytic")
        sample = subcarrier_covariance(sc, pop, mode="sample", draws=10_000,
                                       rng=np.random.default_rng(8))
        rel = np.abs(sample - analytic) / np.abs(analytic)
        assert rel.max() < 0.05

    def test_sample_psd_and_hermitian(self):
        sc = self.prb_scenario()
        pop = unit_population(3)
        cov = subcarrier_covariance(sc, pop, mode="sample", draws=500,
                                    rng=np.random.default_rng(9))
        for k in range(3):
            assert np.abs(cov[k] - cov[k].conj().T).max() < 1e-12
            assert np.linalg.eigvalsh(cov[k]).min() > -1e-12

    def test_too_few_draws_rejected(self):
        sc = self.prb_scenario()
        with pytest.raises(ValueError, match="at least 10"):
            subcarrier_covariance(sc, unit_population(3), mode="sample", draws=5)


def test_subband_count_follows_coherence_bandwidth():
    sc = ci_scenario(n_subbands=None, bandwidth_hz=40e6, delay_spread_s=100e-9)
    assert coherence_bandwidth_hz(sc) == 1.0 / (2 * 50 * 100e-9)
    assert subband_count(sc) == int(40e6 * (2 * 50 * 100e-9))
    assert subband_count(ci_scenario(n_subbands=7)) == 7


def test_smallscale_variance_near_unity():
    sc = ci_scenario(channel_model="tdl", n_taps=16)
    assert abs(smallscale_variance(sc) - 1.0) < 0.05
    assert smallscale_variance(ci_scenario(channel_model="iid")) == 1.0


def test_dump_load_roundtrip(tmp_path):
    sc = ci_scenario(M=3, K_total=2, n_subbands=4)
    pop = unit_population(2, beta=[1.0, 2.0])
    real = gen_iid_rayleigh(sc, pop, np.random.default_rng(10))
    path = tmp_path / "chan.bin"
    dump_realization(str(path), real)
    loaded = load_realization(str(path))
    assert loaded.g.shape == (3, 2, 4)
    # complex64 storage keeps ~7 significant digits
    assert np.abs(loaded.g - real.g).max() < 1e-6


def test_dump_accepts_estimates_and_arrays(tmp_path):
    from gfmimo.estimation import ChannelEstimate
    rng = np.random.default_rng(11)
    ghat = rng.standard_normal((2, 3, 4)) + 1j * rng.standard_normal((2, 3, 4))
    path = tmp_path / "est.bin"
    dump_realization(str(path), ChannelEstimate(ghat=ghat, mode="ci"))
    assert np.abs(load_realization(str(path)).g - ghat).max() < 1e-6
    dump_realization(str(path), ghat)
    assert np.abs(load_realization(str(path)).g - ghat).max() < 1e-6
