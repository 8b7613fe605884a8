"""Small-scale fading generators and subcarrier covariance quantities.

Two models: i.i.d. Rayleigh across antennas/UEs/frequency units, and a
tapped-delay-line surrogate whose exponential power-delay profile gives the
frequency correlation a real wideband channel would show (strong within a
PRB, weak across subbands) with independent antennas by default.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scenario import Scenario, UEPopulation

PRB_SUBCARRIERS = 12
# 0-based indices of the pilot-bearing subcarriers inside one PRB.
PRB_PILOT_SUBCARRIERS = np.arange(0, PRB_SUBCARRIERS, 2)


@dataclass
class ChannelRealization:
    """Per-trial channel tensor g[m, k, f] = sqrt(beta_k) * h[m, k, f]."""

    g: np.ndarray        # (M, K, F) complex
    freq_hz: np.ndarray  # (F,) frequency of each unit
    mode: str            # "ci" (subbands) or "prb" (subcarriers)


@dataclass(frozen=True)
class TapProfile:
    """Discrete power-delay profile; powers sum to one."""

    delays_s: tuple
    powers: tuple

    @classmethod
    def exponential(cls, delay_spread_s: float, n_taps: int) -> "TapProfile":
        """Sampled exponential profile with the given RMS delay spread.

        Taps are spaced at a quarter of the delay spread so the discrete
        profile tracks the continuous exponential closely; a single tap
        degenerates to flat fading.
        """
        if delay_spread_s <= 0:
            raise ValueError("delay spread must be strictly positive")
        if n_taps < 1:
            raise ValueError("need at least one tap")
        if n_taps == 1:
            return cls(delays_s=(0.0,), powers=(1.0,))
        delays = np.arange(n_taps) * (delay_spread_s / 4.0)
        powers = np.exp(-delays / delay_spread_s)
        powers /= powers.sum()
        return cls(delays_s=tuple(delays.tolist()), powers=tuple(powers.tolist()))

    def frequency_correlation(self, delta_f_hz) -> np.ndarray:
        """E[h(f) h(f+df)*] for unit-power small-scale fading."""
        df = np.asarray(delta_f_hz, dtype=float)
        delays = np.asarray(self.delays_s)
        powers = np.asarray(self.powers)
        return np.tensordot(np.exp(-2j * np.pi * np.multiply.outer(df, delays)),
                            powers, axes=([-1], [0]))


def tap_profile(scenario: Scenario) -> TapProfile:
    return TapProfile.exponential(scenario.delay_spread_s, scenario.n_taps)


def coherence_bandwidth_hz(scenario: Scenario) -> float:
    return 1.0 / (2.0 * 50.0 * scenario.delay_spread_s)


def subband_count(scenario: Scenario) -> int:
    """Configured subband count, or bandwidth over coherence bandwidth."""
    if scenario.n_subbands is not None:
        return int(scenario.n_subbands)
    return max(1, int(scenario.bandwidth_hz / coherence_bandwidth_hz(scenario)))


def ci_frequencies(scenario: Scenario) -> np.ndarray:
    """Anchor frequency of each independent subband (offsets from band edge)."""
    n = subband_count(scenario)
    return np.arange(n) * (scenario.bandwidth_hz / n)


def prb_frequencies(scenario: Scenario) -> np.ndarray:
    """Frequencies of the 12 subcarriers in one PRB."""
    return np.arange(PRB_SUBCARRIERS) * scenario.subcarrier_spacing_hz


def eval_frequencies(scenario: Scenario) -> np.ndarray:
    return prb_frequencies(scenario) if scenario.pilot_mode == "gold-prb" else ci_frequencies(scenario)


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussians."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def gen_iid_rayleigh(scenario: Scenario, population: UEPopulation,
                     rng: np.random.Generator) -> ChannelRealization:
    """Independent unit complex Gaussians per antenna/UE/frequency unit."""
    freqs = eval_frequencies(scenario)
    h = _crandn(rng, (scenario.M, scenario.K_total, freqs.size))
    beta = population.authorized_beta()
    g = np.sqrt(beta)[None, :, None] * h
    return ChannelRealization(g=g, freq_hz=freqs,
                              mode="prb" if scenario.pilot_mode == "gold-prb" else "ci")


def gen_correlated_surrogate(scenario: Scenario, population: UEPopulation,
                             rng: np.random.Generator) -> ChannelRealization:
    """Tapped-delay-line channel with frequency-correlated coefficients.

    Per tap, gains are i.i.d. across antennas and UEs (optionally correlated
    across antennas with coefficient ``antenna_corr``); the frequency response
    is the profile-weighted phasor sum, so total average power is one before
    large-scale scaling.
    """
    profile = tap_profile(scenario)
    freqs = eval_frequencies(scenario)
    n_taps = len(profile.delays_s)
    gains = _crandn(rng, (n_taps, scenario.M, scenario.K_total))
    if scenario.antenna_corr > 0.0:
        idx = np.arange(scenario.M)
        corr = scenario.antenna_corr ** np.abs(idx[:, None] - idx[None, :])
        chol = np.linalg.cholesky(corr)
        gains = np.einsum("mp,lpk->lmk", chol, gains)
    weights = (np.sqrt(np.asarray(profile.powers))[None, :]
               * np.exp(-2j * np.pi * np.outer(freqs, profile.delays_s)))  # (F, L)
    h = np.einsum("fl,lmk->mkf", weights, gains)
    beta = population.authorized_beta()
    g = np.sqrt(beta)[None, :, None] * h
    return ChannelRealization(g=g, freq_hz=freqs,
                              mode="prb" if scenario.pilot_mode == "gold-prb" else "ci")


def generate_channel(scenario: Scenario, population: UEPopulation,
                     rng: np.random.Generator) -> ChannelRealization:
    if scenario.channel_model == "iid":
        return gen_iid_rayleigh(scenario, population, rng)
    return gen_correlated_surrogate(scenario, population, rng)


def pilot_subcarrier_correlation(scenario: Scenario) -> np.ndarray:
    """Unit-power 6x6 correlation across the pilot-bearing PRB subcarriers."""
    if scenario.channel_model == "iid":
        return np.eye(PRB_PILOT_SUBCARRIERS.size, dtype=complex)
    profile = tap_profile(scenario)
    f = PRB_PILOT_SUBCARRIERS * scenario.subcarrier_spacing_hz
    return profile.frequency_correlation(f[:, None] - f[None, :])


def subcarrier_covariance(scenario: Scenario, population: UEPopulation,
                          mode: str = "analytic", draws: int = 1000,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-UE covariance of the channel across the six pilot subcarriers.

    Returns a (K_total, 6, 6) Hermitian PSD array. Analytic mode evaluates
    the profile's closed-form frequency correlation; sample mode averages
    outer products of noise-free channel draws.
    """
    beta = population.authorized_beta()
    if mode == "analytic":
        corr = pilot_subcarrier_correlation(scenario)
        return beta[:, None, None] * corr[None, :, :]
    if mode != "sample":
        raise ValueError("mode must be 'analytic' or 'sample'")
    if draws < 10:
        raise ValueError("sample covariance needs at least 10 draws")
    if rng is None:
        rng = np.random.default_rng()
    prb = scenario.replace(pilot_mode="gold-prb", tau=24, tau_c=168)
    cov = np.zeros((scenario.K_total, PRB_PILOT_SUBCARRIERS.size,
                    PRB_PILOT_SUBCARRIERS.size), dtype=complex)
    if scenario.antenna_corr == 0.0:
        # Antennas are i.i.d. copies, so one wide realization supplies all draws.
        real = generate_channel(prb.replace(M=draws), population, rng)
        gk = real.g[:, :, PRB_PILOT_SUBCARRIERS]  # (draws, K, 6)
        cov = np.einsum("dks,dkt->kst", gk, gk.conj())
    else:
        one_antenna = prb.replace(M=1)
        for _ in range(draws):
            real = generate_channel(one_antenna, population, rng)
            gk = real.g[0][:, PRB_PILOT_SUBCARRIERS]  # (K, 6)
            cov += gk[:, :, None] * gk.conj()[:, None, :]
    return cov / draws


@lru_cache(maxsize=32)
def _smallscale_variance_cached(model: str, delay_spread_s: float, n_taps: int,
                                antenna_corr: float, draws: int) -> float:
    if model == "iid":
        return 1.0
    profile = TapProfile.exponential(delay_spread_s, n_taps)
    rng = np.random.default_rng(np.random.SeedSequence([0xCA11B, n_taps, draws]))
    gains = _crandn(rng, (len(profile.delays_s), draws))
    h = np.sqrt(np.asarray(profile.powers)) @ gains
    return float(np.mean(np.abs(h) ** 2))


def smallscale_variance(scenario: Scenario, draws: int = 10_000) -> float:
    """Average power of the small-scale coefficients for this configuration.

    Measured once per (model, profile) from a calibration run and cached;
    multiplies beta_k to form the per-UE prior const_k.
    """
    return _smallscale_variance_cached(scenario.channel_model, scenario.delay_spread_s,
                                       scenario.n_taps, scenario.antenna_corr, draws)


def effective_const(scenario: Scenario, population: UEPopulation) -> np.ndarray:
    """Per-authorized-UE channel power prior: eta * beta * small-scale variance."""
    return (population.authorized_eta() * population.authorized_beta()
            * smallscale_variance(scenario))


# -- binary interchange ------------------------------------------------------

_HEADER = struct.Struct("<iii")


def dump_realization(path: str, realization) -> None:
    """Write coefficients to a little-endian binary file: int32 header
    {M, K, F}, then the row-major (C-order) values as complex64 (float32
    re, im pairs). Accepts a realization, a channel estimate, or a bare
    (M, K, F) array, so estimates share the interchange format.
    """
    g = getattr(realization, "g", getattr(realization, "ghat", realization))
    m, k, f = g.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(m, k, f))
        fh.write(np.ascontiguousarray(g).astype("<c8").tobytes())


def load_realization(path: str, freq_hz: np.ndarray | None = None,
                     mode: str = "ci") -> ChannelRealization:
    with open(path, "rb") as fh:
        m, k, f = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != m * k * f:
        raise ValueError("channel dump truncated or header inconsistent")
    g = data.reshape(m, k, f).astype(complex)
    if freq_hz is None:
        freq_hz = np.arange(f, dtype=float)
    return ChannelRealization(g=g, freq_hz=freq_hz, mode=mode)
