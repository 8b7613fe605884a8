"""MMSE combining, instantaneous SINR, and effective throughput."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fixed multiplicative SINR derating (1 dB) standing in for the rate loss of
# practical finite-length coding and suboptimal decoding.
DECODING_PENALTY = 10.0 ** (-1.0 / 10.0)

TRIAL_LABELS = ("detected-active", "misdetected", "false-alarm", "true-inactive")


@dataclass
class ReceiverBank:
    """Per-UE combining vectors; zero columns for UEs outside the predicted set."""

    v: np.ndarray  # (M, K)


@dataclass
class TrialOutcome:
    """Per-UE results of one trial at one frequency aggregation."""

    sinr: np.ndarray            # linear, 0 for UEs without a receiver or signal
    throughput_bps: np.ndarray  # 0 for misdetected and inactive UEs
    label: np.ndarray           # one of TRIAL_LABELS per UE


def build_mmse_receiver(ghat: np.ndarray, eta: np.ndarray, rho_u: float,
                        predicted: np.ndarray) -> ReceiverBank:
    """Combining vectors from the estimated channels of the predicted set.

    v_k = sqrt(rho_u eta_k) (rho_u sum_{k' in B} eta_k' ghat_k' ghat_k'^H
    + I)^-1 ghat_k. The inverse exists unconditionally (identity plus PSD)
    and is computed once for the whole bank.
    """
    m, n_ue = ghat.shape
    v = np.zeros((m, n_ue), dtype=complex)
    b = np.flatnonzero(predicted)
    if b.size == 0:
        return ReceiverBank(v=v)
    gb = ghat[:, b]
    a = rho_u * (gb * eta[b]) @ gb.conj().T + np.eye(m)
    v[:, b] = np.sqrt(rho_u * eta[b]) * np.linalg.solve(a, gb)
    return ReceiverBank(v=v)


def instantaneous_sinr(receiver: ReceiverBank, g_true: np.ndarray,
                       eta: np.ndarray, rho_u: float,
                       active: np.ndarray) -> np.ndarray:
    """Post-combining SINR of each UE on one channel realization.

    The receiver is fixed (built from estimates over the predicted set) while
    signal and interference use the true channels of the truly active UEs, so
    misdetected actives still interfere. The noise term is the combiner's
    energy. UEs with a zero combining vector get SINR zero.
    """
    v = receiver.v
    n_ue = v.shape[1]
    active_mask = np.zeros(n_ue, dtype=bool)
    active_mask[np.asarray(active, dtype=int)] = True
    cross = v.conj().T @ g_true                      # (K, K): v_k^H g_k'
    power = rho_u * eta[None, :] * np.abs(cross) ** 2
    noise = np.sum(np.abs(v) ** 2, axis=0)
    own = np.diag(power) * active_mask
    interference = power[:, active_mask].sum(axis=1) - own
    denom = interference + noise
    return np.divide(own, denom, out=np.zeros(n_ue), where=noise > 0.0)


def effective_throughput(sinr, tau: int, tau_c: int, bandwidth_hz: float):
    """Pilot-overhead-scaled Shannon rate with the 1 dB decoding derating."""
    prefactor = (tau_c - tau) / tau_c
    return prefactor * bandwidth_hz * np.log2(1.0 + np.asarray(sinr) * DECODING_PENALTY)
