"""LMMSE channel estimators for the detected UE set.

Three regimes: a diagonal-prior estimator over the whole pilot book, a
decoupled per-UE estimator for orthogonal pilots with identity-approximated
spatial covariance, and the PRB estimator that couples the six pilot-bearing
subcarriers through their covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import PRB_PILOT_SUBCARRIERS, PRB_SUBCARRIERS
from .pilots import PRB_BLOCKS, PilotBook, assemble_prb_matrix

# Above this prior magnitude the inner inverse of the primary form is badly
# conditioned; both forms are algebraically equal.
_FALLBACK_PRIOR = 1e6


@dataclass
class EstimatorInput:
    """Received pilots plus everything the estimator assumes known.

    ``Y`` is (tau, M, N) in coherence-interval mode and (24, M) in PRB mode.
    ``priors`` are per-UE effective channel powers; ``cov6`` per-UE 6x6 pilot
    subcarrier covariances (PRB mode only). ``predicted`` is the detector's
    boolean mask; UEs outside it get exactly zero estimates.
    """

    Y: np.ndarray
    book: PilotBook
    predicted: np.ndarray
    rho_p: float
    priors: np.ndarray | None = None
    cov6: np.ndarray | None = None


@dataclass
class ChannelEstimate:
    """Estimated coefficients, shaped like the true channel tensor (M, K, F)."""

    ghat: np.ndarray
    mode: str


def _ci_received(Y: np.ndarray) -> np.ndarray:
    return Y[:, :, None] if Y.ndim == 2 else Y


def lmmse_ci_diag(inp: EstimatorInput) -> ChannelEstimate:
    """Joint LMMSE over the predicted set with a diagonal channel-power prior.

    The estimator weights are sqrt(tau rho) Phi_B (C^-1 + tau rho Phi_B^H
    Phi_B)^-1 with C the diagonal of per-UE priors; columns outside the
    predicted set are zeroed, which makes their estimates exactly zero.
    """
    Y = _ci_received(inp.Y)
    tau, m, n_sub = Y.shape
    n_ue = inp.book.n_ue
    ghat = np.zeros((m, n_ue, n_sub), dtype=complex)
    b = np.flatnonzero(inp.predicted)
    if b.size == 0:
        return ChannelEstimate(ghat=ghat, mode="ci")
    if inp.priors is None:
        raise ValueError("diagonal LMMSE needs per-UE priors")
    c = np.asarray(inp.priors, dtype=float)[b]
    if np.any(c <= 0):
        raise ValueError("priors must be strictly positive")
    tr = inp.book.tau * inp.rho_p
    phi_b = inp.book.phi[:, b]
    if c.max() > _FALLBACK_PRIOR:
        # Inversion-free form: C Phi^H (tau rho Phi C Phi^H + I)^-1.
        gram = tr * (phi_b * c) @ phi_b.conj().T + np.eye(tau)
        e_h = np.sqrt(tr) * (c[:, None] * phi_b.conj().T) @ np.linalg.inv(gram)
    else:
        inner = np.diag(1.0 / c) + tr * phi_b.conj().T @ phi_b
        e_h = np.sqrt(tr) * np.linalg.inv(inner) @ phi_b.conj().T
    for n in range(n_sub):
        ghat[:, b, n] = (e_h @ Y[:, :, n]).T
    return ChannelEstimate(ghat=ghat, mode="ci")


def lmmse_ci_perue(inp: EstimatorInput) -> ChannelEstimate:
    """Decoupled per-UE LMMSE for orthogonal pilots.

    With the spatial covariance approximated as const_k * I, the estimator
    reduces to a scalar shrinkage sqrt(tau rho) c / (tau rho c + 1) applied to
    each UE's matched-filter output.
    """
    if not inp.book.is_orthogonal:
        raise ValueError("per-UE LMMSE requires orthogonal pilots")
    if inp.priors is None:
        raise ValueError("per-UE LMMSE needs const_k priors")
    Y = _ci_received(inp.Y)
    tau, m, n_sub = Y.shape
    n_ue = inp.book.n_ue
    ghat = np.zeros((m, n_ue, n_sub), dtype=complex)
    b = np.flatnonzero(inp.predicted)
    if b.size == 0:
        return ChannelEstimate(ghat=ghat, mode="ci")
    c = np.asarray(inp.priors, dtype=float)[b]
    if np.any(c <= 0):
        raise ValueError("const_k must be strictly positive")
    tr = inp.book.tau * inp.rho_p
    gains = np.sqrt(tr) * c / (tr * c + 1.0)
    for n in range(n_sub):
        mf = inp.book.phi[:, b].conj().T @ Y[:, :, n]  # (|B|, M)
        ghat[:, b, n] = (gains[:, None] * mf).T
    return ChannelEstimate(ghat=ghat, mode="ci")


def _prb_prior(cov6: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stacked prior over (subcarrier block, UE): blocks C^{s,s'} are diagonal
    across UEs because different UEs' channels are independent."""
    nb = b.size
    c_tilde = np.zeros((PRB_BLOCKS * nb, PRB_BLOCKS * nb), dtype=complex)
    for i in range(PRB_BLOCKS):
        for j in range(PRB_BLOCKS):
            block = np.diag(cov6[b, i, j])
            c_tilde[i * nb:(i + 1) * nb, j * nb:(j + 1) * nb] = block
    return c_tilde


def lmmse_prb(inp: EstimatorInput) -> ChannelEstimate:
    """PRB LMMSE coupling the pilot-bearing subcarriers through their covariance.

    Estimates live on the six pilot subcarriers; the remaining subcarriers
    reuse the nearest pilot subcarrier's estimate (ties broken toward the
    lower index). A singular stacked prior switches to the inversion-free
    form, which handles fully-correlated (rank-one) subcarrier priors.
    """
    if inp.Y.ndim != 2:
        raise ValueError("PRB estimation expects Y of shape (24, M)")
    if inp.cov6 is None:
        raise ValueError("PRB LMMSE needs per-UE subcarrier covariances")
    tau, m = inp.Y.shape
    n_ue = inp.book.n_ue
    ghat = np.zeros((m, n_ue, PRB_SUBCARRIERS), dtype=complex)
    b = np.flatnonzero(inp.predicted)
    if b.size == 0:
        return ChannelEstimate(ghat=ghat, mode="prb")
    v = assemble_prb_matrix(inp.book, b)
    c_tilde = _prb_prior(np.asarray(inp.cov6), b)
    tr = inp.book.tau * inp.rho_p
    spectrum = np.linalg.eigvalsh(c_tilde)
    top = max(spectrum[-1], 1e-300)
    if spectrum[0] < -1e-9 * top:
        raise ValueError("subcarrier covariance prior is not PSD")
    use_fallback = spectrum[0] < 1e-10 * top
    if use_fallback:
        gram = tr * v @ c_tilde @ v.conj().T + np.eye(tau)
        e_h = np.sqrt(tr) * c_tilde @ v.conj().T @ np.linalg.inv(gram)
    else:
        inner = np.linalg.inv(c_tilde) + tr * v.conj().T @ v
        e_h = np.sqrt(tr) * np.linalg.inv(inner) @ v.conj().T
    stacked = (e_h @ inp.Y).reshape(PRB_BLOCKS, b.size, m)
    for i, sc in enumerate(PRB_PILOT_SUBCARRIERS):
        ghat[:, b, sc] = stacked[i].T
    for sc in range(PRB_SUBCARRIERS):
        if sc not in PRB_PILOT_SUBCARRIERS:
            ghat[:, :, sc] = ghat[:, :, sc - 1]
    return ChannelEstimate(ghat=ghat, mode="prb")


def estimate(inp: EstimatorInput, estimator_id: str,
             true_effective: np.ndarray | None = None) -> ChannelEstimate:
    """Run the configured estimator; ``true`` returns oracle CSI masked to the
    predicted set."""
    if estimator_id == "ci-diag":
        return lmmse_ci_diag(inp)
    if estimator_id == "ci-perue":
        return lmmse_ci_perue(inp)
    if estimator_id == "prb":
        return lmmse_prb(inp)
    if estimator_id == "true":
        if true_effective is None:
            raise ValueError("oracle estimation needs the true channel")
        ghat = np.zeros_like(true_effective)
        b = np.flatnonzero(inp.predicted)
        ghat[:, b, :] = true_effective[:, b, :]
        return ChannelEstimate(ghat=ghat, mode="prb" if true_effective.shape[2] == PRB_SUBCARRIERS else "ci")
    raise ValueError(f"unknown estimator {estimator_id!r}")
