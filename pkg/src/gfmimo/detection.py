"""Active-UE detectors and threshold calibration.

Four detector families: a closed-form chi-square correlator for orthogonal
pilots, coordinate-wise descent on the pilot-domain sample covariance in
three flavours (ml, mmv, nnls), a PRB variant of the ml descent that folds in
the per-UE covariance across pilot subcarriers, and a perfect oracle.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .pilots import PRB_BLOCKS, PilotBook
from .scenario import STREAM_CALIBRATION, Scenario, substream

COORDINATE_VARIANTS = ("ml", "mmv", "nnls")


@dataclass
class DetectionProblem:
    """One trial's detection inputs.

    ``Y`` is the received pilot matrix with one column per complex
    observation vector: (tau, M*N) in coherence-interval mode, (24, M) in PRB
    mode. ``priors`` are per-UE effective channel powers (eta * beta * var)
    and ``cov6`` the per-UE covariance across the six pilot subcarriers; both
    are only consumed by the detectors that need them.
    """

    Y: np.ndarray
    book: PilotBook
    rho_p: float
    p_fa: float
    priors: np.ndarray | None = None
    cov6: np.ndarray | None = None
    active: np.ndarray | None = None  # oracle input for the perfect detector

    def validate(self) -> "DetectionProblem":
        if self.Y.shape[0] != self.book.tau:
            raise ValueError("observation length does not match the pilot book")
        if self.rho_p <= 0:
            raise ValueError("rho_p must be strictly positive")
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError("p_fa must lie in (0, 1)")
        return self


@dataclass
class DetectionResult:
    """Predicted active set with the per-UE statistic behind it."""

    predicted: np.ndarray           # bool mask over UEs (all False if no threshold)
    statistic: np.ndarray           # T(z_k) or gamma_k
    threshold: float | None
    sweeps: int = 0
    sigma: np.ndarray | None = None  # final model covariance (coordinate methods)

    @property
    def predicted_set(self) -> np.ndarray:
        return np.flatnonzero(self.predicted)


def _apply_threshold(statistic: np.ndarray, threshold: float | None) -> np.ndarray:
    if threshold is None:
        return np.zeros(statistic.size, dtype=bool)
    return statistic > threshold


# -- Neyman-Pearson with orthogonal pilots -----------------------------------

def np_correlate(Y: np.ndarray, book: PilotBook) -> np.ndarray:
    """Matched-filter observations z_k = phi_k^H y per antenna/subband column.

    Requires an orthogonal book: with non-orthogonal pilots the per-UE columns
    are no longer sufficient statistics and the chi-square law breaks.
    """
    if not book.is_orthogonal:
        raise ValueError("correlation detection requires orthogonal pilots")
    Y2d = Y.reshape(Y.shape[0], -1)
    return book.phi.conj().T @ Y2d  # (K, M*N)


def np_statistics(Z: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(Z) ** 2, axis=1)


def np_threshold(p_fa: float, m: int, n_subbands: int = 1) -> float:
    """Closed-form detection threshold: chi-square(2MN) upper quantile, halved.

    The real and imaginary parts of each matched-filter sample have variance
    1/2 under the inactive hypothesis, so twice the energy statistic is
    chi-square with 2MN degrees of freedom.
    """
    if not 0.0 < p_fa < 1.0:
        raise ValueError("p_fa must lie in (0, 1)")
    return 0.5 * float(chi2.isf(p_fa, 2 * m * n_subbands))


def np_detect(problem: DetectionProblem) -> DetectionResult:
    problem.validate()
    z = np_correlate(problem.Y, problem.book)
    stat = np_statistics(z)
    thr = 0.5 * float(chi2.isf(problem.p_fa, 2 * z.shape[1]))
    return DetectionResult(predicted=_apply_threshold(stat, thr),
                           statistic=stat, threshold=thr)


# -- coordinate-wise descent --------------------------------------------------

def sample_covariance(Y: np.ndarray) -> np.ndarray:
    """Empirical covariance of the observation columns, normalized by their
    count so it is consistent for the model covariance as samples grow."""
    Y2d = Y.reshape(Y.shape[0], -1)
    return (Y2d @ Y2d.conj().T) / Y2d.shape[1]


def _descend(sigma_hat: np.ndarray, psi: np.ndarray, components, variant: str,
             order_rng: np.random.Generator, max_sweeps: int, tol: float,
             step_callback=None):
    """Shared coordinate loop over per-UE activity weights.

    ``psi[:, k]`` is the signature vector entering the step-size formulas.
    ``components`` is None when UE k's model-covariance contribution is the
    rank-1 outer product of its signature; in PRB mode it holds per UE the
    (eigenvalues, eigenvector matrix) of the full contribution instead.
    Weights stay non-negative via the clamp at -gamma_k, which keeps the
    model covariance positive definite.
    """
    tau, n_ue = psi.shape
    sigma = np.eye(tau, dtype=complex)
    sigma_inv = np.eye(tau, dtype=complex)
    gamma = np.zeros(n_ue)
    psi_c = psi.conj()
    norm4 = np.sum(np.abs(psi) ** 2, axis=0) ** 2
    shat_quad = np.einsum("tk,ts,sk->k", psi_c, sigma_hat, psi).real
    live = np.flatnonzero(norm4 > 0.0)
    nnls = variant == "nnls"

    sweeps_done = 0
    for sweep in range(max_sweeps):
        if not nnls:
            sigma_inv = np.linalg.inv(sigma)
        max_step = 0.0
        for k in order_rng.permutation(live):
            p = psi[:, k]
            if nnls:
                num = shat_quad[k] - (psi_c[:, k] @ (sigma @ p)).real
                d = num / norm4[k]
            else:
                x = sigma_inv @ p
                q = (psi_c[:, k] @ x).real
                assert q > 0.0, "model covariance lost positivity"
                r = (x.conj() @ (sigma_hat @ x)).real
                if variant == "ml":
                    d = (r - q) / (q * q)
                else:  # mmv
                    d = (np.sqrt(max(r, 0.0)) - 1.0) / q
            if d < -gamma[k]:
                d = -gamma[k]
            if d == 0.0:
                continue
            gamma[k] += d
            if components is None:
                sigma += np.multiply.outer(d * p, psi_c[:, k])
                if not nnls:
                    # rank-1 downdate of the inverse
                    denom = 1.0 + d * q
                    sigma_inv -= np.multiply.outer((d / denom) * x, x.conj())
            else:
                lam, u_mat = components[k]
                c = d * lam
                sigma += (u_mat * c) @ u_mat.conj().T
                if not nnls:
                    # rank-r Woodbury downdate, stable for any step size:
                    # correction = X (C^-1 + U^H X)^-1 X^H with C = diag(c),
                    # computed as X [C (I + GC)^-1] X^H to allow c -> 0
                    xs = sigma_inv @ u_mat
                    g_small = u_mat.conj().T @ xs
                    core = np.diag(c).astype(complex) @ np.linalg.inv(
                        np.eye(lam.size) + g_small * c)
                    sigma_inv -= xs @ core @ xs.conj().T
            if abs(d) > max_step:
                max_step = abs(d)
            if step_callback is not None:
                step_callback(k, d, sigma, gamma)
        sweeps_done = sweep + 1
        if max_step < tol:
            break
    return gamma, sigma, sweeps_done


def coordinate_descent_detect(problem: DetectionProblem, variant: str,
                              threshold: float | None = None,
                              max_sweeps: int = 50, tol: float = 1e-6,
                              rng: np.random.Generator | None = None,
                              step_callback=None) -> DetectionResult:
    """Activity weights by coordinate-wise descent on the sample covariance.

    Starting from the pure-noise model (identity covariance, zero weights),
    each visit to UE k takes the variant's closed-form step:

        ml:   (x^H S x - q) / q^2     with x = Sigma^-1 phi_k, q = phi_k^H x
        mmv:  (sqrt(x^H S x) - 1) / q
        nnls: phi_k^H (S - Sigma) phi_k / ||phi_k||^4

    clamped at -gamma_k, then applies the rank-1 covariance update. UEs are
    visited in a fresh random order each sweep; the loop stops after
    ``max_sweeps`` passes or when the largest step falls below ``tol``.
    """
    problem.validate()
    if variant not in COORDINATE_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    gamma, sigma, sweeps = _descend(sample_covariance(problem.Y), problem.book.phi,
                                    None, variant, rng, max_sweeps, tol, step_callback)
    return DetectionResult(predicted=_apply_threshold(gamma, threshold),
                           statistic=gamma, threshold=threshold,
                           sweeps=sweeps, sigma=sigma)


# -- PRB variant ---------------------------------------------------------------

def prb_signatures(book: PilotBook, cov6: np.ndarray):
    """Eigen-factored per-UE model-covariance contributions for PRB detection.

    UE k's contribution is S_k = V_k C6_k V_k^H with V_k its 24x6 block pilot
    matrix and C6_k the pilot-subcarrier covariance. Because the six blocks
    occupy disjoint rows, S_k's nonzero eigenpairs come from the 6x6 Hermitian
    matrix D^1/2 C6 D^1/2 (D = per-block pilot energies), which keeps the
    factorization cheap and batched over UEs. Returns (psi, components):
    psi[:, k] is the dominant eigenvector scaled to its eigenvalue's square
    root (the effective signature entering the ml step formula; exact when
    the subcarriers are fully correlated), components[k] a pair (eigenvalues,
    eigenvector matrix) for the covariance update.
    """
    n_ue = book.n_ue
    cov6 = np.asarray(cov6, dtype=complex)
    if cov6.shape != (n_ue, PRB_BLOCKS, PRB_BLOCKS):
        raise ValueError("cov6 must have shape (K, 6, 6)")
    blocks = book.phi.reshape(PRB_BLOCKS, 4, n_ue)        # (6, 4, K)
    d = np.sum(np.abs(blocks) ** 2, axis=1)               # (6, K) block energies
    c6 = 0.5 * (cov6 + np.conj(np.swapaxes(cov6, 1, 2)))
    sqrt_d = np.sqrt(d.T)                                 # (K, 6)
    h6 = sqrt_d[:, :, None] * c6 * sqrt_d[:, None, :]
    vals, vecs = np.linalg.eigh(h6)                       # ascending, (K, 6)
    scale = np.abs(vals).max(axis=1)
    if np.any(vals[:, 0] < -1e-9 * np.maximum(scale, 1e-300)):
        bad = int(np.argmin(vals[:, 0]))
        raise ValueError(f"subcarrier covariance of UE {bad} is not PSD")
    vals = np.maximum(vals, 0.0)
    # eigenvectors of S_k: distribute w_i / sqrt(d) over the pilot blocks
    w = vecs / np.where(sqrt_d[:, :, None] > 0, sqrt_d[:, :, None], 1.0)
    u = np.einsum("bsk,kbr->bskr", blocks, w).reshape(book.tau, n_ue, PRB_BLOCKS)
    psi = np.sqrt(vals[:, -1])[None, :] * u[:, :, -1]
    components = [(vals[k, ::-1].copy(), np.ascontiguousarray(u[:, k, ::-1]))
                  for k in range(n_ue)]
    return psi, components


def prb_ml_detect(problem: DetectionProblem, threshold: float | None = None,
                  max_sweeps: int = 50, tol: float = 1e-6,
                  rng: np.random.Generator | None = None,
                  step_callback=None) -> DetectionResult:
    """ml-style descent whose covariance update carries the full per-UE
    pilot-subcarrier covariance instead of a rank-1 pilot outer product."""
    problem.validate()
    if problem.cov6 is None:
        raise ValueError("PRB detection needs per-UE subcarrier covariances")
    if rng is None:
        rng = np.random.default_rng(0)
    psi, components = prb_signatures(problem.book, problem.cov6)
    gamma, sigma, sweeps = _descend(sample_covariance(problem.Y), psi, components,
                                    "ml", rng, max_sweeps, tol, step_callback)
    return DetectionResult(predicted=_apply_threshold(gamma, threshold),
                           statistic=gamma, threshold=threshold,
                           sweeps=sweeps, sigma=sigma)


def perfect_detect(active: np.ndarray, n_ue: int) -> DetectionResult:
    """Oracle detector: the predicted set is the true active set."""
    predicted = np.zeros(n_ue, dtype=bool)
    predicted[np.asarray(active, dtype=int)] = True
    return DetectionResult(predicted=predicted,
                           statistic=predicted.astype(float), threshold=None)


def detect(problem: DetectionProblem, detector_id: str,
           threshold: float | None = None, max_sweeps: int = 50,
           tol: float = 1e-6, rng: np.random.Generator | None = None) -> DetectionResult:
    """Run the configured detector on one problem."""
    if detector_id == "perfect":
        if problem.active is None:
            raise ValueError("perfect detection needs the true active set")
        return perfect_detect(problem.active, problem.book.n_ue)
    if detector_id == "np":
        return np_detect(problem)
    if detector_id in COORDINATE_VARIANTS:
        return coordinate_descent_detect(problem, detector_id, threshold,
                                         max_sweeps, tol, rng)
    if detector_id == "prb-ml":
        return prb_ml_detect(problem, threshold, max_sweeps, tol, rng)
    raise ValueError(f"unknown detector {detector_id!r}")


# -- threshold calibration -----------------------------------------------------

@dataclass
class CalibrationResult:
    threshold: float
    n_null: int
    trials: int
    detector_id: str
    p_fa: float
    scenario_hash: str = ""


def upper_quantile(sorted_values: np.ndarray, p_fa: float) -> float:
    """Empirical (1 - p_fa) order-statistic quantile (lower/floor convention)."""
    n = sorted_values.size
    idx = min(max(int(np.ceil((1.0 - p_fa) * n)) - 1, 0), n - 1)
    return float(sorted_values[idx])


def calibrate_threshold(scenario: Scenario, trials: int | None = None,
                        seed: int | None = None, detector_id: str | None = None,
                        workers: int = 1) -> CalibrationResult:
    """Empirical null quantile of the detector statistic at the target P_FA.

    Runs the detector on synthetic scenario draws, pools the statistic over
    truly-inactive UEs (a dedicated rng stream keeps calibration independent
    of evaluation trials), and returns the (1 - P_FA) quantile of the pooled,
    sorted null sample.
    """
    from . import harness  # local import; harness owns trial synthesis

    detector = detector_id or scenario.detector_id
    if detector == "perfect":
        raise ValueError("the perfect detector has no threshold to calibrate")
    trials = trials if trials is not None else scenario.calibration_trials
    seed = seed if seed is not None else scenario.rng_seed
    p_fa = scenario.target_p_fa
    ctx = harness.RunContext.build(scenario)

    def one_trial(t: int) -> np.ndarray:
        rng = substream(seed, STREAM_CALIBRATION, t)
        problem = harness.synthesize_problem(scenario, rng, ctx)
        result = detect(problem, detector, threshold=None,
                        max_sweeps=scenario.max_sweeps, tol=scenario.step_tol,
                        rng=substream(seed, STREAM_CALIBRATION, t, 1))
        inactive = np.ones(scenario.K_total, dtype=bool)
        inactive[problem.active] = False
        return result.statistic[inactive]

    chunks = harness.parallel_map(one_trial, range(trials), workers)
    null = np.sort(np.concatenate(chunks))
    if null.size == 0:
        raise ValueError("calibration produced no inactive-UE statistics")
    if np.all(null == null[0]):
        raise ValueError("degenerate null sample: all statistics equal")
    if null.size < 100.0 / p_fa:
        warnings.warn(f"only {null.size} null statistics for P_FA={p_fa:g}; "
                      "threshold estimate may be unstable", stacklevel=2)
    return CalibrationResult(threshold=upper_quantile(null, p_fa),
                             n_null=int(null.size), trials=trials,
                             detector_id=detector, p_fa=p_fa,
                             scenario_hash=scenario.scenario_hash())


# -- calibration cache ---------------------------------------------------------

def store_calibration(path: str, result: CalibrationResult) -> None:
    """Upsert one calibration line keyed by (detector, scenario hash, P_FA)."""
    key = (result.detector_id, result.scenario_hash, f"{result.p_fa:.10g}")
    lines = []
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if len(parts) >= 3 and tuple(parts[:3]) == key:
                    continue
                if line.strip():
                    lines.append(line.rstrip("\n"))
    lines.append(f"{key[0]} {key[1]} {key[2]} {result.threshold:.17g} {result.n_null}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_calibration(path: str, detector_id: str, scenario_hash: str,
                     p_fa: float) -> float | None:
    if not os.path.exists(path):
        return None
    key = (detector_id, scenario_hash, f"{p_fa:.10g}")
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) >= 4 and tuple(parts[:3]) == key:
                return float(parts[3])
    return None
