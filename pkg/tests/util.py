"""Shared helpers and independent oracles for the test suite."""

import numpy as np


def crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def conditional_mean(cov_gy: np.ndarray, cov_yy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gaussian conditioning oracle: E[g | y] = C_gy C_yy^-1 y for zero-mean
    circular complex Gaussians, computed from explicitly assembled covariance
    blocks with a generic linear solve."""
    return cov_gy @ np.linalg.solve(cov_yy, y)


def reference_gold_bits(c_init: int, length: int) -> np.ndarray:
    """Bit-by-bit reference LFSR pair for the length-31 Gold construction,
    written as plain Python shifts to stay independent of the vectorized
    implementation under test."""
    nc = 1600
    x1 = [0] * 31
    x1[0] = 1
    x2 = [(c_init >> i) & 1 for i in range(31)]
    out = []
    for n in range(length + nc):
        new1 = (x1[3] ^ x1[0])
        new2 = (x2[3] ^ x2[2] ^ x2[1] ^ x2[0])
        if n >= nc:
            out.append(x1[0] ^ x2[0])
        x1 = x1[1:] + [new1]
        x2 = x2[1:] + [new2]
    return np.array(out, dtype=int)


def ml_objective(sigma: np.ndarray, sigma_hat: np.ndarray) -> float:
    """Negative log-likelihood surface the ml coordinate steps descend."""
    sign, logdet = np.linalg.slogdet(sigma)
    assert sign.real > 0
    return float(logdet.real + np.trace(np.linalg.solve(sigma, sigma_hat)).real)
