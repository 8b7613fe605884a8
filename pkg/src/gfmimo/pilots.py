"""Pilot books: orthogonal DFT pilots, Gold-sequence pilots, PRB block layout."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

PRB_PILOT_LEN = 24
PRB_BLOCKS = 6
PRB_BLOCK_ROWS = 4

_GOLD_NC = 1600


@dataclass
class PilotBook:
    """Unit-norm pilot sequences, one column per UE.

    ``phi`` has shape (tau, K). In PRB mode the 24 symbols of each column are
    grouped into six blocks of four, block i carrying the pilot symbols of
    subcarrier 2i (0-based) in the PRB.
    """

    mode: str            # "orthogonal" | "gold" | "gold-prb"
    phi: np.ndarray
    c_init: np.ndarray | None = None

    @property
    def tau(self) -> int:
        return self.phi.shape[0]

    @property
    def n_ue(self) -> int:
        return self.phi.shape[1]

    @property
    def is_orthogonal(self) -> bool:
        return self.mode == "orthogonal"

    def block_rows(self, block: int) -> slice:
        """Row range of PRB block ``block`` (0..5)."""
        return slice(PRB_BLOCK_ROWS * block, PRB_BLOCK_ROWS * (block + 1))

    def block(self, block: int) -> np.ndarray:
        """(4, K) pilot symbols every UE sends on block ``block``."""
        if self.tau != PRB_PILOT_LEN:
            raise ValueError("PRB blocks are only defined for length-24 pilot books")
        return self.phi[self.block_rows(block), :]

    def masked_pilot(self, ue: int, block: int) -> np.ndarray:
        """Length-24 vector that is phi_ue on block ``block`` and zero elsewhere."""
        out = np.zeros(PRB_PILOT_LEN, dtype=complex)
        rows = self.block_rows(block)
        out[rows] = self.phi[rows, ue]
        return out


def make_orthogonal_pilots(n_ue: int) -> PilotBook:
    """Normalized DFT columns; tau = K so the Gram matrix is exactly identity."""
    if n_ue < 1:
        raise ValueError("need at least one UE")
    idx = np.arange(n_ue)
    phi = np.exp(-2j * np.pi * np.outer(idx, idx) / n_ue) / np.sqrt(n_ue)
    return PilotBook(mode="orthogonal", phi=phi)


def pseudo_random_bits(c_init: int, length: int) -> np.ndarray:
    """Length-31 Gold pseudo-random bit sequence (the 5G NR construction).

    Two LFSRs: x1 with taps (3, 0) seeded to 1, x2 with taps (3, 2, 1, 0)
    seeded from the binary expansion of ``c_init``; the output is their xor
    after discarding the first 1600 positions.
    """
    if length < 1:
        raise ValueError("length must be positive")
    if not 0 <= c_init < 2 ** 31:
        raise ValueError("c_init must fit in 31 bits")
    total = length + _GOLD_NC
    x1 = np.zeros(total + 31, dtype=np.int8)
    x2 = np.zeros(total + 31, dtype=np.int8)
    x1[0] = 1
    for i in range(31):
        x2[i] = (c_init >> i) & 1
    for i in range(total):
        x1[i + 31] = (x1[i + 3] + x1[i]) & 1
        x2[i + 31] = (x2[i + 3] + x2[i + 2] + x2[i + 1] + x2[i]) & 1
    return ((x1[_GOLD_NC:_GOLD_NC + length] + x2[_GOLD_NC:_GOLD_NC + length]) & 1).astype(np.int8)


def gold_symbols(c_init: int, n_symbols: int) -> np.ndarray:
    """QPSK-mapped Gold bits: ((1-2c(2n)) + j(1-2c(2n+1))) / sqrt(2)."""
    bits = pseudo_random_bits(c_init, 2 * n_symbols).astype(float)
    return ((1.0 - 2.0 * bits[0::2]) + 1j * (1.0 - 2.0 * bits[1::2])) / np.sqrt(2.0)


def make_gold_pilots(n_ue: int, tau: int, c_inits=None, prb: bool = False) -> PilotBook:
    """Per-UE Gold pilot sequences truncated to ``tau`` and unit-normalized.

    Each UE's sequence is seeded by its pilot index unless explicit seeds are
    supplied; duplicate seeds are rejected since they alias two UEs onto the
    same pilot.
    """
    if n_ue < 1:
        raise ValueError("need at least one UE")
    if tau < 1:
        raise ValueError("pilot length must be positive")
    if prb and tau != PRB_PILOT_LEN:
        raise ValueError("PRB pilot books use tau = 24")
    if c_inits is None:
        c_inits = np.arange(n_ue)
    c_inits = np.asarray(c_inits, dtype=np.int64)
    if c_inits.size != n_ue:
        raise ValueError("need one c_init per UE")
    if np.unique(c_inits).size != n_ue:
        raise ValueError("duplicate c_init values alias UE pilots")
    phi = np.empty((tau, n_ue), dtype=complex)
    for k, seed in enumerate(c_inits):
        seq = gold_symbols(int(seed), tau)
        phi[:, k] = seq / np.linalg.norm(seq)
    return PilotBook(mode="gold-prb" if prb else "gold", phi=phi, c_init=c_inits)


def make_pilot_book(pilot_mode: str, n_ue: int, tau: int) -> PilotBook:
    if pilot_mode == "orthogonal-ci":
        return make_orthogonal_pilots(n_ue)
    if pilot_mode == "gold-ci":
        return make_gold_pilots(n_ue, tau)
    if pilot_mode == "gold-prb":
        return make_gold_pilots(n_ue, tau, prb=True)
    raise ValueError(f"unknown pilot mode {pilot_mode!r}")


def assemble_prb_matrix(book: PilotBook, ue_set) -> np.ndarray:
    """Block-diagonal PRB pilot matrix for the given UE set.

    Shape (24, 6*|set|): block i occupies rows 4i..4i+3 and columns
    i*|set|..(i+1)*|set|-1, its columns being each UE's four pilot symbols for
    that block, so the column ordering groups by subcarrier block, then UE.
    """
    ue_set = np.asarray(ue_set, dtype=int)
    if ue_set.size == 0:
        raise ValueError("ue_set must be non-empty")
    if ue_set.min() < 0 or ue_set.max() >= book.n_ue:
        raise ValueError("UE index outside the pilot book")
    if book.tau != PRB_PILOT_LEN:
        raise ValueError("PRB assembly needs a length-24 pilot book")
    n = ue_set.size
    v = np.zeros((PRB_PILOT_LEN, PRB_BLOCKS * n), dtype=complex)
    for i in range(PRB_BLOCKS):
        v[book.block_rows(i), i * n:(i + 1) * n] = book.block(i)[:, ue_set]
    return v


def export_csv(book: PilotBook, path: str) -> None:
    """One row per pilot symbol; each UE contributes a (re, im) column pair."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = []
        for k in range(book.n_ue):
            header += [f"ue{k}_re", f"ue{k}_im"]
        writer.writerow(["symbol"] + header)
        for t in range(book.tau):
            row = [t]
            for k in range(book.n_ue):
                row += [f"{book.phi[t, k].real:.17g}", f"{book.phi[t, k].imag:.17g}"]
            writer.writerow(row)
