"""Shared helpers for exhaustive enumeration over bit sequences."""

from __future__ import annotations

import math

import numpy as np

from .traffic import TrafficParams


def all_bit_sequences(n: int) -> np.ndarray:
    """(2^n, n) matrix of all bit sequences, row index read LSB-first."""
    idx = np.arange(2 ** n, dtype=np.uint32)
    return ((idx[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(np.int8)


def sequence_probabilities(seqs: np.ndarray, inter_times,
                           params: TrafficParams) -> np.ndarray:
    """Stationary chain probability of each bit sequence (one per row)."""
    inter_times = np.asarray(inter_times, dtype=float)
    u = params.u
    p = np.where(seqs[:, 0] == 1, u, 1.0 - u).astype(float)
    for k in range(inter_times.size):
        g = math.exp(-params.lambda_f * inter_times[k] / u)
        p00 = (1.0 - u) + u * g
        p11 = u + (1.0 - u) * g
        a, b = seqs[:, k], seqs[:, k + 1]
        step = np.where(a == 0, np.where(b == 0, p00, 1.0 - p00),
                        np.where(b == 1, p11, 1.0 - p11))
        p = p * step
    return p


def transition_count_matrix(seqs: np.ndarray) -> np.ndarray:
    """(rows, 4) counts of 00, 01, 10, 11 adjacent transitions."""
    a, b = seqs[:, :-1], seqs[:, 1:]
    out = np.empty((seqs.shape[0], 4), dtype=np.int64)
    out[:, 0] = np.sum((a == 0) & (b == 0), axis=1)
    out[:, 1] = np.sum((a == 0) & (b == 1), axis=1)
    out[:, 2] = np.sum((a == 1) & (b == 0), axis=1)
    out[:, 3] = np.sum((a == 1) & (b == 1), axis=1)
    return out
