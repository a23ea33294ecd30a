"""Dense QUBO matrices and energy evaluation.

A :class:`QuboMatrix` stores its coefficients in upper-triangular form: the
pair ``(i, j)`` and ``(j, i)`` of a full input matrix are folded into the
single entry ``U[i, j]`` with ``i < j``.  The energy of a bit vector ``x`` is
``x @ U @ x + offset``, which equals ``x @ Q @ x + offset`` for the full input.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .validation import check_bits, check_bit_matrix, check_same_size, check_square


def _fold(matrix):
    upper = np.triu(matrix) + np.triu(matrix.T, 1)
    upper.setflags(write=False)
    return upper


@dataclass(frozen=True, eq=False)
class QuboMatrix:
    """Immutable QUBO over ``n`` binary variables.

    Args:
        coeffs: full or triangular ``n x n`` coefficient matrix; symmetric
            pairs are folded on construction.
        offset: constant added to every energy.  Penalty matrices use it to
            carry the constant terms of squared constraints.
        min_flip_decrease: optional analytic lower bound on the smallest
            positive single-flip energy decrease from an infeasible state.
            Only meaningful for constraint matrices; read by
            :func:`sbda.scalarise.momc_penalty`.
    """

    coeffs: np.ndarray
    offset: float = 0.0
    min_flip_decrease: float | None = None
    _couplings: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arr = check_square(self.coeffs, "coeffs")
        if not np.isfinite(self.offset):
            raise ValueError("offset must be finite")
        upper = _fold(arr)
        object.__setattr__(self, "coeffs", upper)
        object.__setattr__(self, "offset", float(self.offset))
        couplings = upper + upper.T
        np.fill_diagonal(couplings, 0.0)
        couplings.setflags(write=False)
        object.__setattr__(self, "_couplings", couplings)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.coeffs)

    @property
    def couplings(self) -> np.ndarray:
        """Symmetric zero-diagonal matrix of pair coefficients."""
        return self._couplings

    def to_dense(self) -> np.ndarray:
        """Symmetric full matrix with the same energies (off-diagonals halved)."""
        return np.diag(self.diagonal) + 0.5 * self._couplings

    def scaled(self, factor: float) -> "QuboMatrix":
        return QuboMatrix(self.coeffs * factor, self.offset * factor)

    def __repr__(self):
        return f"QuboMatrix(n={self.n}, offset={self.offset!r})"


def energy(Q: QuboMatrix, x) -> float:
    """Energy ``sum_ij Q_ij x_i x_j`` of one bit vector (plus the carried offset)."""
    bits = check_bits(x, Q.n).astype(np.float64)
    return float(bits @ Q.coeffs @ bits) + Q.offset


def energies(Q: QuboMatrix, X) -> np.ndarray:
    """Vectorised :func:`energy` over the rows of ``X``."""
    bits = check_bit_matrix(X, Q.n).astype(np.float64)
    return ((bits @ Q.coeffs) * bits).sum(axis=1) + Q.offset


def delta_energy(Q: QuboMatrix, x, i: int) -> float:
    """Energy change caused by flipping bit ``i`` of ``x``, in O(n)."""
    bits = check_bits(x, Q.n)
    if not 0 <= i < Q.n:
        raise IndexError(f"bit index {i} out of range for n={Q.n}")
    field_i = Q.coeffs[i, i] + Q.couplings[i] @ bits
    return float(field_i) if bits[i] == 0 else -float(field_i)


def aggregate(R: QuboMatrix, S: QuboMatrix, G: QuboMatrix, weights, alpha: float) -> QuboMatrix:
    """Weighted sum ``l1*R + l2*S + alpha*G`` of three QUBOs, offsets included."""
    check_same_size(R, S, G)
    l1, l2 = float(weights[0]), float(weights[1])
    coeffs = l1 * R.coeffs + l2 * S.coeffs + alpha * G.coeffs
    offset = l1 * R.offset + l2 * S.offset + alpha * G.offset
    return QuboMatrix(coeffs, offset)


def positive_coefficient_sum(Q: QuboMatrix) -> float:
    """Sum of all positive (folded) coefficients; the hypervolume reference coordinate."""
    return float(np.clip(Q.coeffs, 0.0, None).sum())


def max_flip_bound(Q: QuboMatrix) -> float:
    """Upper bound on ``|delta_energy|`` over every state and bit."""
    return float(np.max(np.abs(Q.diagonal) + np.abs(Q.couplings).sum(axis=1)))


def write_triplets(Q: QuboMatrix, stream) -> None:
    """Write ``Q`` as ``n`` followed by ``i j value`` lines (0-based, i <= j).

    Zero coefficients are skipped.  A non-zero offset is written as a
    ``# offset <value>`` comment line right after the header.
    """
    stream.write(f"{Q.n}\n")
    if Q.offset != 0.0:
        stream.write(f"# offset {float(Q.offset)!r}\n")
    rows, cols = np.nonzero(Q.coeffs)
    for i, j in zip(rows.tolist(), cols.tolist()):
        stream.write(f"{i} {j} {float(Q.coeffs[i, j])!r}\n")


def read_triplets(stream) -> QuboMatrix:
    """Inverse of :func:`write_triplets`."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    n = None
    offset = 0.0
    entries = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "offset":
                offset = float(parts[1])
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 1:
                raise ValueError(f"line {lineno}: expected variable count header")
            n = int(parts[0])
            if n < 1:
                raise ValueError(f"line {lineno}: variable count must be positive")
            continue
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'i j value'")
        i, j, value = int(parts[0]), int(parts[1]), float(parts[2])
        if not (0 <= i <= j < n):
            raise ValueError(f"line {lineno}: index pair ({i}, {j}) invalid for n={n}")
        entries.append((i, j, value))
    if n is None:
        raise ValueError("empty QUBO file")
    coeffs = np.zeros((n, n))
    for i, j, value in entries:
        coeffs[i, j] += value
    return QuboMatrix(coeffs, offset)
