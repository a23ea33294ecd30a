"""Cardinality-constrained mean-variance portfolios as three QUBO matrices.

Each asset ``i`` owns ``d`` consecutive bits: a selection bit ``z_i``
followed by ``d - 1`` value bits ``x_{i,0} .. x_{i,d-2}`` (least significant
first).  With ``M = 2**(d-1) - 1`` and the value integer
``v_i = sum_b 2**b x_{i,b}``, the encoded proportion is::

    w_i = eps * z_i + (delta - eps) * v_i / M

Three matrices are built over these bits:

* ``B`` (risk): ``energy(B, x) == sum_ij w_i w_j sigma_ij``
* ``D`` (negated return): ``energy(D, x) == -sum_i w_i mu_i``
* ``G`` (constraints), zero-ish exactly on feasible assignments::

      M * (sum z - K)**2 + ((sum w - 1) / q)**2 + sum_{i,b} c_b x_{i,b} (1 - z_i)

  with ``q = (delta - eps) / M`` the proportion carried by one value unit
  and ``c_b = 2*4**b + 2**b + 1`` the cost of an orphan value bit (a set
  value bit of an unselected asset).

All three terms are measured in value units.  A single-flip annealer gets
stuck when the terms live on different scales: with unit weights, states
with one asset too many or with low orphan bits are local minima that no
single flip can leave.  Weighting the cardinality term by ``M`` and each
orphan bit by more than the budget change of dropping it (for residuals
below ``2**(b-1) + 1/2`` units) removes those traps.  Every infeasible
assignment has ``energy(G) > 1/4`` and every feasible one ``<= 1/4``.

The default 1 + 7 bit split is a reconstruction inferred from the variable
count of the 31-asset benchmark (248).  Other splits are allowed through
``bits_per_asset``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .qubo import QuboMatrix, energies
from .validation import check_bit_matrix, check_bits


class PortfolioParseError(ValueError):
    """Malformed benchmark file; the message carries the offending line number."""


@dataclass(frozen=True, eq=False)
class PortfolioInstance:
    mu: np.ndarray
    sigma: np.ndarray
    name: str = ""

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or mu.size < 1:
            raise ValueError("mu must be a non-empty 1-D array")
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma must have shape {(mu.size, mu.size)}, got {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("instance contains non-finite values")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-15):
            raise ValueError("covariance matrix must be symmetric")
        if np.any(np.diagonal(sigma) < 0):
            raise ValueError("covariance diagonal must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_assets(self) -> int:
        return self.mu.size


def parse_orlib(text, name: str = "") -> PortfolioInstance:
    """Parse an OR-Library style portfolio file.

    Layout: asset count, then one ``mean stddev`` line per asset, then
    ``i j correlation`` lines with 1-based indices.  Missing pairs are
    uncorrelated.

    Raises:
        PortfolioParseError: on malformed lines, bad indices or correlations
            outside ``[-1, 1]``.
    """
    if isinstance(text, str):
        text = io.StringIO(text)
    lines = [(no, raw.split()) for no, raw in enumerate(text, start=1)]
    lines = [(no, parts) for no, parts in lines if parts]
    if not lines:
        raise PortfolioParseError("line 1: empty file")

    def number(no, token, kind=float):
        try:
            return kind(token)
        except ValueError:
            raise PortfolioParseError(f"line {no}: cannot parse {token!r}") from None

    no, parts = lines[0]
    if len(parts) != 1:
        raise PortfolioParseError(f"line {no}: expected the number of assets")
    n = number(no, parts[0], int)
    if n < 1:
        raise PortfolioParseError(f"line {no}: number of assets must be positive")
    if len(lines) < n + 1:
        raise PortfolioParseError(f"line {lines[-1][0]}: expected {n} asset lines")

    mu = np.empty(n)
    sd = np.empty(n)
    for k, (no, parts) in enumerate(lines[1 : n + 1]):
        if len(parts) != 2:
            raise PortfolioParseError(f"line {no}: expected 'mean stddev'")
        mu[k], sd[k] = number(no, parts[0]), number(no, parts[1])
        if sd[k] < 0:
            raise PortfolioParseError(f"line {no}: negative standard deviation")

    corr = np.eye(n)
    for no, parts in lines[n + 1 :]:
        if len(parts) != 3:
            raise PortfolioParseError(f"line {no}: expected 'i j correlation'")
        i, j = number(no, parts[0], int), number(no, parts[1], int)
        c = number(no, parts[2])
        if not (1 <= i <= n and 1 <= j <= n):
            raise PortfolioParseError(f"line {no}: asset index out of range 1..{n}")
        if not -1.0 <= c <= 1.0:
            raise PortfolioParseError(f"line {no}: correlation {c} outside [-1, 1]")
        if i != j:
            corr[i - 1, j - 1] = corr[j - 1, i - 1] = c

    sigma = corr * np.outer(sd, sd)
    np.fill_diagonal(sigma, sd**2)
    return PortfolioInstance(mu, sigma, name)


def load_orlib(path) -> PortfolioInstance:
    from pathlib import Path

    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_orlib(fh, name=path.stem)


@dataclass(frozen=True)
class EncodingScheme:
    """Bit layout and constraint parameters for one instance size."""

    n_assets: int
    K: int = 10
    eps: float = 0.01
    delta: float = 1.0
    bits_per_asset: int = 8

    def __post_init__(self):
        if self.n_assets < 1:
            raise ValueError("n_assets must be positive")
        if self.bits_per_asset < 2:
            raise ValueError("bits_per_asset must be at least 2 (selection + one value bit)")
        if not 1 <= self.K <= self.n_assets:
            raise ValueError(f"K must lie in [1, {self.n_assets}], got {self.K}")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not self.eps < self.delta <= 1:
            raise ValueError("delta must lie in (eps, 1]")
        if self.eps * self.K > 1 or self.delta * self.K < 1:
            raise ValueError("K*eps <= 1 <= K*delta is required for feasibility")

    @property
    def n_variables(self) -> int:
        return self.n_assets * self.bits_per_asset

    @property
    def value_max(self) -> int:
        return 2 ** (self.bits_per_asset - 1) - 1

    @property
    def quantum(self) -> float:
        """Proportion carried by the least significant value bit."""
        return (self.delta - self.eps) / self.value_max

    def selection_index(self, asset: int) -> int:
        return asset * self.bits_per_asset

    def value_index(self, asset: int, bit: int) -> int:
        if not 0 <= bit < self.bits_per_asset - 1:
            raise IndexError(f"value bit {bit} out of range")
        return asset * self.bits_per_asset + 1 + bit

    def weight_map(self) -> np.ndarray:
        """``(n_assets, n_variables)`` matrix ``A`` with ``w = A @ x``."""
        d = self.bits_per_asset
        A = np.zeros((self.n_assets, self.n_variables))
        powers = self.quantum * 2.0 ** np.arange(d - 1)
        for i in range(self.n_assets):
            A[i, i * d] = self.eps
            A[i, i * d + 1 : (i + 1) * d] = powers
        return A

    def budget_tolerance(self) -> float:
        return 0.5 * self.quantum

    @property
    def cardinality_weight(self) -> float:
        return float(self.value_max)

    def orphan_weights(self) -> np.ndarray:
        """Penalty per orphan value bit, least significant first."""
        b = np.arange(self.bits_per_asset - 1, dtype=np.float64)
        return 2.0 * 4.0**b + 2.0**b + 1.0


class PortfolioQubos(NamedTuple):
    B: QuboMatrix
    D: QuboMatrix
    G: QuboMatrix


@dataclass(frozen=True)
class DecodedPortfolio:
    selected: tuple
    weights: np.ndarray
    risk: float
    ret: float

    def to_record(self, instance: str = "") -> dict:
        return {
            "instance": instance,
            "selected": list(self.selected),
            "weights": [float(w) for w in self.weights],
            "risk": self.risk,
            "return": self.ret,
        }

    def to_json(self, instance: str = "") -> str:
        return json.dumps(self.to_record(instance))


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    n_selected: int
    orphan_bits: int
    budget_residual: float

    def __bool__(self):
        return self.feasible


def _split(x, enc: EncodingScheme):
    bits = check_bits(x, enc.n_variables).reshape(enc.n_assets, enc.bits_per_asset)
    z = bits[:, 0].astype(np.int64)
    values = bits[:, 1:].astype(np.int64) @ (1 << np.arange(enc.bits_per_asset - 1))
    return bits, z, values


def encoded_weights(x, enc: EncodingScheme) -> np.ndarray:
    """Proportions as the QUBO matrices see them (orphan value bits included)."""
    _, z, values = _split(x, enc)
    return enc.eps * z + enc.quantum * values


def decode(x, inst: PortfolioInstance, enc: EncodingScheme) -> DecodedPortfolio:
    """Decode a bit vector; value bits of unselected assets are ignored."""
    _, z, values = _split(x, enc)
    w = np.where(z == 1, enc.eps + enc.quantum * values, 0.0)
    return DecodedPortfolio(
        selected=tuple(np.flatnonzero(z).tolist()),
        weights=w,
        risk=float(w @ inst.sigma @ w),
        ret=float(w @ inst.mu),
    )


def is_feasible(x, enc: EncodingScheme) -> FeasibilityReport:
    """Check cardinality, orphan bits and the budget within half a value quantum."""
    bits, z, values = _split(x, enc)
    orphans = int(bits[z == 0, 1:].sum())
    total = float(np.sum(np.where(z == 1, enc.eps + enc.quantum * values, 0.0)))
    residual = total - 1.0
    ok = (
        int(z.sum()) == enc.K
        and orphans == 0
        and abs(residual) <= enc.budget_tolerance() * (1 + 1e-9)
    )
    return FeasibilityReport(ok, int(z.sum()), orphans, residual)


def feasible_mask(X, enc: EncodingScheme) -> np.ndarray:
    """Vectorised :func:`is_feasible` over the rows of ``X``."""
    X = check_bit_matrix(X, enc.n_variables)
    d = enc.bits_per_asset
    bits = X.reshape(X.shape[0], enc.n_assets, d)
    z = bits[:, :, 0].astype(np.int64)
    values = bits[:, :, 1:].astype(np.int64) @ (1 << np.arange(d - 1))
    orphans = (bits[:, :, 1:].sum(axis=2) * (1 - z)).sum(axis=1)
    total = (z * (enc.eps + enc.quantum * values)).sum(axis=1)
    return (
        (z.sum(axis=1) == enc.K)
        & (orphans == 0)
        & (np.abs(total - 1.0) <= enc.budget_tolerance() * (1 + 1e-9))
    )


class EncodingFeasibility:
    """Feasibility predicate bound to an encoding.

    Calling it tests one bit vector; :meth:`mask` tests the rows of a matrix
    in one pass, which orchestrators use when available.
    """

    def __init__(self, enc: EncodingScheme):
        self.enc = enc

    def __call__(self, x) -> bool:
        return bool(is_feasible(x, self.enc))

    def mask(self, X) -> np.ndarray:
        return feasible_mask(X, self.enc)


def feasibility_threshold(enc: EncodingScheme) -> float:
    """Largest ``energy(G, x)`` a feasible assignment can have (a quarter unit)."""
    return 0.25 * (1 + 1e-9) + 1e-12


def min_restoring_decrease(enc: EncodingScheme) -> float:
    """Smallest positive drop in the constraint energy over single flips that
    take an infeasible assignment to a feasible one.

    Worked out on the aggregate state instead of by enumeration.  A feasible
    assignment has ``sum z = K``, no orphans, and a budget residual ``t`` (in
    value units) on the lattice ``(K*eps - 1)/q + s`` with ``|t| <= 1/2``.
    Its infeasible neighbours differ by one selection flip (``t +- eps/q``,
    plus the cardinality weight) or one value-bit flip (``t +- 2**b``, plus
    ``c_b`` for an orphan bit); the drop back is the energy difference.
    """
    q = enc.quantum
    base = (enc.K * enc.eps - 1.0) / q
    s = np.arange(0, enc.K * enc.value_max + 1)
    t = base + s
    t = t[np.abs(t) <= 0.5 * (1 + 1e-9)]
    if t.size == 0:
        raise ValueError("encoding admits no feasible budget level")

    steps = 2.0 ** np.arange(enc.bits_per_asset - 1)
    orphan = enc.orphan_weights()
    card = enc.cardinality_weight
    can_add = enc.K < enc.n_assets
    drops = []
    for sign in (1.0, -1.0):
        moved = t[:, None] + sign * steps[None, :]
        diff = moved**2 - (t**2)[:, None]
        drops.append(diff[np.abs(moved) > 0.5 * (1 + 1e-9)])
        if sign > 0 and can_add:
            drops.append((orphan[None, :] + diff).ravel())  # value bit on an unselected asset
    if can_add:
        drops.append(card + (t + enc.eps / q) ** 2 - t**2)
    drops.append(card + (t - enc.eps / q) ** 2 - t**2)
    values = np.concatenate(drops)
    values = values[values > 1e-12]
    if values.size == 0:
        raise ValueError("no positive constraint change found")
    return float(values.min())


def build_qubos(inst: PortfolioInstance, enc: EncodingScheme) -> PortfolioQubos:
    """Risk, negated-return and constraint QUBOs for ``inst`` under ``enc``."""
    if enc.n_assets != inst.n_assets:
        raise ValueError(
            f"encoding is for {enc.n_assets} assets, instance has {inst.n_assets}"
        )
    A = enc.weight_map()
    risk = A.T @ inst.sigma @ A
    B = QuboMatrix(risk)
    D = QuboMatrix(np.diag(-(A.T @ inst.mu)))

    n = enc.n_variables
    d = enc.bits_per_asset
    sel = np.zeros(n)
    sel[::d] = 1.0
    card = enc.cardinality_weight
    G = card * (np.outer(sel, sel) - 2 * enc.K * np.diag(sel))
    offset = card * enc.K**2

    # ((sum w - 1) / q)**2 with sum w = q * (units @ x)
    units = A.sum(axis=0) / enc.quantum
    G += np.outer(units, units) - np.diag(2.0 * units / enc.quantum)
    offset += 1.0 / enc.quantum**2

    orphan = enc.orphan_weights()
    for i in range(enc.n_assets):
        zi = i * d
        for b, c in enumerate(orphan):
            k = zi + 1 + b
            G[k, k] += c
            G[zi, k] -= c

    Gq = QuboMatrix(G, offset, min_flip_decrease=min_restoring_decrease(enc))
    return PortfolioQubos(B, D, Gq)


class PortfolioEncoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` builds the QUBOs, ``transform`` maps bit
    vectors to ``(risk, -return)`` objective points.

    Parameters
    ----------
    K : int
        Number of assets to hold.
    eps, delta : float
        Minimum and maximum proportion of a held asset.
    bits_per_asset : int
        One selection bit plus ``bits_per_asset - 1`` value bits.
    """

    def __init__(self, K=10, eps=0.01, delta=1.0, bits_per_asset=8):
        self.K = K
        self.eps = eps
        self.delta = delta
        self.bits_per_asset = bits_per_asset

    def fit(self, instance: PortfolioInstance, y=None):
        self.instance_ = instance
        self.encoding_ = EncodingScheme(
            instance.n_assets, self.K, self.eps, self.delta, self.bits_per_asset
        )
        self.B_, self.D_, self.G_ = build_qubos(instance, self.encoding_)
        self.n_features_in_ = self.encoding_.n_variables
        return self

    def transform(self, X):
        check_is_fitted(self, "encoding_")
        X = check_bit_matrix(X, self.n_features_in_)
        return np.column_stack([energies(self.B_, X), energies(self.D_, X)])

    def decode(self, x) -> DecodedPortfolio:
        check_is_fitted(self, "encoding_")
        return decode(x, self.instance_, self.encoding_)

    def feasible(self, X) -> np.ndarray:
        check_is_fitted(self, "encoding_")
        return feasible_mask(X, self.encoding_)

    @property
    def qubos(self) -> PortfolioQubos:
        check_is_fitted(self, "encoding_")
        return PortfolioQubos(self.B_, self.D_, self.G_)
