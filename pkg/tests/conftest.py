"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the package's own evaluation paths:
energies are triple loops over a full matrix, dominance is the quadratic
pairwise test, and portfolio objectives come from weights decoded by hand.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from sbda.datasets import toy_instance
from sbda.portfolio import EncodingScheme, build_qubos


def brute_energy(full: np.ndarray, x) -> float:
    """sum_i sum_j Q_ij x_i x_j with plain loops."""
    n = len(x)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += full[i, j] * x[i] * x[j]
    return total


def quadratic_nondominated(points) -> set:
    pts = [tuple(p) for p in points]
    keep = set()
    for i, a in enumerate(pts):
        dominated = False
        for j, b in enumerate(pts):
            if j != i and b[0] <= a[0] and b[1] <= a[1] and (b[0] < a[0] or b[1] < a[1]):
                dominated = True
                break
        if not dominated:
            keep.add(i)
    return keep


def all_states(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


def hand_weights(x, K_unused, eps, delta, d) -> np.ndarray:
    """w_i = eps*z_i + (delta - eps) * v_i / (2**(d-1) - 1), orphan bits included."""
    x = np.asarray(x).reshape(-1, d)
    z = x[:, 0]
    v = sum(x[:, 1 + b] * 2**b for b in range(d - 1))
    return eps * z + (delta - eps) * v / (2 ** (d - 1) - 1)


def hand_feasible(x, K, eps, delta, d) -> bool:
    x = np.asarray(x).reshape(-1, d)
    z = x[:, 0]
    if z.sum() != K or (x[:, 1:].sum(axis=1) * (1 - z)).sum() != 0:
        return False
    q = (delta - eps) / (2 ** (d - 1) - 1)
    return abs(hand_weights(x.ravel(), K, eps, delta, d).sum() - 1.0) <= q / 2 * (1 + 1e-9)


@pytest.fixture(scope="session")
def toy():
    """3 assets, K=2, 3 bits per asset: 9 variables."""
    inst = toy_instance()
    enc = EncodingScheme(3, K=2, eps=0.01, delta=1.0, bits_per_asset=3)
    B, D, G = build_qubos(inst, enc)
    return inst, enc, B, D, G


@pytest.fixture(scope="session")
def toy_front(toy):
    """True feasible Pareto front of the toy by exhaustive decode-then-evaluate."""
    inst, enc, *_ = toy
    sigma = np.asarray(inst.sigma)
    mu = np.asarray(inst.mu)
    pts = []
    for x in all_states(enc.n_variables):
        if hand_feasible(x, enc.K, enc.eps, enc.delta, enc.bits_per_asset):
            w = hand_weights(x, enc.K, enc.eps, enc.delta, enc.bits_per_asset)
            pts.append((float(w @ sigma @ w), float(-(w @ mu))))
    keep = quadratic_nondominated(pts)
    return np.array(sorted({pts[i] for i in keep}))


def random_full(rng, n: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale, size=(n, n))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one verdict line per acceptance criterion."""

    def report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
