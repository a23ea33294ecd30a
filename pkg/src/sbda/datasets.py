"""Bundled and generated portfolio instances."""

from __future__ import annotations

import io
import os
from importlib import resources

import numpy as np

from .portfolio import PortfolioInstance, load_orlib, parse_orlib

PORT1_ENV = "SBDA_PORT1"


def make_orlib_text(n_assets: int, seed: int = 0) -> str:
    """Random instance in benchmark file format with weekly-return-like statistics.

    Correlations come from a one-factor model (market loading in
    ``[0.4, 0.9]``) so the matrix is positive semi-definite; every pair is
    written, diagonal included.
    """
    rng = np.random.default_rng(seed)
    sd = rng.uniform(0.025, 0.075, n_assets)
    loading = rng.uniform(0.4, 0.9, n_assets)
    # higher-volatility assets earn more on average, with noise and a few losers
    mu = 0.002 + 0.12 * (sd - 0.025) * rng.uniform(0.2, 1.8, n_assets)
    mu -= rng.uniform(0.0, 0.004, n_assets)
    corr = np.outer(loading, loading)
    np.fill_diagonal(corr, 1.0)

    out = io.StringIO()
    out.write(f"{n_assets}\n")
    for m, s in zip(mu, sd):
        out.write(f"{m:.6f} {s:.6f}\n")
    for i in range(n_assets):
        for j in range(i, n_assets):
            out.write(f"{i + 1} {j + 1} {corr[i, j]:.6f}\n")
    return out.getvalue()


def make_portfolio(n_assets: int, seed: int = 0, name: str | None = None) -> PortfolioInstance:
    return parse_orlib(make_orlib_text(n_assets, seed), name or f"synthetic{n_assets}_{seed}")


def port1_path() -> str | None:
    """Path of the real OR-Library ``port1`` file if ``SBDA_PORT1`` points to one."""
    path = os.environ.get(PORT1_ENV)
    return path if path and os.path.isfile(path) else None


def load_port1() -> PortfolioInstance:
    """The 31-asset benchmark: the real file when configured, else the bundled stand-in."""
    path = port1_path()
    if path:
        return load_orlib(path)
    return load_bundled("port1_synthetic")


def load_bundled(name: str) -> PortfolioInstance:
    text = resources.files("sbda").joinpath(f"data/{name}.txt").read_text("utf-8")
    return parse_orlib(text, name)


def toy_instance() -> PortfolioInstance:
    """Three assets, small enough for exhaustive enumeration with 3 bits each."""
    return load_bundled("toy3")
