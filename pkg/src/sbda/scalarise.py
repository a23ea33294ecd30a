"""Scalarisation-based search for bi-objective QUBOs.

``run_sbda`` solves a sequence of single-objective QUBOs
``l1*R + l2*S + alpha*G`` and collects every returned solution into an
archive.  The first two scalarisations always optimise each objective on its
own, ``(0, 1)`` then ``(1, 0)``, which seeds the lower/upper bounds used to
rescale the objectives.  Later weights come from one of three strategies:

``random``
    ``k - 2`` weights with ``l1 ~ U[0, 1]``, drawn up front.
``uniform``
    the interior points of a simplex lattice, drawn up front.
``iterative``
    the mean of the two weights that produced the most distant pair of
    neighbouring solutions, with weights kept sorted by ``l1``; falls back
    to a random weight when every candidate has already been used.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .annealer import SimulatedAnnealingSolver
from .pareto import Archive, ObjectivePoint, manhattan
from .qubo import QuboMatrix, aggregate, energies, max_flip_bound
from .validation import check_same_size

logger = logging.getLogger(__name__)

S_TYPES = ("random", "uniform", "iterative")
GAP_SPACES = ("normalised", "raw")
WEIGHT_DECIMALS = 12
EXACT_PENALTY_LIMIT = 20


class SolverError(RuntimeError):
    """A solver call failed; ``iteration`` is the 1-based scalarisation index."""

    def __init__(self, iteration, cause):
        super().__init__(f"solver failed at iteration {iteration}: {cause}")
        self.iteration = iteration


class WeightSet(NamedTuple):
    l1: float
    l2: float

    @classmethod
    def from_l1(cls, l1: float) -> "WeightSet":
        l1 = float(l1)
        if not 0.0 <= l1 <= 1.0:
            raise ValueError(f"l1 must lie in [0, 1], got {l1}")
        return cls(l1, 1.0 - l1)

    def key(self) -> float:
        return round(self.l1, WEIGHT_DECIMALS)


EXTREMES = (WeightSet(0.0, 1.0), WeightSet(1.0, 0.0))


def random_weights(count: int, rng) -> list[WeightSet]:
    if count < 0:
        raise ValueError("count must be non-negative")
    return [WeightSet.from_l1(v) for v in rng.uniform(0.0, 1.0, size=count)]


def sld_weights(H: int, m: int = 2) -> list[WeightSet]:
    """Simplex lattice design ``{(j/H, 1 - j/H)}`` for two objectives."""
    if m != 2:
        raise NotImplementedError("only two objectives are supported")
    if H < 1:
        raise ValueError("H must be at least 1")
    return [WeightSet.from_l1(j / H) for j in range(H + 1)]


@dataclass(frozen=True)
class BoundsTracker:
    """Per-objective lower/upper bounds on the unscaled energies."""

    lb1: float = math.inf
    ub1: float = -math.inf
    lb2: float = math.inf
    ub2: float = -math.inf

    @property
    def initialised(self) -> bool:
        return self.lb1 <= self.ub1 and self.lb2 <= self.ub2

    def as_dict(self) -> dict:
        return {"lb1": self.lb1, "ub1": self.ub1, "lb2": self.lb2, "ub2": self.ub2}


def update_bounds(tracker: BoundsTracker, e1: float, e2: float) -> BoundsTracker:
    return BoundsTracker(
        min(tracker.lb1, e1), max(tracker.ub1, e1), min(tracker.lb2, e2), max(tracker.ub2, e2)
    )


def rescale_factors(tracker: BoundsTracker) -> tuple[float, float] | None:
    """``(c1, c2)`` with ``c_i = max(UB1, UB2) / (UB_i - LB_i)``, or None if degenerate."""
    top = max(tracker.ub1, tracker.ub2)
    spans = (tracker.ub1 - tracker.lb1, tracker.ub2 - tracker.lb2)
    ubs = (tracker.ub1, tracker.ub2)
    if not tracker.initialised or not np.isfinite(top) or top <= 0:
        return None
    for span, ub in zip(spans, ubs):
        if span <= 0 or span < 1e-15 * abs(ub):
            return None
    return top / spans[0], top / spans[1]


def rescale(B: QuboMatrix, D: QuboMatrix, tracker: BoundsTracker) -> tuple[QuboMatrix, QuboMatrix]:
    """Scale both objectives so their observed spans equal ``max(UB1, UB2)``.

    Degenerate bounds leave the matrices unscaled and log a warning.
    """
    factors = rescale_factors(tracker)
    if factors is None:
        logger.warning("degenerate objective bounds %s; rescale skipped", tracker.as_dict())
        return B, D
    return B.scaled(factors[0]), D.scaled(factors[1])


def _enumerate_min_restoring(G: QuboMatrix, feasible) -> float:
    n = G.n
    X = np.array(list(product((0, 1), repeat=n)), dtype=np.uint8)
    g = energies(G, X)
    if feasible is None:
        ok = g <= g.min() + 1e-9 * max(1.0, abs(g.min()))
    else:
        ok = np.asarray([bool(feasible(x)) for x in X])
    drops = []
    for i in range(n):
        flipped = X.copy()
        flipped[:, i] ^= 1
        idx = flipped @ (1 << np.arange(n - 1, -1, -1))
        mask = ~ok & ok[idx]
        drops.append(g[mask] - g[idx[mask]])
    drops = np.concatenate(drops)
    drops = drops[drops > 0]
    if drops.size == 0:
        return 0.0
    return float(drops.min())


def momc_penalty(Qobj: QuboMatrix, G: QuboMatrix, feasible: Callable | None = None) -> float:
    """Penalty weight: largest single-flip objective change over the smallest
    constraint-energy drop of a flip that turns an infeasible state feasible.

    The denominator is taken from ``G.min_flip_decrease`` when the matrix
    carries it (see :func:`sbda.portfolio.build_qubos`), otherwise it is found
    by enumeration, which limits ``G`` to 20 variables.  Without a
    ``feasible`` callable, states at the minimum of ``G`` count as feasible.
    """
    check_same_size(Qobj, G)
    if G.min_flip_decrease is not None:
        c = G.min_flip_decrease
    elif G.n <= EXACT_PENALTY_LIMIT:
        c = _enumerate_min_restoring(G, feasible)
    else:
        raise ValueError(
            "constraint matrix carries no flip-decrease bound and is too large to enumerate"
        )
    if not c > 0:
        raise ValueError("could not derive a positive constraint change from G")
    return max(max_flip_bound(Qobj) / c, 1e-9)


class MapEntry(NamedTuple):
    weights: WeightSet
    bits: np.ndarray
    point: ObjectivePoint


@dataclass
class WeightSolutionMap:
    """Best solution per weight, kept in ascending ``l1``."""

    entries: list = field(default_factory=list)

    def add(self, weights: WeightSet, bits, point) -> None:
        entry = MapEntry(weights, np.asarray(bits), ObjectivePoint(*map(float, point)))
        keys = [e.weights.l1 for e in self.entries]
        pos = np.searchsorted(keys, weights.l1, side="right")
        self.entries.insert(int(pos), entry)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, j):
        return self.entries[j]


class GapChoice(NamedTuple):
    weights: WeightSet
    pair: int | None  # index j of the chosen (W_j, W_j+1) pair, None on fallback
    distances: list


def _normalise(point, bounds: BoundsTracker | None):
    if bounds is None or not bounds.initialised:
        return point
    s1 = bounds.ub1 - bounds.lb1
    s2 = bounds.ub2 - bounds.lb2
    return (
        (point[0] - bounds.lb1) / s1 if s1 > 0 else 0.0,
        (point[1] - bounds.lb2) / s2 if s2 > 0 else 0.0,
    )


def choose_gap(W: WeightSolutionMap, used, rng, bounds: BoundsTracker | None = None,
               space: str = "normalised", max_draws: int = 100) -> GapChoice:
    """Pick the next weight and report which neighbouring pair produced it.

    A pair qualifies when its distance is strictly positive and the mean of
    its weights has not been used; the first pair with the largest distance
    wins.  ``used`` holds weight keys (``WeightSet.key()``).
    """
    if len(W) < 2:
        raise ValueError("the weight/solution map needs at least two entries")
    if space not in GAP_SPACES:
        raise ValueError(f"space must be one of {GAP_SPACES}")
    scale = bounds if space == "normalised" else None
    distances = []
    best_j, best_d, best_w = None, 0.0, None
    for j in range(len(W) - 1):
        a, b = W[j], W[j + 1]
        d = manhattan(_normalise(a.point, scale), _normalise(b.point, scale))
        distances.append(d)
        cand = WeightSet.from_l1(0.5 * (a.weights.l1 + b.weights.l1))
        if d > best_d and cand.key() not in used:
            best_j, best_d, best_w = j, d, cand
    if best_w is not None:
        return GapChoice(best_w, best_j, distances)
    draw = None
    for _ in range(max_draws):
        draw = WeightSet.from_l1(rng.uniform(0.0, 1.0))
        if draw.key() not in used:
            break
    return GapChoice(draw, None, distances)


def next_iterative_weight(W: WeightSolutionMap, used, rng, bounds=None, space="normalised") -> WeightSet:
    return choose_gap(W, used, rng, bounds, space).weights


@dataclass(frozen=True)
class RunConfig:
    k: int = 10
    total_time: float | None = None
    n_top: int = 1000
    s_type: str = "iterative"
    seed: int = 0
    penalty_override: float | None = None
    gap_space: str = "normalised"
    sld_literal: bool = False
    admit_infeasible: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.s_type not in S_TYPES:
            raise ValueError(f"s_type must be one of {S_TYPES}, got {self.s_type!r}")
        if self.gap_space not in GAP_SPACES:
            raise ValueError(f"gap_space must be one of {GAP_SPACES}")
        if self.n_top < 1:
            raise ValueError("n_top must be positive")
        if self.total_time is not None and self.total_time <= 0:
            raise ValueError("total_time must be positive")
        if self.penalty_override is not None and self.penalty_override <= 0:
            raise ValueError("penalty_override must be positive")

    @property
    def time_per_iteration(self) -> float | None:
        return None if self.total_time is None else self.total_time / self.k


def static_weights(cfg: RunConfig, rng) -> list[WeightSet]:
    """All ``k`` weights of a static run, extremes first."""
    extra = cfg.k - 2
    if cfg.s_type == "random":
        return list(EXTREMES) + random_weights(extra, rng)
    if cfg.s_type != "uniform":
        raise ValueError("static weights are defined for random and uniform only")
    if extra == 0:
        return list(EXTREMES)
    if cfg.sld_literal:
        interior = sld_weights(cfg.k)[1:-1][:extra]
    else:
        interior = sld_weights(cfg.k - 1)[1:-1]
    return list(EXTREMES) + interior


def iteration_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1, np.uint64)[0])


@dataclass
class SBDAResult:
    front: Archive
    archive: Archive
    log: list
    weight_map: WeightSolutionMap
    bounds: BoundsTracker


def _solve(solver, Q, cfg, iteration, seed):
    try:
        return solver.solve(
            Q, time_limit=cfg.time_per_iteration, n_top=cfg.n_top, seed=iteration_seed(seed, iteration)
        )
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise SolverError(iteration, exc) from exc


def run_sbda(B: QuboMatrix, D: QuboMatrix, G: QuboMatrix, cfg: RunConfig, solver=None,
             feasible: Callable | None = None) -> SBDAResult:
    """Run one scalarisation campaign and return its non-dominated archive.

    Args:
        B, D: objective QUBOs (first and second objective, both minimised).
        G: constraint QUBO, zero-ish on feasible assignments.
        cfg: run configuration.
        solver: object with ``solve(Q, time_limit=, n_top=, seed=)``; defaults
            to :class:`SimulatedAnnealingSolver`.
        feasible: predicate on a bit vector.  Unless ``cfg.admit_infeasible``,
            only solutions it accepts enter the archive and the bounds.
    """
    check_same_size(B, D, G)
    solver = solver if solver is not None else SimulatedAnnealingSolver()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5BDA]))
    archive = Archive()
    wmap = WeightSolutionMap()
    bounds = BoundsTracker()
    used = set()
    log = []

    def admit_mask(states):
        if cfg.admit_infeasible or feasible is None:
            return np.ones(len(states), dtype=bool)
        batch = getattr(feasible, "mask", None)
        if batch is not None:
            return np.asarray(batch(states), dtype=bool)
        return np.array([bool(feasible(x)) for x in states], dtype=bool)

    def record(iteration, weights, Q, alpha, result, rescaled, choice=None):
        nonlocal bounds
        states = result.states
        f1 = energies(B, states)
        f2 = energies(D, states)
        admitted = admit_mask(states)
        for x, a, b, ok in zip(states, f1, f2, admitted):
            if ok:
                archive.add(x, (a, b), iteration, weights)
                bounds = update_bounds(bounds, float(a), float(b))
        if not admitted.all():
            logger.debug("iteration %d: %d infeasible solutions excluded", iteration, int((~admitted).sum()))
        best = ObjectivePoint(float(f1[0]), float(f2[0]))
        if iteration <= 2:
            bounds = update_bounds(bounds, *best)
        wmap.add(weights, states[0], best)
        used.add(weights.key())
        entry = {
            "iteration": iteration,
            "lambda": [weights.l1, weights.l2],
            "alpha": alpha,
            "bounds": bounds.as_dict(),
            "rescaled": rescaled,
            "solver_time": result.elapsed,
            "sweeps": result.sweeps_done,
            "best_energy_scalarised": result.best_energy,
            "best_point_unscaled": [best.f1, best.f2],
            "feasible_count": int(admitted.sum()) if feasible is not None else None,
            "returned": len(states),
        }
        if choice is not None:
            entry["gap_pair"] = choice.pair
            entry["gap_distances"] = choice.distances
            entry["source"] = "gap" if choice.pair is not None else "random"
        else:
            entry["source"] = "extreme" if iteration <= 2 else cfg.s_type
        log.append(entry)
        logger.info("iteration %d lambda=(%.6g, %.6g) best=%s", iteration, weights.l1, weights.l2, best)

    def build(weights, R, S):
        scalar = aggregate(R, S, G, weights, 0.0)
        alpha = cfg.penalty_override if cfg.penalty_override is not None else momc_penalty(scalar, G, feasible)
        return aggregate(R, S, G, weights, alpha), alpha

    for iteration, weights in enumerate(EXTREMES, start=1):
        if iteration > cfg.k:
            break
        Q, alpha = build(weights, B, D)
        record(iteration, weights, Q, alpha, _solve(solver, Q, cfg, iteration, cfg.seed), False)

    if cfg.s_type == "iterative":
        for iteration in range(3, cfg.k + 1):
            R, S = rescale(B, D, bounds)
            choice = choose_gap(wmap, used, rng, bounds, cfg.gap_space)
            Q, alpha = build(choice.weights, R, S)
            result = _solve(solver, Q, cfg, iteration, cfg.seed)
            record(iteration, choice.weights, Q, alpha, result, R is not B, choice)
    else:
        plan = static_weights(cfg, rng)[2:]
        R, S = rescale(B, D, bounds)
        jobs = [(i, w, *build(w, R, S)) for i, w in enumerate(plan, start=3)]
        if cfg.n_jobs > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(cfg.n_jobs) as pool:
                results = list(pool.map(lambda j: _solve(solver, j[2], cfg, j[0], cfg.seed), jobs))
        else:
            results = [_solve(solver, j[2], cfg, j[0], cfg.seed) for j in jobs]
        for (i, w, Q, alpha), result in zip(jobs, results):
            record(i, w, Q, alpha, result, R is not B)

    return SBDAResult(archive.finalise(), archive, log, wmap, bounds)


class SBDA(BaseEstimator):
    """Estimator front-end for :func:`run_sbda`.

    ``fit(B, D, G)`` stores the non-dominated solutions in ``front_`` (an
    :class:`~sbda.pareto.Archive`), their objective points in
    ``pareto_front_`` and the per-iteration records in ``log_``.

    Parameters mirror :class:`RunConfig`; ``solver`` is any object with the
    ``solve(Q, time_limit=, n_top=, seed=)`` contract and ``feasibility`` an
    optional bit-vector predicate used for archive admission.
    """

    def __init__(self, k=10, total_time=None, n_top=1000, s_type="iterative", seed=0,
                 penalty_override=None, gap_space="normalised", sld_literal=False,
                 admit_infeasible=False, n_jobs=1, solver=None, feasibility=None):
        self.k = k
        self.total_time = total_time
        self.n_top = n_top
        self.s_type = s_type
        self.seed = seed
        self.penalty_override = penalty_override
        self.gap_space = gap_space
        self.sld_literal = sld_literal
        self.admit_infeasible = admit_infeasible
        self.n_jobs = n_jobs
        self.solver = solver
        self.feasibility = feasibility

    def _config(self) -> RunConfig:
        return RunConfig(
            k=self.k, total_time=self.total_time, n_top=self.n_top, s_type=self.s_type,
            seed=self.seed, penalty_override=self.penalty_override, gap_space=self.gap_space,
            sld_literal=self.sld_literal, admit_infeasible=self.admit_infeasible, n_jobs=self.n_jobs,
        )

    def fit(self, B, D, G, y=None):
        return self._fit(B, D, G, self.feasibility)

    def fit_portfolio(self, encoder):
        """Fit on a fitted :class:`~sbda.portfolio.PortfolioEncoder`, using its
        feasibility test unless ``feasibility`` is set."""
        from .portfolio import EncodingFeasibility

        feasible = self.feasibility
        if feasible is None:
            feasible = EncodingFeasibility(encoder.encoding_)
        return self._fit(encoder.B_, encoder.D_, encoder.G_, feasible)

    def _fit(self, B, D, G, feasible):
        result = run_sbda(B, D, G, self._config(), self.solver, feasible)
        self.result_ = result
        self.front_ = result.front
        self.pareto_front_ = result.front.points
        self.log_ = result.log
        self.bounds_ = result.bounds
        self.weights_ = [tuple(rec["lambda"]) for rec in result.log]
        return self

    def hypervolume(self, ref) -> float:
        from .metrics import hypervolume_2d

        check_is_fitted(self, "front_")
        return hypervolume_2d(self.pareto_front_, ref)

