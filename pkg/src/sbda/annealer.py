"""Time-limited simulated annealing for dense QUBOs.

The solver keeps the ``n_top`` lowest-energy distinct states it visits and
returns them in ascending energy.  One sweep proposes every bit once, in a
fresh random order, under the Metropolis rule.  Temperatures follow a
geometric schedule from ``initial_temperature`` to ``final_temperature``
over the planned budget (sweeps or wall-clock time).  Once the schedule
has bottomed out, a sweep that accepts no flip reheats the chain to 10% of
the initial temperature and the schedule re-cools over whatever budget is
left.

The kernel uses its own splitmix64/xorshift generator so that results are a
function of ``(Q, seed, sweeps_hint)`` only and concurrent solves on
different threads do not share RNG state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numba as nb
import numpy as np
from sklearn.base import BaseEstimator

from .qubo import QuboMatrix, energies, max_flip_bound
from .validation import check_positive, check_positive_int

MAX_EXACT_VARIABLES = 24
_REHEAT_FRACTION = 0.1
_FINAL_FRACTION = 1e-3
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class SolverResult:
    """Ascending-energy list of distinct states found by one solver call."""

    states: np.ndarray
    energies: np.ndarray
    sweeps_done: int = 0
    elapsed: float = 0.0

    @property
    def best_state(self) -> np.ndarray:
        return self.states[0]

    @property
    def best_energy(self) -> float:
        return float(self.energies[0])

    @property
    def solutions(self):
        return list(zip(self.states, self.energies.tolist()))

    def __len__(self):
        return len(self.energies)


@nb.njit(cache=True, inline="always")
def _next_u64(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return x * np.uint64(0x2545F4914F6CDD1D)


@nb.njit(cache=True, inline="always")
def _uniform(state):
    return (_next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, inline="always")
def _below(state, bound):
    return np.int64(_next_u64(state) % np.uint64(bound))


@nb.njit(cache=True)
def _heap_sift_down(heap, energies_, pos, size):
    # max-heap of slot indices keyed by energy
    while True:
        left = 2 * pos + 1
        if left >= size:
            return
        child = left
        right = left + 1
        if right < size and energies_[heap[right]] > energies_[heap[left]]:
            child = right
        if energies_[heap[child]] > energies_[heap[pos]]:
            tmp = heap[pos]
            heap[pos] = heap[child]
            heap[child] = tmp
            pos = child
        else:
            return


@nb.njit(cache=True)
def _heap_sift_up(heap, energies_, pos):
    while pos > 0:
        parent = (pos - 1) // 2
        if energies_[heap[pos]] > energies_[heap[parent]]:
            tmp = heap[pos]
            heap[pos] = heap[parent]
            heap[parent] = tmp
            pos = parent
        else:
            return


@nb.njit(cache=True)
def _offer(x, e, h, store, store_e, store_h, heap, fill, index):
    """Insert state ``x`` (energy ``e``, hash ``h``) into the bounded best list."""
    cap = store.shape[0]
    size = fill[0]
    if size == cap and e >= store_e[heap[0]]:
        return
    if h in index:
        return
    if size < cap:
        slot = size
        store[slot, :] = x
        store_e[slot] = e
        store_h[slot] = h
        heap[size] = slot
        fill[0] = size + 1
        _heap_sift_up(heap, store_e, size)
    else:
        slot = heap[0]
        del index[store_h[slot]]
        store[slot, :] = x
        store_e[slot] = e
        store_h[slot] = h
        _heap_sift_down(heap, store_e, 0, size)
    index[h] = slot


@nb.njit(cache=True)
def _run_sweeps(
    diag, coup, x, local, energy, zhash, zobrist, rng,
    store, store_e, store_h, heap, fill, index,
    n_sweeps, t_start, t_end, t_reheat, progress, progress_step, cycle,
):
    """Run up to ``n_sweeps`` sweeps; returns (energy, hash, sweeps done).

    ``cycle`` holds ``[cycle_start_progress, cycle_start_temperature]`` and is
    updated in place on reheats so the caller can carry it to the next chunk.
    """
    n = x.shape[0]
    order = np.arange(n)
    log_ratio_end = np.log(t_end)
    done = 0
    for _ in range(n_sweeps):
        p0 = cycle[0]
        span = 1.0 - p0
        frac = (progress - p0) / span if span > 0 else 1.0
        if frac > 1.0:
            frac = 1.0
        temp = np.exp(np.log(cycle[1]) + frac * (log_ratio_end - np.log(cycle[1])))
        for k in range(n - 1, 0, -1):
            j = _below(rng, k + 1)
            tmp = order[k]
            order[k] = order[j]
            order[j] = tmp
        accepted = 0
        for k in range(n):
            i = order[k]
            d = local[i] if x[i] == 0 else -local[i]
            if d <= 0.0 or (d < 40.0 * temp and _uniform(rng) < np.exp(-d / temp)):
                step = 1.0 if x[i] == 0 else -1.0
                x[i] = 1 - x[i]
                energy += d
                zhash ^= zobrist[i]
                for j in range(n):
                    local[j] += step * coup[i, j]
                accepted += 1
                _offer(x, energy, zhash, store, store_e, store_h, heap, fill, index)
        done += 1
        progress += progress_step
        if accepted == 0 and frac >= 1.0 and temp < t_reheat:
            cycle[0] = progress if progress < 1.0 else 1.0
            cycle[1] = t_reheat
    return energy, zhash, done


def _seed_state(seed: int) -> np.ndarray:
    # splitmix64 scramble; xorshift state must be non-zero
    z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return np.array([z or 0x9E3779B97F4A7C15], dtype=np.uint64)


@nb.njit(cache=True)
def _greedy_local_minimum(diag, coup, max_steps):
    """Steepest descent from the all-zeros state; returns the final local fields."""
    n = diag.shape[0]
    x = np.zeros(n, dtype=np.uint8)
    local = diag.copy()
    for _ in range(max_steps):
        best = 0.0
        arg = -1
        for i in range(n):
            d = local[i] if x[i] == 0 else -local[i]
            if d < best:
                best = d
                arg = i
        if arg < 0:
            break
        step = 1.0 if x[arg] == 0 else -1.0
        x[arg] = 1 - x[arg]
        for j in range(n):
            local[j] += step * coup[arg, j]
    return np.where(x == 0, local, -local)


def default_temperatures(Q: QuboMatrix) -> tuple[float, float]:
    """``(initial, final)`` temperatures scaled to ``Q``.

    The initial temperature is the largest change a single flip can make.
    The final one rejects the smallest uphill move out of a greedy local
    minimum with probability 0.99, so the chain freezes at the resolution
    of the landscape near good states instead of at a fixed fraction of the
    (often very loose) initial bound.
    """
    t0 = max_flip_bound(Q)
    if t0 <= 0:
        return 1.0, _FINAL_FRACTION
    deltas = _greedy_local_minimum(
        np.ascontiguousarray(Q.diagonal), np.ascontiguousarray(Q.couplings), 10 * Q.n
    )
    uphill = deltas[deltas > 1e-12 * t0]
    tf = float(uphill.min()) / np.log(100.0) if uphill.size else t0 * _FINAL_FRACTION
    return t0, min(tf, t0)


def solve(
    Q: QuboMatrix,
    time_limit: float | None = 1.0,
    n_top: int = 1,
    seed: int = 0,
    initial_temperature: float | None = None,
    final_temperature: float | None = None,
    sweeps_hint: int | None = None,
) -> SolverResult:
    """Anneal ``Q`` and return up to ``n_top`` distinct low-energy states.

    With ``sweeps_hint`` set, exactly that many sweeps are run and the wall
    clock is ignored, which makes the result reproducible.  Otherwise the
    solver runs until ``time_limit`` seconds have elapsed.
    """
    n_top = check_positive_int(n_top, "n_top")
    sweeps_hint = check_positive_int(sweeps_hint, "sweeps_hint", allow_none=True)
    if sweeps_hint is None:
        if time_limit is None or time_limit <= 0:
            raise ValueError("time_limit must be positive when sweeps_hint is not given")
    t0_default, tf_default = default_temperatures(Q)
    t0 = t0_default if initial_temperature is None else check_positive(initial_temperature, "initial_temperature")
    tf = (
        min(tf_default, t0) if final_temperature is None
        else check_positive(final_temperature, "final_temperature")
    )
    if tf > t0:
        raise ValueError("final_temperature must not exceed initial_temperature")

    n = Q.n
    rng = _seed_state(seed)
    zobrist = np.empty(n, dtype=np.uint64)
    for i in range(n):
        zobrist[i] = _seed_state(int(rng[0]) + i)[0]
    x = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        x[i] = _next_u64_py(rng) & 1
    diag = np.ascontiguousarray(Q.diagonal, dtype=np.float64)
    coup = np.ascontiguousarray(Q.couplings, dtype=np.float64)
    local = diag + coup @ x
    energy0 = float(energies(Q, x[None, :])[0])
    zhash = np.uint64(0)
    for i in np.flatnonzero(x):
        zhash ^= zobrist[i]

    cap = n_top
    store = np.zeros((cap, n), dtype=np.uint8)
    store_e = np.full(cap, np.inf)
    store_h = np.zeros(cap, dtype=np.uint64)
    heap = np.zeros(cap, dtype=np.int64)
    fill = np.zeros(1, dtype=np.int64)
    index = nb.typed.Dict.empty(nb.types.uint64, nb.types.int64)
    _offer(x, energy0, zhash, store, store_e, store_h, heap, fill, index)

    cycle = np.array([0.0, t0])
    t_reheat = max(_REHEAT_FRACTION * t0, tf)
    energy = energy0
    # zero-sweep call: triggers any pending compilation before the clock starts
    _run_sweeps(
        diag, coup, x, local, energy, zhash, zobrist, rng,
        store, store_e, store_h, heap, fill, index,
        0, t0, tf, t_reheat, 0.0, 0.0, cycle,
    )
    started = time.perf_counter()
    sweeps = 0
    if sweeps_hint is not None:
        energy, zhash, sweeps = _run_sweeps(
            diag, coup, x, local, energy, zhash, zobrist, rng,
            store, store_e, store_h, heap, fill, index,
            sweeps_hint, t0, tf, t_reheat, 0.0, 1.0 / max(sweeps_hint - 1, 1), cycle,
        )
    else:
        chunk = 1
        rate = None
        while True:
            elapsed = time.perf_counter() - started
            if elapsed >= time_limit:
                break
            progress = elapsed / time_limit
            step = 0.0 if rate is None else rate / time_limit
            tick = time.perf_counter()
            energy, zhash, done = _run_sweeps(
                diag, coup, x, local, energy, zhash, zobrist, rng,
                store, store_e, store_h, heap, fill, index,
                chunk, t0, tf, t_reheat, progress, step, cycle,
            )
            zhash = np.uint64(zhash)  # keep one compiled signature across chunks
            sweeps += done
            per_sweep = (time.perf_counter() - tick) / done
            rate = per_sweep if rate is None else 0.8 * rate + 0.2 * per_sweep
            # re-check the clock roughly every 5 ms, never past the deadline
            remaining = time_limit - (time.perf_counter() - started)
            chunk = int(max(1, min(0.005, remaining) / max(rate, 1e-9)))
    elapsed = time.perf_counter() - started

    size = int(fill[0])
    states = store[:size]
    exact = energies(Q, states)
    order = np.lexsort((np.arange(size), exact))
    return SolverResult(states[order].copy(), exact[order], sweeps, elapsed)


def _next_u64_py(state) -> int:
    x = int(state[0])
    x ^= x >> 12
    x ^= (x << 25) & _MASK64
    x ^= x >> 27
    state[0] = x
    return ((x * 0x2545F4914F6CDD1D) & _MASK64) >> 32


@nb.njit(cache=True)
def _gray_energies(diag, coup, offset):
    n = diag.shape[0]
    total = 1 << n
    out = np.empty(total)
    x = np.zeros(n, dtype=np.uint8)
    local = diag.copy()
    e = offset
    out[0] = e
    code = 0
    for k in range(1, total):
        # bit flipped between Gray codes k-1 and k
        i = 0
        while not (k >> i) & 1:
            i += 1
        if x[i] == 0:
            e += local[i]
            step = 1.0
        else:
            e -= local[i]
            step = -1.0
        x[i] = 1 - x[i]
        code ^= 1 << i
        for j in range(n):
            local[j] += step * coup[i, j]
        out[code] = e
    return out


def enumerate_exact(Q: QuboMatrix, n_top: int = 1) -> SolverResult:
    """Exhaustive search; exact ``n_top`` best states for ``Q.n <= 24``.

    State index ``c`` encodes bit ``i`` as ``(c >> i) & 1``; ties are broken by
    that index.
    """
    n_top = check_positive_int(n_top, "n_top")
    if Q.n > MAX_EXACT_VARIABLES:
        raise ValueError(f"enumeration limited to {MAX_EXACT_VARIABLES} variables, got {Q.n}")
    started = time.perf_counter()
    approx = _gray_energies(
        np.ascontiguousarray(Q.diagonal), np.ascontiguousarray(Q.couplings), Q.offset
    )
    total = approx.size
    keep = min(n_top, total)
    # over-select to absorb incremental rounding before exact re-evaluation
    pool = min(total, max(4 * keep, keep + 64))
    if pool < total:
        idx = np.argpartition(approx, pool - 1)[:pool]
    else:
        idx = np.arange(total)
    states = ((idx[:, None] >> np.arange(Q.n)) & 1).astype(np.uint8)
    exact = energies(Q, states)
    order = np.lexsort((idx, exact))[:keep]
    return SolverResult(states[order], exact[order], 0, time.perf_counter() - started)


class SimulatedAnnealingSolver(BaseEstimator):
    """Estimator front-end to :func:`solve`.

    ``solve(Q, time_limit=..., n_top=..., seed=...)`` lets an orchestrator
    override per call; ``fit(Q)`` runs with the stored parameters and keeps
    the result in ``result_``.
    """

    def __init__(
        self,
        time_limit=1.0,
        n_top=1,
        seed=0,
        initial_temperature=None,
        final_temperature=None,
        sweeps_hint=None,
    ):
        self.time_limit = time_limit
        self.n_top = n_top
        self.seed = seed
        self.initial_temperature = initial_temperature
        self.final_temperature = final_temperature
        self.sweeps_hint = sweeps_hint

    def solve(self, Q, time_limit=None, n_top=None, seed=None) -> SolverResult:
        return solve(
            Q,
            time_limit=self.time_limit if time_limit is None else time_limit,
            n_top=self.n_top if n_top is None else n_top,
            seed=self.seed if seed is None else seed,
            initial_temperature=self.initial_temperature,
            final_temperature=self.final_temperature,
            sweeps_hint=self.sweeps_hint,
        )

    def fit(self, Q, y=None):
        if not isinstance(Q, QuboMatrix):
            Q = QuboMatrix(Q)
        self.result_ = self.solve(Q)
        self.best_state_ = self.result_.best_state
        self.best_energy_ = self.result_.best_energy
        return self


class ExactSolver(BaseEstimator):
    """Enumerating solver with the same call contract as the annealer."""

    def __init__(self, n_top=1):
        self.n_top = n_top

    def solve(self, Q, time_limit=None, n_top=None, seed=None) -> SolverResult:
        return enumerate_exact(Q, self.n_top if n_top is None else n_top)

    def fit(self, Q, y=None):
        if not isinstance(Q, QuboMatrix):
            Q = QuboMatrix(Q)
        self.result_ = self.solve(Q)
        self.best_state_ = self.result_.best_state
        self.best_energy_ = self.result_.best_energy
        return self
