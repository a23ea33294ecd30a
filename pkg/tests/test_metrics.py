import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbda.metrics import (
    attainment_surface,
    default_reference,
    eaf,
    eaf_difference,
    eaf_grid,
    hypervolume_2d,
)
from sbda.qubo import QuboMatrix

lattice = st.integers(0, 63).map(lambda v: v / 64)

RUNS = [
    [(1.0, 3.0), (3.0, 1.0)],
    [(2.0, 2.0)],
    [(0.0, 4.0), (4.0, 0.0)],
]
# attainment counts, rows f2 = 0..4, columns f1 = 0..4
HAND_COUNTS = np.array([
    [0, 0, 0, 0, 1],
    [0, 0, 0, 1, 2],
    [0, 0, 1, 2, 3],
    [0, 1, 2, 2, 3],
    [1, 2, 3, 3, 3],
])


def monte_carlo_hv(front, ref, samples, rng):
    """Fraction of uniform samples in the box [lo, ref] weakly dominated by the front."""
    pts = np.asarray(front, dtype=float)
    lo = pts.min(axis=0)
    area = (ref[0] - lo[0]) * (ref[1] - lo[1])
    hits = 0
    chunk = 1_000_000
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        u = lo + rng.random((m, 2)) * (np.asarray(ref) - lo)
        order = np.argsort(pts[:, 0])
        f1, best = pts[order, 0], np.minimum.accumulate(pts[order, 1])
        idx = np.searchsorted(f1, u[:, 0], side="right") - 1
        ok = idx >= 0
        hits += int(np.sum(best[idx[ok]] <= u[ok, 1]))
    return area * hits / samples


def grid_points():
    xs, ys = np.meshgrid(np.arange(5.0), np.arange(5.0))
    return np.column_stack([xs.ravel(), ys.ravel()])


class TestHypervolume:
    def test_unit_square(self):
        assert hypervolume_2d([(0.0, 0.0)], (1.0, 1.0)) == 1.0

    def test_staircase_matches_monte_carlo(self):
        front = [(0, 2), (1, 1), (2, 0)]
        rng = np.random.default_rng(0)
        assert hypervolume_2d(front, (3, 3)) == pytest.approx(monte_carlo_hv(front, (3, 3), 2_000_000, rng), rel=5e-3)
        assert hypervolume_2d(front, (3, 3)) == 6.0

    def test_dominated_point_is_ignored(self):
        front = [(0, 2), (1, 1), (2, 0)]
        assert hypervolume_2d(front + [(2, 2)], (3, 3)) == hypervolume_2d(front, (3, 3))

    def test_empty(self):
        assert hypervolume_2d([], (1, 1)) == 0.0

    def test_points_outside_reference_are_clipped(self):
        with pytest.warns(RuntimeWarning, match="1 point"):
            value = hypervolume_2d([(0.0, 0.0), (2.0, -1.0)], (1.0, 1.0))
        assert value == 1.0

    def test_duplicates(self):
        assert hypervolume_2d([(0, 0), (0, 0)], (1, 1)) == 1.0

    def test_random_fronts_against_monte_carlo(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            front = rng.random((rng.integers(1, 51), 2))
            ref = (1.2, 1.3)
            assert hypervolume_2d(front, ref) == pytest.approx(
                monte_carlo_hv(front, ref, 1_000_000, rng), rel=1e-2)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(lattice, lattice), min_size=1, max_size=30), st.tuples(lattice, lattice))
    def test_adding_nondominated_point_increases(self, front, extra):
        # lattice coordinates keep every area increment representable
        ref = (1.0, 1.0)
        pts = np.asarray(front)
        if np.any((pts[:, 0] <= extra[0]) & (pts[:, 1] <= extra[1])):
            return  # extra is weakly dominated, nothing to check
        assert hypervolume_2d(front + [extra], ref) > hypervolume_2d(front, ref)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=30),
           st.floats(0.01, 100))
    def test_scale_covariance(self, front, c):
        ref = (6.0, 6.0)
        scaled = [(c * a, c * b) for a, b in front]
        assert hypervolume_2d(scaled, (c * ref[0], c * ref[1])) == pytest.approx(
            c * c * hypervolume_2d(front, ref), rel=1e-9, abs=1e-12)


class TestReference:
    def test_all_negative_second_objective(self):
        ref = default_reference(QuboMatrix([[1.0, 2.0], [0.0, -1.0]]), QuboMatrix(-np.eye(2)))
        assert ref.r1 == 3.0
        assert ref.r2 == 0.0

    def test_toy(self, toy):
        _, _, B, D, _ = toy
        ref = default_reference(B, D)
        assert ref.r1 == pytest.approx(np.clip(B.coeffs, 0, None).sum())
        assert ref.r2 == 0.0  # every toy return is positive


class TestEaf:
    def test_hand_tabulation(self):
        g = grid_points()
        expected = HAND_COUNTS.ravel() / 3
        np.testing.assert_allclose(eaf(RUNS, g), expected)

    def test_dominated_by_all_and_by_none(self):
        assert eaf(RUNS, [(10.0, 10.0)])[0] == 1.0
        assert eaf(RUNS, [(-10.0, -10.0)])[0] == 0.0

    def test_empty_runs_rejected(self):
        with pytest.raises(ValueError):
            eaf([], [(0.0, 0.0)])

    def test_empty_front_attains_nothing(self):
        assert eaf([[]], [(5.0, 5.0)])[0] == 0.0

    def test_values_on_lattice_and_monotone(self):
        rng = np.random.default_rng(2)
        runs = [rng.random((8, 2)) for _ in range(7)]
        g = eaf_grid(runs)
        p = eaf(runs, g)
        np.testing.assert_allclose(p * 7, np.round(p * 7))
        shifted = eaf(runs, g + 0.05)
        assert np.all(shifted >= p)

    def test_difference_with_itself_is_zero(self):
        assert np.all(eaf_difference(RUNS, RUNS, grid_points()) == 0.0)

    def test_difference_when_a_dominates_b(self):
        worse = [[(a + 0.5, b + 0.5) for a, b in run] for run in RUNS]
        assert np.all(eaf_difference(RUNS, worse, grid_points()) >= 0)

    def test_difference_is_compositional(self):
        rng = np.random.default_rng(3)
        A = [rng.random((5, 2)) for _ in range(3)]
        B = [rng.random((5, 2)) for _ in range(3)]
        g = eaf_grid(A + B)
        np.testing.assert_array_equal(eaf_difference(A, B, g), eaf(A, g) - eaf(B, g))


class TestAttainmentSurface:
    @staticmethod
    def attained_by_surface(surface, g):
        s = surface.staircase
        return np.array([bool(np.any((s[:, 0] <= x) & (s[:, 1] <= y))) for x, y in g])

    @pytest.mark.parametrize("level", [1, 2, 3])
    def test_matches_grid_threshold(self, level):
        xs = np.arange(-0.5, 5.0, 0.25)
        g = np.array([(x, y) for x in xs for y in xs])
        surface = attainment_surface(RUNS, level)
        np.testing.assert_array_equal(self.attained_by_surface(surface, g), eaf(RUNS, g) * 3 >= level - 1e-9)

    def test_random_runs_match_grid_threshold(self):
        rng = np.random.default_rng(4)
        runs = [rng.integers(0, 10, (6, 2)).astype(float) for _ in range(5)]
        xs = np.arange(-0.5, 10.5, 0.5)
        g = np.array([(x, y) for x in xs for y in xs])
        for level in range(1, 6):
            surface = attainment_surface(runs, level)
            np.testing.assert_array_equal(self.attained_by_surface(surface, g), eaf(runs, g) * 5 >= level - 1e-9)

    def test_staircase_shape(self):
        s = attainment_surface(RUNS, 2).staircase
        assert np.all(np.diff(s[:, 0]) > 0)
        assert np.all(np.diff(s[:, 1]) < 0)

    def test_single_run_is_its_front(self):
        run = [(0.0, 3.0), (1.0, 1.0), (2.0, 2.0), (3.0, 0.0)]
        s = attainment_surface([run], 1).staircase
        np.testing.assert_array_equal(s, [(0.0, 3.0), (1.0, 1.0), (3.0, 0.0)])

    def test_identical_runs_levels_coincide(self):
        run = RUNS[0]
        np.testing.assert_array_equal(
            attainment_surface([run, run], 1).staircase, attainment_surface([run, run], 2).staircase)

    @pytest.mark.parametrize("level", [0, 4])
    def test_level_out_of_range(self, level):
        with pytest.raises(ValueError):
            attainment_surface(RUNS, level)


class TestGrid:
    def test_product_of_distinct_coordinates(self):
        g = eaf_grid(RUNS)
        assert len(g) == 5 * 5
        assert set(map(tuple, g)) == {(x, y) for x in range(5) for y in range(5)}

    def test_cap(self):
        rng = np.random.default_rng(5)
        runs = [rng.random((500, 2)) for _ in range(4)]
        g = eaf_grid(runs, max_cells=10_000)
        assert len(g) <= 10_000
        assert len(g) > 5_000
