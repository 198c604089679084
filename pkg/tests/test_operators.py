import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from ecdesign import operators as ops
from ecdesign.es import ES_CLASSES

LB, UB = np.full(2, -10.0), np.full(2, 10.0)


@pytest.mark.parametrize("name", ["Uniform", "Sobol", "LHS", "Halton", "Normal"])
def test_init_in_box(name, rng):
    X = ops.initialize(name, 64, np.full(5, -3.0), np.full(5, 7.0), rng)
    assert X.shape == (64, 5)
    assert np.all(X >= -3.0) and np.all(X <= 7.0)


def test_normal_init_centered(rng):
    X = ops.initialize("Normal", 10_000, np.full(3, -4.0), np.full(3, 8.0), rng)
    se = X.std(axis=0) / np.sqrt(len(X))
    assert np.all(np.abs(X.mean(axis=0) - 2.0) < 5 * se)


def test_lhs_one_point_per_decile(rng):
    X = ops.initialize("LHS", 10, np.zeros(2), np.ones(2), rng)
    for j in range(2):
        strata = np.floor(X[:, j] * 10).astype(int)
        assert sorted(strata.tolist()) == list(range(10))


def test_de_rand_zero_f(rng):
    X = rng.normal(size=(10, 3))
    f = rng.random(10)
    # reproduce the donor draw to know r1
    r = ops.pick_distinct(np.random.default_rng(5), 10, 3)
    V = ops.de_mutation("DE/rand/1", X, f, {"F1": 0.0}, np.random.default_rng(5))
    assert np.array_equal(V, X[r[:, 0]])


def test_de_best_example():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 0.0]])
    f = np.array([0.0, 1.0, 2.0])

    class Fixed:
        def random(self, shape):
            # row 0 picks (1, 2); other rows unused
            keys = np.full(shape, 0.5)
            keys[0] = [9.0, 0.1, 0.2]
            return keys

    V = ops.de_mutation("DE/best/1", X, f, {"F1": 0.5}, Fixed())
    assert np.allclose(V[0], [1.0, 0.0])


def test_pick_distinct_properties(rng):
    r = ops.pick_distinct(rng, 8, 5)
    for i, row in enumerate(r):
        assert len(set(row.tolist())) == 5 and i not in row
    warned = []
    r = ops.pick_distinct(rng, 3, 5, warned.append)
    assert r.shape == (3, 5) and warned


def test_gaussian_zero_sigma(rng):
    V = rng.normal(size=(5, 2))
    assert np.array_equal(ops.ga_mutation("Gaussian", V, {"sigma": 0.0}, LB, UB, rng), V)


def test_binomial_extremes(rng):
    X, V = np.zeros((6, 4)), np.ones((6, 4))
    assert np.array_equal(ops.binomial(X, V, 1.0, rng), V)
    U = ops.binomial(X, V, 0.0, rng)
    assert np.all((U != X).sum(axis=1) == 1)


def test_exponential_contiguous(rng):
    X, V = np.zeros((50, 6)), np.ones((50, 6))
    U = ops.exponential(X, V, 0.5, rng)
    for row in U:
        idx = np.flatnonzero(row)
        assert len(idx) >= 1
        # one cyclic run of ones
        changes = np.sum(row != np.roll(row, 1))
        assert changes in (0, 2)


def test_arithmetic_example():
    X = np.array([[0.0, 2.0], [2.0, 0.0]])

    class Seq:
        def __init__(self):
            self.calls = 0

        def integers(self, lo, hi, size):
            self.calls += 1
            return np.zeros(size, int) if self.calls == 1 else np.ones(size, int)

    V = ops.ga_crossover("Arithmetic", X, {"alpha": 0.5}, Seq())
    assert np.allclose(V, [[1.0, 1.0], [1.0, 1.0]])


def test_pso_zero_coefficients(rng):
    X = rng.normal(size=(5, 3))
    v = ops.pso_velocity("Vanilla_PSO", X, rng.random(5), rng.normal(size=X.shape), X, rng.random(5),
                         X[0], {"w": 0.0, "c1": 0.0, "c2": 0.0}, rng)
    assert np.array_equal(X + v, X)


def test_fdr_two_points():
    X = np.array([[0.0, 0.0], [1.0, 3.0]])
    f = np.array([5.0, 1.0])
    nb = ops.fdr_nbest(X, f)
    assert np.array_equal(nb[0], X[1])
    assert np.array_equal(nb[1], X[0])


@pytest.mark.parametrize("name", list(ES_CLASSES))
def test_es_tiny_sigma_concentrates(name, rng):
    X = rng.uniform(-5, 5, size=(20, 4))
    es = ES_CLASSES[name](X, np.full(4, -5.0), np.full(4, 5.0))
    es.sigma = 1e-8
    S = es.sample(500, rng)
    assert np.all(S.std(axis=0) < 1e-6 * 10.0)
    assert np.allclose(S.mean(axis=0), es.mean, atol=1e-6)


@pytest.mark.parametrize("name,x,want", [("Clip_BC", 12.0, 10.0), ("Periodic_BC", 12.0, -8.0),
                                         ("Reflect_BC", 12.0, 8.0)])
def test_boundary_examples(name, x, want, rng):
    out = ops.boundary_control(name, np.array([[x, 0.0]]), LB, UB, rng)
    assert out[0, 0] == pytest.approx(want)
    assert out[0, 1] == 0.0


@given(hnp.arrays(float, (7, 2), elements=st.floats(-1e4, 1e4)),
       st.sampled_from(["Clip_BC", "Rand_BC", "Periodic_BC", "Reflect_BC", "Halving_BC"]))
def test_boundary_always_inside(X, name):
    out = ops.boundary_control(name, X, LB, UB, np.random.default_rng(0))
    assert np.all(out >= LB) and np.all(out <= UB)
    inside = np.all((X >= LB) & (X <= UB), axis=1)
    assert np.array_equal(out[inside], X[inside])


def test_de_like_selection(rng):
    X, U = np.zeros((1, 2)), np.ones((1, 2))
    s = ops.select("DE-like", X, np.array([1.0]), U, np.array([2.0]), rng)
    assert np.array_equal(s.X, X) and s.f[0] == 1.0


def test_pso_like_replaces(rng):
    X, U = np.zeros((3, 2)), np.ones((3, 2))
    s = ops.select("PSO-like", X, np.zeros(3), U, np.full(3, 99.0), rng)
    assert np.array_equal(s.X, U)


def test_roulette_probabilities():
    assert np.allclose(ops.fitness_probs(np.array([2.0, 1.0])), [2 / 3, 1 / 3])
    p = ops.roulette_probs(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(p, [2 / 3, 1 / 3, 0.0], atol=1e-9)


def test_linear_ranking_best_gets_two_over_n():
    f = np.array([3.0, 1.0, 4.0, 2.0])
    p = ops.linear_ranking_probs(f)
    assert p[1] == pytest.approx(2 / 4)
    assert p[2] == pytest.approx(0.0)
    assert p.sum() == pytest.approx(1.0)


def test_niching_examples(rng):
    groups = ops.apply_niching("Rand_Nich", np.zeros((12, 2)), np.zeros(12), 3, rng)
    assert [len(g) for g in groups] == [4, 4, 4]
    f = np.array([3.0, 1.0, 4.0, 2.0])
    groups = ops.apply_niching("Ranking_Nich", np.zeros((4, 1)), f, 2, rng)
    assert sorted(f[groups[0]].tolist()) == [1.0, 2.0]
    assert sorted(f[groups[1]].tolist()) == [3.0, 4.0]


def test_distance_niching_recovers_clusters(rng):
    a = rng.normal(0, 0.1, size=(5, 2))
    b = rng.normal(50, 0.1, size=(5, 2))
    X = np.vstack([a, b])
    groups = ops.apply_niching("Distance_Nich", X, np.zeros(10), 2, rng)
    assert sorted(sorted(g.tolist()) for g in groups) == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]


def test_niching_too_small_warns(rng):
    warned = []
    groups = ops.apply_niching("Rand_Nich", np.zeros((3, 2)), np.zeros(3), 2, rng, warned.append)
    assert len(groups) == 1 and warned


def test_sharing_examples():
    X = np.arange(6.0).reshape(3, 2)
    f = np.array([4.0, 9.0, 2.0])
    Xt, ft = np.array([[7.0, 7.0]]), np.array([0.0])
    X2, f2, w = ops.share_info(X, f, Xt, ft)
    assert 0.0 in f2 and len(f2) == 3 and w == 1
    X3, f3, _ = ops.share_info(X, f, X, f)
    assert np.array_equal(X3[1], X[2]) and f3.tolist() == [4.0, 2.0, 2.0]


def test_linear_reduction_examples():
    assert ops.reduce_population("Linear", 100, 4, 0, 1000) == 100
    assert ops.reduce_population("Linear", 100, 4, 1000, 1000) == 4
    assert ops.reduce_population("Linear", 100, 4, 500, 1000) == 52
    assert ops.reduce_population("Non-Linear", 100, 4, 0, 1000) == 100
    assert ops.reduce_population("Non-Linear", 100, 4, 1000, 1000) == 4


def test_restart_examples(rng):
    X = rng.uniform(-5, 5, size=(20, 3))
    f = rng.random(20)
    assert ops.check_restart("Stagnation", 100, X, f, 17.3)
    for name in ("Stagnation", "Obj_Convergence", "Solution_Convergence", "Obj&Solution_Convergence"):
        assert not ops.check_restart(name, 0, X, f, 17.3)
    same = np.ones((10, 3))
    assert ops.check_restart("Solution_Convergence", 0, same, np.zeros(10), 17.3)
