import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from ecdesign import experiments as ex
from ecdesign import problem_suite as ps
from ecdesign.agents import AgentConfig, build_agents
from ecdesign.engine import DefaultController
from ecdesign.modular_space import Kind
from ecdesign.problem_suite import generate_instance, generate_set
from ecdesign.workflow import CANONICAL_DE, Workflow

TINY = AgentConfig(h=8, k=2, L1=1, L2=1, seed=0)


def _sphere_set(n=3, dim=5, max_fes=2000):
    return [generate_instance(50, i, "single", dim=dim, max_fes=max_fes, functions=["Sphere"])
            for i in range(n)]


def test_constant_objective_normalizes_to_one(monkeypatch):
    monkeypatch.setattr(ps, "evaluate", lambda p, x: np.full(len(x), 2.0))
    monkeypatch.setattr(ex, "random_search_baseline", lambda inst, seed: 2.0)
    inst = generate_instance(1, 0, "single", dim=2, max_fes=300, functions=["Sphere"])
    norm, ok = ex._normalized(inst, [2.0, 2.0])
    assert norm == [1.0, 1.0] and ok


def test_de_beats_random_search():
    probs = _sphere_set()
    de = ex.run_baseline("canonical_de", probs, runs=2, seed=0)
    rs = ex.run_baseline("random_search", probs, runs=2, seed=0)
    assert de.mean < rs.mean
    assert all(r.normalized_ok for r in de.instances)


def test_unknown_baseline_and_ablation():
    with pytest.raises(KeyError):
        ex.run_baseline("nope", [])
    with pytest.raises(KeyError):
        ex.ablation_run("nope", [])
    with pytest.raises(FileNotFoundError):
        ex.ablation_run("full", _sphere_set(1))


def test_evaluation_is_deterministic():
    probs = _sphere_set(2, max_fes=800)
    a = build_agents(TINY)
    r1 = ex.evaluate_checkpoint(a, probs, runs=2, seed=3).to_json()
    r2 = ex.evaluate_checkpoint(build_agents(TINY), probs, runs=2, seed=3).to_json()
    assert r1 == r2
    back = ex.EvalResult.from_json(r1)
    assert back.to_json() == r1


def test_zero_feature_greedy_workflows_are_identical():
    probs = _sphere_set(3) + [generate_instance(7, 0, dim=10)]
    wfs = ex.generate_workflows(build_agents(TINY), probs, seed=0, zero_features=True)
    assert len({w.to_text() for w in wfs}) == 1


def test_kl_hand_value():
    p, q = np.array([0.5, 0.5]), np.array([0.25, 0.75])
    hand = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
    assert ex.kl_divergence(p, q) == pytest.approx(hand, abs=1e-15)
    # Laplace smoothing of counts (2, 0) gives (3/4, 1/4)
    assert np.allclose(ex.smoothed([2, 0]), [0.75, 0.25])
    three = ex.smoothed([0, 0, 1])
    assert ex.kl_divergence(three, ex.smoothed([1, 0, 0])) == pytest.approx(
        0.25 * math.log(0.25 / 0.5) + 0.5 * math.log(0.5 / 0.25), abs=1e-15)


@given(hnp.arrays(np.int64, st.integers(1, 12), elements=st.integers(0, 50)),
       hnp.arrays(np.int64, 12, elements=st.integers(0, 50)))
def test_kl_nonnegative_and_zero_on_identical(a, b):
    p = ex.smoothed(a)
    q = ex.smoothed(b[:len(a)])
    assert ex.kl_divergence(p, q) >= 0.0
    assert ex.kl_divergence(p, p) == 0.0


@given(hnp.arrays(float, (10, 6), elements=st.floats(-1e3, 1e3)))
def test_standardized_columns(M):
    Z = ex.standardize_columns(M)
    for j in range(6):
        if M[:, j].std() > 1e-6:
            assert abs(Z[:, j].mean()) < 1e-9
            assert abs(Z[:, j].std() - 1.0) < 1e-9


def _mixed_problems():
    out = []
    for i, (dim, fn) in enumerate([(5, "Sphere"), (10, "Rastrigin"), (5, "Ellipsoidal"),
                                   (10, "Schwefel"), (5, "Ackley"), (10, "Bent_cigar")]):
        out.append(generate_instance(8, i, "single", dim=dim, bound=5.0 + 5 * (i % 2),
                                     max_fes=1000 * (1 + i % 3), functions=[fn]))
    return out


def test_importance_matrix_shape_and_properties():
    probs = _mixed_problems()
    rng = np.random.default_rng(0)
    from _oracles import random_workflow
    wfs = [random_workflow(rng).names for _ in probs]
    mat = ex.importance_analysis(wfs, probs)
    assert mat.raw.shape == (10, 6) and mat.standardized.shape == (10, 6)
    assert np.all(mat.raw[mat.defined] >= 0.0)
    rows = ex.heatmap_rows(mat)
    assert len(rows) == 10 and all(len(r) == 7 for r in rows)
    for j in range(6):
        col = mat.raw[:, j]
        if np.isfinite(col).all() and col.std() > 0:
            z = mat.standardized[:, j]
            assert abs(z.mean()) < 1e-9 and abs(z.std() - 1.0) < 1e-9


def test_identical_workflows_give_zero_importance():
    probs = _mixed_problems()
    mat = ex.importance_analysis([list(CANONICAL_DE)] * len(probs), probs)
    # Dimension, maxFEs and Search Range split the six instances into equal groups,
    # so every group has the same smoothed occurrence distribution
    balanced = [ex.CHARACTERISTICS.index(c) for c in ("Dimension", "maxFEs", "Search Range")]
    assert np.all(mat.raw[:, balanced] == 0.0)
    assert np.all(mat.raw[mat.defined] >= 0.0)


def test_kind_categories_cover_multis():
    cats = ex.kind_categories(Kind.MUTATION)
    assert "DE/rand/1" in cats and "Multi_Mutation_1" in cats
    counts = ex.occurrence_counts([["DE/rand/1", "Binomial", "DE/rand/1"]], Kind.MUTATION)
    assert counts.sum() == 2


def test_csv_roundtrip(tmp_path):
    rows = [{"instance": 0, "method": "a", "mean": 0.1 + 0.2, "mark": "+"},
            {"instance": 1, "method": "b", "mean": 1e-300, "mark": ""}]
    ex.write_csv(rows, tmp_path / "t.csv")
    back = ex.read_csv(tmp_path / "t.csv")
    assert [float(r["mean"]) for r in back] == [0.1 + 0.2, 1e-300]
    assert back[0]["mark"] == "+" and back[1]["method"] == "b"


def test_significance_signs():
    lo = np.linspace(0.0, 0.1, 20)
    hi = np.linspace(0.5, 0.6, 20)
    assert ex.significance(lo, hi) == "+"
    assert ex.significance(hi, lo) == "-"
    assert ex.significance(lo, lo) == "="
    assert ex.significance([1.0, 1.0], [1.0, 1.0]) == "="


def test_report_files(tmp_path):
    probs = _sphere_set(2, max_fes=600)
    res = [ex.run_baseline(n, probs, runs=3, seed=1) for n in ("canonical_de", "random_search")]
    written = ex.report(tmp_path, res, reference="canonical_de")
    table = ex.read_csv(written["table"])
    assert len(table) == 4
    assert {r["mark"] for r in table if r["method"] == "canonical_de"} == {""}


def test_ablation_modes_run():
    probs = _sphere_set(1, max_fes=600)
    a = build_agents(TINY)
    for mode in ("full", "no_a1", "no_a2", "no_a1a2"):
        r = ex.ablation_run(mode, probs, trained=a, runs=1, seed=0)
        assert r.method == mode and len(r.instances) == 1
    r = ex.ablation_run("sbs", probs, sbs=a, runs=1, seed=0)
    assert r.method == "sbs"


def test_evaluate_workflows_with_defaults():
    probs = _sphere_set(1, max_fes=600)
    r = ex.evaluate_workflows("x", probs, [Workflow(CANONICAL_DE)], DefaultController(), 2, 0)
    assert len(r.instances[0].finals) == 2
    assert r.instances[0].names == list(CANONICAL_DE[:-1])


def test_generate_set_feeds_analysis():
    tr, te = generate_set(8, 2, 0.25, dim=5, max_fes=500)
    mat = ex.importance_analysis([list(CANONICAL_DE)] * len(te), te)
    assert mat.raw.shape == (10, 6)
