import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairgdiff.errors import PreconditionError
from fairgdiff.graph import AttributedGraph, SbmSpec, adjacency_from_edges, gen_homophily_sbm
from fairgdiff.metrics import topology_bias_ratio
from fairgdiff.nn import central_difference
from fairgdiff.treatment import (LinkFormationModel, TreatmentMatrix, auto_xi, counterfactual_adjacency,
                                 counterfactual_treatment, factual_treatment, fit_link_model,
                                 link_loss_and_grad, link_training_set, match_opposite_pairs,
                                 top_pairs)

import oracles


def off_diag(t: TreatmentMatrix) -> np.ndarray:
    v = t.values.astype(int)
    np.fill_diagonal(v, -1)
    return v


def test_factual_example():
    t = factual_treatment([0, 1, 0])
    assert off_diag(t).tolist() == [[-1, 0, 1], [0, -1, 0], [1, 0, -1]]
    assert np.all(np.diag(t.values) == 1)


def test_factual_all_equal_is_all_ones():
    assert factual_treatment([1, 1, 1, 1]).values.min() == 1


def test_factual_symmetric():
    t = factual_treatment(np.random.default_rng(0).integers(0, 2, 50))
    assert np.array_equal(t.values, t.values.T)


def test_factual_rejects_empty():
    with pytest.raises(ValueError):
        factual_treatment([])


def test_treatment_dict_round_trip():
    t = factual_treatment([0, 1, 1, 0, 1])
    back = TreatmentMatrix.from_dict(t.to_dict())
    assert np.array_equal(back.values, t.values) and back.kind == "factual"


# -- counterfactual treatment ------------------------------------------------------------

def four_node_graph():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    return AttributedGraph(np.zeros((4, 4)), x, [0, 0, 1, 1])


def test_counterfactual_four_node_example():
    g = four_node_graph()
    tf = factual_treatment(g.sensitive)
    tcf = counterfactual_treatment(g, tf, xi=0.0)
    # 0-based: pair (0,1) has repr (1,1); opposite pair (0,3) matches at distance 0
    assert tf.values[0, 1] == 1 and tcf.values[0, 1] == 0
    expected = oracles.counterfactual(g.features, g.sensitive, 0.0)
    for (i, j), v in expected.items():
        assert tcf.values[i, j] == v == tcf.values[j, i]


def test_counterfactual_zero_xi_distinct_reps_keeps_factual():
    x = np.array([[0.0], [1.0], [10.0], [100.0]])
    g = AttributedGraph(np.zeros((4, 4)), x, [0, 0, 1, 1])
    tf = factual_treatment(g.sensitive)
    assert np.array_equal(counterfactual_treatment(g, tf, 0.0).values, tf.values)


def test_counterfactual_infinite_xi_is_complement():
    g = oracles.random_graph(np.random.default_rng(1), 9, 0.3)
    tf = factual_treatment(g.sensitive)
    tcf = counterfactual_treatment(g, tf, np.inf)
    off = ~np.eye(9, dtype=bool)
    assert np.array_equal(tcf.values[off], 1 - tf.values[off])
    assert np.all(np.diag(tcf.values) == 1)


def test_counterfactual_single_group_warns_and_keeps_factual():
    g = AttributedGraph(np.zeros((3, 3)), np.eye(3), [1, 1, 1])
    tf = factual_treatment(g.sensitive)
    with pytest.warns(RuntimeWarning):
        tcf = counterfactual_treatment(g, tf, 1.0)
    assert np.array_equal(tcf.values, tf.values)


def test_counterfactual_rejects_negative_xi():
    g = four_node_graph()
    with pytest.raises(ValueError):
        counterfactual_treatment(g, factual_treatment(g.sensitive), -1.0)
    with pytest.raises(ValueError):
        match_opposite_pairs(g, factual_treatment(g.sensitive), candidate_budget=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(3, 9), st.floats(0.0, 4.0))
def test_counterfactual_matches_brute_force(seed, n, xi):
    rng = np.random.default_rng(seed)
    g = oracles.random_graph(rng, n, 0.3, feature_dim=2)
    # coarse grid features create exact ties between pair representations
    g = AttributedGraph(g.adjacency, np.round(g.features * 2) / 2, g.sensitive, g.labels)
    tcf = counterfactual_treatment(g, factual_treatment(g.sensitive), xi)
    for (i, j), v in oracles.counterfactual(g.features, g.sensitive, xi).items():
        assert tcf.values[i, j] == v


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_flip_count_monotone_in_xi(seed, a, b):
    g = oracles.random_graph(np.random.default_rng(seed), 10, 0.3)
    tf = factual_treatment(g.sensitive)
    lo, hi = sorted((a, b))
    flips = [int((counterfactual_treatment(g, tf, xi).values != tf.values).sum()) for xi in (lo, hi)]
    assert flips[0] <= flips[1]


def test_sampled_universe_is_deterministic_and_contains_edges():
    g = gen_homophily_sbm(SbmSpec(n_per_group=50, seed=0))
    tf = factual_treatment(g.sensitive)
    m1 = match_opposite_pairs(g, tf, candidate_budget=300, seed=4)
    m2 = match_opposite_pairs(g, tf, candidate_budget=300, seed=4)
    assert not m1.exact
    assert np.array_equal(m1.pairs, m2.pairs) and np.array_equal(m1.match, m2.match)
    universe = {tuple(p) for p in m1.pairs.tolist()}
    assert all(tuple(e) in universe for e in g.edges().tolist())
    assert len(m1.pairs) == g.num_edges + 600


def test_auto_xi_is_median_distance():
    g = oracles.random_graph(np.random.default_rng(5), 12, 0.3)
    m = match_opposite_pairs(g, factual_treatment(g.sensitive))
    assert auto_xi(m) == pytest.approx(np.median(m.distance))
    tcf = counterfactual_treatment(g, factual_treatment(g.sensitive), auto_xi(m), matching=m)
    flipped = int((np.triu(tcf.values, 1) != np.triu(factual_treatment(g.sensitive).values, 1)).sum())
    assert flipped >= len(m.pairs) // 2


# -- link formation model ------------------------------------------------------------------

def test_link_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    inputs = rng.standard_normal((40, 4))
    targets = rng.integers(0, 2, 40).astype(float)
    w = rng.standard_normal(4) * 0.3
    b = 0.2
    _, gw, gb = link_loss_and_grad(w, b, inputs, targets)
    params = {"w": w.copy(), "b": np.array([b])}

    def loss_fn(p):
        return link_loss_and_grad(p["w"], float(p["b"][0]), inputs, targets)[0]

    for k in range(4):
        assert central_difference(loss_fn, params, "w", (k,)) == pytest.approx(gw[k], rel=1e-5, abs=1e-9)
    assert central_difference(loss_fn, params, "b", (0,)) == pytest.approx(gb, rel=1e-5)


def test_link_model_learns_treatment_on_separable_graph():
    rng = np.random.default_rng(1)
    s = np.arange(30) % 2
    adj = (s[:, None] == s[None, :]).astype(np.uint8)
    np.fill_diagonal(adj, 0)
    g = AttributedGraph(adj, rng.standard_normal((30, 3)), s)
    tf = factual_treatment(s)
    model = fit_link_model(g, tf, epochs=500, lr=0.5, seed=0)
    assert model.treatment_weight > 0
    inputs, targets = link_training_set(g, tf, seed=0)
    acc = np.mean((model.logits(inputs) > 0) == (targets == 1))
    assert acc >= 0.95


def test_link_model_zero_epochs_is_initialization():
    g = gen_homophily_sbm(SbmSpec(n_per_group=10, seed=0))
    model = fit_link_model(g, factual_treatment(g.sensitive), epochs=0)
    assert not model.weights.any() and model.bias == 0.0 and model.loss_trace == []


def test_link_model_loss_decreases_on_sbm():
    g = gen_homophily_sbm(SbmSpec(seed=0))
    model = fit_link_model(g, factual_treatment(g.sensitive), epochs=200)
    assert model.loss_trace[-1] < model.loss_trace[0]
    assert np.all(np.diff(model.loss_trace) <= 1e-12)


def test_link_model_needs_edges_and_non_edges():
    g = AttributedGraph(np.zeros((3, 3)), np.eye(3), [0, 1, 0])
    with pytest.raises(PreconditionError):
        fit_link_model(g, factual_treatment(g.sensitive))


def test_link_model_dict_round_trip():
    m = LinkFormationModel(np.array([0.1, -0.2]), 0.3, [1.0])
    back = LinkFormationModel.from_dict(m.to_dict())
    assert np.array_equal(back.weights, m.weights) and back.bias == m.bias


# -- counterfactual adjacency ------------------------------------------------------------------

def test_top_pairs_breaks_ties_lexicographically():
    adj = top_pairs(np.zeros(6), 4, 2)
    assert adj[0, 1] == adj[0, 2] == 1 and adj.sum() == 4


def test_counterfactual_adjacency_zero_target():
    g = gen_homophily_sbm(SbmSpec(n_per_group=10, seed=0))
    tf = factual_treatment(g.sensitive)
    model = fit_link_model(g, tf, epochs=20)
    out = counterfactual_adjacency(model, tf, g, target_edges=0)
    assert out.num_edges == 0
    with pytest.raises(ValueError):
        counterfactual_adjacency(model, tf, g, target_edges=-1)


def test_counterfactual_adjacency_treatment_blind_model():
    g = gen_homophily_sbm(SbmSpec(n_per_group=10, seed=0))
    tf = factual_treatment(g.sensitive)
    model = LinkFormationModel(np.array([0.3] * g.features.shape[1] + [0.0]), 0.0)
    tcf = counterfactual_treatment(g, tf, np.inf)
    a = counterfactual_adjacency(model, tcf, g)
    b = counterfactual_adjacency(model, tf, g)
    assert np.array_equal(a.adjacency, b.adjacency)
    assert a.num_edges == g.num_edges
    assert np.array_equal(a.features, g.features) and np.array_equal(a.labels, g.labels)


def test_sampled_adjacency_is_seeded():
    g = gen_homophily_sbm(SbmSpec(n_per_group=20, seed=0))
    tf = factual_treatment(g.sensitive)
    model = fit_link_model(g, tf, epochs=50)
    a = counterfactual_adjacency(model, tf, g, seed=3)
    b = counterfactual_adjacency(model, tf, g, seed=3)
    c = counterfactual_adjacency(model, tf, g, seed=4)
    assert np.array_equal(a.adjacency, b.adjacency)
    assert not np.array_equal(a.adjacency, c.adjacency)
    assert a.num_edges == g.num_edges


def test_counterfactual_graph_is_less_biased_on_sbm():
    g = gen_homophily_sbm(SbmSpec(seed=0))
    tf = factual_treatment(g.sensitive)
    m = match_opposite_pairs(g, tf, seed=0)
    tcf = counterfactual_treatment(g, tf, auto_xi(m), matching=m)
    model = fit_link_model(g, tf, seed=0)
    cf = counterfactual_adjacency(model, tcf, g, seed=1)
    assert abs(topology_bias_ratio(cf, 1) - 1) < abs(topology_bias_ratio(g, 1) - 1)
