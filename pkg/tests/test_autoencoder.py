import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairgdiff.autoencoder import (AutoencoderConfig, decode, decode_pairs, encode, init_autoencoder,
                                   kl_divergence, loss_and_grads, num_pairs, reconstruction_auc,
                                   train_autoencoder, auc_score)
from fairgdiff.errors import SizeError
from fairgdiff.graph import AttributedGraph, SbmSpec, adjacency_from_edges, augment, gen_homophily_sbm, permute_graph
from fairgdiff.nn import central_difference

import oracles

SMALL = AutoencoderConfig(latent_dim=4, layers=2, enc_width=6, hidden=8, n_max=10, epochs=0, seed=0)


def zeroed(params):
    for v in params.arrays.values():
        v[...] = 0.0
    return params


def test_zero_weights_encode_to_noise():
    p = zeroed(init_autoencoder(SMALL, 3))
    g = oracles.random_graph(np.random.default_rng(0), 6, 0.5)
    eps = np.arange(4.0)
    code = encode(p, g, eps)
    assert not code.mean.any() and not code.logvar.any()
    assert np.array_equal(code.sample, eps)


def test_zero_weights_decode_to_final_bias():
    p = zeroed(init_autoencoder(SMALL, 3))
    p.arrays["dec_b3"][:] = 0.7
    out = decode(p, np.ones(4), 5)
    off = ~np.eye(5, dtype=bool)
    assert np.all(out[off] == 0.7)
    assert np.all(np.isneginf(np.diag(out)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 10))
def test_decode_symmetric(seed, n):
    p = init_autoencoder(SMALL, 3, seed=seed)
    out = decode(p, np.random.default_rng(seed).standard_normal(4), n)
    assert np.array_equal(out, out.T)
    assert decode_pairs(p, np.zeros(4), n).shape == (num_pairs(n),)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 10))
def test_encoder_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    p = init_autoencoder(SMALL, 3, seed=seed)
    p.arrays["lv_W"] = rng.standard_normal(p.arrays["lv_W"].shape) * 0.1
    g = oracles.random_graph(rng, n, 0.4)
    a = encode(p, g)
    b = encode(p, permute_graph(g, rng.permutation(n)))
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)
    np.testing.assert_allclose(a.logvar, b.logvar, atol=1e-9)


def test_size_error_above_n_max():
    p = init_autoencoder(SMALL, 3)
    g = oracles.random_graph(np.random.default_rng(0), 11, 0.3)
    with pytest.raises(SizeError):
        encode(p, g)
    with pytest.raises(SizeError):
        decode(p, np.zeros(4), 11)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_kl_non_negative_and_zero_only_at_prior(vals):
    mu = np.array(vals)
    lv = np.array(vals[::-1])
    kl = kl_divergence(mu, lv)
    assert kl >= 0
    if np.abs(mu).max() > 1e-6:  # below this mu**2 underflows relative to the sum
        assert kl > 0
    assert kl_divergence(np.zeros(3), np.zeros(3)) == 0


def test_epoch_zero_loss_matches_direct_forward():
    g = [oracles.random_graph(np.random.default_rng(k), 7, 0.4) for k in range(3)]
    cfg = AutoencoderConfig(latent_dim=4, enc_width=6, hidden=8, n_max=10, epochs=1, kl_weight=0.3, seed=2)
    trained = train_autoencoder(g, cfg)
    init = init_autoencoder(cfg, 3)
    noise = np.random.default_rng([2, 1]).standard_normal((3, 4))
    expected = 0.0
    for graph, eps in zip(g, noise):
        code = encode(init, graph, eps)
        logits = decode_pairs(init, code.sample, graph.n)
        iu, ju = np.triu_indices(graph.n, 1)
        y = graph.adjacency[iu, ju]
        bce = np.sum(np.logaddexp(0, logits) - y * logits)
        expected += bce + 0.3 * kl_divergence(code.mean, code.logvar)
    assert trained.loss_trace[0] == pytest.approx(expected / 3, rel=1e-12)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    graphs = [oracles.random_graph(rng, n, 0.4) for n in (5, 8, 10)]
    p = init_autoencoder(SMALL, 3, seed=1)
    for v in p.arrays.values():
        v += rng.standard_normal(v.shape) * 0.1
    p.config.kl_weight = 0.5
    noise = rng.standard_normal((3, 4))
    _, _, grads = loss_and_grads(p, graphs, noise)

    def loss_fn(arrays):
        return loss_and_grads(p, graphs, noise, need_grads=False, arrays=arrays)[0]

    checked = 0
    names = sorted(p.arrays)
    for name in names:
        arr = p.arrays[name]
        picks = rng.choice(arr.size, size=min(arr.size, 8), replace=False)
        for flat in picks:
            idx = np.unravel_index(flat, arr.shape)
            if name in ("dec_W3", "dec_b3") and (flat % arr.shape[-1]) >= num_pairs(10):
                continue
            fd = central_difference(loss_fn, p.arrays, name, idx)
            an = grads[name][idx]
            assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an)) + 1e-8, (name, idx, fd, an)
            checked += 1
    assert checked >= 100


def test_overfit_single_tiny_graph():
    g = AttributedGraph(adjacency_from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (0, 3)]),
                        np.random.default_rng(0).standard_normal((6, 2)), [0, 1, 0, 1, 0, 1])
    cfg = AutoencoderConfig(latent_dim=4, enc_width=8, hidden=16, n_max=6, epochs=400, lr=1e-2, kl_weight=0.0)
    p = train_autoencoder([g], cfg)
    _, parts, _ = loss_and_grads(p, [g], np.zeros((1, 4)), need_grads=False)
    assert parts["bce"] / num_pairs(6) < 0.1
    code = encode(p, g)
    recon = decode(p, code.mean, 6) > 0
    assert np.array_equal(recon, g.adjacency.astype(bool))


def test_training_deterministic_and_loss_decreases():
    corpus = augment(gen_homophily_sbm(SbmSpec(n_per_group=15, seed=0)), 4, 0.1, seed=1, permute=False)
    cfg = AutoencoderConfig(n_max=30, epochs=60, seed=3)
    a = train_autoencoder(corpus, cfg)
    b = train_autoencoder(corpus, cfg)
    assert a.loss_trace == b.loss_trace
    assert np.mean(a.loss_trace[-10:]) < np.mean(a.loss_trace[:10])


def test_untrained_auc_near_chance():
    aucs = []
    for seed in range(10):
        g = gen_homophily_sbm(SbmSpec(n_per_group=20, seed=seed))
        p = init_autoencoder(AutoencoderConfig(n_max=40), g.features.shape[1], seed=seed)
        aucs.append(reconstruction_auc(p, g))
    assert abs(np.mean(aucs) - 0.5) <= 0.1


def test_auc_perfect_and_degenerate():
    y = np.array([1, 0, 1, 0, 0])
    assert auc_score(y.astype(float), y) == 1.0
    assert np.isnan(auc_score(np.zeros(3), np.zeros(3)))


def test_trained_auc_on_held_out_variant_and_distinct_codes():
    g = gen_homophily_sbm(SbmSpec(n_per_group=30, seed=0))
    corpus = augment(g, 8, 0.1, seed=1, permute=False)
    held_out = augment(g, 2, 0.1, seed=99, permute=False)[1]
    p = train_autoencoder(corpus, AutoencoderConfig(n_max=60, epochs=300, seed=0))
    assert reconstruction_auc(p, held_out) >= 0.8
    other = gen_homophily_sbm(SbmSpec(n_per_group=30, seed=5))
    assert not np.allclose(encode(p, g).mean, encode(p, other).mean)
    recon = decode(p, encode(p, g).mean, g.n) > 0
    edges = g.adjacency.astype(bool)
    assert (recon & edges).sum() >= 0.9 * edges.sum()
