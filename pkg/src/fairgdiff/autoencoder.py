"""Variational graph autoencoder: sum-aggregation message-passing encoder
to a single graph-level latent, three-layer MLP decoder to edge logits.

Gradients are written out by hand; ``loss_and_grads`` is the single source of
truth for both training and the finite-difference checks.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DivergenceError, SizeError
from .graph import AttributedGraph, upper_pairs
from .nn import Adam, Params, glorot, sigmoid, softplus


@dataclass
class AutoencoderConfig:
    latent_dim: int = 16
    layers: int = 2
    enc_width: int = 32
    hidden: int = 64
    n_max: int = 512
    epochs: int = 300
    lr: float = 1e-2
    kl_weight: float = 1e-2
    seed: int = 0

    def check(self) -> None:
        for name in ("latent_dim", "layers", "enc_width", "hidden", "n_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.lr <= 0 or self.kl_weight < 0:
            raise ValueError("epochs >= 0, lr > 0 and kl_weight >= 0 required")


@dataclass
class AutoencoderParams:
    config: AutoencoderConfig
    feature_dim: int
    arrays: Params
    loss_trace: list[float] = field(default_factory=list)

    @property
    def n_max(self) -> int:
        return self.config.n_max

    def meta(self) -> dict:
        return {"config": asdict(self.config), "feature_dim": self.feature_dim,
                "loss_trace": self.loss_trace}


@dataclass
class LatentCode:
    mean: np.ndarray
    logvar: np.ndarray
    sample: np.ndarray
    noise: np.ndarray


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def init_autoencoder(config: AutoencoderConfig, feature_dim: int, seed: int | None = None) -> AutoencoderParams:
    config.check()
    rng = np.random.default_rng([config.seed if seed is None else seed, 0])
    a: Params = {}
    width_in = feature_dim
    for k in range(config.layers):
        a[f"enc_W{k}"] = glorot(rng, width_in, config.enc_width)
        a[f"enc_b{k}"] = np.zeros(config.enc_width)
        width_in = config.enc_width
    a["mu_W"] = glorot(rng, config.enc_width, config.latent_dim)
    a["mu_b"] = np.zeros(config.latent_dim)
    # zero log-variance head: message-passing sums can be large at init
    a["lv_W"] = np.zeros((config.enc_width, config.latent_dim))
    a["lv_b"] = np.zeros(config.latent_dim)
    a["dec_W1"] = glorot(rng, config.latent_dim, config.hidden)
    a["dec_b1"] = np.zeros(config.hidden)
    a["dec_W2"] = glorot(rng, config.hidden, config.hidden)
    a["dec_b2"] = np.zeros(config.hidden)
    a["dec_W3"] = glorot(rng, config.hidden, num_pairs(config.n_max))
    a["dec_b3"] = np.zeros(num_pairs(config.n_max))
    return AutoencoderParams(config, feature_dim, a)


def _check_size(params: AutoencoderParams, n: int) -> None:
    if n > params.n_max:
        raise SizeError(f"graph has {n} nodes but the autoencoder supports at most {params.n_max}")


# -- forward pieces -----------------------------------------------------------

def _message_passing(a: Params, layers: int, adj: np.ndarray, x: np.ndarray):
    h = x
    cache = []
    for k in range(layers):
        agg = h + adj @ h
        pre = agg @ a[f"enc_W{k}"] + a[f"enc_b{k}"]
        cache.append((agg, pre))
        h = softplus(pre)
    return h, cache


def _heads(a: Params, pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return pooled @ a["mu_W"] + a["mu_b"], pooled @ a["lv_W"] + a["lv_b"]


def node_embeddings(params: AutoencoderParams, graph: AttributedGraph) -> np.ndarray:
    """Per-node output of the last message-passing layer."""
    _check_size(params, graph.n)
    h, _ = _message_passing(params.arrays, params.config.layers,
                            graph.adjacency.astype(np.float64), graph.features)
    return h


def encode(params: AutoencoderParams, graph: AttributedGraph, noise=None) -> LatentCode:
    """Posterior parameters and a reparameterized sample.

    ``noise`` is either a standard-normal vector, a ``numpy`` Generator to
    draw one from, or ``None`` (sample equals the mean).
    """
    h = node_embeddings(params, graph)
    mu, logvar = _heads(params.arrays, h.mean(axis=0))
    if noise is None:
        eps = np.zeros_like(mu)
    elif isinstance(noise, np.random.Generator):
        eps = noise.standard_normal(mu.shape)
    else:
        eps = np.asarray(noise, dtype=np.float64)
    return LatentCode(mu, logvar, mu + np.exp(0.5 * logvar) * eps, eps)


def _decoder_forward(a: Params, z: np.ndarray):
    p1 = z @ a["dec_W1"] + a["dec_b1"]
    h1 = softplus(p1)
    p2 = h1 @ a["dec_W2"] + a["dec_b2"]
    h2 = softplus(p2)
    out = h2 @ a["dec_W3"] + a["dec_b3"]
    return out, (p1, h1, p2, h2)


def decode_pairs(params: AutoencoderParams, z: np.ndarray, n: int) -> np.ndarray:
    """Edge logits for the ``C(n, 2)`` pairs in lexicographic order."""
    _check_size(params, n)
    out, _ = _decoder_forward(params.arrays, np.asarray(z, dtype=np.float64))
    return out[..., :num_pairs(n)]


def decode(params: AutoencoderParams, z: np.ndarray, n: int) -> np.ndarray:
    """Symmetric ``n x n`` logit matrix with ``-inf`` on the diagonal."""
    flat = decode_pairs(params, z, n)
    iu, ju = upper_pairs(n)
    out = np.zeros((n, n))
    out[iu, ju] = flat
    out[ju, iu] = flat
    np.fill_diagonal(out, -np.inf)
    return out


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, exp(logvar)) || N(0, I))."""
    # expm1 avoids cancellation for small logvar
    return float(0.5 * np.sum(mu * mu + np.maximum(np.expm1(logvar) - logvar, 0.0)))


# -- loss and gradients -------------------------------------------------------

@dataclass
class _Prepared:
    adj: np.ndarray
    x: np.ndarray
    target: np.ndarray  # upper-triangle adjacency, padded to C(n_max, 2)
    pairs: int


def _prepare(params: AutoencoderParams, graphs: Sequence[AttributedGraph]) -> list[_Prepared]:
    width = num_pairs(params.n_max)
    prepared = []
    for g in graphs:
        _check_size(params, g.n)
        iu, ju = upper_pairs(g.n)
        target = np.zeros(width)
        target[:len(iu)] = g.adjacency[iu, ju]
        prepared.append(_Prepared(g.adjacency.astype(np.float64), g.features, target, len(iu)))
    return prepared


def loss_and_grads(params: AutoencoderParams, graphs, noise: np.ndarray,
                   need_grads: bool = True, arrays: Params | None = None):
    """Mean over graphs of reconstruction BCE (summed over the graph's
    upper-triangle pairs) + kl_weight * KL.

    ``noise`` has one standard-normal row per graph. Returns
    ``(loss, parts, grads)`` where ``parts`` holds the BCE and KL means.
    """
    a = params.arrays if arrays is None else arrays
    cfg = params.config
    prep = graphs if graphs and isinstance(graphs[0], _Prepared) else _prepare(params, graphs)
    nb = len(prep)
    beta = cfg.kl_weight

    pooled = np.empty((nb, cfg.enc_width))
    caches = []
    for b, p in enumerate(prep):
        h, cache = _message_passing(a, cfg.layers, p.adj, p.x)
        pooled[b] = h.mean(axis=0)
        caches.append(cache)
    mu, logvar = _heads(a, pooled)
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    out, (p1, h1, p2, h2) = _decoder_forward(a, z)

    targets = np.stack([p.target for p in prep])
    mask = np.zeros_like(targets)
    for b, p in enumerate(prep):
        mask[b, :p.pairs] = 1.0
    bce = (softplus(out) - targets * out) * mask
    bce_per = bce.sum(axis=1)
    kl_per = 0.5 * np.sum(mu * mu + np.maximum(np.expm1(logvar) - logvar, 0.0), axis=1)
    loss = float(np.mean(bce_per + beta * kl_per))
    parts = {"bce": float(bce_per.mean()), "kl": float(kl_per.mean())}
    if not need_grads:
        return loss, parts, None

    g: Params = {}
    d_out = (sigmoid(out) - targets) * mask / nb
    g["dec_W3"] = h2.T @ d_out
    g["dec_b3"] = d_out.sum(axis=0)
    d_p2 = (d_out @ a["dec_W3"].T) * sigmoid(p2)
    g["dec_W2"] = h1.T @ d_p2
    g["dec_b2"] = d_p2.sum(axis=0)
    d_p1 = (d_p2 @ a["dec_W2"].T) * sigmoid(p1)
    g["dec_W1"] = z.T @ d_p1
    g["dec_b1"] = d_p1.sum(axis=0)
    d_z = d_p1 @ a["dec_W1"].T

    d_mu = d_z + beta * mu / nb
    d_lv = d_z * noise * 0.5 * std + beta * 0.5 * (std * std - 1.0) / nb
    g["mu_W"] = pooled.T @ d_mu
    g["mu_b"] = d_mu.sum(axis=0)
    g["lv_W"] = pooled.T @ d_lv
    g["lv_b"] = d_lv.sum(axis=0)
    d_pooled = d_mu @ a["mu_W"].T + d_lv @ a["lv_W"].T

    for k in range(cfg.layers):
        g[f"enc_W{k}"] = np.zeros_like(a[f"enc_W{k}"])
        g[f"enc_b{k}"] = np.zeros_like(a[f"enc_b{k}"])
    for b, p in enumerate(prep):
        n = p.adj.shape[0]
        d_h = np.broadcast_to(d_pooled[b] / n, (n, cfg.enc_width))
        for k in reversed(range(cfg.layers)):
            agg, pre = caches[b][k]
            d_pre = d_h * sigmoid(pre)
            g[f"enc_W{k}"] += agg.T @ d_pre
            g[f"enc_b{k}"] += d_pre.sum(axis=0)
            if k:
                d_agg = d_pre @ a[f"enc_W{k}"].T
                d_h = d_agg + p.adj @ d_agg
    return loss, parts, g


def _noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def train_autoencoder(graphs: Sequence[AttributedGraph], config: AutoencoderConfig | None = None) -> AutoencoderParams:
    """Adam on the full corpus, one step per epoch, fresh reparameterization
    noise every epoch. ``loss_trace[e]`` is the loss before update ``e``."""
    config = config or AutoencoderConfig()
    config.check()
    if not graphs:
        raise ValueError("need at least one training graph")
    feature_dim = graphs[0].features.shape[1]
    params = init_autoencoder(config, feature_dim)
    prep = _prepare(params, graphs)
    rng = _noise_rng(config.seed)
    opt = Adam(params.arrays, lr=config.lr)
    trace: list[float] = []
    for epoch in range(config.epochs):
        noise = rng.standard_normal((len(prep), config.latent_dim))
        loss, _, grads = loss_and_grads(params, prep, noise)
        if not np.isfinite(loss):
            raise DivergenceError(f"autoencoder loss is non-finite at epoch {epoch}", epoch, trace)
        trace.append(loss)
        opt.step(params.arrays, grads)
    params.loss_trace = trace
    return params


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with tied scores counted as half."""
    labels = np.asarray(labels).astype(bool)
    npos, nneg = int(labels.sum()), int((~labels).sum())
    if npos == 0 or nneg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - npos * (npos + 1) / 2) / (npos * nneg))


def reconstruction_auc(params: AutoencoderParams, graph: AttributedGraph, z: np.ndarray | None = None) -> float:
    """AUC of decoded logits (from the posterior mean unless ``z`` is given)
    for separating edges from non-edges. NaN for empty or complete graphs."""
    if z is None:
        z = encode(params, graph).mean
    iu, ju = upper_pairs(graph.n)
    return auc_score(decode_pairs(params, z, graph.n), graph.adjacency[iu, ju])
