"""Treatment-conditioned latent DDPM.

The denoiser sees ``[z_t, time embedding, c]`` where ``c`` comes from a
treatment encoder run over the treatment matrix (as an adjacency) and the
non-sensitive features. Training combines a factual and a counterfactual
noise-prediction loss with weights ``gamma1`` and ``gamma2``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autoencoder import AutoencoderParams, decode_pairs, encode
from .errors import DivergenceError, UntrainedModelError
from .graph import AttributedGraph
from .nn import Adam, Params, glorot, sigmoid, sinusoidal_embedding, softplus
from .treatment import TreatmentMatrix, top_pairs


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float
    beta_end: float

    def at(self, t: int) -> tuple[float, float, float]:
        """(beta_t, alpha_t, alpha_bar_t) for a 1-based step."""
        if not 1 <= t <= self.steps:
            raise IndexError(f"step {t} outside [1, {self.steps}]")
        return float(self.beta[t - 1]), float(self.alpha[t - 1]), float(self.alpha_bar[t - 1])

    def to_dict(self) -> dict:
        return {"steps": self.steps, "beta_start": self.beta_start, "beta_end": self.beta_end}


def make_schedule(steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, steps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(steps, beta, alpha, alpha_bar, beta_start, beta_end)


def forward_sample(schedule: NoiseSchedule, z0, t: int, noise) -> np.ndarray:
    """Closed-form marginal: sqrt(abar_t) z0 + sqrt(1 - abar_t) noise."""
    _, _, abar = schedule.at(t)
    return np.sqrt(abar) * np.asarray(z0) + np.sqrt(1.0 - abar) * np.asarray(noise)


def forward_step(schedule: NoiseSchedule, z_prev, t: int, noise) -> np.ndarray:
    """One Markov step: sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) noise."""
    beta, _, _ = schedule.at(t)
    return np.sqrt(1.0 - beta) * np.asarray(z_prev) + np.sqrt(beta) * np.asarray(noise)


@dataclass
class DiffusionConfig:
    gamma1: float = 5.0
    gamma2: float = 0.2
    epochs: int = 15000
    lr: float = 2e-3
    steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: int = 128
    tau_width: int = 32
    cond_dim: int = 32
    time_dim: int = 16
    seed: int = 0

    def check(self) -> None:
        if self.gamma1 < 0 or self.gamma2 < 0 or self.gamma1 + self.gamma2 <= 0:
            raise ValueError("gammas must be non-negative with a positive sum")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs >= 0 and lr > 0 required")
        for name in ("hidden", "tau_width", "cond_dim", "time_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class DenoiserParams:
    config: DiffusionConfig
    latent_dim: int
    feature_dim: int
    arrays: Params
    trained: bool = False
    loss_trace: list[float] = field(default_factory=list)
    # autoencoder latents are divided by this before diffusion
    latent_scale: float = 1.0

    @property
    def gamma1(self) -> float:
        return self.config.gamma1

    @property
    def gamma2(self) -> float:
        return self.config.gamma2

    def schedule(self) -> NoiseSchedule:
        c = self.config
        return make_schedule(c.steps, c.beta_start, c.beta_end)

    def meta(self) -> dict:
        return {"config": asdict(self.config), "latent_dim": self.latent_dim,
                "feature_dim": self.feature_dim, "trained": self.trained,
                "loss_trace": self.loss_trace, "latent_scale": self.latent_scale, "gamma1": self.gamma1, "gamma2": self.gamma2,
                "schedule": self.schedule().to_dict()}


def init_denoiser(config: DiffusionConfig, latent_dim: int, feature_dim: int) -> DenoiserParams:
    config.check()
    rng = np.random.default_rng([config.seed, 0])
    w, c, h = config.tau_width, config.cond_dim, config.hidden
    a: Params = {
        "tau_W1": glorot(rng, feature_dim, w), "tau_b1": np.zeros(w),
        "tau_W2": glorot(rng, w, w), "tau_b2": np.zeros(w),
        "tau_Wc": glorot(rng, w, c), "tau_bc": np.zeros(c),
    }
    d_in = latent_dim + config.time_dim + c
    a.update({
        "eps_W1": glorot(rng, d_in, h), "eps_b1": np.zeros(h),
        "eps_W2": glorot(rng, h, h), "eps_b2": np.zeros(h),
        "eps_W3": glorot(rng, h, latent_dim), "eps_b3": np.zeros(latent_dim),
    })
    return DenoiserParams(config, latent_dim, feature_dim, a)


# -- treatment encoder --------------------------------------------------------

def _mean_operator(treatment: TreatmentMatrix) -> np.ndarray:
    off = treatment.off_diagonal()
    deg = np.maximum(off.sum(axis=1, keepdims=True), 1.0)
    return off / deg


def _tau_forward(a: Params, prop: np.ndarray, x: np.ndarray):
    agg1 = x + prop @ x
    pre1 = agg1 @ a["tau_W1"] + a["tau_b1"]
    h1 = softplus(pre1)
    agg2 = h1 + prop @ h1
    pre2 = agg2 @ a["tau_W2"] + a["tau_b2"]
    h2 = softplus(pre2)
    pooled = h2.mean(axis=0)
    c = pooled @ a["tau_Wc"] + a["tau_bc"]
    return c, (prop, agg1, pre1, agg2, pre2, pooled)


def _tau_backward(a: Params, cache, d_c: np.ndarray, g: Params) -> None:
    prop, agg1, pre1, agg2, pre2, pooled = cache
    n = agg1.shape[0]
    g["tau_Wc"] += np.outer(pooled, d_c)
    g["tau_bc"] += d_c
    d_h2 = np.broadcast_to((a["tau_Wc"] @ d_c) / n, pre2.shape)
    d_pre2 = d_h2 * sigmoid(pre2)
    g["tau_W2"] += agg2.T @ d_pre2
    g["tau_b2"] += d_pre2.sum(axis=0)
    d_agg2 = d_pre2 @ a["tau_W2"].T
    d_h1 = d_agg2 + prop.T @ d_agg2
    d_pre1 = d_h1 * sigmoid(pre1)
    g["tau_W1"] += agg1.T @ d_pre1
    g["tau_b1"] += d_pre1.sum(axis=0)


def treatment_encode(params: DenoiserParams, treatment: TreatmentMatrix, graph: AttributedGraph) -> np.ndarray:
    """Conditioning vector from the treatment and non-sensitive features.

    Neighbour messages are averaged over the off-diagonal ones of the
    treatment. The sensitive attribute is never read.
    """
    if treatment.n != graph.n:
        raise ValueError(f"treatment is {treatment.n}x{treatment.n} for a {graph.n}-node graph")
    if graph.features.shape[1] != params.feature_dim:
        raise ValueError(f"expected {params.feature_dim} features, got {graph.features.shape[1]}")
    c, _ = _tau_forward(params.arrays, _mean_operator(treatment), graph.features)
    return c


# -- denoiser -----------------------------------------------------------------

def _eps_forward(a: Params, z_t: np.ndarray, temb: np.ndarray, cond: np.ndarray):
    inp = np.concatenate([z_t, temb, cond], axis=1)
    p1 = inp @ a["eps_W1"] + a["eps_b1"]
    h1 = softplus(p1)
    p2 = h1 @ a["eps_W2"] + a["eps_b2"]
    h2 = softplus(p2)
    out = h2 @ a["eps_W3"] + a["eps_b3"]
    return out, (inp, p1, h1, p2, h2)


def _eps_backward(a: Params, cache, d_out: np.ndarray, g: Params) -> np.ndarray:
    """Accumulate parameter grads; return the gradient w.r.t. the input."""
    inp, p1, h1, p2, h2 = cache
    g["eps_W3"] += h2.T @ d_out
    g["eps_b3"] += d_out.sum(axis=0)
    d_p2 = (d_out @ a["eps_W3"].T) * sigmoid(p2)
    g["eps_W2"] += h1.T @ d_p2
    g["eps_b2"] += d_p2.sum(axis=0)
    d_p1 = (d_p2 @ a["eps_W2"].T) * sigmoid(p1)
    g["eps_W1"] += inp.T @ d_p1
    g["eps_b1"] += d_p1.sum(axis=0)
    return d_p1 @ a["eps_W1"].T


def _time_embedding(params: DenoiserParams, t) -> np.ndarray:
    return sinusoidal_embedding(t, params.config.time_dim)


def denoise_predict(params: DenoiserParams, z_t, t, c) -> np.ndarray:
    """Predicted noise. Accepts a single latent or a batch with per-row steps."""
    z = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
    if z.shape[1] != params.latent_dim:
        raise ValueError(f"latent has width {z.shape[1]}, expected {params.latent_dim}")
    cond = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if cond.shape[1] != params.config.cond_dim:
        raise ValueError(f"conditioning has width {cond.shape[1]}, expected {params.config.cond_dim}")
    t = np.broadcast_to(np.asarray(t), (len(z),))
    cond = np.broadcast_to(cond, (len(z), cond.shape[1]))
    out, _ = _eps_forward(params.arrays, z, _time_embedding(params, t), cond)
    return out[0] if np.ndim(z_t) == 1 else out


def conditional_loss(params: DenoiserParams, schedule: NoiseSchedule, z0, c, t: int, noise) -> float:
    """Plain conditional noise-prediction loss ||noise - eps(z_t, t, c)||^2."""
    z_t = forward_sample(schedule, z0, t, noise)
    resid = np.asarray(noise) - denoise_predict(params, z_t, t, c)
    return float(np.sum(resid * resid))


@dataclass
class TrainingPair:
    z_factual: np.ndarray
    z_counterfactual: np.ndarray | None
    c_factual: np.ndarray
    c_counterfactual: np.ndarray | None


def make_training_pair(ae: AutoencoderParams, params: DenoiserParams, graph_f: AttributedGraph,
                       graph_cf: AttributedGraph | None, t_f: TreatmentMatrix,
                       t_cf: TreatmentMatrix | None) -> TrainingPair:
    """Encode both graphs (scaled posterior means) and both treatments."""
    z_cf = c_cf = None
    if graph_cf is not None and t_cf is not None:
        z_cf = encode(ae, graph_cf).mean / params.latent_scale
        c_cf = treatment_encode(params, t_cf, graph_f)
    return TrainingPair(encode(ae, graph_f).mean / params.latent_scale, z_cf,
                        treatment_encode(params, t_f, graph_f), c_cf)


def training_loss(params: DenoiserParams, schedule: NoiseSchedule, pair: TrainingPair, t: int,
                  noise_f, noise_cf) -> tuple[float, float, float]:
    """(gamma1 * L_f + gamma2 * L_cf, L_f, L_cf) for one training pair.

    With ``gamma2 == 0`` the counterfactual branch is not evaluated and
    ``L_cf`` is reported as NaN.
    """
    lf = conditional_loss(params, schedule, pair.z_factual, pair.c_factual, t, noise_f)
    total = params.gamma1 * lf
    lcf = float("nan")
    if params.gamma2 != 0:
        lcf = conditional_loss(params, schedule, pair.z_counterfactual, pair.c_counterfactual, t, noise_cf)
        total = total + params.gamma2 * lcf
    if not np.isfinite(total):
        raise DivergenceError("diffusion loss is non-finite")
    return total, lf, lcf


# -- batched loss with gradients ----------------------------------------------

@dataclass
class CorpusEntry:
    """One training sample. The counterfactual fields may be ``None`` when
    the model is trained with ``gamma2 == 0``."""

    graph_f: AttributedGraph
    graph_cf: AttributedGraph | None
    t_f: TreatmentMatrix
    t_cf: TreatmentMatrix | None


@dataclass
class _Batch:
    z_f: np.ndarray
    z_cf: np.ndarray | None
    x: list[np.ndarray]
    # per sample index into ``ops`` for each branch
    op_f: list[int]
    op_cf: list[int] | None
    ops: list[np.ndarray]
    op_x: list[int]


def _branch(params, a, schedule, z0, ops_idx, batch, tau_cache, t, noise, weight, g):
    abar = schedule.alpha_bar[t - 1]
    z_t = np.sqrt(abar)[:, None] * z0 + np.sqrt(1.0 - abar)[:, None] * noise
    cond = np.stack([tau_cache[k][0] for k in ops_idx])
    temb = _time_embedding(params, t)
    out, cache = _eps_forward(a, z_t, temb, cond)
    resid = out - noise
    per = np.sum(resid * resid, axis=1)
    loss = float(per.mean())
    if g is not None:
        d_out = weight * 2.0 * resid / len(z0)
        d_inp = _eps_backward(a, cache, d_out, g)
        d_cond = d_inp[:, -params.config.cond_dim:]
        for row, k in enumerate(ops_idx):
            tau_cache[k][2] += d_cond[row]
    return loss


def batch_loss_and_grads(params: DenoiserParams, schedule: NoiseSchedule, batch: _Batch,
                         t: np.ndarray, noise_f: np.ndarray, noise_cf: np.ndarray,
                         need_grads: bool = True, arrays: Params | None = None):
    """Combined loss over a batch (each branch averaged over samples) and
    gradients for both the denoiser and the treatment encoder."""
    a = params.arrays if arrays is None else arrays
    g1, g2 = params.gamma1, params.gamma2
    use_cf = g2 != 0
    needed = set(batch.op_f) | (set(batch.op_cf) if use_cf else set())
    tau_cache: dict[int, list] = {}
    for k in sorted(needed):
        c, cache = _tau_forward(a, batch.ops[k], batch.x[batch.op_x[k]])
        tau_cache[k] = [c, cache, np.zeros_like(c)]
    g = {k: np.zeros_like(v) for k, v in a.items()} if need_grads else None
    lf = _branch(params, a, schedule, batch.z_f, batch.op_f, batch, tau_cache, t, noise_f, g1, g)
    total = g1 * lf
    lcf = float("nan")
    if use_cf:
        lcf = _branch(params, a, schedule, batch.z_cf, batch.op_cf, batch, tau_cache, t, noise_cf, g2, g)
        total = total + g2 * lcf
    if need_grads:
        for k in sorted(needed):
            _tau_backward(a, tau_cache[k][1], tau_cache[k][2], g)
    return total, lf, lcf, g


def _build_batch(ae: AutoencoderParams, corpus: Sequence[CorpusEntry], use_cf: bool) -> _Batch:
    ops: list[np.ndarray] = []
    op_x: list[int] = []
    xs: list[np.ndarray] = []
    seen_t: dict[int, int] = {}
    seen_x: dict[int, int] = {}

    def op_index(t: TreatmentMatrix, graph: AttributedGraph) -> int:
        key_x = id(graph.features)
        if key_x not in seen_x:
            seen_x[key_x] = len(xs)
            xs.append(graph.features)
        key = (id(t), seen_x[key_x])
        if key not in seen_t:
            seen_t[key] = len(ops)
            ops.append(_mean_operator(t))
            op_x.append(seen_x[key_x])
        return seen_t[key]

    z_f = np.stack([encode(ae, e.graph_f).mean for e in corpus])
    op_f = [op_index(e.t_f, e.graph_f) for e in corpus]
    z_cf = op_cf = None
    if use_cf:
        if any(e.graph_cf is None or e.t_cf is None for e in corpus):
            raise ValueError("gamma2 > 0 needs counterfactual graphs and treatments")
        z_cf = np.stack([encode(ae, e.graph_cf).mean for e in corpus])
        op_cf = [op_index(e.t_cf, e.graph_f) for e in corpus]
    return _Batch(z_f, z_cf, xs, op_f, op_cf, ops, op_x)


def latent_scale(batch: _Batch) -> float:
    """Standard deviation of the training latents, so diffusion runs on
    roughly unit-scale inputs."""
    zs = batch.z_f if batch.z_cf is None else np.concatenate([batch.z_f, batch.z_cf])
    sd = float(np.std(zs))
    return sd if sd > 1e-12 else 1.0


def _draw(rng: np.random.Generator, steps: int, count: int, dim: int):
    t = rng.integers(1, steps + 1, size=count)
    noise_f = rng.standard_normal((count, dim))
    # always drawn so gamma2 = 0 leaves the stream unchanged
    noise_cf = rng.standard_normal((count, dim))
    return t, noise_f, noise_cf


def train_diffusion(ae: AutoencoderParams, config: DiffusionConfig | None,
                    corpus: Sequence[CorpusEntry]) -> DenoiserParams:
    """Jointly fit the denoiser and treatment encoder with the autoencoder
    frozen. Latents are posterior means; every epoch draws fresh steps and
    noises for the whole corpus and takes one Adam step."""
    config = config or DiffusionConfig()
    config.check()
    if not corpus:
        raise ValueError("corpus is empty")
    params = init_denoiser(config, ae.config.latent_dim, corpus[0].graph_f.features.shape[1])
    schedule = params.schedule()
    batch = _build_batch(ae, corpus, config.gamma2 != 0)
    params.latent_scale = latent_scale(batch)
    batch.z_f = batch.z_f / params.latent_scale
    if batch.z_cf is not None:
        batch.z_cf = batch.z_cf / params.latent_scale
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(params.arrays, lr=config.lr)
    trace: list[float] = []
    for epoch in range(config.epochs):
        t, nf, ncf = _draw(rng, config.steps, len(corpus), params.latent_dim)
        total, _, _, grads = batch_loss_and_grads(params, schedule, batch, t, nf, ncf)
        if not np.isfinite(total):
            raise DivergenceError(f"diffusion loss is non-finite at epoch {epoch}", epoch, trace)
        trace.append(total)
        opt.step(params.arrays, grads)
    params.loss_trace = trace
    params.trained = True
    return params


def sample_latent(params: DenoiserParams, schedule: NoiseSchedule, c, seed: int) -> np.ndarray:
    """Ancestral DDPM sampling with sigma_t = sqrt(beta_t), no noise at t = 1."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(params.latent_dim)
    for t in range(schedule.steps, 0, -1):
        beta, alpha, abar = schedule.at(t)
        eps = denoise_predict(params, z, t, c)
        z = (z - beta / np.sqrt(1.0 - abar) * eps) / np.sqrt(alpha)
        if t > 1:
            z = z + np.sqrt(beta) * rng.standard_normal(params.latent_dim)
    return z


def generate_fair_graph(ae: AutoencoderParams, params: DenoiserParams, schedule: NoiseSchedule | None,
                        graph: AttributedGraph, treatment: TreatmentMatrix,
                        target_edges: int | None = None, seed: int = 0) -> AttributedGraph:
    """Sample a structure conditioned on ``treatment`` and attach the input's
    node attributes unchanged. Keeps the ``target_edges`` highest logits
    (default: the input's edge count)."""
    if not params.trained:
        raise UntrainedModelError("diffusion parameters are untrained")
    schedule = schedule or params.schedule()
    c = treatment_encode(params, treatment, graph)
    z0 = sample_latent(params, schedule, c, seed) * params.latent_scale
    logits = decode_pairs(ae, z0, graph.n)
    if target_edges is None:
        target_edges = graph.num_edges
    return graph.with_adjacency(top_pairs(logits, graph.n, target_edges), name=f"{graph.name}-generated")
