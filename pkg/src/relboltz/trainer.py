"""Stochastic maximum likelihood with persistent contrastive divergence.

All gradients here point uphill on the log-likelihood; updates add the Adam
step to the parameters.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable

import numpy as np

from .model import (
    ConfigurationError,
    EnergyKind,
    Gradient,
    ModelParams,
    accumulate_energy_grad,
    energies,
    init_params,
)
from .sampler import ChainPool, softmax_neg

logger = logging.getLogger(__name__)

UNOBSERVED = -1


class NonFiniteParameterError(FloatingPointError):
    def __init__(self, group: str, epoch: int, step: int):
        super().__init__(f"non-finite values in parameter group {group!r} at epoch {epoch}, step {step}")
        self.group = group


@dataclass(frozen=True)
class Triple:
    """One observation; ``r=None`` marks an unobserved relation."""

    s: int | None
    r: int | None
    t: int | None
    weight: float = 1.0


@dataclass
class TripleBatch:
    """Parallel arrays of triples; ``UNOBSERVED`` (-1) marks a missing entry."""

    s: np.ndarray
    r: np.ndarray
    t: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.s, self.r, self.t = (np.asarray(x, dtype=np.int64) for x in (self.s, self.r, self.t))
        self.w = np.broadcast_to(np.asarray(self.w, dtype=np.float64), self.s.shape).copy()
        if not (self.s.shape == self.r.shape == self.t.shape):
            raise ConfigurationError("triple columns differ in length")
        if np.any(self.w <= 0):
            raise ConfigurationError("triple weights must be positive")

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]) -> "TripleBatch":
        rows = [(UNOBSERVED if x.s is None else x.s, UNOBSERVED if x.r is None else x.r,
                 UNOBSERVED if x.t is None else x.t, x.weight) for x in triples]
        if not rows:
            return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0))
        s, r, t, w = zip(*rows)
        return cls(s, r, t, w)

    @classmethod
    def coerce(cls, batch) -> "TripleBatch":
        return batch if isinstance(batch, cls) else cls.from_triples(batch)

    @classmethod
    def concat(cls, parts: list["TripleBatch"]) -> "TripleBatch":
        return cls(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("s", "r", "t", "w")))

    def to_triples(self) -> list[Triple]:
        def opt(x):
            return None if x == UNOBSERVED else int(x)

        return [Triple(opt(a), opt(b), opt(c), float(w)) for a, b, c, w in zip(self.s, self.r, self.t, self.w)]

    def __len__(self) -> int:
        return len(self.s)

    def __getitem__(self, idx) -> "TripleBatch":
        return TripleBatch(self.s[idx], self.r[idx], self.t[idx], self.w[idx])

    def observed_mask(self) -> np.ndarray:
        return (self.s >= 0) & (self.r >= 0) & (self.t >= 0)

    def with_weight(self, weight: float) -> "TripleBatch":
        return TripleBatch(self.s, self.r, self.t, self.w * weight)


@dataclass
class TrainConfig:
    dim: int = 100
    batch_size: int = 100
    n_chains: int = 1
    gibbs_rounds: int = 3
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    beta1_decay: float = 1.0 - 1e-8
    l2_g: float = 0.0
    l2_all: float = 0.0
    epochs: int = 1
    seed: int = 0
    energy: str = "cosine"
    operator_init_noise: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("dim", "batch_size", "n_chains", "gibbs_rounds"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigurationError("learning_rate and epsilon must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1)")
        if not 0.0 < self.beta1_decay <= 1.0:
            raise ConfigurationError("beta1_decay must lie in (0, 1]")
        if self.operator_init_noise < 0:
            raise ConfigurationError("operator_init_noise must be non-negative")
        if self.l2_g < 0 or self.l2_all < 0:
            raise ConfigurationError("l2 weights must be non-negative")
        EnergyKind.parse(self.energy)

    @property
    def kind(self) -> EnergyKind:
        return EnergyKind.parse(self.energy)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def expand_completions(params: ModelParams, kind, batch: TripleBatch):
    """Rows (s, r, t, posterior weight, energy) covering every triple in ``batch``.

    Observed triples contribute one row with weight 1; a triple missing one
    entry contributes one row per completion, weighted by the conditional
    probability of that completion given the observed entries. Also returns
    the originating batch position of each row.
    """
    missing = (batch.s < 0).astype(int) + (batch.r < 0) + (batch.t < 0)
    if np.any(missing > 1):
        raise ConfigurationError("a triple may have at most one unobserved entry")
    obs = missing == 0
    pos = [np.flatnonzero(obs)]
    s, r, t = [batch.s[obs]], [batch.r[obs]], [batch.t[obs]]
    for col, size in ((0, params.n_words), (1, params.n_relations), (2, params.n_words)):
        cols = (batch.s, batch.r, batch.t)
        rows = np.flatnonzero(cols[col] < 0)
        if rows.size == 0:
            continue
        parts = [np.repeat(c[rows], size) for c in cols]
        parts[col] = np.tile(np.arange(size, dtype=np.int64), rows.size)
        pos.append(np.repeat(rows, size))
        s.append(parts[0])
        r.append(parts[1])
        t.append(parts[2])
    s, r, t, pos = (np.concatenate(x) for x in (s, r, t, pos))
    params.check_indices(s, r, t)
    E = energies(params, kind, s, r, t)
    P = np.ones_like(E)
    offset = int(obs.sum())
    for col, size in ((0, params.n_words), (1, params.n_relations), (2, params.n_words)):
        n = int(np.sum((batch.s, batch.r, batch.t)[col] < 0)) * size
        if n:
            block = slice(offset, offset + n)
            P[block] = softmax_neg(E[block].reshape(-1, size)).ravel()
            offset += n
    return s, r, t, P, E, pos


def _data_term(params: ModelParams, kind, batch: TripleBatch, out: Gradient):
    s, r, t, P, E, pos = expand_completions(params, kind, batch)
    scale = batch.w[pos] * P / len(batch)
    accumulate_energy_grad(params, kind, s, r, t, scale, out)
    return float(np.sum(P * E) / len(batch))


def data_term_grad(params: ModelParams, kind, batch) -> Gradient:
    """(1/B) sum_b w_b dE_b/dTheta, with missing entries replaced by their
    posterior-weighted completions."""
    batch = TripleBatch.coerce(batch)
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    out = Gradient.zeros_like(params)
    _data_term(params, kind, batch, out)
    return out


def model_term_grad(params: ModelParams, kind, pool: ChainPool) -> Gradient:
    """(1/M) sum_m dE(chain_m)/dTheta at the chains' current states."""
    st = pool.states
    return accumulate_energy_grad(params, kind, st[:, 0], st[:, 1], st[:, 2], 1.0 / len(st),
                                  Gradient.zeros_like(params))


def pcd_terms(params: ModelParams, kind, batch, pool: ChainPool, gibbs_rounds: int):
    """Advance the chains, then return (model term, data term, mean data energy)."""
    batch = TripleBatch.coerce(batch)
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    pool.sweep(params, kind, gibbs_rounds)
    model = model_term_grad(params, kind, pool)
    data = Gradient.zeros_like(params)
    mean_energy = _data_term(params, kind, batch, data)
    return model, data, mean_energy


def pcd_gradient(params: ModelParams, kind, batch, pool: ChainPool, gibbs_rounds: int) -> Gradient:
    """Log-likelihood ascent direction estimated from the batch and the chains."""
    model, data, _ = pcd_terms(params, kind, batch, pool, gibbs_rounds)
    return model.axpy(-1.0, data)


def l2_grad(params: ModelParams, l2_g: float = 0.0, l2_all: float = 0.0) -> Gradient:
    """Gradient of -(l2_g/2)(|A|^2+|b|^2) - (l2_all/2)|Theta|^2."""
    lam_op = l2_g + l2_all
    return Gradient(-l2_all * params.C, -l2_all * params.V, -lam_op * params.A, -lam_op * params.b)


@dataclass
class AdamState:
    m: Gradient
    v: Gradient
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(Gradient.zeros_like(params), Gradient.zeros_like(params), 0)


def adam_update(state: AdamState, grad: Gradient, lr: float = 0.001, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8, beta1_decay: float = 1.0 - 1e-8) -> Gradient:
    """Advance ``state`` by one step and return the delta to add to the parameters.

    The first-moment rate decays as beta1 * beta1_decay**(t-1).
    """
    state.t += 1
    b1t = beta1 * beta1_decay ** (state.t - 1)
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    delta = []
    # overflow surfaces as non-finite parameters, which the trainer reports
    with np.errstate(over="ignore", invalid="ignore"):
        for m, v, g in zip(state.m.groups().values(), state.v.groups().values(), grad.groups().values()):
            m *= b1t
            m += (1.0 - b1t) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            delta.append(lr * (m / c1) / (np.sqrt(v / c2) + eps))
    return Gradient(*delta)


def _apply(params: ModelParams, delta: Gradient):
    for p, d in zip(params.groups().values(), delta.groups().values()):
        p += d


@dataclass
class EpochRecord:
    epoch: int
    mean_energy: float
    data_grad_norm: float
    model_grad_norm: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class Trainer:
    """Holds everything needed to continue training exactly where it stopped:
    parameters, Adam moments, persistent chains and the shuffling stream."""

    def __init__(self, params: ModelParams, data: TripleBatch, config: TrainConfig,
                 pool: ChainPool | None = None, adam: AdamState | None = None,
                 rng: np.random.Generator | None = None, epoch: int = 0):
        if len(data) == 0:
            raise ConfigurationError("training data is empty")
        params.check_indices(data.s[data.s >= 0], data.r[data.r >= 0], data.t[data.t >= 0])
        self.params = params
        self.data = data
        self.config = config
        self.kind = config.kind
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.pool = pool if pool is not None else ChainPool.from_data(
            data.s, data.r, data.t, config.n_chains, self.rng, params.n_words, params.n_relations)
        self.adam = adam if adam is not None else AdamState.zeros_like(params)
        self.epoch = epoch
        self.log: list[EpochRecord] = []

    def step(self, batch: TripleBatch) -> tuple[float, float, float]:
        cfg = self.config
        model, data, mean_energy = pcd_terms(self.params, self.kind, batch, self.pool, cfg.gibbs_rounds)
        grad = model.copy().axpy(-1.0, data)
        if cfg.l2_g or cfg.l2_all:
            grad.axpy(1.0, l2_grad(self.params, cfg.l2_g, cfg.l2_all))
        delta = adam_update(self.adam, grad, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.beta1_decay)
        _apply(self.params, delta)
        return mean_energy, data.norm(), model.norm()

    def run_epoch(self) -> EpochRecord:
        start = time.perf_counter()
        order = self.rng.permutation(len(self.data))
        B = self.config.batch_size
        stats = []
        for k, lo in enumerate(range(0, len(order), B)):
            stats.append(self.step(self.data[order[lo:lo + B]]))
            bad = self.params.check_finite()
            if bad is not None:
                raise NonFiniteParameterError(bad, self.epoch + 1, k)
        self.epoch += 1
        mean = np.mean(stats, axis=0)
        rec = EpochRecord(self.epoch, float(mean[0]), float(mean[1]), float(mean[2]),
                          time.perf_counter() - start)
        self.log.append(rec)
        logger.info("epoch %d mean energy %.4f", rec.epoch, rec.mean_energy)
        return rec

    def fit(self, epochs: int | None = None, callback: Callable[["Trainer", EpochRecord], None] | None = None):
        for _ in range(self.config.epochs if epochs is None else epochs):
            rec = self.run_epoch()
            if callback is not None:
                callback(self, rec)
        return self.params, self.log


def train(params0: ModelParams | None, dataset, config: TrainConfig, n_words: int | None = None,
          n_relations: int | None = None, callback=None) -> tuple[ModelParams, list[EpochRecord]]:
    """Train from ``params0`` (copied; drawn from ``config.seed`` when None)."""
    data = TripleBatch.coerce(dataset)
    rng = np.random.default_rng(config.seed)
    if params0 is None:
        if n_words is None or n_relations is None:
            raise ConfigurationError("n_words and n_relations are required without initial parameters")
        params0 = init_params(n_words, n_relations, config.dim, rng, config.operator_init_noise)
    elif params0.dim != config.dim:
        raise ConfigurationError(f"initial parameters have dimension {params0.dim}, config says {config.dim}")
    trainer = Trainer(params0.copy(), data, config, rng=rng)
    return trainer.fit(callback=callback)


__all__ = [
    "UNOBSERVED", "AdamState", "EpochRecord", "NonFiniteParameterError", "TrainConfig", "Trainer",
    "Triple", "TripleBatch", "adam_update", "data_term_grad", "expand_completions", "l2_grad",
    "model_term_grad", "pcd_gradient", "pcd_terms", "train",
]
