"""Gibbs sampling over (S, R, T) and brute-force oracles for small models."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._backend import kernels
from ._pykernels import NORM_FLOOR
from .model import ConfigurationError, EnergyKind, Gradient, ModelParams, accumulate_energy_grad, energies

MAX_STATES = 10**6


class StateSpaceTooLarge(RuntimeError):
    """Enumeration oracle refused: |V|^2 |R| exceeds the guard."""


class Axis(str, enum.Enum):
    S = "S"
    R = "R"
    T = "T"


@dataclass(frozen=True)
class ChainState:
    s: int
    r: int
    t: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.s, self.r, self.t)


def completion_energies(params: ModelParams, kind, axis, s=None, r=None, t=None) -> np.ndarray:
    """Energies of every completion of a triple missing ``axis``."""
    axis = Axis(axis)
    if axis is Axis.R:
        n = params.n_relations
        idx = (np.full(n, s), np.arange(n), np.full(n, t))
    elif axis is Axis.S:
        n = params.n_words
        idx = (np.arange(n), np.full(n, r), np.full(n, t))
    else:
        n = params.n_words
        idx = (np.full(n, s), np.full(n, r), np.arange(n))
    fixed = [x for ax, x in (("S", s), ("R", r), ("T", t)) if ax != axis.value]
    if any(x is None for x in fixed):
        raise ConfigurationError(f"conditional over {axis.value} needs the other two indices fixed")
    params.check_indices(*idx)
    return energies(params, kind, *idx)


def softmax_neg(e: np.ndarray) -> np.ndarray:
    """exp(-e) / sum exp(-e), with max-subtraction."""
    z = -(e - e.min(axis=-1, keepdims=True))
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def conditional_distribution(params: ModelParams, kind, axis, s=None, r=None, t=None) -> np.ndarray:
    """P(axis | other two) as a probability vector over the axis' support."""
    return softmax_neg(completion_energies(params, kind, axis, s=s, r=r, t=t))


def gibbs_sweep(params: ModelParams, kind, chain: ChainState, rng: np.random.Generator) -> ChainState:
    """Resample S | r,t, then R | s,t, then T | s,r."""
    states = np.array([chain.as_tuple()], dtype=np.int64)
    params.check_indices(*states[0])
    uniforms = rng.random((1, 1, 3))
    kernels.gibbs(params.C, params.V, params.A, params.b, int(EnergyKind.parse(kind)), states, uniforms, None)
    return ChainState(*(int(x) for x in states[0]))


class ChainPool:
    """M independent persistent chains, each with its own random stream."""

    def __init__(self, states, rngs: list[np.random.Generator]):
        self.states = np.ascontiguousarray(np.asarray(states, dtype=np.int64).reshape(-1, 3))
        if len(self.states) < 1:
            raise ConfigurationError("a chain pool needs at least one chain")
        if len(rngs) != len(self.states):
            raise ConfigurationError("one random stream per chain required")
        self.rngs = list(rngs)

    @classmethod
    def from_seed(cls, states, seed) -> "ChainPool":
        states = np.asarray(states, dtype=np.int64).reshape(-1, 3)
        children = np.random.SeedSequence(seed).spawn(len(states))
        return cls(states, [np.random.default_rng(c) for c in children])

    @classmethod
    def from_data(cls, s, r, t, n_chains: int, rng: np.random.Generator,
                  n_words: int, n_relations: int) -> "ChainPool":
        """Start each chain at a uniformly drawn training example.

        Unobserved entries (negative indices) are filled uniformly at random.
        """
        pick = rng.integers(0, len(s), size=n_chains)
        states = np.stack([np.asarray(s)[pick], np.asarray(r)[pick], np.asarray(t)[pick]], axis=1).astype(np.int64)
        for col, hi in ((0, n_words), (1, n_relations), (2, n_words)):
            miss = states[:, col] < 0
            states[miss, col] = rng.integers(0, hi, size=int(miss.sum()))
        return cls.from_seed(states, int(rng.integers(0, 2**63)))

    def __len__(self) -> int:
        return len(self.states)

    @property
    def chains(self) -> list[ChainState]:
        return [ChainState(*(int(x) for x in row)) for row in self.states]

    def sweep(self, params: ModelParams, kind, rounds: int, record: bool = False):
        """Advance every chain by ``rounds`` sweeps; optionally return the
        (rounds, M, 3) trace of visited states."""
        M = len(self.states)
        if rounds < 0:
            raise ConfigurationError("rounds must be non-negative")
        uniforms = np.empty((rounds, M, 3))
        for m, g in enumerate(self.rngs):
            uniforms[:, m, :] = g.random((rounds, 3))
        trace = np.empty((rounds, M, 3), dtype=np.int64) if record else None
        kernels.gibbs(params.C, params.V, params.A, params.b, int(EnergyKind.parse(kind)),
                      self.states, uniforms, trace)
        return trace

    def rng_states(self) -> list[dict]:
        return [g.bit_generator.state for g in self.rngs]

    @classmethod
    def restore(cls, states, rng_states: list[dict]) -> "ChainPool":
        rngs = []
        for st in rng_states:
            bg = getattr(np.random, st["bit_generator"])()
            bg.state = st
            rngs.append(np.random.Generator(bg))
        return cls(states, rngs)


def _guard(params: ModelParams, max_states: int):
    n = params.n_words**2 * params.n_relations
    if n > max_states:
        raise StateSpaceTooLarge(f"{n} states exceed the enumeration guard of {max_states}")


def exact_energy_table(params: ModelParams, kind, max_states: int = MAX_STATES) -> np.ndarray:
    """Energies of every triple as an (|V|, |R|, |V|) array, by dense enumeration."""
    _guard(params, max_states)
    kind = EnergyKind.parse(kind)
    G = np.einsum("rij,sj->rsi", params.A, params.C) + params.b[:, None, :]
    dot = np.einsum("rsi,ti->rst", G, params.V)
    if kind == EnergyKind.DOT:
        E = -dot
    else:
        nv = np.maximum(np.linalg.norm(params.V, axis=1), NORM_FLOOR)
        if kind == EnergyKind.COSINE:
            ng = np.maximum(np.linalg.norm(G, axis=2), NORM_FLOOR)
            E = -dot / (ng[:, :, None] * nv[None, None, :])
        else:
            nc = np.maximum(np.linalg.norm(params.C, axis=1), NORM_FLOOR)
            nf = np.sqrt(np.sum(params.A**2, axis=(1, 2)) + np.sum(params.b**2, axis=1))
            nf = np.maximum(nf, NORM_FLOOR)
            E = -dot / (nf[:, None, None] * nc[None, :, None] * nv[None, None, :])
    return np.transpose(E, (1, 0, 2))


def exact_log_partition(params: ModelParams, kind, max_states: int = MAX_STATES) -> float:
    return float(logsumexp(-exact_energy_table(params, kind, max_states)))


def exact_joint(params: ModelParams, kind, max_states: int = MAX_STATES) -> np.ndarray:
    """P(s, r, t) for every triple, shape (|V|, |R|, |V|)."""
    E = exact_energy_table(params, kind, max_states)
    return np.exp(-E - logsumexp(-E))


def exact_log_likelihood(params: ModelParams, kind, s, r, t, weights=None) -> float:
    """Mean (optionally weighted) log P of fully observed triples."""
    E = exact_energy_table(params, kind)
    logp = -E[np.asarray(s), np.asarray(r), np.asarray(t)] - logsumexp(-E)
    return float(np.average(logp, weights=weights))


def exact_model_expectation_grad(params: ModelParams, kind, max_states: int = MAX_STATES) -> Gradient:
    """sum over all triples of P(s, r, t) * dE(s, r, t)/dTheta."""
    P = exact_joint(params, kind, max_states)
    s, r, t = (x.ravel() for x in np.indices(P.shape))
    return accumulate_energy_grad(params, kind, s, r, t, P.ravel(), Gradient.zeros_like(params))
