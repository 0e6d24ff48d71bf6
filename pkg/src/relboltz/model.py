"""Parameter containers, energy functions and their gradients.

A triple (s, r, t) is scored by comparing the target embedding ``V[t]`` with
the source embedding ``C[s]`` pushed through the affine relation operator
``A[r] @ C[s] + b[r]``. Lower energy means a more probable triple.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from ._pykernels import NORM_FLOOR


class ConfigurationError(ValueError):
    """Shapes or indices inconsistent with the model parameters."""


class DegenerateInputError(ValueError):
    """A normalised energy hit a zero-norm vector."""


class EnergyKind(enum.IntEnum):
    DOT = 0
    COSINE = 1
    FROBENIUS_COSINE = 2

    @classmethod
    def parse(cls, value: "EnergyKind | str | int") -> "EnergyKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().upper().replace("-", "_")
            aliases = {"FROBENIUS": "FROBENIUS_COSINE", "COS": "COSINE"}
            try:
                return cls[aliases.get(key, key)]
            except KeyError:
                raise ConfigurationError(f"unknown energy kind {value!r}") from None
        return cls(int(value))


@dataclass
class RelationOperator:
    """Affine map c -> A c + b."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        d = self.b.shape[0]
        if self.A.shape != (d, d):
            raise ConfigurationError(f"operator matrix shape {self.A.shape} does not match offset length {d}")

    @property
    def dim(self) -> int:
        return self.b.shape[0]


def apply_relation(op: RelationOperator, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (op.dim,):
        raise ConfigurationError(f"vector of shape {c.shape} given to a {op.dim}-dimensional operator")
    return op.A @ c + op.b


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


@dataclass
class ModelParams:
    """Source embeddings ``C``, target embeddings ``V`` and the stacked relation
    operators ``A`` (shape (|R|, d, d)) and ``b`` (shape (|R|, d))."""

    C: np.ndarray
    V: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.C, self.V, self.A, self.b = _f64(self.C), _f64(self.V), _f64(self.A), _f64(self.b)
        if self.C.ndim != 2 or self.C.shape != self.V.shape:
            raise ConfigurationError(f"source/target tables differ: {self.C.shape} vs {self.V.shape}")
        n_rel, d = self.b.shape if self.b.ndim == 2 else (0, -1)
        if n_rel < 1:
            raise ConfigurationError("at least one relation operator is required")
        if d != self.C.shape[1] or self.A.shape != (n_rel, d, d):
            raise ConfigurationError(
                f"operator shapes A{self.A.shape} b{self.b.shape} incompatible with dimension {self.C.shape[1]}"
            )

    @classmethod
    def from_operators(cls, C, V, operators: list[RelationOperator]) -> "ModelParams":
        return cls(C, V, np.stack([op.A for op in operators]), np.stack([op.b for op in operators]))

    @property
    def n_words(self) -> int:
        return self.C.shape[0]

    @property
    def n_relations(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.C.shape[1]

    @property
    def operators(self) -> list[RelationOperator]:
        return [RelationOperator(self.A[r], self.b[r]) for r in range(self.n_relations)]

    def groups(self) -> dict[str, np.ndarray]:
        return {"C": self.C, "V": self.V, "A": self.A, "b": self.b}

    def copy(self) -> "ModelParams":
        return ModelParams(self.C.copy(), self.V.copy(), self.A.copy(), self.b.copy())

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(x, y) for x, y in zip(self.groups().values(), other.groups().values()))

    def check_finite(self) -> str | None:
        """Name of the first parameter group holding a non-finite entry, else None."""
        for name, arr in self.groups().items():
            if not np.all(np.isfinite(arr)):
                return name
        return None

    def check_indices(self, s, r, t):
        s, r, t = (np.asarray(x) for x in (s, r, t))
        for name, idx, n in (("source", s, self.n_words), ("relation", r, self.n_relations), ("target", t, self.n_words)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ConfigurationError(f"{name} index out of range [0, {n})")


def init_params(n_words: int, n_relations: int, dim: int, rng: np.random.Generator,
                operator_noise: float = 0.01) -> ModelParams:
    """Uniform(+-1/sqrt(d)) embeddings; operators start near the identity with zero offset."""
    bound = 1.0 / np.sqrt(dim)
    C = rng.uniform(-bound, bound, size=(n_words, dim))
    V = rng.uniform(-bound, bound, size=(n_words, dim))
    A = np.eye(dim)[None, :, :] + rng.normal(0.0, operator_noise, size=(n_relations, dim, dim))
    b = np.zeros((n_relations, dim))
    return ModelParams(C, V, A, b)


class Gradient:
    """Dense container shaped like :class:`ModelParams`."""

    __slots__ = ("C", "V", "A", "b")

    def __init__(self, C, V, A, b):
        self.C, self.V, self.A, self.b = C, V, A, b

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "Gradient":
        return cls(*(np.zeros_like(x) for x in params.groups().values()))

    def groups(self) -> dict[str, np.ndarray]:
        return {"C": self.C, "V": self.V, "A": self.A, "b": self.b}

    def zero(self) -> "Gradient":
        for x in self.groups().values():
            x.fill(0.0)
        return self

    def axpy(self, alpha: float, other: "Gradient") -> "Gradient":
        """In place: self += alpha * other."""
        for x, y in zip(self.groups().values(), other.groups().values()):
            x += alpha * y
        return self

    def copy(self) -> "Gradient":
        return Gradient(*(x.copy() for x in self.groups().values()))

    def scaled(self, alpha: float) -> "Gradient":
        return Gradient(*(alpha * x for x in self.groups().values()))

    def __add__(self, other: "Gradient") -> "Gradient":
        return self.copy().axpy(1.0, other)

    def __sub__(self, other: "Gradient") -> "Gradient":
        return self.copy().axpy(-1.0, other)

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.groups().values()])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def cosine(self, other: "Gradient") -> float:
        a, b = self.flat(), other.flat()
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _idx(x) -> np.ndarray:
    return np.ascontiguousarray(np.atleast_1d(x), dtype=np.int64)


def energies(params: ModelParams, kind, s, r, t) -> np.ndarray:
    """Vectorised energy of triples given as parallel index arrays."""
    s, r, t = _idx(s), _idx(r), _idx(t)
    return kernels.energies(params.C, params.V, params.A, params.b, int(EnergyKind.parse(kind)), s, r, t)


def accumulate_energy_grad(params: ModelParams, kind, s, r, t, weights, out: Gradient) -> Gradient:
    """out += sum_i weights[i] * dE(s[i], r[i], t[i]) / dTheta."""
    s, r, t = _idx(s), _idx(r), _idx(t)
    w = np.ascontiguousarray(np.broadcast_to(np.asarray(weights, dtype=np.float64), s.shape))
    kernels.accumulate_grad(params.C, params.V, params.A, params.b, int(EnergyKind.parse(kind)),
                            s, r, t, w, out.C, out.V, out.A, out.b)
    return out


def _check_degenerate(params: ModelParams, kind: EnergyKind, s: int, r: int, t: int):
    if kind == EnergyKind.DOT:
        return
    norms = {"target embedding": np.linalg.norm(params.V[t])}
    if kind == EnergyKind.COSINE:
        norms["transformed source"] = np.linalg.norm(params.A[r] @ params.C[s] + params.b[r])
    else:
        norms["source embedding"] = np.linalg.norm(params.C[s])
        norms["relation operator"] = np.sqrt(np.sum(params.A[r] ** 2) + np.sum(params.b[r] ** 2))
    for name, n in norms.items():
        if n <= NORM_FLOOR:
            raise DegenerateInputError(f"{name} has zero norm in triple ({s}, {r}, {t})")


def energy(params: ModelParams, kind, s: int, r: int, t: int, strict: bool = False) -> float:
    """Energy of one triple.

    Norms in the normalised kinds are floored at 1e-12, so a zero vector gives
    a finite value; pass ``strict=True`` to raise :class:`DegenerateInputError`
    instead.
    """
    kind = EnergyKind.parse(kind)
    params.check_indices(s, r, t)
    if strict:
        _check_degenerate(params, kind, s, r, t)
    return float(energies(params, kind, s, r, t)[0])


def energy_grad(params: ModelParams, kind, s: int, r: int, t: int, strict: bool = False) -> Gradient:
    kind = EnergyKind.parse(kind)
    params.check_indices(s, r, t)
    if strict:
        _check_degenerate(params, kind, s, r, t)
    return accumulate_energy_grad(params, kind, s, r, t, 1.0, Gradient.zeros_like(params))
