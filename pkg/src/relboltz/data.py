"""Vocabulary, triple files, corpus co-occurrences, checkpoints and embedding export."""

from __future__ import annotations

import io
import json
import re
import string
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .model import ModelParams
from .sampler import ChainPool
from .trainer import UNOBSERVED, AdamState, Gradient, Triple, TripleBatch

UNOBSERVED_TOKEN = "?"
SENSE_PATTERN = r"(?:_+\d+)+$"
MAGIC = b"RBLT"
CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input record."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


@dataclass
class Vocabulary:
    words: list[str]
    relations: list[str]
    word_ids: dict[str, int] = field(init=False, repr=False)
    relation_ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.word_ids = {w: i for i, w in enumerate(self.words)}
        self.relation_ids = {r: i for i, r in enumerate(self.relations)}
        if len(self.word_ids) != len(self.words) or len(self.relation_ids) != len(self.relations):
            raise ValueError("vocabulary entries must be unique")

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def word(self, token: str) -> int:
        return self.word_ids[token]

    def relation(self, name: str) -> int:
        return self.relation_ids[name]

    def __contains__(self, token: str) -> bool:
        return token in self.word_ids

    def to_json(self) -> str:
        return json.dumps({"words": self.words, "relations": self.relations})

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        d = json.loads(text)
        return cls(d["words"], d["relations"])

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _iter_records(path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4) or not all(p.strip() for p in parts[:3]):
                raise DataFormatError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(parts)}")
            yield lineno, parts


def build_vocabulary(triple_files: Iterable = (), token_streams: Iterable[Iterable[str]] = (),
                     min_count: int = 1, extra_relations: Iterable[str] = ()) -> Vocabulary:
    """Collect words and relation names.

    Ids follow sorted token order so identical inputs always give identical
    ids. Corpus tokens occurring fewer than ``min_count`` times are dropped;
    words from triple files are always kept.
    """
    words: set[str] = set()
    relations: set[str] = set(extra_relations)
    seen_any = False
    for path in triple_files:
        for _, parts in _iter_records(path):
            seen_any = True
            words.add(parts[0])
            words.add(parts[2])
            if parts[1] != UNOBSERVED_TOKEN:
                relations.add(parts[1])
    counts: Counter = Counter()
    for stream in token_streams:
        for tok in stream:
            seen_any = True
            counts[tok] += 1
    words.update(tok for tok, n in counts.items() if n >= min_count)
    if not seen_any or not words:
        raise ValueError("cannot build a vocabulary from empty input")
    if not relations:
        raise ValueError("no relation names found; pass extra_relations for corpus-only vocabularies")
    return Vocabulary(sorted(words), sorted(relations))


def strip_sense_ids(token: str, pattern: str = SENSE_PATTERN) -> str:
    """Remove trailing sense markers such as ``_1`` or ``__2``: ``bank_1`` -> ``bank``."""
    stripped = re.sub(pattern, "", token)
    return stripped or token


def load_triples(path, vocab: Vocabulary, weight: float = 1.0) -> TripleBatch:
    """Read a ``source<TAB>relation<TAB>target[<TAB>weight]`` file.

    ``?`` in the relation column marks an unobserved relation. The optional
    per-line weight is multiplied by ``weight``.
    """
    s, r, t, w = [], [], [], []
    for lineno, parts in _iter_records(path):
        try:
            si = vocab.word(parts[0])
            ti = vocab.word(parts[2])
            ri = UNOBSERVED if parts[1] == UNOBSERVED_TOKEN else vocab.relation(parts[1])
        except KeyError as exc:
            raise DataFormatError(f"{path}:{lineno}: unknown token {exc.args[0]!r}") from None
        wi = 1.0
        if len(parts) == 4:
            try:
                wi = float(parts[3])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad weight {parts[3]!r}") from None
            if not np.isfinite(wi) or wi <= 0:
                raise DataFormatError(f"{path}:{lineno}: weight must be positive and finite")
        s.append(si)
        r.append(ri)
        t.append(ti)
        w.append(wi * weight)
    return TripleBatch(s, r, t, w)


def write_triples(path, triples: Iterable[Triple], vocab: Vocabulary):
    with open(path, "w", encoding="utf-8") as fh:
        for x in triples:
            rel = UNOBSERVED_TOKEN if x.r is None else vocab.relations[x.r]
            line = f"{vocab.words[x.s]}\t{rel}\t{vocab.words[x.t]}"
            if x.weight != 1.0:
                line += f"\t{x.weight!r}"
            fh.write(line + "\n")


_EDGE_PUNCT = string.punctuation + "“”‘’"


def tokenize(line: str, vocab: Vocabulary | None = None, joiner: str = "_") -> list[str]:
    """Lowercase, whitespace-split, strip edge punctuation, then greedily merge
    adjacent pairs that form a vocabulary entry (e.g. ``ice cream`` -> ``ice_cream``)."""
    toks = [w.strip(_EDGE_PUNCT).lower() for w in line.split()]
    toks = [w for w in toks if w]
    if vocab is None:
        return toks
    out = []
    i = 0
    while i < len(toks):
        if i + 1 < len(toks):
            pair = toks[i] + joiner + toks[i + 1]
            if pair in vocab:
                out.append(pair)
                i += 2
                continue
        out.append(toks[i])
        i += 1
    return out


def extract_cooccurrences(sentences: Iterable[list[str]], window: int, vocab: Vocabulary,
                          rel: int) -> Iterator[Triple]:
    """Yield (w_i, rel, w_j) and (w_j, rel, w_i) for in-vocabulary tokens at
    positions i < j <= i + window of the same sentence.

    Out-of-vocabulary tokens keep their positions but emit nothing.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    for sent in sentences:
        ids = [vocab.word_ids.get(tok) for tok in sent]
        for i, a in enumerate(ids):
            if a is None:
                continue
            for j in range(i + 1, min(i + window, len(ids) - 1) + 1):
                b = ids[j]
                if b is None:
                    continue
                yield Triple(a, rel, b)
                yield Triple(b, rel, a)


def export_embeddings(params: ModelParams, vocab: Vocabulary, which: str, path):
    """Write ``|V| d`` then ``token x_1 ... x_d`` per word, 17 significant digits."""
    if which not in ("source", "target"):
        raise ValueError("which must be 'source' or 'target'")
    table = params.C if which == "source" else params.V
    if table.shape[0] != vocab.n_words:
        raise ValueError("vocabulary size does not match the embedding table")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.shape[0]} {table.shape[1]}\n")
        for tok, row in zip(vocab.words, table):
            fh.write(tok + " " + " ".join(f"{x:.17g}" for x in row) + "\n")


def load_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        n, d = (int(x) for x in fh.readline().split())
        words, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            words.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    arr = np.array(rows, dtype=np.float64).reshape(n, d)
    return words, arr


# Checkpoint layout (little-endian):
#   b"RBLT" | u32 version | u32 n_arrays
#   per array: u16 name length | name (utf-8) | u8 ndim | u64 dims... | f64 data
#   u64 meta length | meta JSON (utf-8)
# Integer arrays (chain states, step counter) are stored as exactly
# representable float64.

def _write_array(fh, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _read_array(fh) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, n).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return name, data


def save_checkpoint(path, params: ModelParams, adam: AdamState | None = None,
                    pool: ChainPool | None = None, meta: dict | None = None):
    arrays = {f"param.{k}": v for k, v in params.groups().items()}
    meta = dict(meta or {})
    if adam is not None:
        arrays.update({f"adam.m.{k}": v for k, v in adam.m.groups().items()})
        arrays.update({f"adam.v.{k}": v for k, v in adam.v.groups().items()})
        arrays["adam.t"] = np.array([adam.t], dtype=np.float64)
    if pool is not None:
        arrays["chains"] = pool.states.astype(np.float64)
        meta["chain_rng"] = pool.rng_states()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
    for name, arr in arrays.items():
        _write_array(buf, name, np.asarray(arr))
    raw = json.dumps(meta).encode("utf-8")
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState | None
    pool: ChainPool | None
    meta: dict


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, n_arrays = struct.unpack("<II", _read_exact(fh, 8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        arrays = dict(_read_array(fh) for _ in range(n_arrays))
        (n,) = struct.unpack("<Q", _read_exact(fh, 8))
        meta = json.loads(_read_exact(fh, n).decode("utf-8"))
    try:
        params = ModelParams(*(arrays[f"param.{k}"] for k in "CVAb"))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc.args[0]}") from None
    adam = None
    if "adam.t" in arrays:
        adam = AdamState(Gradient(*(arrays[f"adam.m.{k}"] for k in "CVAb")),
                         Gradient(*(arrays[f"adam.v.{k}"] for k in "CVAb")),
                         int(arrays["adam.t"][0]))
    pool = None
    if "chains" in arrays:
        pool = ChainPool.restore(arrays["chains"].astype(np.int64), meta.pop("chain_rng"))
    return Checkpoint(params, adam, pool, meta)
