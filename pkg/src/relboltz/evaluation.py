"""Triple classification: corruption, energy scoring, per-relation thresholds,
accuracy and AUROC. Also the planted-model generator and the exact-vs-chain
gradient check used as desk-scale stand-ins for the real datasets."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .model import ConfigurationError, EnergyKind, Gradient, ModelParams, accumulate_energy_grad, energies
from .sampler import ChainPool, exact_joint, exact_model_expectation_grad, _guard, MAX_STATES
from .trainer import Triple, TripleBatch


class NoValidCorruption(RuntimeError):
    pass


def corrupt_target(triple: Triple, n_words: int, known: set, rng: np.random.Generator,
                   max_tries: int = 64) -> Triple:
    """Replace the target by a uniformly drawn word so that the result is
    neither the original nor a known true triple."""
    s, r, t = triple.s, triple.r, triple.t
    if n_words < 2:
        raise NoValidCorruption("need at least two words to corrupt a target")
    for _ in range(max_tries):
        cand = int(rng.integers(n_words))
        if cand != t and (s, r, cand) not in known:
            return Triple(s, r, cand, triple.weight)
    # rejection keeps failing: enumerate the admissible set instead (still uniform)
    admissible = [x for x in range(n_words) if x != t and (s, r, x) not in known]
    if not admissible:
        raise NoValidCorruption(f"every target for ({s}, {r}, *) is a known triple")
    return Triple(s, r, admissible[int(rng.integers(len(admissible)))], triple.weight)


def known_set(*batches: TripleBatch) -> set:
    out = set()
    for b in batches:
        out.update(zip(b.s.tolist(), b.r.tolist(), b.t.tolist()))
    return out


def corrupt_batch(batch: TripleBatch, n_words: int, known: set, rng: np.random.Generator) -> TripleBatch:
    return TripleBatch.from_triples(corrupt_target(x, n_words, known, rng) for x in batch.to_triples())


@dataclass
class ScoredTriple:
    s: int
    r: int
    t: int
    score: float
    label: bool


def score_triples(params: ModelParams, kind, batch: TripleBatch, label: bool) -> list[ScoredTriple]:
    e = energies(params, kind, batch.s, batch.r, batch.t)
    return [ScoredTriple(int(a), int(b), int(c), float(x), label)
            for a, b, c, x in zip(batch.s, batch.r, batch.t, e)]


def _arrays(scored: list[ScoredTriple]):
    r = np.array([x.r for x in scored], dtype=np.int64)
    score = np.array([x.score for x in scored], dtype=np.float64)
    label = np.array([x.label for x in scored], dtype=bool)
    if not np.all(np.isfinite(score)):
        raise ValueError("scores must be finite")
    return r, score, label


def best_threshold(score: np.ndarray, label: np.ndarray) -> tuple[float, float]:
    """Exact accuracy maximiser of "true iff score < threshold" over midpoints
    of sorted distinct scores (plus one point either side); lowest wins ties."""
    u = np.unique(score)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    pos = np.sort(score[label])
    neg = np.sort(score[~label])
    correct = np.searchsorted(pos, cands, side="left") + (len(neg) - np.searchsorted(neg, cands, side="left"))
    k = int(np.argmax(correct))
    return float(cands[k]), float(correct[k] / len(score))


def fit_thresholds(validation: list[ScoredTriple]) -> dict[int, float]:
    r, score, label = _arrays(validation)
    out = {}
    for rel in np.unique(r):
        m = r == rel
        if label[m].all() or not label[m].any():
            warnings.warn(f"relation {rel} has one-class validation data; predicting all true", stacklevel=2)
            out[int(rel)] = float("inf")
            continue
        out[int(rel)] = best_threshold(score[m], label[m])[0]
    return out


def auroc(score: np.ndarray, label: np.ndarray) -> float:
    """P(true triple has lower energy than corrupted one), ties counted 1/2."""
    n_pos = int(label.sum())
    n_neg = len(label) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(score)
    return float((ranks[~label].sum() - n_neg * (n_neg + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalReport:
    thresholds: dict[int, float]
    accuracy: float
    auroc: float
    per_relation_accuracy: dict[int, float]
    per_relation_auroc: dict[int, float]
    counts: dict[int, dict[str, int]]
    relation_names: list[str] | None = field(default=None)

    def _name(self, r: int) -> str:
        return self.relation_names[r] if self.relation_names else str(r)

    def to_records(self) -> list[dict]:
        recs = [{"relation": self._name(r), "threshold": self.thresholds[r],
                 "accuracy": self.per_relation_accuracy[r], "auroc": self.per_relation_auroc[r],
                 **self.counts[r]} for r in sorted(self.per_relation_accuracy)]
        n_pos = sum(c["n_true"] for c in self.counts.values())
        n_neg = sum(c["n_corrupted"] for c in self.counts.values())
        recs.append({"relation": "ALL", "accuracy": self.accuracy, "auroc": self.auroc,
                     "n_true": n_pos, "n_corrupted": n_neg})
        return recs

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.to_records())

    def to_table(self) -> str:
        lines = [f"{'relation':<24} {'threshold':>10} {'accuracy':>9} {'auroc':>7} {'n_true':>7} {'n_corr':>7}"]
        for rec in self.to_records():
            thr = rec.get("threshold")
            thr_s = "" if thr is None else f"{thr:10.4f}"
            lines.append(f"{rec['relation']:<24} {thr_s:>10} {rec['accuracy']:9.4f} {rec['auroc']:7.4f} "
                         f"{rec['n_true']:7d} {rec['n_corrupted']:7d}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return asdict(self)


def classify_and_report(test: list[ScoredTriple], thresholds: dict[int, float],
                        relation_names: list[str] | None = None) -> EvalReport:
    if not test:
        raise ValueError("empty test set")
    r, score, label = _arrays(test)
    missing = set(np.unique(r).tolist()) - set(thresholds)
    if missing:
        raise ConfigurationError(f"no threshold for relations {sorted(missing)}")
    thr = np.array([thresholds[int(x)] for x in r])
    correct = (score < thr) == label
    per_acc, per_auc, counts = {}, {}, {}
    for rel in np.unique(r).tolist():
        m = r == rel
        per_acc[rel] = float(correct[m].mean())
        per_auc[rel] = auroc(score[m], label[m])
        counts[rel] = {"n_true": int(label[m].sum()), "n_corrupted": int((~label[m]).sum())}
    return EvalReport({k: thresholds[k] for k in per_acc}, float(correct.mean()), auroc(score, label),
                      per_acc, per_auc, counts, relation_names)


def evaluate(params: ModelParams, kind, valid_pos: TripleBatch, valid_neg: TripleBatch,
             test_pos: TripleBatch, test_neg: TripleBatch, relation_names=None) -> EvalReport:
    """Fit thresholds on the validation pairs, report on the test pairs."""
    valid = score_triples(params, kind, valid_pos, True) + score_triples(params, kind, valid_neg, False)
    test = score_triples(params, kind, test_pos, True) + score_triples(params, kind, test_neg, False)
    return classify_and_report(test, fit_thresholds(valid), relation_names)


@dataclass
class PlantedInstance:
    params: ModelParams
    train: TripleBatch
    valid: TripleBatch
    test: TripleBatch
    meta: dict

    def corruptions(self, seed: int) -> tuple[TripleBatch, TripleBatch]:
        """Corrupted partners for the validation and test triples."""
        rng = np.random.default_rng(seed)
        known = known_set(self.train, self.valid, self.test)
        n = self.params.n_words
        return corrupt_batch(self.valid, n, known, rng), corrupt_batch(self.test, n, known, rng)


def planted_params(n_words: int, n_relations: int, dim: int, rng: np.random.Generator,
                   sharpness: float) -> ModelParams:
    """Unit-norm embeddings, random rotations as relation matrices, zero
    offsets, all scaled so that energies are ``sharpness`` times a cosine."""
    C = rng.normal(size=(n_words, dim))
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    V = rng.normal(size=(n_words, dim))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    A = np.stack([np.linalg.qr(rng.normal(size=(dim, dim)))[0] for _ in range(n_relations)])
    return ModelParams(C * sharpness, V, A, np.zeros((n_relations, dim)))


def sample_exact(params: ModelParams, kind, n: int, rng: np.random.Generator,
                 max_states: int = MAX_STATES) -> TripleBatch:
    """n i.i.d. triples from the exact joint, by enumeration."""
    P = exact_joint(params, kind, max_states)
    flat = rng.choice(P.size, size=n, p=P.ravel())
    s, r, t = np.unravel_index(flat, P.shape)
    return TripleBatch(s, r, t, np.ones(n))


def make_planted_instance(n_words: int, n_relations: int, dim: int, n_triples: int, seed: int,
                          sharpness: float = 8.0, split: tuple[float, float, float] = (0.8, 0.1, 0.1),
                          max_states: int = MAX_STATES) -> PlantedInstance:
    """Sample a synthetic dataset from a known model.

    The ground truth uses dot energy on unit target vectors, rotated source
    vectors of norm ``sharpness`` (so every energy is ``-sharpness * cos``).
    Triples are drawn i.i.d. from the exact joint by enumeration. Each
    distinct triple is assigned to one split, so splits are disjoint as sets;
    ``train`` keeps repeated draws (exactly ``n_triples`` of them), ``valid``
    and ``test`` hold distinct triples.
    """
    if n_triples < 1:
        raise ConfigurationError("n_triples must be positive")
    rng = np.random.default_rng(seed)
    params = planted_params(n_words, n_relations, dim, rng, sharpness)
    _guard(params, max_states)
    P = exact_joint(params, EnergyKind.DOT, max_states).ravel()
    n_states = P.size
    assign = rng.choice(3, size=n_states, p=np.asarray(split) / np.sum(split))
    train_idx: list[np.ndarray] = []
    held: list[np.ndarray] = []
    have = 0
    while have < n_triples:
        draws = rng.choice(n_states, size=max(1024, int((n_triples - have) / split[0] * 1.1)), p=P)
        tr = draws[assign[draws] == 0]
        train_idx.append(tr)
        held.append(draws[assign[draws] != 0])
        have += len(tr)
    train_flat = np.concatenate(train_idx)[:n_triples]
    held_flat = np.unique(np.concatenate(held))

    def batch(flat):
        s, r, t = np.unravel_index(flat, (n_words, n_relations, n_words))
        return TripleBatch(s, r, t, np.ones(len(flat)))

    meta = {"n_words": n_words, "n_relations": n_relations, "dim": dim, "n_triples": n_triples,
            "seed": seed, "sharpness": sharpness, "split": list(split), "ground_truth_energy": "dot",
            "sampling": "exact enumeration of the joint"}
    return PlantedInstance(params, batch(train_flat), batch(held_flat[assign[held_flat] == 1]),
                           batch(held_flat[assign[held_flat] == 2]), meta)


def mask_relations(batch: TripleBatch, observed_fraction: float, rng: np.random.Generator):
    """Split into (observed part, copy of the rest with relations hidden)."""
    n = len(batch)
    perm = rng.permutation(n)
    k = int(round(observed_fraction * n))
    obs = batch[np.sort(perm[:k])]
    rest = batch[np.sort(perm[k:])]
    masked = TripleBatch(rest.s, np.full(len(rest), -1), rest.t, rest.w)
    return obs, masked


def chain_average_grad(params: ModelParams, kind, pool: ChainPool, sweeps: int, burn_in: int = 0) -> Gradient:
    """Mean energy gradient over the states visited by ``pool`` in ``sweeps``
    sweeps per chain, after ``burn_in`` discarded sweeps. Parameters stay fixed."""
    if burn_in:
        pool.sweep(params, kind, burn_in)
    trace = pool.sweep(params, kind, sweeps, record=True).reshape(-1, 3)
    return accumulate_energy_grad(params, kind, trace[:, 0], trace[:, 1], trace[:, 2], 1.0 / len(trace),
                                  Gradient.zeros_like(params))


def oracle_check(n_words: int = 15, n_relations: int = 3, dim: int = 4, sweeps: int = 10_000,
                 n_chains: int = 10, seed: int = 0, kind="cosine", burn_in: int = 100) -> dict:
    """Cosine similarity between the chain-averaged model gradient and the
    exact enumerated expectation on a random model."""
    from .model import init_params

    kind = EnergyKind.parse(kind)
    rng = np.random.default_rng(seed)
    params = init_params(n_words, n_relations, dim, rng, operator_noise=0.5)
    start = np.stack([rng.integers(0, n_words, n_chains), rng.integers(0, n_relations, n_chains),
                      rng.integers(0, n_words, n_chains)], axis=1)
    pool = ChainPool.from_seed(start, int(rng.integers(2**63)))
    per_chain = max(1, sweeps // n_chains)
    est = chain_average_grad(params, kind, pool, per_chain, burn_in)
    exact = exact_model_expectation_grad(params, kind)
    return {"cosine": est.cosine(exact), "sweeps": per_chain * n_chains, "n_chains": n_chains,
            "n_words": n_words, "n_relations": n_relations, "dim": dim, "energy": kind.name.lower(),
            "seed": seed}
