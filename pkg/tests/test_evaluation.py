import itertools
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from relboltz.evaluation import (
    NoValidCorruption,
    ScoredTriple,
    auroc,
    best_threshold,
    classify_and_report,
    corrupt_target,
    fit_thresholds,
    known_set,
    make_planted_instance,
    mask_relations,
    sample_exact,
)
from relboltz.sampler import StateSpaceTooLarge, exact_joint
from relboltz.trainer import Triple, TripleBatch

from conftest import random_params


def test_forced_corruption(rng):
    assert corrupt_target(Triple(0, 0, 1), 2, {(0, 0, 1)}, rng) == Triple(0, 0, 0)


def test_no_valid_corruption(rng):
    with pytest.raises(NoValidCorruption):
        corrupt_target(Triple(0, 0, 1), 2, {(0, 0, 0), (0, 0, 1)}, rng)
    with pytest.raises(NoValidCorruption):
        corrupt_target(Triple(0, 0, 0), 1, set(), rng)


def test_corruption_never_known(rng):
    known = {(0, 0, t) for t in range(0, 20, 2)} | {(0, 1, 3)}
    for _ in range(10_000):
        c = corrupt_target(Triple(0, 0, 4), 20, known, rng)
        assert (c.s, c.r, c.t) not in known and c.t != 4


def test_corruption_uniform_over_admissible_set(rng):
    known = {(1, 0, 0), (1, 0, 2), (1, 0, 5)}
    admissible = [t for t in range(8) if t != 3 and (1, 0, t) not in known]
    n = 20_000
    counts = Counter(corrupt_target(Triple(1, 0, 3), 8, known, rng).t for _ in range(n))
    assert set(counts) == set(admissible)
    assert chisquare([counts[t] for t in admissible]).pvalue > 1e-3


def test_corruption_fallback_stays_uniform(rng):
    # nearly everything is known, so rejection with one try almost always fails
    known = {(0, 0, t) for t in range(50) if t not in (7, 9)}
    counts = Counter(corrupt_target(Triple(0, 0, 1), 50, known, rng, max_tries=1).t for _ in range(4000))
    assert set(counts) == {7, 9}
    assert chisquare([counts[7], counts[9]]).pvalue > 1e-3


def _scored(pos, neg, r=0):
    return [ScoredTriple(0, r, 0, x, True) for x in pos] + [ScoredTriple(0, r, 0, x, False) for x in neg]


def test_threshold_example():
    thr, acc = best_threshold(np.array([-0.9, -0.8, -0.1]), np.array([True, True, False]))
    assert thr == pytest.approx(-0.45) and acc == 1.0


def test_threshold_identical_scores_gives_majority():
    thr, acc = best_threshold(np.zeros(5), np.array([True, True, True, False, False]))
    assert acc == pytest.approx(0.6)
    thr, acc = best_threshold(np.zeros(4), np.array([True, False, False, False]))
    assert acc == pytest.approx(0.75)


@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=1, max_size=25))
@settings(max_examples=300)
def test_threshold_is_exhaustive_maximiser(pairs):
    score = np.array([p[0] for p in pairs], dtype=float) / 4
    label = np.array([p[1] for p in pairs])
    thr, acc = best_threshold(score, label)
    assert acc == pytest.approx(((score < thr) == label).mean())
    # any cut point at all: below everything, above everything, or at a data value
    grid = np.concatenate([score, score + 1e-9, [score.min() - 1, score.max() + 1]])
    best = max(((score < c) == label).mean() for c in grid)
    assert acc == pytest.approx(best)


def test_one_class_relation_warns_and_predicts_true():
    with pytest.warns(UserWarning, match="one-class"):
        thr = fit_thresholds(_scored([-1.0, -0.5], [], r=0) + _scored([-1.0], [0.0], r=1))
    assert thr[0] == float("inf")
    assert -1.0 < thr[1] < 0.0


def test_per_relation_thresholds_dominate_global(rng):
    for _ in range(50):
        scored = []
        for r in range(3):
            shift = rng.normal()
            scored += _scored(rng.normal(size=8) + shift - 0.5, rng.normal(size=8) + shift + 0.5, r)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            thr = fit_thresholds(scored)
        per = classify_and_report(scored, thr).accuracy
        score = np.array([x.score for x in scored])
        label = np.array([x.label for x in scored])
        assert per >= best_threshold(score, label)[1] - 1e-12


def test_auroc_examples():
    assert auroc(np.array([-2.0, -1.0, 1.0, 2.0]), np.array([True, True, False, False])) == 1.0
    assert auroc(np.zeros(6), np.array([True, False] * 3)) == 0.5
    assert auroc(np.array([1.0, 2.0, -1.0]), np.array([True, True, False])) == 0.0


@given(st.lists(st.tuples(st.integers(-4, 4), st.booleans()), min_size=2, max_size=30))
@settings(max_examples=300)
def test_auroc_matches_pairwise_count(pairs):
    score = np.array([p[0] for p in pairs], dtype=float)
    label = np.array([p[1] for p in pairs])
    pos, neg = score[label], score[~label]
    if len(pos) == 0 or len(neg) == 0:
        return
    want = sum(1.0 if a < b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    assert auroc(score, label) == pytest.approx(want / (len(pos) * len(neg)))


@given(st.lists(st.tuples(st.integers(-40, 40), st.booleans()), min_size=2, max_size=30))
def test_auroc_invariant_under_monotone_transform(pairs):
    # grid scores: the transform must stay strictly monotone after rounding
    score = np.array([p[0] for p in pairs]) / 4.0
    label = np.array([p[1] for p in pairs])
    if label.all() or not label.any():
        return
    assert auroc(np.exp(score) * 3 - 7, label) == pytest.approx(auroc(score, label))


def test_report_deterministic_and_errors():
    test = _scored([-1.0, -0.2], [0.5, -0.5], r=0) + _scored([0.1], [0.3], r=1)
    thr = {0: 0.0, 1: 0.2}
    a, b = classify_and_report(test, thr, ["x", "y"]), classify_and_report(test, thr, ["x", "y"])
    assert a == b
    assert a.accuracy == pytest.approx(5 / 6)
    assert a.per_relation_accuracy == {0: 0.75, 1: 1.0}
    assert [r["relation"] for r in a.to_records()] == ["x", "y", "ALL"]
    assert "ALL" in a.to_table()
    with pytest.raises(ValueError):
        classify_and_report([], thr)


def test_sample_exact_converges_to_joint(rng):
    p = random_params(rng, n_words=4, n_relations=2, spread=1.5)
    P = exact_joint(p, "cosine")
    n = 100_000
    b = sample_exact(p, "cosine", n, rng)
    emp = np.zeros(P.shape)
    np.add.at(emp, (b.s, b.r, b.t), 1.0 / n)
    assert 0.5 * np.abs(emp - P).sum() <= 0.02


def test_planted_splits_disjoint_and_seeded():
    a = make_planted_instance(12, 2, 3, 500, seed=5)
    b = make_planted_instance(12, 2, 3, 500, seed=5)
    c = make_planted_instance(12, 2, 3, 500, seed=6)
    tr, va, te = (known_set(x) for x in (a.train, a.valid, a.test))
    assert not (tr & va) and not (tr & te) and not (va & te)
    assert len(a.train) == 500 and len(va) == len(a.valid)
    assert a.params.equals(b.params)
    for x, y in ((a.train, b.train), (a.valid, b.valid), (a.test, b.test)):
        assert x.to_triples() == y.to_triples()
    assert not a.params.equals(c.params)
    vn, tn = a.corruptions(1)
    assert not (known_set(vn, tn) & (tr | va | te))


def test_planted_guard():
    with pytest.raises(StateSpaceTooLarge):
        make_planted_instance(2000, 1, 2, 10, seed=0)


def test_mask_relations_partition(rng):
    batch = TripleBatch(np.arange(10), np.ones(10, dtype=int), np.arange(10), 1.0)
    obs, masked = mask_relations(batch, 0.3, rng)
    assert len(obs) == 3 and len(masked) == 7
    assert (masked.r == -1).all()
    assert sorted(obs.s.tolist() + masked.s.tolist()) == list(range(10))
