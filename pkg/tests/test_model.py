import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relboltz.model import (
    ConfigurationError,
    DegenerateInputError,
    EnergyKind,
    Gradient,
    ModelParams,
    RelationOperator,
    apply_relation,
    energy,
    energy_grad,
    init_params,
)

from conftest import params_2d, random_params


def matvec_loop(A, c):
    # independent of numpy's matmul
    return [sum(A[i][j] * c[j] for j in range(len(c))) for i in range(len(A))]


@pytest.mark.parametrize("A,b,c,expected", [
    (np.eye(2), [0, 0], [3, -1], [3, -1]),
    (np.zeros((2, 2)), [1, 2], [9, 9], [1, 2]),
    ([[0, 1], [1, 0]], [1, 0], [1, 2], [3, 1]),
])
def test_apply_relation(A, b, c, expected):
    out = apply_relation(RelationOperator(A, b), c)
    np.testing.assert_array_equal(out, expected)
    oracle = np.add(matvec_loop(np.asarray(A, float).tolist(), c), b)
    np.testing.assert_array_equal(out, oracle)


def test_apply_relation_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        apply_relation(RelationOperator(np.eye(2), [0, 0]), [1, 2, 3])


def test_cosine_energy_examples():
    p = params_2d(np.eye(2), [0, 0], [[1, 0]], [[1, 0]])
    assert energy(p, "cosine", 0, 0, 0) == pytest.approx(-1.0, abs=1e-15)
    p = params_2d(np.eye(2), [0, 0], [[1, 0]], [[0, 1]])
    assert energy(p, "cosine", 0, 0, 0) == pytest.approx(0.0, abs=1e-15)
    # G c = (3, 1), v = (1, 1): -(4) / (sqrt(10) sqrt(2))
    p = params_2d([[0, 1], [1, 0]], [1, 0], [[1, 2]], [[1, 1]])
    assert energy(p, "cosine", 0, 0, 0) == pytest.approx(-4 / math.sqrt(20), abs=1e-12)
    assert energy(p, "cosine", 0, 0, 0) == pytest.approx(-0.894427, abs=1e-6)


def test_dot_and_frobenius_examples():
    p = params_2d([[0, 1], [1, 0]], [1, 0], [[1, 2]], [[1, 1]])
    assert energy(p, "dot", 0, 0, 0) == pytest.approx(-4.0)
    # |[A b]|_F = sqrt(2 + 1), |c| = sqrt(5), |v| = sqrt(2)
    assert energy(p, "frobenius", 0, 0, 0) == pytest.approx(-4 / math.sqrt(3 * 5 * 2))


def test_energy_index_checks():
    p = params_2d(np.eye(2), [0, 0], [[1, 0]], [[1, 0]])
    with pytest.raises(ConfigurationError):
        energy(p, "cosine", 1, 0, 0)
    with pytest.raises(ConfigurationError):
        energy(p, "cosine", 0, 1, 0)


def test_zero_norm_is_floored_or_reported():
    p = params_2d(np.eye(2), [0, 0], [[1, 0]], [[0, 0]])
    assert energy(p, "cosine", 0, 0, 0) == 0.0
    assert np.isfinite(energy_grad(p, "cosine", 0, 0, 0).flat()).all()
    with pytest.raises(DegenerateInputError):
        energy(p, "cosine", 0, 0, 0, strict=True)
    with pytest.raises(DegenerateInputError):
        energy_grad(p, "frobenius", 0, 0, 0, strict=True)
    energy(p, "dot", 0, 0, 0, strict=True)


def test_params_validation():
    with pytest.raises(ConfigurationError):
        ModelParams(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros((1, 2, 2)), np.zeros((1, 2)))
    with pytest.raises(ConfigurationError):
        ModelParams(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((0, 2, 2)), np.zeros((0, 2)))
    with pytest.raises(ConfigurationError):
        ModelParams(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((1, 3, 3)), np.zeros((1, 3)))


def test_energy_kind_parse():
    assert EnergyKind.parse("Cosine") is EnergyKind.COSINE
    assert EnergyKind.parse("frobenius-cosine") is EnergyKind.FROBENIUS_COSINE
    assert EnergyKind.parse(0) is EnergyKind.DOT
    with pytest.raises(ConfigurationError):
        EnergyKind.parse("spline")


def central_difference(p, kind, s, r, t, h=1e-6):
    out = Gradient.zeros_like(p)
    for name, arr in p.groups().items():
        g = out.groups()[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = energy(p, kind, s, r, t)
            arr[idx] = orig - h
            down = energy(p, kind, s, r, t)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
    return out


@pytest.mark.parametrize("kind", list(EnergyKind))
def test_energy_grad_matches_finite_differences(kind, rng):
    for trial in range(5):
        d = int(rng.integers(2, 9))
        p = random_params(rng, n_words=4, n_relations=3, dim=d)
        s, r, t = (int(x) for x in (rng.integers(4), rng.integers(3), rng.integers(4)))
        g = energy_grad(p, kind, s, r, t)
        fd = central_difference(p, kind, s, r, t)
        assert np.linalg.norm(g.flat() - fd.flat()) <= 1e-5 * np.linalg.norm(fd.flat())


def test_energy_grad_touches_only_its_rows(rng):
    p = random_params(rng, n_words=5, n_relations=3, dim=3)
    g = energy_grad(p, "cosine", 1, 2, 3)
    assert not g.C[[0, 2, 3, 4]].any() and g.C[1].any()
    assert not g.V[[0, 1, 2, 4]].any() and g.V[3].any()
    assert not g.A[:2].any() and not g.b[:2].any()


def test_dot_target_gradient_is_negative_transformed_source(rng):
    p = random_params(rng)
    g = energy_grad(p, "dot", 2, 1, 4)
    np.testing.assert_allclose(g.V[4], -(p.A[1] @ p.C[2] + p.b[1]), rtol=1e-14)


def test_cosine_target_gradient_vanishes_when_parallel(rng):
    p = random_params(rng)
    p.V[3] = 2.5 * (p.A[0] @ p.C[1] + p.b[0])
    g = energy_grad(p, "cosine", 1, 0, 3)
    np.testing.assert_allclose(g.V[3], 0.0, atol=1e-14)


def test_word2vec_special_case(rng):
    p = init_params(6, 1, 4, rng)
    p.A[0] = np.eye(4)
    p.b[0] = 0.0
    for s in range(6):
        for t in range(6):
            exact = -math.fsum(p.V[t] * p.C[s])
            scale = np.abs(p.V[t] * p.C[s]).sum()
            assert abs(energy(p, "dot", s, 0, t) - exact) <= 4 * np.finfo(float).eps * scale


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_bounded_and_scale_invariant(seed, a, c):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n_words=3, n_relations=2, dim=4, spread=2.0)
    e = energy(p, "cosine", 0, 1, 2)
    assert -1.0 - 1e-12 <= e <= 1.0 + 1e-12
    p.b[:] = 0.0
    e0 = energy(p, "cosine", 0, 1, 2)
    p.V[2] *= a
    p.C[0] *= c
    assert energy(p, "cosine", 0, 1, 2) == pytest.approx(e0, abs=1e-12)


def test_gradient_container_ops(rng):
    p = random_params(rng)
    g = energy_grad(p, "cosine", 0, 0, 1)
    h = g.copy().axpy(2.0, g)
    np.testing.assert_allclose(h.flat(), 3 * g.flat())
    np.testing.assert_allclose((h - g).flat(), 2 * g.flat())
    assert h.zero().norm() == 0.0
    assert g.cosine(g.scaled(4.0)) == pytest.approx(1.0)


def test_init_params_shapes_and_ranges(rng):
    p = init_params(7, 3, 5, rng)
    assert p.C.shape == p.V.shape == (7, 5)
    assert np.abs(p.C).max() <= 1 / math.sqrt(5)
    assert np.abs(p.A - np.eye(5)).max() < 0.1
    assert not p.b.any()
    assert p.check_finite() is None
