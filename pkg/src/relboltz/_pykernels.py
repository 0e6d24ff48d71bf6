"""Numpy implementations of the hot kernels.

Same signatures as the compiled ``_ckernels`` module. Arrays are float64
C-contiguous, indices int64. ``kind`` is the integer value of
:class:`relboltz.model.EnergyKind` (0 dot, 1 cosine, 2 Frobenius-cosine).
"""

import numpy as np

NORM_FLOOR = 1e-12

DOT, COSINE, FROBENIUS = 0, 1, 2


def _floored_norm(x):
    n = np.sqrt(np.einsum("...i,...i->...", x, x))
    return np.maximum(n, NORM_FLOOR), n > NORM_FLOOR


def _frob_norms(A, b):
    sq = np.einsum("rij,rij->r", A, A) + np.einsum("ri,ri->r", b, b)
    n = np.sqrt(sq)
    return np.maximum(n, NORM_FLOOR), n > NORM_FLOOR


def _forward(C, V, A, b, kind, s, r, t):
    c = C[s]
    v = V[t]
    g = np.einsum("nij,nj->ni", A[r], c) + b[r]
    dot = np.einsum("ni,ni->n", v, g)
    if kind == DOT:
        return c, v, g, dot, -dot, None
    nv, v_live = _floored_norm(v)
    if kind == COSINE:
        ng, g_live = _floored_norm(g)
        denom = nv * ng
        return c, v, g, dot, -dot / denom, (denom, nv, v_live, ng, g_live)
    nc, c_live = _floored_norm(c)
    nf_all, f_live_all = _frob_norms(A, b)
    nf, f_live = nf_all[r], f_live_all[r]
    denom = nv * nf * nc
    return c, v, g, dot, -dot / denom, (denom, nv, v_live, nc, c_live, nf, f_live)


def energies(C, V, A, b, kind, s, r, t):
    """Energy of each triple (s[i], r[i], t[i])."""
    return _forward(C, V, A, b, kind, s, r, t)[4]


def accumulate_grad(C, V, A, b, kind, s, r, t, w, gC, gV, gA, gb):
    """Add sum_i w[i] * dE(s[i], r[i], t[i]) / dTheta into the g* arrays."""
    c, v, g, dot, E, aux = _forward(C, V, A, b, kind, s, r, t)
    w = w[:, None]
    if kind == DOT:
        dv = -g
        dg = -v
        extra_c = extra_A = extra_b = None
    elif kind == COSINE:
        denom, nv, v_live, ng, g_live = aux
        dv = -g / denom[:, None] - (E * v_live / nv**2)[:, None] * v
        dg = -v / denom[:, None] - (E * g_live / ng**2)[:, None] * g
        extra_c = extra_A = extra_b = None
    else:
        denom, nv, v_live, nc, c_live, nf, f_live = aux
        dv = -g / denom[:, None] - (E * v_live / nv**2)[:, None] * v
        dg = -v / denom[:, None]
        extra_c = -(E * c_live / nc**2)[:, None] * c
        scale_f = -(E * f_live / nf**2)
        extra_A = scale_f[:, None, None] * A[r]
        extra_b = scale_f[:, None] * b[r]
    dc = np.einsum("nji,nj->ni", A[r], dg)
    dA = dg[:, :, None] * c[:, None, :]
    db = dg
    if extra_c is not None:
        dc = dc + extra_c
        dA = dA + extra_A
        db = db + extra_b
    np.add.at(gC, s, w * dc)
    np.add.at(gV, t, w * dv)
    np.add.at(gA, r, w[:, :, None] * dA)
    np.add.at(gb, r, w * db)


def _scaled(dot, kind, nv, ng, nc, nf):
    # one full conditional from raw dot products and unfloored norms
    if kind == DOT:
        return -dot
    nv = np.maximum(nv, NORM_FLOOR)
    if kind == COSINE:
        return -dot / (nv * np.maximum(ng, NORM_FLOOR))
    return -dot / (nv * nf * np.maximum(nc, NORM_FLOOR))


def _draw(energy_vec, u):
    p = np.exp(-(energy_vec - energy_vec.min()))
    cum = np.cumsum(p)
    k = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(k, len(energy_vec) - 1)


def gibbs(C, V, A, b, kind, states, uniforms, trace):
    """Run ``uniforms.shape[0]`` systematic-scan sweeps (S, then R, then T) on
    every chain in ``states`` (shape (M, 3), updated in place).

    ``uniforms`` has shape (rounds, M, 3); inverse-CDF draws use them in
    S, R, T order. If ``trace`` is not None, the state after each sweep is
    written to ``trace[round, chain]``.
    """
    n_rel = A.shape[0]
    nv = np.sqrt(np.einsum("ij,ij->i", V, V))
    nc = np.sqrt(np.einsum("ij,ij->i", C, C))
    nf = _frob_norms(A, b)[0]
    gn = {}
    all_rels = np.arange(n_rel, dtype=np.int64)
    rounds, M = uniforms.shape[0], uniforms.shape[1]
    for k in range(rounds):
        for m in range(M):
            s, r, t = states[m]
            # v.(A c + b) = (A^T v).c + b.v; |A c + b| cached per relation
            if kind == COSINE and r not in gn:
                G = C @ A[r].T + b[r]
                gn[r] = np.sqrt(np.einsum("ij,ij->i", G, G))
            dot = C @ (A[r].T @ V[t]) + b[r] @ V[t]
            s = _draw(_scaled(dot, kind, nv[t], gn.get(r), nc, nf[r]), uniforms[k, m, 0])
            e = energies(C, V, A, b, kind, np.full(n_rel, s), all_rels, np.full(n_rel, t))
            r = _draw(e, uniforms[k, m, 1])
            g = A[r] @ C[s] + b[r]
            t = _draw(_scaled(V @ g, kind, nv, np.sqrt(g @ g), nc[s], nf[r]), uniforms[k, m, 2])
            states[m, 0], states[m, 1], states[m, 2] = s, r, t
            if trace is not None:
                trace[k, m, 0], trace[k, m, 1], trace[k, m, 2] = s, r, t
