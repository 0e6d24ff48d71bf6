# cython: language_level=3
"""Compiled versions of the kernels in ``_pykernels``.

Signatures and numerics mirror the numpy fallback; see that module for the
array conventions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt
from libc.stdlib cimport calloc, malloc, free
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef double NORM_FLOOR = 1e-12
cdef enum:
    DOT = 0
    COSINE = 1
    FROBENIUS = 2


cdef inline double _norm(const double* x, Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(d):
        acc += x[i] * x[i]
    return sqrt(acc)


cdef inline void _affine(const double* A, const double* b, const double* c,
                         Py_ssize_t d, double* g) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(d):
        acc = b[i]
        for j in range(d):
            acc += A[i * d + j] * c[j]
        g[i] = acc


cdef inline double _dot(const double* x, const double* y, Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(d):
        acc += x[i] * y[i]
    return acc


cdef inline double _floor(double n) noexcept nogil:
    return n if n > NORM_FLOOR else NORM_FLOOR


cdef inline double _energy_from(double dot, double nv, double ng, double nc,
                                double nf, int kind) noexcept nogil:
    # nv, ng, nc, nf are raw (unfloored) norms
    if kind == DOT:
        return -dot
    if kind == COSINE:
        return -dot / (_floor(nv) * _floor(ng))
    return -dot / (_floor(nv) * _floor(nf) * _floor(nc))


cdef void _frob_norms(const double[:, :, ::1] A, const double[:, ::1] b, double* out) noexcept nogil:
    cdef Py_ssize_t R = A.shape[0], d = A.shape[1], r, i, j
    cdef double acc
    for r in range(R):
        acc = 0.0
        for i in range(d):
            acc += b[r, i] * b[r, i]
            for j in range(d):
                acc += A[r, i, j] * A[r, i, j]
        out[r] = sqrt(acc)


def energies(const double[:, ::1] C, const double[:, ::1] V, const double[:, :, ::1] A,
             const double[:, ::1] b, int kind, const cnp.int64_t[::1] s,
             const cnp.int64_t[::1] r, const cnp.int64_t[::1] t):
    cdef Py_ssize_t n = s.shape[0], d = C.shape[1], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double* g = <double*> malloc(d * sizeof(double))
    cdef double* fn = <double*> malloc(A.shape[0] * sizeof(double))
    cdef double dot, nc = 0.0, ng = 0.0
    if g == NULL or fn == NULL:
        free(g)
        free(fn)
        raise MemoryError()
    with nogil:
        if kind == FROBENIUS:
            _frob_norms(A, b, fn)
        for i in range(n):
            _affine(&A[r[i], 0, 0], &b[r[i], 0], &C[s[i], 0], d, g)
            dot = _dot(&V[t[i], 0], g, d)
            if kind == COSINE:
                ng = _norm(g, d)
            elif kind == FROBENIUS:
                nc = _norm(&C[s[i], 0], d)
            out[i] = _energy_from(dot, _norm(&V[t[i], 0], d), ng, nc, fn[r[i]], kind)
    free(g)
    free(fn)
    return out_arr


def accumulate_grad(const double[:, ::1] C, const double[:, ::1] V, const double[:, :, ::1] A,
                    const double[:, ::1] b, int kind, const cnp.int64_t[::1] s,
                    const cnp.int64_t[::1] r, const cnp.int64_t[::1] t, const double[::1] w,
                    double[:, ::1] gC, double[:, ::1] gV, double[:, :, ::1] gA, double[:, ::1] gb):
    cdef Py_ssize_t n = s.shape[0], d = C.shape[1], i, j, k
    cdef Py_ssize_t si, ri, ti
    cdef double* g = <double*> malloc(d * sizeof(double))
    cdef double* dg = <double*> malloc(d * sizeof(double))
    cdef double* fn = <double*> malloc(A.shape[0] * sizeof(double))
    cdef double dot, E, wi, nv, ng, nc, nf, denom, kv, kg, kc, kf, acc
    if g == NULL or dg == NULL or fn == NULL:
        free(g)
        free(dg)
        free(fn)
        raise MemoryError()
    with nogil:
        if kind == FROBENIUS:
            _frob_norms(A, b, fn)
        for i in range(n):
            si = s[i]
            ri = r[i]
            ti = t[i]
            wi = w[i]
            _affine(&A[ri, 0, 0], &b[ri, 0], &C[si, 0], d, g)
            dot = _dot(&V[ti, 0], g, d)
            kv = 0.0
            kg = 0.0
            kc = 0.0
            kf = 0.0
            if kind == DOT:
                denom = 1.0
                E = -dot
            elif kind == COSINE:
                nv = _norm(&V[ti, 0], d)
                ng = _norm(g, d)
                denom = _floor(nv) * _floor(ng)
                E = -dot / denom
                if nv > NORM_FLOOR:
                    kv = E / (nv * nv)
                if ng > NORM_FLOOR:
                    kg = E / (ng * ng)
            else:
                nv = _norm(&V[ti, 0], d)
                nc = _norm(&C[si, 0], d)
                nf = fn[ri]
                denom = _floor(nv) * _floor(nf) * _floor(nc)
                E = -dot / denom
                if nv > NORM_FLOOR:
                    kv = E / (nv * nv)
                if nc > NORM_FLOOR:
                    kc = E / (nc * nc)
                if nf > NORM_FLOOR:
                    kf = E / (nf * nf)
            # dE/dg and dE/dv
            for j in range(d):
                dg[j] = -V[ti, j] / denom - kg * g[j]
                gV[ti, j] += wi * (-g[j] / denom - kv * V[ti, j])
            # dE/dc = A^T dg - kc c ; dE/dA = dg c^T - kf A ; dE/db = dg - kf b
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += A[ri, k, j] * dg[k]
                gC[si, j] += wi * (acc - kc * C[si, j])
            for j in range(d):
                gb[ri, j] += wi * (dg[j] - kf * b[ri, j])
                for k in range(d):
                    gA[ri, j, k] += wi * (dg[j] * C[si, k] - kf * A[ri, j, k])
    free(g)
    free(dg)
    free(fn)


cdef Py_ssize_t _draw(double* e, Py_ssize_t n, double u) noexcept nogil:
    cdef Py_ssize_t k
    cdef double emin = e[0], total = 0.0, target
    for k in range(1, n):
        if e[k] < emin:
            emin = e[k]
    for k in range(n):
        total += exp(-(e[k] - emin))
        e[k] = total
    target = u * total
    for k in range(n):
        if e[k] > target:
            return k
    return n - 1


cdef void _relation_norms(const double* A, const double* b, const double* C, Py_ssize_t n,
                          Py_ssize_t d, double* rows, double* out) noexcept nogil:
    # rows = C A^T (row-major), i.e. column-major A C^T; then |row + b| per word
    cdef int m = <int> d, nn = <int> n, kk = <int> d, ld = <int> d
    cdef double one = 1.0, zero = 0.0
    cdef Py_ssize_t k, i
    cdef double acc, x
    dgemm("T", "N", &m, &nn, &kk, &one, <double*> A, &ld, <double*> C, &ld, &zero, rows, &ld)
    for k in range(n):
        acc = 0.0
        for i in range(d):
            x = rows[k * d + i] + b[i]
            acc += x * x
        out[k] = sqrt(acc)


def gibbs(const double[:, ::1] C, const double[:, ::1] V, const double[:, :, ::1] A,
          const double[:, ::1] b, int kind, cnp.int64_t[:, ::1] states,
          const double[:, :, ::1] uniforms, cnp.int64_t[:, :, ::1] trace):
    cdef Py_ssize_t nW = C.shape[0], nR = A.shape[0], d = C.shape[1]
    cdef Py_ssize_t rounds = uniforms.shape[0], M = uniforms.shape[1]
    cdef Py_ssize_t q, m, k, s, r, t
    cdef bint record = trace is not None
    cdef Py_ssize_t nbuf = nW if nW > nR else nR
    cdef double* e = <double*> malloc(nbuf * sizeof(double))
    cdef double* g = <double*> malloc(d * sizeof(double))
    cdef double* nvs = <double*> malloc(nW * sizeof(double))
    cdef double* ncs = <double*> malloc(nW * sizeof(double))
    cdef double* fn = <double*> malloc(nR * sizeof(double))
    cdef double* u = <double*> malloc(d * sizeof(double))
    # |A_r c_k + b_r| for every k, filled per relation on first use (cosine only)
    cdef double* gn = <double*> malloc((nR * nW if kind == COSINE else 1) * sizeof(double))
    cdef double* rows = <double*> malloc((nW * d if kind == COSINE else 1) * sizeof(double))
    cdef char* have = <char*> calloc(nR, sizeof(char))
    cdef double ng, dot, bv
    cdef Py_ssize_t i, j
    if e == NULL or g == NULL or nvs == NULL or ncs == NULL or fn == NULL or u == NULL \
            or gn == NULL or rows == NULL or have == NULL:
        free(e)
        free(g)
        free(nvs)
        free(ncs)
        free(fn)
        free(u)
        free(gn)
        free(rows)
        free(have)
        raise MemoryError()
    with nogil:
        for k in range(nW):
            nvs[k] = _norm(&V[k, 0], d)
            ncs[k] = _norm(&C[k, 0], d)
        _frob_norms(A, b, fn)
        for q in range(rounds):
            for m in range(M):
                s = states[m, 0]
                r = states[m, 1]
                t = states[m, 2]
                # S | r, t: v.(A c + b) = (A^T v).c + b.v
                if kind == COSINE and not have[r]:
                    _relation_norms(&A[r, 0, 0], &b[r, 0], &C[0, 0], nW, d, rows, &gn[r * nW])
                    have[r] = 1
                for j in range(d):
                    u[j] = 0.0
                for i in range(d):
                    for j in range(d):
                        u[j] += A[r, i, j] * V[t, i]
                bv = _dot(&b[r, 0], &V[t, 0], d)
                for k in range(nW):
                    dot = _dot(&C[k, 0], u, d) + bv
                    ng = gn[r * nW + k] if kind == COSINE else 0.0
                    e[k] = _energy_from(dot, nvs[t], ng, ncs[k], fn[r], kind)
                s = _draw(e, nW, uniforms[q, m, 0])
                # R | s, t
                for k in range(nR):
                    _affine(&A[k, 0, 0], &b[k, 0], &C[s, 0], d, g)
                    dot = _dot(&V[t, 0], g, d)
                    ng = _norm(g, d) if kind == COSINE else 0.0
                    e[k] = _energy_from(dot, nvs[t], ng, ncs[s], fn[k], kind)
                r = _draw(e, nR, uniforms[q, m, 1])
                # T | s, r
                _affine(&A[r, 0, 0], &b[r, 0], &C[s, 0], d, g)
                ng = _norm(g, d) if kind == COSINE else 0.0
                for k in range(nW):
                    dot = _dot(&V[k, 0], g, d)
                    e[k] = _energy_from(dot, nvs[k], ng, ncs[s], fn[r], kind)
                t = _draw(e, nW, uniforms[q, m, 2])
                states[m, 0] = s
                states[m, 1] = r
                states[m, 2] = t
                if record:
                    trace[q, m, 0] = s
                    trace[q, m, 1] = r
                    trace[q, m, 2] = t
    free(e)
    free(g)
    free(nvs)
    free(ncs)
    free(fn)
    free(u)
    free(gn)
    free(rows)
    free(have)
