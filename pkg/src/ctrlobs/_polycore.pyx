# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for packed-key polynomial arithmetic.

Same contract as the numpy twin in ``_polynum``.  merge results are
bit-identical across backends; mul results agree exactly whenever the
per-key sums are exactly representable and to round-off otherwise.
"""
import numpy as np

BACKEND_NAME = "c"

ctypedef long long i64
ctypedef unsigned long long u64


cdef inline u64 _hash_key(i64 key) nogil:
    cdef u64 h = <u64> key
    h *= <u64> 0x9E3779B97F4A7C15ULL
    h ^= h >> 29
    return h


def mul(ka_obj, ca_obj, kb_obj, cb_obj, int dims):
    """Product of two packed polynomials; sorted, zero-free output."""
    cdef i64[:] ka = ka_obj
    cdef double[:] ca = ca_obj
    cdef i64[:] kb = kb_obj
    cdef double[:] cb = cb_obj
    cdef Py_ssize_t n1 = ka.shape[0], n2 = kb.shape[0]
    if n1 == 0 or n2 == 0:
        return np.empty(0, np.int64), np.empty(0, np.float64)

    cdef Py_ssize_t needed = n1 * n2
    cdef Py_ssize_t capacity = 16
    while capacity * 3 < needed * 4:
        capacity <<= 1
    cdef u64 mask = <u64> (capacity - 1)

    tk_obj = np.full(capacity, -1, dtype=np.int64)
    tv_obj = np.zeros(capacity, dtype=np.float64)
    cdef i64[:] tk = tk_obj
    cdef double[:] tv = tv_obj

    cdef Py_ssize_t i, j, used = 0
    cdef i64 kai, key
    cdef double cai, val
    cdef u64 slot
    with nogil:
        for i in range(n1):
            kai = ka[i]
            cai = ca[i]
            for j in range(n2):
                key = kai + kb[j]
                val = cai * cb[j]
                slot = _hash_key(key) & mask
                while True:
                    if tk[slot] == key:
                        tv[slot] += val
                        break
                    if tk[slot] == -1:
                        tk[slot] = key
                        tv[slot] = val
                        used += 1
                        break
                    slot = (slot + 1) & mask

    okeys = np.empty(used, dtype=np.int64)
    ovals = np.empty(used, dtype=np.float64)
    cdef i64[:] okv = okeys
    cdef double[:] ovv = ovals
    cdef Py_ssize_t w = 0
    for i in range(capacity):
        if tk[i] != -1:
            okv[w] = tk[i]
            ovv[w] = tv[i]
            w += 1
    order = np.argsort(okeys, kind="stable")
    okeys = okeys[order]
    ovals = ovals[order]
    keep = ovals != 0.0
    return okeys[keep], ovals[keep]


def merge(ka_obj, ca_obj, kb_obj, cb_obj, double s):
    """a + s*b for packed polynomials; sorted, zero-free output."""
    cdef i64[:] ka = ka_obj
    cdef double[:] ca = ca_obj
    cdef i64[:] kb = kb_obj
    cdef double[:] cb = cb_obj
    cdef Py_ssize_t n1 = ka.shape[0], n2 = kb.shape[0]

    okeys = np.empty(n1 + n2, dtype=np.int64)
    ovals = np.empty(n1 + n2, dtype=np.float64)
    cdef i64[:] okv = okeys
    cdef double[:] ovv = ovals
    cdef Py_ssize_t i = 0, j = 0, w = 0
    cdef double v
    with nogil:
        while i < n1 or j < n2:
            if j >= n2 or (i < n1 and ka[i] < kb[j]):
                okv[w] = ka[i]
                ovv[w] = ca[i]
                i += 1
                w += 1
            elif i >= n1 or kb[j] < ka[i]:
                v = cb[j] * s
                if v != 0.0:
                    okv[w] = kb[j]
                    ovv[w] = v
                    w += 1
                j += 1
            else:
                v = ca[i] + cb[j] * s
                if v != 0.0:
                    okv[w] = ka[i]
                    ovv[w] = v
                    w += 1
                i += 1
                j += 1
    return okeys[:w].copy(), ovals[:w].copy()


def scale(keys_obj, coeffs_obj, double s):
    scaled = np.asarray(coeffs_obj) * s
    keep = scaled != 0.0
    return np.asarray(keys_obj)[keep], scaled[keep]


def unpack(keys_obj, int dims):
    keys = np.asarray(keys_obj)
    out = np.empty((keys.shape[0], dims), dtype=np.int64)
    cdef int axis, shift
    for axis in range(dims):
        shift = 8 * (dims - 1 - axis)
        out[:, axis] = (keys >> shift) & 0xFF
    return out


def pack(exps_obj, int dims):
    exps = np.asarray(exps_obj)
    keys = np.zeros(exps.shape[0], dtype=np.int64)
    cdef int axis, shift
    for axis in range(dims):
        shift = 8 * (dims - 1 - axis)
        keys |= exps[:, axis].astype(np.int64) << shift
    return keys


def diff(keys_obj, coeffs_obj, int axis, int dims):
    """Partial derivative along one axis."""
    keys = np.asarray(keys_obj)
    coeffs = np.asarray(coeffs_obj)
    cdef int shift = 8 * (dims - 1 - axis)
    e = (keys >> shift) & 0xFF
    keep = e > 0
    if not keep.any():
        return np.empty(0, np.int64), np.empty(0, np.float64)
    return keys[keep] - (np.int64(1) << shift), coeffs[keep] * e[keep].astype(np.float64)


cdef inline double _ipow(double base, int e) nogil:
    cdef double r = 1.0
    while e:
        if e & 1:
            r *= base
        base *= base
        e >>= 1
    return r


def eval_batch(keys_obj, coeffs_obj, int dims, pts_obj):
    """Evaluate at pts of shape (P, dims); returns (P,)."""
    cdef double[:] coeffs = coeffs_obj
    cdef Py_ssize_t n = coeffs.shape[0]
    pts = np.ascontiguousarray(pts_obj, dtype=np.float64)
    cdef double[:, :] p = pts
    cdef Py_ssize_t npts = p.shape[0]
    out = np.zeros(npts, dtype=np.float64)
    if n == 0:
        return out
    exps_obj = unpack(keys_obj, dims)
    cdef i64[:, :] exps = exps_obj
    cdef double[:] o = out
    cdef Py_ssize_t ip, it
    cdef int axis
    cdef double acc, term
    with nogil:
        for ip in range(npts):
            acc = 0.0
            for it in range(n):
                term = coeffs[it]
                for axis in range(dims):
                    if exps[it, axis]:
                        term *= _ipow(p[ip, axis], <int> exps[it, axis])
                acc += term
            o[ip] = acc
    return out
