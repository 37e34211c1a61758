# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled traversal kernels.

Semantics, RNG stream, and floating-point accumulation order must stay in
lockstep with ``_pure.py``; the parity tests assert bit-identical output.
"""

import numpy as np

from libc.math cimport exp
from libc.stdint cimport int64_t, uint64_t


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * (<uint64_t>0xBF58476D1CE4E5B9)
    z = (z ^ (z >> 27)) * (<uint64_t>0x94D049BB133111EB)
    return z ^ (z >> 31)


cdef inline uint64_t _next_u64(uint64_t *state) nogil:
    state[0] = state[0] + (<uint64_t>0x9E3779B97F4A7C15)
    return _mix(state[0])


cdef inline double _next_double(uint64_t *state) nogil:
    return (_next_u64(state) >> 11) * (1.0 / 9007199254740992.0)


cdef inline int64_t _next_below(uint64_t *state, int64_t n) nogil:
    cdef int64_t i = <int64_t>(_next_double(state) * n)
    return n - 1 if i >= n else i


cdef inline int64_t _bisect_left(const int64_t[::1] arr, int64_t x,
                                 int64_t lo, int64_t hi) nogil:
    cdef int64_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline int64_t _bisect_right(const int64_t[::1] arr, int64_t x,
                                  int64_t lo, int64_t hi) nogil:
    cdef int64_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def ground_rule(const int64_t[::1] sr_key,
                const int64_t[::1] sr_t,
                const int64_t[::1] sr_o,
                int64_t n_rel2,
                int64_t subject,
                const int64_t[::1] body,
                int64_t t_lo,
                int64_t t_hi,
                int64_t cap):
    """See _pure.ground_rule."""
    cdef int64_t length = body.shape[0]
    cdef int64_t n = sr_key.shape[0]
    ents_arr = np.empty(cap, dtype=np.int64)
    lasts_arr = np.empty(cap, dtype=np.int64)
    times_arr = np.empty((cap, length), dtype=np.int64)
    cdef int64_t[::1] ents = ents_arr
    cdef int64_t[::1] lasts = lasts_arr
    cdef int64_t[:, ::1] times = times_arr
    cdef int64_t count = 0

    cur_lo_arr = np.zeros(length, dtype=np.int64)
    cursor_arr = np.zeros(length, dtype=np.int64)
    path_t_arr = np.zeros(length, dtype=np.int64)
    cdef int64_t[::1] cur_lo = cur_lo_arr
    cdef int64_t[::1] cursor = cursor_arr
    cdef int64_t[::1] path_t = path_t_arr

    cdef int64_t level, i, j, t_i, o_i, key, klo, khi, lo, hi

    # open level 0
    key = subject * n_rel2 + body[0]
    klo = _bisect_left(sr_key, key, 0, n)
    khi = _bisect_right(sr_key, key, klo, n)
    lo = _bisect_left(sr_t, t_lo, klo, khi)
    hi = _bisect_left(sr_t, t_hi, lo, khi)
    cur_lo[0] = lo
    cursor[0] = hi - 1

    level = 0
    while level >= 0:
        i = cursor[level]
        if i < cur_lo[level]:
            level -= 1
            continue
        cursor[level] = i - 1
        t_i = sr_t[i]
        o_i = sr_o[i]
        path_t[level] = t_i
        if level == length - 1:
            ents[count] = o_i
            lasts[count] = t_i
            for j in range(length):
                times[count, j] = path_t[j]
            count += 1
            if count == cap:
                break
        else:
            level += 1
            key = o_i * n_rel2 + body[level]
            klo = _bisect_left(sr_key, key, 0, n)
            khi = _bisect_right(sr_key, key, klo, n)
            lo = _bisect_left(sr_t, t_i, klo, khi)
            hi = _bisect_left(sr_t, t_hi, lo, khi)
            cur_lo[level] = lo
            cursor[level] = hi - 1

    return ents_arr[:count].copy(), lasts_arr[:count].copy(), times_arr[:count].copy()


def sample_walks(const int64_t[::1] re_s,
                 const int64_t[::1] re_o,
                 const int64_t[::1] re_t,
                 int64_t head_start,
                 int64_t head_end,
                 const int64_t[::1] s_ptr,
                 const int64_t[::1] ns_r,
                 const int64_t[::1] ns_o,
                 const int64_t[::1] ns_t,
                 int64_t n_rel_base,
                 int64_t body_len,
                 int64_t n_walks,
                 double decay,
                 uint64_t seed):
    """See _pure.sample_walks."""
    out_arr = np.empty((n_walks, body_len), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef int64_t n_success = 0
    cdef int64_t head_count = head_end - head_start
    if head_count <= 0:
        return out_arr[:0].copy()
    cdef uint64_t state = seed

    step_r_arr = np.zeros(body_len, dtype=np.int64)
    cdef int64_t[::1] step_r = step_r_arr

    cdef int64_t w, hidx, start, cur, cur_t, step, blo, bhi, hi, i, pick, k, j, r, n_cand
    cdef double total, u, acc
    cdef bint ok, last

    for w in range(n_walks):
        hidx = head_start + _next_below(&state, head_count)
        start = re_s[hidx]
        cur = re_o[hidx]
        cur_t = re_t[hidx]
        ok = True
        for step in range(body_len):
            last = step == body_len - 1
            blo = s_ptr[cur]
            bhi = s_ptr[cur + 1]
            hi = _bisect_left(ns_t, cur_t, blo, bhi)
            total = 0.0
            n_cand = 0
            for i in range(blo, hi):
                if last and ns_o[i] != start:
                    continue
                n_cand += 1
                total += exp(-decay * <double>(cur_t - ns_t[i]))
            if n_cand == 0:
                ok = False
                break
            pick = -1
            if total > 0.0:
                u = _next_double(&state) * total
                acc = 0.0
                for i in range(blo, hi):
                    if last and ns_o[i] != start:
                        continue
                    acc += exp(-decay * <double>(cur_t - ns_t[i]))
                    if u < acc:
                        pick = i
                        break
            if pick < 0:
                k = _next_below(&state, n_cand)
                for i in range(blo, hi):
                    if last and ns_o[i] != start:
                        continue
                    if k == 0:
                        pick = i
                        break
                    k -= 1
            step_r[step] = ns_r[pick]
            cur = ns_o[pick]
            cur_t = ns_t[pick]
        if ok:
            for j in range(body_len):
                r = step_r[body_len - 1 - j]
                out[n_success, j] = r + n_rel_base if r < n_rel_base else r - n_rel_base
            n_success += 1
    return out_arr[:n_success].copy()


def sample_bodies(const int64_t[::1] re_s,
                  const int64_t[::1] re_o,
                  const int64_t[::1] re_t,
                  int64_t r1_start,
                  int64_t r1_end,
                  const int64_t[::1] sr_key,
                  const int64_t[::1] sr_t,
                  const int64_t[::1] sr_o,
                  int64_t n_rel2,
                  const int64_t[::1] body,
                  int64_t n_samples,
                  uint64_t seed):
    """See _pure.sample_bodies."""
    cdef int64_t length = body.shape[0]
    cdef int64_t n = sr_key.shape[0]
    out_arr = np.empty((n_samples, 2 * length + 1), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef int64_t n_success = 0
    cdef int64_t r1_count = r1_end - r1_start
    if r1_count <= 0:
        return out_arr[:0].copy()
    cdef uint64_t state = seed

    cdef int64_t k, i, j, e1, cur, cur_t, col, step, key, klo, khi, lo, cand
    cdef bint ok

    for k in range(n_samples):
        i = r1_start + _next_below(&state, r1_count)
        e1 = re_s[i]
        cur = re_o[i]
        cur_t = re_t[i]
        out[n_success, 0] = e1
        out[n_success, 1] = cur_t
        out[n_success, 2] = cur
        ok = True
        col = 3
        for step in range(1, length):
            key = cur * n_rel2 + body[step]
            klo = _bisect_left(sr_key, key, 0, n)
            khi = _bisect_right(sr_key, key, klo, n)
            lo = _bisect_left(sr_t, cur_t, klo, khi)
            cand = khi - lo
            if cand <= 0:
                ok = False
                break
            j = lo + _next_below(&state, cand)
            cur = sr_o[j]
            cur_t = sr_t[j]
            out[n_success, col] = cur_t
            out[n_success, col + 1] = cur
            col += 2
        if ok:
            n_success += 1
    return out_arr[:n_success].copy()
