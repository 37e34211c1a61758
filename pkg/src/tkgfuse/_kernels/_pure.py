"""Pure-Python fallback for the traversal kernels.

Mirrors ``_core.pyx`` operation for operation, including the inline
splitmix64 generator and the order of floating-point accumulation, so that
both implementations produce bit-identical output for the same seed.
Plain loops are intentional: numpy reductions would change summation order.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


class SplitMix64:
    """splitmix64 PRNG; kept tiny so the Cython twin can replicate it exactly."""

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def next_below(self, n: int) -> int:
        i = int(self.next_double() * n)
        return n - 1 if i >= n else i


def mix_seed(*parts: int) -> int:
    """Derive a stream seed from integer parts; order-sensitive, deterministic."""
    s = 0x8E3C5A1F0B9D7E35
    for p in parts:
        s = (s ^ (p & MASK64)) & MASK64
        rng = SplitMix64(s)
        s = rng.next_u64()
    return s


def _bisect_left(arr, x: int, lo: int, hi: int) -> int:
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _bisect_right(arr, x: int, lo: int, hi: int) -> int:
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def ground_rule(
    sr_key: np.ndarray,
    sr_t: np.ndarray,
    sr_o: np.ndarray,
    n_rel2: int,
    subject: int,
    body: np.ndarray,
    t_lo: int,
    t_hi: int,
    cap: int,
):
    """Enumerate body groundings of one rule starting at ``subject``.

    Facts are given sorted by (subject * n_rel2 + relation, time, object).
    Times along the body are non-decreasing and confined to [t_lo, t_hi).
    DFS visits most recent facts first at every level and stops after ``cap``
    groundings. Returns (terminal_entities, last_times, body_times[m, l]).
    """
    length = len(body)
    n = len(sr_key)
    ents = np.empty(cap, dtype=np.int64)
    lasts = np.empty(cap, dtype=np.int64)
    times = np.empty((cap, length), dtype=np.int64)
    count = 0

    # Per-level DFS state: block bounds and a descending cursor.
    cur_lo = [0] * length
    cursor = [0] * length
    path_t = [0] * length

    def open_level(level: int, ent: int, min_t: int) -> None:
        key = ent * n_rel2 + int(body[level])
        klo = _bisect_left(sr_key, key, 0, n)
        khi = _bisect_right(sr_key, key, klo, n)
        lo = _bisect_left(sr_t, min_t, klo, khi)
        hi = _bisect_left(sr_t, t_hi, lo, khi)
        cur_lo[level] = lo
        cursor[level] = hi - 1

    open_level(0, subject, t_lo)
    level = 0
    while level >= 0:
        i = cursor[level]
        if i < cur_lo[level]:
            level -= 1
            continue
        cursor[level] = i - 1
        t_i = int(sr_t[i])
        o_i = int(sr_o[i])
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
            open_level(level, o_i, t_i)

    return ents[:count].copy(), lasts[:count].copy(), times[:count].copy()


def sample_walks(
    re_s: np.ndarray,
    re_o: np.ndarray,
    re_t: np.ndarray,
    head_start: int,
    head_end: int,
    s_ptr: np.ndarray,
    ns_r: np.ndarray,
    ns_o: np.ndarray,
    ns_t: np.ndarray,
    n_rel_base: int,
    body_len: int,
    n_walks: int,
    decay: float,
    seed: int,
) -> np.ndarray:
    """Sample cyclic backward temporal walks for one head relation.

    Each walk starts from a uniformly drawn head fact (s, r_h, o, t_h) and
    steps backward from ``o`` through strictly earlier facts, weighting
    candidates by exp(-decay * dt); the final step must close the cycle back
    to ``s``. Successful walks are returned as forward-oriented rule bodies
    (relations inverted, order reversed), shape (n_success, body_len).
    """
    out = np.empty((n_walks, body_len), dtype=np.int64)
    n_success = 0
    head_count = head_end - head_start
    if head_count <= 0:
        return out[:0].copy()
    rng = SplitMix64(seed)
    step_r = [0] * body_len

    for _ in range(n_walks):
        hidx = head_start + rng.next_below(head_count)
        start = int(re_s[hidx])
        cur = int(re_o[hidx])
        cur_t = int(re_t[hidx])
        ok = True
        for step in range(body_len):
            last = step == body_len - 1
            blo = int(s_ptr[cur])
            bhi = int(s_ptr[cur + 1])
            hi = _bisect_left(ns_t, cur_t, blo, bhi)  # strictly earlier facts
            total = 0.0
            n_cand = 0
            for i in range(blo, hi):
                if last and int(ns_o[i]) != start:
                    continue
                n_cand += 1
                total += math.exp(-decay * (cur_t - int(ns_t[i])))
            if n_cand == 0:
                ok = False
                break
            pick = -1
            if total > 0.0:
                u = rng.next_double() * total
                acc = 0.0
                for i in range(blo, hi):
                    if last and int(ns_o[i]) != start:
                        continue
                    acc += math.exp(-decay * (cur_t - int(ns_t[i])))
                    if u < acc:
                        pick = i
                        break
            if pick < 0:
                # All weights underflowed (or u landed on the boundary):
                # fall back to a uniform draw over the candidates.
                k = rng.next_below(n_cand)
                for i in range(blo, hi):
                    if last and int(ns_o[i]) != start:
                        continue
                    if k == 0:
                        pick = i
                        break
                    k -= 1
            step_r[step] = int(ns_r[pick])
            cur = int(ns_o[pick])
            cur_t = int(ns_t[pick])
        if ok:
            for j in range(body_len):
                r = step_r[body_len - 1 - j]
                out[n_success, j] = r + n_rel_base if r < n_rel_base else r - n_rel_base
            n_success += 1
    return out[:n_success].copy()


def sample_bodies(
    re_s: np.ndarray,
    re_o: np.ndarray,
    re_t: np.ndarray,
    r1_start: int,
    r1_end: int,
    sr_key: np.ndarray,
    sr_t: np.ndarray,
    sr_o: np.ndarray,
    n_rel2: int,
    body: np.ndarray,
    n_samples: int,
    seed: int,
) -> np.ndarray:
    """Sample body groundings for confidence estimation.

    Draws the first body fact uniformly among facts of body[0], then chains
    the remaining body relations forward with non-decreasing times, sampling
    uniformly among the valid continuations. Returns the successful chains as
    rows [e_1, t_1, e_2, t_2, ..., t_l, e_{l+1}], shape (n_success, 2l + 1).
    """
    length = len(body)
    n = len(sr_key)
    out = np.empty((n_samples, 2 * length + 1), dtype=np.int64)
    n_success = 0
    r1_count = r1_end - r1_start
    if r1_count <= 0:
        return out[:0].copy()
    rng = SplitMix64(seed)

    for _ in range(n_samples):
        i = r1_start + rng.next_below(r1_count)
        e1 = int(re_s[i])
        cur = int(re_o[i])
        cur_t = int(re_t[i])
        row = out[n_success]
        row[0] = e1
        row[1] = cur_t
        row[2] = cur
        ok = True
        col = 3
        for step in range(1, length):
            key = cur * n_rel2 + int(body[step])
            klo = _bisect_left(sr_key, key, 0, n)
            khi = _bisect_right(sr_key, key, klo, n)
            lo = _bisect_left(sr_t, cur_t, klo, khi)  # non-decreasing times
            cand = khi - lo
            if cand <= 0:
                ok = False
                break
            j = lo + rng.next_below(cand)
            cur = int(sr_o[j])
            cur_t = int(sr_t[j])
            row[col] = cur_t
            row[col + 1] = cur
            col += 2
        if ok:
            n_success += 1
    return out[:n_success].copy()
