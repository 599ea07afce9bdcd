"""Numba inner loops: trajectory stepping and kernel distribution evolution.

Everything here is called with plain float64/int64 arrays; orchestration,
RNG stream handling, and bookkeeping stay in the calling modules.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def evolve_rows(up, down, hold, d, buf, steps):
    """Apply the lazy kernel `steps` times to each row of d, in place."""
    rows, n1 = d.shape
    n = n1 - 1
    src = d
    dst = buf
    for _ in range(steps):
        for r in range(rows):
            dst[r, 0] = hold[0] * src[r, 0] + down[1] * src[r, 1]
            for x in range(1, n):
                dst[r, x] = (hold[x] * src[r, x] + up[x - 1] * src[r, x - 1]
                             + down[x + 1] * src[r, x + 1])
            dst[r, n] = hold[n] * src[r, n] + up[n - 1] * src[r, n - 1]
        src, dst = dst, src
    if steps % 2 == 1:
        for r in range(rows):
            for x in range(n1):
                d[r, x] = buf[r, x]


@njit(cache=True)
def row_tvs(d, pi, out):
    """Per-row (1/2) sum |row - pi|."""
    rows, n1 = d.shape
    for r in range(rows):
        s = 0.0
        for x in range(n1):
            diff = d[r, x] - pi[x]
            s += diff if diff >= 0.0 else -diff
        out[r] = 0.5 * s


@njit(cache=True)
def max_row_tv(d, pi):
    """max over rows of (1/2) sum |row - pi|."""
    rows, n1 = d.shape
    worst = 0.0
    for r in range(rows):
        s = 0.0
        for x in range(n1):
            diff = d[r, x] - pi[x]
            s += diff if diff >= 0.0 else -diff
        tv = 0.5 * s
        if tv > worst:
            worst = tv
    return worst


@njit(cache=True)
def walk_chunk(omega, target, pos, us, lazy):
    """Advance one trajectory through the uniforms in us.

    Site 0 is forced right when omega[0] >= 1.  Returns (pos, used, hit);
    `used` counts consumed uniforms == elapsed chain steps.
    """
    used = 0
    for t in range(len(us)):
        u = us[t]
        used += 1
        if lazy:
            if u < 0.5:
                continue
            u = (u - 0.5) * 2.0
        if u < omega[pos]:
            pos += 1
        else:
            pos -= 1
        if pos == target:
            return pos, used, True
    return pos, used, False


@njit(cache=True)
def coupled_chunk(omega, nu, horizon, target, state, us, check_dominance):
    """Advance the coupled (restricted, free) pair with shared uniforms.

    state = [x_res, x_free, kmax, t_res, t_free, res_done, free_done, dom_ok]
    (int64).  The restricted walk is forced right at nu[max(kmax - horizon, 0)]
    where kmax is the highest block index it has reached; the free walk is
    forced right at 0 only.  Both stop on first hit of `target`.
    """
    x_res, x_free = state[0], state[1]
    kmax = state[2]
    t_res, t_free = state[3], state[4]
    res_done = state[5] == 1
    free_done = state[6] == 1
    dom_ok = state[7] == 1
    nblocks = len(nu)
    for t in range(len(us)):
        if res_done and free_done:
            break
        u = us[t]
        if not res_done:
            pk = kmax - horizon
            patch = nu[pk] if pk > 0 else 0
            if x_res == patch or u < omega[x_res]:
                x_res += 1
            else:
                x_res -= 1
            t_res += 1
            while kmax + 1 < nblocks and nu[kmax + 1] <= x_res:
                kmax += 1
            if x_res == target:
                res_done = True
        if not free_done:
            if x_free == 0 or u < omega[x_free]:
                x_free += 1
            else:
                x_free -= 1
            t_free += 1
            if x_free == target:
                free_done = True
        if check_dominance and x_res < x_free:
            dom_ok = False
    state[0], state[1] = x_res, x_free
    state[2] = kmax
    state[3], state[4] = t_res, t_free
    state[5] = 1 if res_done else 0
    state[6] = 1 if free_done else 0
    state[7] = 1 if dom_ok else 0
