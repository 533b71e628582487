"""Jitted inner loops for the Markov and semi-Markov engines.

Every routine here mirrors a Python-level function (``model.detach``,
``model.attach``, ``model.select_site``, the ``sample`` methods in
``stochastic``) operation for operation and draw for draw, so a kernel run and
a pure-Python run from the same generator state produce identical floats.

State is passed as three mutable arrays: ``psi`` (n,) bool, ``pos`` (n, dim)
and ``cen`` (dim,), plus the attached count ``k`` kept by the caller.
"""

import numpy as np
from numba import literally, njit, typeof
from numba.core import types

from .model import RENORMALIZE_EVERY

BOX, POINT, MIXTURE = 0, 1, 2
EXPONENTIAL, TRUNCATED_NORMAL, CONTINUOUS_POISSON, DETERMINISTIC = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def select_site(psi, theta_a, theta_d, target):
    cum = 0.0
    n = psi.shape[0]
    for i in range(n):
        cum += theta_d if psi[i] else theta_a
        if target < cum:
            return i
    return n - 1


@njit(cache=True, nogil=True)
def bisect_right(a, x):
    """Number of entries of sorted ``a`` that are <= ``x``."""
    lo = 0
    hi = a.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if x < a[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True, nogil=True)
def draw_perturbation(rng, kind, table, cumw, out):
    dim = out.shape[0]
    if kind == BOX:
        for d in range(dim):
            out[d] = table[0, d] + table[1, d] * (2.0 * rng.random() - 1.0)
    elif kind == POINT:
        for d in range(dim):
            out[d] = table[0, d]
    else:
        j = bisect_right(cumw, rng.random())
        if j > cumw.shape[0] - 1:
            j = cumw.shape[0] - 1
        for d in range(dim):
            out[d] = table[j, d]


@njit(cache=True, nogil=True)
def draw_wait(rng, kind, par, grid, cdf):
    if kind == EXPONENTIAL:
        return rng.standard_exponential() / par[0]
    if kind == TRUNCATED_NORMAL:
        while True:
            x = rng.normal(par[0], par[1])
            if x >= 0.0:
                return x
    if kind == CONTINUOUS_POISSON:
        u = rng.random()
        j = bisect_right(cdf, u) - 1
        if j < 0:
            j = 0
        if j > cdf.shape[0] - 2:
            j = cdf.shape[0] - 2
        width = cdf[j + 1] - cdf[j]
        frac = (u - cdf[j]) / width if width > 0.0 else 0.0
        m = grid[j] + frac * (grid[j + 1] - grid[j])
        return max(m - 0.5, 0.0)
    return par[0]


@njit(cache=True, nogil=True)
def apply_detach(psi, pos, cen, k, i):
    if k > 1:
        for d in range(cen.shape[0]):
            cen[d] = cen[d] - (pos[i, d] - cen[d]) / (k - 1)
    psi[i] = False
    return k - 1


@njit(cache=True, nogil=True)
def apply_attach(psi, pos, cen, k, i, x):
    for d in range(cen.shape[0]):
        pos[i, d] = x[d] + cen[d]
        cen[d] = x[d] / (k + 1) + cen[d]
    psi[i] = True
    return k + 1


@njit(cache=True, nogil=True)
def renormalize(psi, pos, cen, k):
    if k == 0:
        return
    for d in range(cen.shape[0]):
        s = 0.0
        for i in range(psi.shape[0]):
            if psi[i]:
                s += pos[i, d]
        cen[d] = s / k


@njit(cache=True, nogil=True)
def observe(t0, t1, k, cen, times, idx, out_counts, out_cent, win_a, win_b, occ):
    # state (k, cen) holds on [t0, t1)
    while idx < times.shape[0] and times[idx] < t1:
        out_counts[idx] = k
        out_cent[idx, :] = cen
        idx += 1
    lo = max(t0, win_a)
    hi = min(t1, win_b)
    if hi > lo:
        occ[k] += hi - lo
    return idx


@njit(cache=True, nogil=True)
def finish(k, cen, times, idx, out_counts, out_cent):
    while idx < times.shape[0]:
        out_counts[idx] = k
        out_cent[idx, :] = cen
        idx += 1


@njit(cache=True, nogil=True)
def count_attached(psi):
    k = 0
    for i in range(psi.shape[0]):
        if psi[i]:
            k += 1
    return k


# ---------------------------------------------------------------------------
# Markov engine


@njit(cache=True, nogil=True)
def markov_stream(
    rng, theta_a, theta_d, psi, pos, cen, horizon, kind, table, cumw, times, out_counts, out_cent, win_a, win_b, occ
):
    """Run to ``horizon`` keeping only snapshots at ``times`` and window occupancy."""
    literally(kind)
    n = psi.shape[0]
    dim = cen.shape[0]
    n_times = times.shape[0]
    xbuf = np.empty(dim)
    k = count_attached(psi)
    t = 0.0
    jumps = 0
    idx = 0
    while True:
        c = theta_d * k + theta_a * (n - k)
        t_next = t + rng.standard_exponential() / c
        if t_next > horizon:
            observe(t, horizon, k, cen, times, idx, out_counts, out_cent, win_a, win_b, occ)
            finish(k, cen, times, idx, out_counts, out_cent)
            return jumps
        # state (k, cen) holds on [t, t_next)
        while idx < n_times and times[idx] < t_next:
            out_counts[idx] = k
            for d in range(dim):
                out_cent[idx, d] = cen[d]
            idx += 1
        lo = max(t, win_a)
        hi = min(t_next, win_b)
        if hi > lo:
            occ[k] += hi - lo
        i = select_site(psi, theta_a, theta_d, rng.random() * c)
        if psi[i]:
            k = apply_detach(psi, pos, cen, k, i)
        else:
            draw_perturbation(rng, kind, table, cumw, xbuf)
            k = apply_attach(psi, pos, cen, k, i, xbuf)
        t = t_next
        jumps += 1
        if jumps % RENORMALIZE_EVERY == 0:
            renormalize(psi, pos, cen, k)


@njit(cache=True, nogil=True)
def markov_record(
    rng, theta_a, theta_d, psi, pos, cen, t, jumps, horizon, kind, table, cumw, rec_t, rec_psi, rec_pos, rec_cen
):
    """Record up to ``len(rec_t)`` jumps; returns (recorded, t, jumps, done)."""
    literally(kind)
    n = psi.shape[0]
    xbuf = np.empty(cen.shape[0])
    k = count_attached(psi)
    cap = rec_t.shape[0]
    m = 0
    while m < cap:
        c = theta_d * k + theta_a * (n - k)
        t_next = t + rng.standard_exponential() / c
        if t_next > horizon:
            return m, t, jumps, True
        i = select_site(psi, theta_a, theta_d, rng.random() * c)
        if psi[i]:
            k = apply_detach(psi, pos, cen, k, i)
        else:
            draw_perturbation(rng, kind, table, cumw, xbuf)
            k = apply_attach(psi, pos, cen, k, i, xbuf)
        t = t_next
        jumps += 1
        if jumps % RENORMALIZE_EVERY == 0:
            renormalize(psi, pos, cen, k)
        rec_t[m] = t
        rec_psi[m, :] = psi
        rec_pos[m, :, :] = pos
        rec_cen[m, :] = cen
        m += 1
    return m, t, jumps, False


@njit(cache=True, nogil=True)
def sample_jumps(rng, theta_a, theta_d, psi0, pos0, cen0, kind, table, cumw, size):
    """Independent one-step draws from a fixed state.

    Returns the chosen site, the attached count after the jump, the centroid
    after the jump, and the chosen site's position after the jump.
    """
    literally(kind)
    dim = cen0.shape[0]
    sites = np.empty(size, np.int64)
    counts = np.empty(size, np.int64)
    cents = np.empty((size, dim))
    site_pos = np.empty((size, dim))
    psi = psi0.copy()
    pos = pos0.copy()
    cen = cen0.copy()
    xbuf = np.empty(dim)
    k0 = count_attached(psi0)
    n = psi0.shape[0]
    c = theta_d * k0 + theta_a * (n - k0)
    for s in range(size):
        psi[:] = psi0
        cen[:] = cen0
        i = select_site(psi, theta_a, theta_d, rng.random() * c)
        if psi[i]:
            k = apply_detach(psi, pos, cen, k0, i)
        else:
            draw_perturbation(rng, kind, table, cumw, xbuf)
            k = apply_attach(psi, pos, cen, k0, i, xbuf)
        sites[s] = i
        counts[s] = k
        cents[s, :] = cen
        site_pos[s, :] = pos[i]
        pos[i, :] = pos0[i]
    return sites, counts, cents, site_pos


# ---------------------------------------------------------------------------
# semi-Markov engine


@njit(cache=True, nogil=True)
def init_clocks(rng, psi, clocks, a_kind, a_par, a_grid, a_cdf, d_kind, d_par, d_grid, d_cdf):
    literally(a_kind)
    literally(d_kind)
    for i in range(psi.shape[0]):
        if psi[i]:
            clocks[i] = 0.0 + draw_wait(rng, d_kind, d_par, d_grid, d_cdf)
        else:
            clocks[i] = 0.0 + draw_wait(rng, a_kind, a_par, a_grid, a_cdf)


@njit(cache=True, nogil=True)
def _before(ht, hs, a, b):
    return ht[a] < ht[b] or (ht[a] == ht[b] and hs[a] < hs[b])


@njit(cache=True, nogil=True)
def _sift_down(ht, hs, pos):
    # binary min-heap on (time, site) pairs stored in two parallel arrays
    n = ht.shape[0]
    while True:
        child = 2 * pos + 1
        if child >= n:
            return
        if child + 1 < n and _before(ht, hs, child + 1, child):
            child += 1
        if not _before(ht, hs, child, pos):
            return
        ht[pos], ht[child] = ht[child], ht[pos]
        hs[pos], hs[child] = hs[child], hs[pos]
        pos = child


@njit(cache=True, nogil=True)
def heap_from_clocks(clocks):
    ht = clocks.copy()
    hs = np.arange(clocks.shape[0])
    for pos in range(clocks.shape[0] // 2 - 1, -1, -1):
        _sift_down(ht, hs, pos)
    return ht, hs


@njit(cache=True, nogil=True)
def heap_replace_top(ht, hs, t, site):
    ht[0] = t
    hs[0] = site
    _sift_down(ht, hs, 0)


@njit(cache=True, nogil=True)
def semi_stream(
    rng, psi, pos, cen, clocks, horizon, kind, table, cumw,
    a_kind, a_par, a_grid, a_cdf, d_kind, d_par, d_grid, d_cdf,
    times, out_counts, out_cent, win_a, win_b, occ,
):
    literally(kind)
    literally(a_kind)
    literally(d_kind)
    dim = cen.shape[0]
    n_times = times.shape[0]
    xbuf = np.empty(dim)
    k = count_attached(psi)
    ht, hs = heap_from_clocks(clocks)
    t = 0.0
    jumps = 0
    idx = 0
    while True:
        t_next = ht[0]
        i = hs[0]
        if t_next > horizon:
            observe(t, horizon, k, cen, times, idx, out_counts, out_cent, win_a, win_b, occ)
            finish(k, cen, times, idx, out_counts, out_cent)
            return jumps
        # state (k, cen) holds on [t, t_next)
        while idx < n_times and times[idx] < t_next:
            out_counts[idx] = k
            for d in range(dim):
                out_cent[idx, d] = cen[d]
            idx += 1
        lo = max(t, win_a)
        hi = min(t_next, win_b)
        if hi > lo:
            occ[k] += hi - lo
        if psi[i]:
            k = apply_detach(psi, pos, cen, k, i)
            clocks[i] = t_next + draw_wait(rng, a_kind, a_par, a_grid, a_cdf)
        else:
            draw_perturbation(rng, kind, table, cumw, xbuf)
            k = apply_attach(psi, pos, cen, k, i, xbuf)
            clocks[i] = t_next + draw_wait(rng, d_kind, d_par, d_grid, d_cdf)
        heap_replace_top(ht, hs, clocks[i], i)
        t = t_next
        jumps += 1
        if jumps % RENORMALIZE_EVERY == 0:
            renormalize(psi, pos, cen, k)


@njit(cache=True, nogil=True)
def semi_record(
    rng, psi, pos, cen, clocks, t, jumps, horizon, kind, table, cumw,
    a_kind, a_par, a_grid, a_cdf, d_kind, d_par, d_grid, d_cdf,
    rec_t, rec_psi, rec_pos, rec_cen,
):
    literally(kind)
    literally(a_kind)
    literally(d_kind)
    xbuf = np.empty(cen.shape[0])
    k = count_attached(psi)
    ht, hs = heap_from_clocks(clocks)
    cap = rec_t.shape[0]
    m = 0
    while m < cap:
        t_next = ht[0]
        i = hs[0]
        if t_next > horizon:
            return m, t, jumps, True
        if psi[i]:
            k = apply_detach(psi, pos, cen, k, i)
            clocks[i] = t_next + draw_wait(rng, a_kind, a_par, a_grid, a_cdf)
        else:
            draw_perturbation(rng, kind, table, cumw, xbuf)
            k = apply_attach(psi, pos, cen, k, i, xbuf)
            clocks[i] = t_next + draw_wait(rng, d_kind, d_par, d_grid, d_cdf)
        heap_replace_top(ht, hs, clocks[i], i)
        t = t_next
        jumps += 1
        if jumps % RENORMALIZE_EVERY == 0:
            renormalize(psi, pos, cen, k)
        rec_t[m] = t
        rec_psi[m, :] = psi
        rec_pos[m, :, :] = pos
        rec_cen[m, :] = cen
        m += 1
    return m, t, jumps, False


# ---------------------------------------------------------------------------
# dispatch

# Kernels specialise on their integer ``kind`` arguments (via ``literally``) so
# the law-specific branches are compiled away.  Going through the dispatcher
# for literal arguments costs tens of milliseconds per call, so the compiled
# entry point is looked up once per argument-type signature and reused.

_LITERAL_ARGS = {
    "markov_stream": (7,),
    "markov_record": (9,),
    "sample_jumps": (6,),
    "init_clocks": (3, 7),
    "semi_stream": (6, 9, 13),
    "semi_record": (8, 11, 15),
}
_entry_points = {}


def _matches(sig, args, literal):
    for pos, (ty, arg) in enumerate(zip(sig, args)):
        if pos in literal:
            if not (isinstance(ty, types.IntegerLiteral) and ty.literal_value == arg):
                return False
        elif ty != typeof(arg):
            return False
    return True


def call(kernel, *args):
    """Run ``kernel`` through its cached literal specialisation."""
    literal = _LITERAL_ARGS[kernel.__name__]
    key = (kernel.__name__,) + tuple(
        int(a) if pos in literal else typeof(a) for pos, a in enumerate(args)
    )
    entry = _entry_points.get(key)
    if entry is None:
        result = kernel(*args)
        for sig, cres in kernel.overloads.items():
            if _matches(sig, args, literal):
                _entry_points[key] = cres.entry_point
                break
        return result
    return entry(*args)
