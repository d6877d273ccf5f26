"""Compiled inner loops for the stochastic simulations.

All randomness comes from a ``numpy.random.Generator`` passed in by the
caller, so a run is reproducible from its seed. Discrete draws use the
inverse CDF of one uniform over cumulative weights in item-index order.
Each trial consumes, in order: one uniform for the user type, any uniforms
needed by the ranking strategy, one for the tried item and one for the
purchase decision.
"""

import numpy as np
from numba import njit

RANDOM, POPULARITY, QUALITY, FIXED = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def draw_index(u, cum):
    target = u * cum[cum.shape[0] - 1]
    for k in range(cum.shape[0]):
        if target < cum[k]:
            return k
    # rounding at the top end: last item with positive mass
    for k in range(cum.shape[0] - 1, 0, -1):
        if cum[k] > cum[k - 1]:
            return k
    return 0


@njit(cache=True, nogil=True)
def signal_table(visibility, feedback, counts):
    n_types, n_items = visibility.shape
    out = np.empty((n_types, n_items))
    for a in range(n_types):
        for j in range(n_items):
            out[a, j] = visibility[a, j] * float(counts[j]) ** feedback[a]
    return out


@njit(cache=True, nogil=True)
def one_trial(rng, cum_w, sig, quality, buf):
    """Returns (type, tried item or -1, purchased)."""
    i = draw_index(rng.random(), cum_w)
    acc = 0.0
    for j in range(sig.shape[1]):
        acc += sig[i, j]
        buf[j] = acc
    if acc <= 0.0:
        return i, -1, False
    j = draw_index(rng.random(), buf)
    bought = rng.random() < quality[i, j]
    return i, j, bought


@njit(cache=True, nogil=True)
def _grow(arr, size):
    out = np.empty(size, dtype=arr.dtype)
    out[:arr.shape[0]] = arr
    return out


@njit(cache=True, nogil=True)
def run_purchases(rng, cum_w, visibility, quality, feedback, counts,
                  n_purchases, record_every, max_trials, log_events):
    """Simulate until ``n_purchases`` purchases; record on the purchase clock."""
    n_types, n_items = visibility.shape
    sig = signal_table(visibility, feedback, counts)
    buf = np.empty(n_items)
    n_rec = n_purchases // record_every + 1
    if n_purchases % record_every != 0:
        n_rec += 1
    rec_counts = np.empty((n_rec, n_items), dtype=np.int64)
    rec_t = np.empty(n_rec, dtype=np.int64)
    rec_trials = np.empty(n_rec, dtype=np.int64)
    rec_counts[0] = counts
    rec_t[0] = 0
    rec_trials[0] = 0
    rec = 1
    cap = max(16, 2 * n_purchases) if log_events else 0
    ev_type = np.empty(cap, dtype=np.int64)
    ev_item = np.empty(cap, dtype=np.int64)
    ev_buy = np.empty(cap, dtype=np.bool_)
    trials = 0
    bought_n = 0
    status = 0
    while bought_n < n_purchases:
        if trials >= max_trials:
            status = 1
            break
        i, j, bought = one_trial(rng, cum_w, sig, quality, buf)
        if log_events:
            if trials >= ev_type.shape[0]:
                ev_type = _grow(ev_type, 2 * ev_type.shape[0])
                ev_item = _grow(ev_item, 2 * ev_item.shape[0])
                ev_buy = _grow(ev_buy, 2 * ev_buy.shape[0])
            ev_type[trials] = i
            ev_item[trials] = j
            ev_buy[trials] = bought
        trials += 1
        if bought:
            counts[j] += 1
            bought_n += 1
            for a in range(n_types):
                sig[a, j] = visibility[a, j] * float(counts[j]) ** feedback[a]
            if bought_n % record_every == 0 or bought_n == n_purchases:
                rec_counts[rec] = counts
                rec_t[rec] = bought_n
                rec_trials[rec] = trials
                rec += 1
    return (rec_counts[:rec], rec_t[:rec], rec_trials[:rec],
            ev_type[:trials], ev_item[:trials], ev_buy[:trials], trials, status)


@njit(cache=True, nogil=True)
def random_positions(rng, perm):
    """Fisher-Yates shuffle of positions 0..n-1 into ``perm`` (perm[j] = position of j)."""
    n = perm.shape[0]
    for k in range(n):
        perm[k] = k
    for k in range(n - 1, 0, -1):
        s = int(rng.random() * (k + 1))
        tmp = perm[k]
        perm[k] = perm[s]
        perm[s] = tmp


@njit(cache=True, nogil=True)
def descending_positions(values):
    """Position of each item when sorted by descending value, ties by lower index."""
    order = np.argsort(-values, kind="mergesort")
    pos = np.empty(values.shape[0], dtype=np.int64)
    for k in range(order.shape[0]):
        pos[order[k]] = k
    return pos


@njit(cache=True, nogil=True)
def _bump(order, pos, counts, j):
    # counts[j] just increased by one; move j towards the front
    k = pos[j]
    while k > 0:
        prev = order[k - 1]
        if counts[prev] > counts[j] or (counts[prev] == counts[j] and prev < j):
            break
        order[k] = prev
        pos[prev] = k
        k -= 1
    order[k] = j
    pos[j] = k


@njit(cache=True, nogil=True)
def run_ranked(rng, cum_w, visibility, quality, feedback, counts, n_arrivals,
               record_every, window, strategy, iota, quality_pos, allowed):
    """Simulate ``n_arrivals`` users under a ranking strategy.

    ``visibility`` is the intrinsic visibility; the effective visibility of
    item j for the arriving type i is ``visibility[i, j] * iota[position]``.
    Records on the arrival clock.
    """
    n_types, n_items = visibility.shape
    sig = signal_table(visibility * allowed, feedback, counts)
    buf = np.empty(n_items)
    eta = np.empty(n_items)
    perm = np.empty(n_items, dtype=np.int64)
    pop_pos = descending_positions(counts.astype(np.float64))
    pop_order = np.empty(n_items, dtype=np.int64)
    for j in range(n_items):
        pop_order[pop_pos[j]] = j
    n_rec = n_arrivals // record_every + 1
    if n_arrivals % record_every != 0:
        n_rec += 1
    rec_counts = np.empty((n_rec, n_items), dtype=np.int64)
    rec_t = np.empty(n_rec, dtype=np.int64)
    rec_buys = np.empty(n_rec, dtype=np.int64)
    rec_window = np.empty(n_rec, dtype=np.float64)
    rec_counts[0] = counts
    rec_t[0] = 0
    rec_buys[0] = 0
    rec_window[0] = np.nan
    rec = 1
    ring = np.zeros(window, dtype=np.int64)
    ring_sum = 0
    buys = 0
    for t in range(1, n_arrivals + 1):
        i = draw_index(rng.random(), cum_w)
        if strategy == RANDOM:
            random_positions(rng, perm)
            for j in range(n_items):
                eta[j] = iota[perm[j]]
        elif strategy == POPULARITY:
            for j in range(n_items):
                eta[j] = iota[pop_pos[j]]
        elif strategy == QUALITY:
            for j in range(n_items):
                eta[j] = iota[quality_pos[i, j]]
        else:
            for j in range(n_items):
                eta[j] = 1.0
        acc = 0.0
        for j in range(n_items):
            acc += sig[i, j] * eta[j]
            buf[j] = acc
        bought = False
        if acc > 0.0:
            j = draw_index(rng.random(), buf)
            bought = rng.random() < quality[i, j]
            if bought:
                counts[j] += 1
                buys += 1
                for a in range(n_types):
                    sig[a, j] = visibility[a, j] * allowed[a, j] * float(counts[j]) ** feedback[a]
                if strategy == POPULARITY:
                    _bump(pop_order, pop_pos, counts, j)
        slot = t % window
        ring_sum += (1 if bought else 0) - ring[slot]
        ring[slot] = 1 if bought else 0
        if t % record_every == 0 or t == n_arrivals:
            rec_counts[rec] = counts
            rec_t[rec] = t
            rec_buys[rec] = buys
            rec_window[rec] = ring_sum / min(t, window)
            rec += 1
    return rec_counts[:rec], rec_t[:rec], rec_buys[:rec], rec_window[:rec]
