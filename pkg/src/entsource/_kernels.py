"""Sequential event kernels (numba).  All times are int64 picoseconds."""

import numba as nb
import numpy as np

NEVER = -(2**62)


@nb.njit(cache=True, nogil=True)
def _heap_push(heap, n, value):
    if n == heap.shape[0]:
        grown = np.empty(2 * heap.shape[0] + 8, dtype=np.int64)
        grown[:n] = heap[:n]
        heap = grown
    i = n
    heap[i] = value
    while i > 0:
        parent = (i - 1) // 2
        if heap[parent] <= heap[i]:
            break
        heap[parent], heap[i] = heap[i], heap[parent]
        i = parent
    return heap, n + 1


@nb.njit(cache=True, nogil=True)
def _heap_pop(heap, n):
    top = heap[0]
    n -= 1
    heap[0] = heap[n]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= n:
            break
        child = left
        if left + 1 < n and heap[left + 1] < heap[left]:
            child = left + 1
        if heap[i] <= heap[child]:
            break
        heap[i], heap[child] = heap[child], heap[i]
        i = child
    return top, n


@nb.njit(cache=True, nogil=True)
def deadtime_filter(cand, limit, dead_ps, ap_prob, ap_tau_ps, last, heap, heap_n, seed):
    """Non-paralyzable dead-time filter with afterpulse cascade.

    ``cand`` is sorted and entirely below ``limit``.  Pending afterpulses live
    in the min-heap ``heap[:heap_n]``; those at or beyond ``limit`` stay there
    for the next call.  Every accepted event spawns an afterpulse with
    probability ``ap_prob`` at an exponential delay of mean ``ap_tau_ps``.
    ``last`` is the end of the current dead period.
    """
    np.random.seed(seed)
    n = cand.shape[0]
    out = np.empty(n + heap_n + 16, dtype=np.int64)
    m = 0
    i = 0
    while True:
        tc = cand[i] if i < n else limit
        ta = heap[0] if heap_n > 0 else limit
        if tc >= limit and ta >= limit:
            break
        if tc <= ta:
            t = tc
            i += 1
        else:
            t, heap_n = _heap_pop(heap, heap_n)
        if t < last:
            continue
        if m == out.shape[0]:
            grown = np.empty(2 * m + 16, dtype=np.int64)
            grown[:m] = out[:m]
            out = grown
        out[m] = t
        m += 1
        last = t + dead_ps
        if ap_prob > 0.0 and np.random.random() < ap_prob:
            delay = np.int64(np.rint(np.random.exponential(ap_tau_ps)))
            heap, heap_n = _heap_push(heap, heap_n, t + delay)
    return out[:m], last, heap, heap_n


@nb.njit(cache=True, nogil=True)
def greedy_match(a, b, offset_ps, window_ps, bound2):
    """Consume-once earliest-match pairing of A events with B events.

    A pair is accepted when |2 (t_B - t_A - offset)| <= window (all doubled to
    stay in integers).  Only A events with 2 t_A < ``bound2`` are processed.
    Returns (matches, next A index, next B index).
    """
    na = a.shape[0]
    nb_ = b.shape[0]
    i = 0
    j = 0
    count = 0
    while i < na and 2 * a[i] < bound2:
        ta = a[i] + offset_ps
        while j < nb_ and 2 * (b[j] - ta) < -window_ps:
            j += 1
        if j < nb_ and 2 * (b[j] - ta) <= window_ps:
            count += 1
            j += 1
        i += 1
    return count, i, j


@nb.njit(cache=True, nogil=True)
def delay_pairs(a, b, lo_ps, hi_ps, bin_ps, hist, a_bound):
    """Accumulate every t_B - t_A in [lo, hi) into ``hist``.

    Processes A events with t_A + hi <= ``a_bound``.  Returns (next A index,
    first B index still needed).
    """
    na = a.shape[0]
    nb_ = b.shape[0]
    nbins = hist.shape[0]
    i = 0
    j0 = 0
    while i < na and a[i] + hi_ps <= a_bound:
        start = a[i] + lo_ps
        while j0 < nb_ and b[j0] < start:
            j0 += 1
        k = j0
        stop = a[i] + hi_ps
        while k < nb_ and b[k] < stop:
            idx = (b[k] - start) // bin_ps
            if idx < nbins:
                hist[idx] += 1
            k += 1
        i += 1
    return i, j0
