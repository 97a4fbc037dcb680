"""First-order fast marching on a masked Cartesian grid."""

import numpy as np
from numba import njit

_FAR, _TRIAL, _KNOWN = 0, 1, 2


@njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        parent = (i - 1) // 2
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        vals[parent], vals[i] = vals[i], vals[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(keys, vals, size):
    key = keys[0]
    val = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < size and keys[left] < keys[smallest]:
            smallest = left
        if right < size and keys[right] < keys[smallest]:
            smallest = right
        if smallest == i:
            break
        keys[smallest], keys[i] = keys[i], keys[smallest]
        vals[smallest], vals[i] = vals[i], vals[smallest]
        i = smallest
    return key, val, size


@njit(cache=True)
def _local_update(times, state, slowness, mask, i, j, h):
    nx, ny = times.shape
    inf = np.inf
    a = inf
    if i > 0 and mask[i - 1, j] and state[i - 1, j] == _KNOWN:
        a = times[i - 1, j]
    if i < nx - 1 and mask[i + 1, j] and state[i + 1, j] == _KNOWN:
        a = min(a, times[i + 1, j])
    b = inf
    if j > 0 and mask[i, j - 1] and state[i, j - 1] == _KNOWN:
        b = times[i, j - 1]
    if j < ny - 1 and mask[i, j + 1] and state[i, j + 1] == _KNOWN:
        b = min(b, times[i, j + 1])
    sh = slowness[i, j] * h
    if a == inf and b == inf:
        return inf
    if a == inf or b == inf or abs(a - b) >= sh:
        return min(a, b) + sh
    return 0.5 * (a + b + np.sqrt(2.0 * sh * sh - (a - b) ** 2))


@njit(cache=True)
def march(slowness, mask, initial, h):
    """Solve ``|grad t| = slowness`` outward from the finite entries of ``initial``.

    ``initial`` holds frozen arrival times (``inf`` elsewhere); nodes outside
    ``mask`` are never visited and do not act as upwind neighbours.
    """
    nx, ny = slowness.shape
    times = initial.copy()
    state = np.zeros((nx, ny), dtype=np.int8)
    cap = 4 * nx * ny + 16
    keys = np.empty(cap)
    vals = np.empty(cap, dtype=np.int64)
    size = 0
    for i in range(nx):
        for j in range(ny):
            if mask[i, j] and np.isfinite(initial[i, j]):
                state[i, j] = _KNOWN
    di = (-1, 1, 0, 0)
    dj = (0, 0, -1, 1)
    for i in range(nx):
        for j in range(ny):
            if state[i, j] != _KNOWN:
                continue
            for k in range(4):
                p = i + di[k]
                q = j + dj[k]
                if 0 <= p < nx and 0 <= q < ny and mask[p, q] and state[p, q] != _KNOWN:
                    t = _local_update(times, state, slowness, mask, p, q, h)
                    if t < times[p, q]:
                        times[p, q] = t
                        state[p, q] = _TRIAL
                        size = _heap_push(keys, vals, size, t, p * ny + q)
    while size > 0:
        t, flat, size = _heap_pop(keys, vals, size)
        i = flat // ny
        j = flat % ny
        if state[i, j] == _KNOWN or t > times[i, j]:
            continue
        state[i, j] = _KNOWN
        for k in range(4):
            p = i + di[k]
            q = j + dj[k]
            if 0 <= p < nx and 0 <= q < ny and mask[p, q] and state[p, q] != _KNOWN:
                tn = _local_update(times, state, slowness, mask, p, q, h)
                if tn < times[p, q]:
                    times[p, q] = tn
                    state[p, q] = _TRIAL
                    if size >= cap:
                        # lazy deletion leaves stale entries; compact them
                        w = 0
                        for r in range(size):
                            fr = vals[r]
                            if state[fr // ny, fr % ny] != _KNOWN and keys[r] == times[fr // ny, fr % ny]:
                                keys[w] = keys[r]
                                vals[w] = vals[r]
                                w += 1
                        size = 0
                        for r in range(w):
                            size = _heap_push(keys, vals, size, keys[r], vals[r])
                    size = _heap_push(keys, vals, size, tn, p * ny + q)
    return times
