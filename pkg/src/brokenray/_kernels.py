"""Compiled inner loops: grid traversal, row assembly, Kaczmarz sweeps,
and greedy grouping of non-crossing rays."""

import numpy as np
from numba import njit


@njit(cache=True)
def _sign(v):
    if v > 0.0:
        return 1
    if v < 0.0:
        return -1
    return 0


@njit(cache=True)
def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit(cache=True)
def proper_intersect(ax, ay, bx, by, cx, cy, dx, dy):
    """Compiled twin of ``geometry.segments_properly_intersect``."""
    o1 = _sign(_orient(ax, ay, bx, by, cx, cy))
    o2 = _sign(_orient(ax, ay, bx, by, dx, dy))
    o3 = _sign(_orient(cx, cy, dx, dy, ax, ay))
    o4 = _sign(_orient(cx, cy, dx, dy, bx, by))
    if o1 == 0 and o2 == 0:
        if abs(bx - ax) >= abs(by - ay):
            lo1, hi1 = min(ax, bx), max(ax, bx)
            lo2, hi2 = min(cx, dx), max(cx, dx)
        else:
            lo1, hi1 = min(ay, by), max(ay, by)
            lo2, hi2 = min(cy, dy), max(cy, dy)
        return min(hi1, hi2) > max(lo1, lo2)
    if o1 * o2 > 0 or o3 * o4 > 0:
        return False
    if o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0:
        return True
    if o1 == 0:
        px, py = cx, cy
    elif o2 == 0:
        px, py = dx, dy
    elif o3 == 0:
        px, py = ax, ay
    else:
        px, py = bx, by
    in1 = (px == ax and py == ay) or (px == bx and py == by)
    in2 = (px == cx and py == cy) or (px == dx and py == dy)
    return not (in1 and in2)


@njit(cache=True)
def traverse(ax, ay, bx, by, ox, oy, d, n, cells, lengths):
    """Cells cut by a segment, in traversal order.

    Writes into ``cells``/``lengths`` (capacity >= 2n + 2) and returns the
    number of pieces.  Pieces lying on a grid line go to the cell above or
    to the right; parts outside the grid square are dropped.
    """
    dx = bx - ax
    dy = by - ay
    length = np.sqrt(dx * dx + dy * dy)
    alphas = np.empty(2 * n + 4)
    m = 0
    alphas[m] = 0.0
    m += 1
    alphas[m] = 1.0
    m += 1
    if dx != 0.0:
        k0 = int(np.floor((min(ax, bx) - ox) / d))
        k1 = int(np.ceil((max(ax, bx) - ox) / d))
        for k in range(max(k0, 0), min(k1, n) + 1):
            a = (ox + k * d - ax) / dx
            if 0.0 < a < 1.0:
                alphas[m] = a
                m += 1
    if dy != 0.0:
        k0 = int(np.floor((min(ay, by) - oy) / d))
        k1 = int(np.ceil((max(ay, by) - oy) / d))
        for k in range(max(k0, 0), min(k1, n) + 1):
            a = (oy + k * d - ay) / dy
            if 0.0 < a < 1.0:
                alphas[m] = a
                m += 1
    al = np.sort(alphas[:m])
    side = n * d
    count = 0
    for i in range(m - 1):
        a0 = al[i]
        a1 = al[i + 1]
        if a1 <= a0:
            continue
        am = 0.5 * (a0 + a1)
        px = ax + am * dx - ox
        py = ay + am * dy - oy
        if px < 0.0 or py < 0.0 or px > side or py > side:
            continue
        col = min(int(np.floor(px / d)), n - 1)
        row = min(int(np.floor(py / d)), n - 1)
        cell = row * n + col
        w = (a1 - a0) * length
        if count > 0 and cells[count - 1] == cell:
            lengths[count - 1] += w
        else:
            cells[count] = cell
            lengths[count] = w
            count += 1
    return count


@njit(cache=True)
def _row_entries(legs, owner, lo, hi, ox, oy, d, n, dead, cap_cells, cap_len, buf_c, buf_w, buf_o):
    """Combine the legs ``legs[lo:hi]`` of one row; returns entry count.

    ``owner[j]`` identifies the member ray of leg ``j``.  A member's weight
    in a cell is its total length there; a cell cut by several members gets
    the mean of their weights.  Results land in ``buf_c``/``buf_w``.
    """
    total = 0
    for j in range(lo, hi):
        k = traverse(legs[j, 0], legs[j, 1], legs[j, 2], legs[j, 3], ox, oy, d, n, cap_cells, cap_len)
        for i in range(k):
            buf_c[total] = cap_cells[i]
            buf_w[total] = cap_len[i]
            buf_o[total] = owner[j]
            total += 1
    order = np.argsort(buf_c[:total], kind="mergesort")
    cells = buf_c[:total][order]
    weights = buf_w[:total][order]
    owners = buf_o[:total][order]
    m = 0
    i = 0
    while i < total:
        c = cells[i]
        s = 0.0
        members = 0
        prev = -1
        j = i
        while j < total and cells[j] == c:
            s += weights[j]
            # legs of one member are contiguous, so a change of owner is a new member
            if owners[j] != prev:
                members += 1
                prev = owners[j]
            j += 1
        i = j
        if dead[c] or s <= 0.0:
            continue
        buf_c[m] = c
        buf_w[m] = s / members
        m += 1
    return m


@njit(cache=True)
def assemble_rows(legs, owner, row_ptr, ox, oy, d, n, dead):
    """CSR arrays for rows whose legs are ``legs[row_ptr[r]:row_ptr[r+1]]``."""
    nrows = row_ptr.size - 1
    cap_cells = np.empty(2 * n + 4, dtype=np.int64)
    cap_len = np.empty(2 * n + 4)
    counts = np.zeros(nrows, dtype=np.int64)
    maxlegs = 1
    for r in range(nrows):
        maxlegs = max(maxlegs, row_ptr[r + 1] - row_ptr[r])
    need = maxlegs * (2 * n + 4)
    buf_c = np.empty(need, dtype=np.int64)
    buf_w = np.empty(need)
    buf_o = np.empty(need, dtype=np.int64)
    for r in range(nrows):
        counts[r] = _row_entries(legs, owner, row_ptr[r], row_ptr[r + 1], ox, oy, d, n, dead,
                                 cap_cells, cap_len, buf_c, buf_w, buf_o)
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    for r in range(nrows):
        indptr[r + 1] = indptr[r] + counts[r]
    indices = np.empty(indptr[nrows], dtype=np.int64)
    data = np.empty(indptr[nrows])
    for r in range(nrows):
        k = _row_entries(legs, owner, row_ptr[r], row_ptr[r + 1], ox, oy, d, n, dead,
                         cap_cells, cap_len, buf_c, buf_w, buf_o)
        s = indptr[r]
        indices[s:s + k] = buf_c[:k]
        data[s:s + k] = buf_w[:k]
    return indptr, indices, data


@njit(cache=True)
def kaczmarz(indptr, indices, data, rhs, x, order, tol, max_updates, window):
    """Cyclic row projections over ``order``; updates ``x`` in place.

    Stops once ``window`` consecutive corrections have norm below ``tol``.
    Returns (updates, last correction norm, updates up to the last
    correction at or above tol).
    """
    m = order.size
    norms = np.empty(indptr.size - 1)
    for r in range(indptr.size - 1):
        s = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            s += data[k] * data[k]
        norms[r] = s
    it = 0
    quiet = 0
    last_sig = 0
    corr = 0.0
    while it < max_updates:
        h = order[it % m]
        dot = 0.0
        for k in range(indptr[h], indptr[h + 1]):
            dot += data[k] * x[indices[k]]
        coef = (rhs[h] - dot) / norms[h]
        for k in range(indptr[h], indptr[h + 1]):
            x[indices[k]] += coef * data[k]
        corr = abs(coef) * np.sqrt(norms[h])
        it += 1
        if corr < tol:
            quiet += 1
        else:
            quiet = 0
            last_sig = it
        if quiet >= window:
            break
    return it, corr, last_sig


@njit(cache=True)
def greedy_free_groups(segs, nsegs, max_elements, window, cell_ptr, cell_idx, n_cells):
    """Group rays so that no two members of a group cross.

    ``segs[i, k]`` holds leg ``k`` of ray ``i`` as (ax, ay, bx, by).  Rays
    are taken in order; each group is seeded by the first unused ray and
    filled from at most ``window`` following unused candidates.  When
    ``cell_ptr`` is non-empty, ray ``i`` covers cells
    ``cell_idx[cell_ptr[i]:cell_ptr[i + 1]]`` and members must not share a cell.
    """
    n = segs.shape[0]
    use_cells = cell_ptr.shape[0] > 0
    mark = np.full(max(n_cells, 1), -1, dtype=np.int64)
    group = np.full(n, -1, dtype=np.int64)
    members = np.empty(max_elements, dtype=np.int64)
    g = 0
    for i in range(n):
        if group[i] >= 0:
            continue
        group[i] = g
        members[0] = i
        if use_cells:
            for c in range(cell_ptr[i], cell_ptr[i + 1]):
                mark[cell_idx[c]] = g
        size = 1
        seen = 0
        j = i + 1
        while j < n and size < max_elements and seen < window:
            if group[j] >= 0:
                j += 1
                continue
            seen += 1
            ok = True
            if use_cells:
                for c in range(cell_ptr[j], cell_ptr[j + 1]):
                    if mark[cell_idx[c]] == g:
                        ok = False
                        break
            q = 0
            while ok and q < size:
                u = members[q]
                for a in range(nsegs[j]):
                    for b in range(nsegs[u]):
                        if proper_intersect(
                            segs[j, a, 0], segs[j, a, 1], segs[j, a, 2], segs[j, a, 3],
                            segs[u, b, 0], segs[u, b, 1], segs[u, b, 2], segs[u, b, 3],
                        ):
                            ok = False
                            break
                    if not ok:
                        break
                q += 1
            if ok:
                group[j] = g
                members[size] = j
                size += 1
                if use_cells:
                    for c in range(cell_ptr[j], cell_ptr[j + 1]):
                        mark[cell_idx[c]] = g
            j += 1
        g += 1
    return group
