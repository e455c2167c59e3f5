"""Hot loops of the multifilter trees.

Each kernel works on the *sorted* projections ``y`` of one node along a unit
direction, so subsets produced by thresholds are contiguous windows
``[lo, hi)`` of ``y``.  All kernels are written with the subset of numpy that
numba supports; with numba disabled they run as ordinary numpy code (each
window operation is still vectorized, only the worklist loop is Python).

Return conventions
------------------
Leaves are int64 rows ``(lo, hi, needs_fix)``; split logs are float rows
``(lo, hi, tau, r, n_left, n_right)``; tail-bound logs are float rows
``(lo, hi, tau0, tau_med, bound, empirical_tail)``.  An ``err`` code of 0 means
success, 1 means no split was found where one must exist.
"""

import numpy as np

from ._accel import jit

SLACK = 1e-12


@jit
def _slack(y, lo, hi):
    a = abs(y[lo])
    b = abs(y[hi - 1])
    s = a if a > b else b
    if s < 1.0:
        s = 1.0
    return SLACK * s * s


@jit
def prefix_moments(y, shift):
    m = y.shape[0]
    ps = np.zeros(m + 1)
    pss = np.zeros(m + 1)
    acc = 0.0
    acc2 = 0.0
    for i in range(m):
        c = y[i] - shift
        acc += c
        acc2 += c * c
        ps[i + 1] = acc
        pss[i + 1] = acc2
    return ps, pss


@jit
def window_var(ps, pss, lo, hi, n_total):
    """(1/n_total) sum_{lo <= i < hi} (y_i - window mean)^2."""
    m = hi - lo
    if m <= 1:
        return 0.0
    s1 = ps[hi] - ps[lo]
    s2 = pss[hi] - pss[lo]
    v = s2 - s1 * s1 / m
    if v < 0.0:
        v = 0.0
    return v / n_total


@jit
def median_pos(lo, hi):
    """Lower median: rank ceil(m/2) counted from 1."""
    return lo + (hi - lo + 1) // 2 - 1


@jit
def halfwidth(y, lo, hi, tau, q):
    """Smallest c >= 0 such that |{i : |y_i - tau| <= c}| >= q within [lo, hi)."""
    if q <= 0:
        return 0.0
    dist = np.abs(y[lo:hi] - tau)
    return np.partition(dist, q - 1)[q - 1]


@jit
def count_le(y, lo, hi, t):
    return np.searchsorted(y[lo:hi], t, side="right")


@jit
def count_lt(y, lo, hi, t):
    return np.searchsorted(y[lo:hi], t, side="left")


@jit
def size_ok(nl, nr, m, beta):
    """Size-potential test nl^(1+b) + nr^(1+b) < m^(1+b), normalized by m."""
    e = 1.0 + beta
    a = (nl / m) ** e + (nr / m) ** e
    return a < 1.0 - SLACK


@jit
def split_or_tail_bound(y, lo, hi, tau0, gamma, beta):
    """Walk thresholds from tau0 toward the median looking for a valid split.

    Returns (found, tau, r, n_left, n_right, bound).  When ``found`` is False
    the last value is the certified tail bound 128 gamma / (beta^2 (tau0 - med)^2).
    """
    m = hi - lo
    tau_med = y[median_pos(lo, hi)]
    gap = tau0 - tau_med
    bound = np.inf
    if gap != 0.0:
        bound = 128.0 * gamma / (beta * beta * gap * gap)
    if tau0 > y[hi - 1] or tau0 < y[lo]:
        return False, 0.0, 0.0, 0, 0, bound
    if tau0 >= tau_med:
        t = tau0
        while t >= tau_med:
            g = (m - count_lt(y, lo, hi, t)) / m
            r = np.sqrt(2.0 * gamma / g)
            ts = t - r
            nl = count_le(y, lo, hi, ts + r)
            nr = m - count_lt(y, lo, hi, ts - r)
            need = 2.0 * gamma / (r * r) - SLACK
            if size_ok(nl, nr, m, beta) and 1.0 - nl / m >= need and 1.0 - nr / m >= need:
                return True, ts, r, nl, nr, bound
            t = t - 2.0 * r
    else:
        t = tau0
        while t <= tau_med:
            g = count_le(y, lo, hi, t) / m
            r = np.sqrt(2.0 * gamma / g)
            ts = t + r
            nl = count_le(y, lo, hi, ts + r)
            nr = m - count_lt(y, lo, hi, ts - r)
            need = 2.0 * gamma / (r * r) - SLACK
            if size_ok(nl, nr, m, beta) and 1.0 - nl / m >= need and 1.0 - nr / m >= need:
                return True, ts, r, nl, nr, bound
            t = t + 2.0 * r
    return False, 0.0, 0.0, 0, 0, bound


@jit
def interval_stats(y, lo, hi, alpha):
    """Median, half-width c of the quantile interval I and the 2I window."""
    m = hi - lo
    med = y[median_pos(lo, hi)]
    q = int(np.ceil((1.0 - alpha / 4.0) * m - 1e-9))
    if q > m:
        q = m
    c = halfwidth(y, lo, hi, med, q)
    mlo = lo + count_lt(y, lo, hi, med - 2.0 * c)
    mhi = lo + count_le(y, lo, hi, med + 2.0 * c)
    return med, c, mlo, mhi


@jit
def cluster_check(y, ps, pss, lo, hi, n_total, alpha, R):
    """(passes, needs_fix) for the cluster branch of split-or-cluster."""
    if hi - lo <= 1:
        return True, False
    med, c, mlo, mhi = interval_stats(y, lo, hi, alpha)
    sl = _slack(y, lo, hi)
    vmid = window_var(ps, pss, mlo, mhi, n_total)
    if vmid <= R * R / 8.0 + sl:
        vall = window_var(ps, pss, lo, hi, n_total)
        return True, vall > R * R / 2.0 + sl
    return False, False


@jit
def bc_partition_windows(y, n_total, alpha, beta, gamma, R, record):
    """Worklist of split-or-cluster steps on one node along one direction.

    ``y`` must be sorted.  Returns (leaves, splits, tails, err).  Leaves with
    ``needs_fix`` set still have to go through the (randomized) repair step.
    """
    m0 = y.shape[0]
    shift = y[median_pos(0, m0)] if m0 > 0 else 0.0
    ps, pss = prefix_moments(y, shift)
    kmax = int(np.floor(np.log2(2048.0 / (beta * beta * alpha))))
    base = np.sqrt(2048.0 / (beta * beta * alpha))
    work_lo = [0]
    work_hi = [m0]
    leaves = [(0, 0, 0)]
    leaves.pop()
    splits = [(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)]
    splits.pop()
    tails = [(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)]
    tails.pop()
    err = 0
    head = 0
    while head < len(work_lo):
        lo = work_lo[head]
        hi = work_hi[head]
        head += 1
        if hi <= lo:
            continue
        ok, fix = cluster_check(y, ps, pss, lo, hi, n_total, alpha, R)
        if ok:
            leaves.append((lo, hi, 1 if fix else 0))
            continue
        m = hi - lo
        tau_med = y[median_pos(lo, hi)]
        found = False
        for k in range(kmax + 1):
            step = base / (2.0 ** k)
            for sgn in (1.0, -1.0):
                tau0 = tau_med + sgn * step
                f, ts, r, nl, nr, bnd = split_or_tail_bound(y, lo, hi, tau0, gamma, beta)
                if f:
                    if record:
                        splits.append((float(lo), float(hi), ts, r, float(nl), float(nr)))
                    work_lo.append(lo)
                    work_hi.append(lo + nl)
                    work_lo.append(hi - nr)
                    work_hi.append(hi)
                    found = True
                    break
                if record:
                    if tau0 >= tau_med:
                        emp = (m - count_lt(y, lo, hi, tau0)) / m
                    else:
                        emp = count_le(y, lo, hi, tau0) / m
                    tails.append((float(lo), float(hi), tau0, tau_med, bnd, emp))
            if found:
                break
        if not found:
            err = 1
            leaves.append((lo, hi, 1))
    out_leaves = np.empty((len(leaves), 3), dtype=np.int64)
    for i in range(len(leaves)):
        out_leaves[i, 0] = leaves[i][0]
        out_leaves[i, 1] = leaves[i][1]
        out_leaves[i, 2] = leaves[i][2]
    out_splits = np.empty((len(splits), 6))
    for i in range(len(splits)):
        for j in range(6):
            out_splits[i, j] = splits[i][j]
    out_tails = np.empty((len(tails), 6))
    for i in range(len(tails)):
        for j in range(6):
            out_tails[i, j] = tails[i][j]
    return out_leaves, out_splits, out_tails, err


@jit
def bc_first_active_direction(P, cols, n_total, alpha, R):
    """First column (among ``cols``, in order) along which the whole node is
    not an untouched cluster leaf; P.shape[1] when there is none.

    Columns outside ``cols`` must be known to pass (for instance because their
    total variance is already below the cluster threshold).
    """
    m, N = P.shape
    for t in range(cols.shape[0]):
        j = cols[t]
        if m <= 1:
            continue
        y = np.sort(P[:, j])
        shift = y[median_pos(0, m)]
        ps, pss = prefix_moments(y, shift)
        ok, fix = cluster_check(y, ps, pss, 0, m, n_total, alpha, R)
        if not ok or fix:
            return j
    return N


# ---------------------------------------------------------------------------
# Gaussian tree
# ---------------------------------------------------------------------------


@jit
def gauss_one_window(y, lo, hi, alpha_dq, R):
    """Middle-quantile window and whether it spans at most R."""
    m = hi - lo
    cut = int(np.floor(alpha_dq * m / 2.0))
    olo = lo + cut
    ohi = hi - cut
    if ohi <= olo:
        return olo, ohi, True
    sl = SLACK * max(1.0, max(abs(y[olo]), abs(y[ohi - 1])))
    return olo, ohi, (y[ohi - 1] - y[olo]) <= R + sl


@jit
def gauss_split_scan(y, lo, hi, beta, R, kmax):
    """Scan tau_k = med + 2 k r in order 0, -1, +1, ... for a size-valid split.

    Returns (found, tau, r, n_left, n_right).
    """
    m = hi - lo
    tau_med = y[median_pos(lo, hi)]
    r = R / (4.0 * kmax)
    for a in range(0, 2 * kmax + 1):
        if a == 0:
            k = 0
        elif a % 2 == 1:
            k = -((a + 1) // 2)
        else:
            k = a // 2
        tau = tau_med + 2.0 * k * r
        nl = count_le(y, lo, hi, tau + r)
        nr = m - count_lt(y, lo, hi, tau - r)
        if size_ok(nl, nr, m, beta):
            return True, tau, r, nl, nr
    return False, 0.0, r, 0, 0


@jit
def gauss_partition_windows(y, alpha_dq, beta, R, kmax, record):
    """Worklist of Gaussian split-or-cluster steps; leaves are (lo, hi, 0)."""
    m0 = y.shape[0]
    work_lo = [0]
    work_hi = [m0]
    leaves = [(0, 0, 0)]
    leaves.pop()
    splits = [(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)]
    splits.pop()
    err = 0
    head = 0
    while head < len(work_lo):
        lo = work_lo[head]
        hi = work_hi[head]
        head += 1
        if hi <= lo:
            continue
        olo, ohi, one = gauss_one_window(y, lo, hi, alpha_dq, R)
        if one:
            if ohi > olo:
                leaves.append((olo, ohi, 0))
            continue
        f, tau, r, nl, nr = gauss_split_scan(y, lo, hi, beta, R, kmax)
        if not f:
            err = 1
            continue
        if record:
            splits.append((float(lo), float(hi), tau, r, float(nl), float(nr)))
        work_lo.append(lo)
        work_hi.append(lo + nl)
        work_lo.append(hi - nr)
        work_hi.append(hi)
    out_leaves = np.empty((len(leaves), 3), dtype=np.int64)
    for i in range(len(leaves)):
        out_leaves[i, 0] = leaves[i][0]
        out_leaves[i, 1] = leaves[i][1]
        out_leaves[i, 2] = leaves[i][2]
    out_splits = np.empty((len(splits), 6))
    for i in range(len(splits)):
        for j in range(6):
            out_splits[i, j] = splits[i][j]
    return out_leaves, out_splits, np.empty((0, 6)), err


@jit
def gauss_first_active_direction(P, alpha_dq, R):
    m, N = P.shape
    for j in range(N):
        y = np.sort(P[:, j])
        olo, ohi, one = gauss_one_window(y, 0, m, alpha_dq, R)
        if not one or olo != 0 or ohi != m:
            return j
    return N


# ---------------------------------------------------------------------------
# nearest hypothesis
# ---------------------------------------------------------------------------


@jit
def nearest_rows(A, B):
    """For each row of A the index of the closest row of B (ties -> lowest)."""
    n = A.shape[0]
    k = B.shape[0]
    out = np.empty(n, dtype=np.int64)
    bn = np.empty(k)
    for j in range(k):
        bn[j] = np.dot(B[j], B[j])
    G = A @ B.T
    for i in range(n):
        best = 0
        bd = bn[0] - 2.0 * G[i, 0]
        for j in range(1, k):
            dj = bn[j] - 2.0 * G[i, j]
            if dj < bd:
                bd = dj
                best = j
        out[i] = best
    return out
