"""Pure-Python implementation of the hot kernels.

Mirrors ``_kernels.pyx`` operation for operation; used when the compiled
extension is unavailable or ``FW_POMDP_PURE=1`` is set.

The bounded-Lipschitz distance between ``a`` and ``b`` on a finite metric
space is the linear program

    maximize   sum_x f[x] (a[x] - b[x])
    subject to |f[x]| <= s,  |f[x] - f[y]| <= l d(x, y),  s + l <= 1,  s, l >= 0.

With ``g = f + s`` every variable is nonnegative and every constraint has
the form ``row . v <= rhs`` with ``rhs >= 0``, so the slack basis is feasible
and a single-phase simplex suffices:

    g[x] - 2 s <= 0                       (n rows)
    g[x] - g[y] - d(x, y) l <= 0          (n (n - 1) rows, ordered pairs)
    s + l <= 1                            (1 row)

The metric is first snapped to a grid of 2**-30 times its largest entry,
which removes near-ties between distances; the value then moves by at most
half a grid step.  The leaving row follows a Harris two-pass
ratio test (largest pivot among near-minimal ratios), with Bland's rule as
the fallback should that ever cycle.  The value is
finally recomputed from the optimal basis with a fresh LU solve, which removes
the round-off accumulated over the pivots.  When that basis is not certified
optimal (primal and dual feasible against the original rows), round-off has
hidden an improving column: the tableau is rebuilt from the original rows for
the current basis and the simplex resumes, a few times at most.  The refined
value is used when the basis is certified or agrees with the tableau value.
"""
import math

import numpy as np

EPS = 1e-12
PIVOT_TOL = 1e-11
FEAS_TOL = 1e-12
MAX_PIVOTS_PER_ROW = 50
RESOLVE_TOL = 1e-7
CERT_TOL = 1e-10
MAX_REINVERSIONS = 3
SNAP_BITS = 30


def snap_metric(d):
    """Round ``d`` to a grid of ``2**-SNAP_BITS`` times its scale.

    Distances that agree to about nine digits become exactly equal, so the
    simplex meets exact ties (which Bland's rule handles) instead of
    near-zero pivots.  The distance moves by at most half a grid step.
    """
    top = float(np.max(d)) if d.size else 0.0
    if not top > 0.0:
        return d
    step = math.ldexp(1.0, math.frexp(top)[1] - SNAP_BITS)
    return np.round(d / step) * step


def _tableau(delta, d):
    n = delta.shape[0]
    nv = n + 2
    m = n + n * (n - 1) + 1
    tab = np.zeros((m + 1, nv + m + 1))
    s_col, l_col = n, n + 1
    for x in range(n):
        tab[x, x] = 1.0
        tab[x, s_col] = -2.0
    r = n
    for x in range(n):
        for y in range(n):
            if x == y:
                continue
            tab[r, x] = 1.0
            tab[r, y] = -1.0
            tab[r, l_col] = -d[x, y]
            r += 1
    tab[r, s_col] = 1.0
    tab[r, l_col] = 1.0
    tab[r, -1] = 1.0
    tab[:m, nv:nv + m] = np.eye(m)
    tab[m, :n] = delta
    tab[m, s_col] = -delta.sum()
    return tab, m, nv


def _leaving_row(tab, m, j, basis, harris):
    """Row leaving the basis when column ``j`` enters, or -1.

    The Harris variant takes the largest pivot among rows whose ratio is
    within ``FEAS_TOL`` of the minimum, which steers clear of tiny pivots;
    the plain variant is Bland's lowest-index rule.
    """
    rhs = tab[:, -1]
    pr = -1
    if harris:
        theta = 0.0
        for i in range(m):
            aij = tab[i, j]
            if aij > PIVOT_TOL:
                ratio = (rhs[i] + FEAS_TOL) / aij
                if pr < 0 or ratio < theta:
                    theta = ratio
                    pr = i
        if pr < 0:
            return -1
        pr = -1
        big = 0.0
        for i in range(m):
            aij = tab[i, j]
            if aij > PIVOT_TOL and rhs[i] / aij <= theta:
                if pr < 0 or aij > big or (aij == big and basis[i] < basis[pr]):
                    big = aij
                    pr = i
        return pr
    best = 0.0
    for i in range(m):
        aij = tab[i, j]
        if aij > PIVOT_TOL:
            ratio = rhs[i] / aij
            if pr < 0 or ratio < best or (ratio == best and basis[i] < basis[pr]):
                pr = i
                best = ratio
    return pr


def _simplex(tab, m, nv, harris, basis=None):
    """Run the primal simplex in place from ``basis`` (default: the slacks).

    Returns the final basis.  The Harris run gives up (returns None) after
    ``MAX_PIVOTS_PER_ROW * m`` pivots; the Bland run is not capped.
    """
    ncol = nv + m
    basis = list(range(nv, nv + m)) if basis is None else list(basis)
    obj = tab[m]
    pivots = 0
    while not harris or pivots < MAX_PIVOTS_PER_ROW * m:
        pivots += 1
        pc = pr = -1
        for j in range(ncol):
            if obj[j] <= EPS:
                continue
            # a column without a positive entry only arises from round-off
            # (the program is bounded), so it is skipped
            pr = _leaving_row(tab, m, j, basis, harris)
            if pr >= 0:
                pc = j
                break
        if pc < 0:
            return basis
        tab[pr] /= tab[pr, pc]
        col = tab[:, pc].copy()
        col[pr] = 0.0
        nz = np.nonzero(col)[0]
        if nz.size:
            tab[nz] -= np.outer(col[nz], tab[pr])
        np.maximum(tab[:m, -1], 0.0, out=tab[:m, -1])
        basis[pr] = pc
    return None


def _reinvert(orig, m, basis):
    """Tableau of the original rows expressed in ``basis``, or None if singular.

    Gauss-Jordan pivoting on a fresh copy, with the row of each pivot chosen
    by largest magnitude; returns the tableau and the basis in row order.
    """
    tab = orig.copy()
    free = list(range(m))
    rows = [0] * m
    for col in basis:
        r = max(free, key=lambda i: abs(tab[i, col]))
        if abs(tab[r, col]) <= PIVOT_TOL:
            return None
        free.remove(r)
        tab[r] /= tab[r, col]
        c = tab[:, col].copy()
        c[r] = 0.0
        nz = np.nonzero(c)[0]
        if nz.size:
            tab[nz] -= np.outer(c[nz], tab[r])
        rows[r] = col
    np.maximum(tab[:m, -1], 0.0, out=tab[:m, -1])
    return tab, rows


def _optimal_basis(orig, m, nv):
    """Final basis of the simplex and whether it is certified optimal."""
    tab = orig.copy()
    basis = _simplex(tab, m, nv, True)
    if basis is None:
        # Harris row choice may cycle on degenerate vertices; Bland cannot
        tab = orig.copy()
        basis = _simplex(tab, m, nv, False)
    for attempt in range(MAX_REINVERSIONS + 1):
        try:
            x = np.linalg.solve(orig[:m, basis], orig[:m, -1])
        except np.linalg.LinAlgError:
            return tab, basis, None, False
        if _certified(orig, m, basis, x):
            return tab, basis, x, True
        if attempt == MAX_REINVERSIONS:
            break
        fresh = _reinvert(orig, m, basis)
        if fresh is None:
            break
        tab, start = fresh
        basis = _simplex(tab, m, nv, True, start)
        if basis is None:
            tab, start = _reinvert(orig, m, start)
            basis = _simplex(tab, m, nv, False, start)
    return tab, basis, x, False


def _certified(orig, m, basis, xb):
    """True when the basis is primal and dual feasible against the original rows."""
    if xb.min() < -CERT_TOL:
        return False
    A = orig[:m, :-1]
    dual = np.linalg.solve(A[:, basis].T, orig[m, basis])
    return float((orig[m, :-1] - dual @ A).max()) <= CERT_TOL


def bl_distance(a, b, d):
    """Exact bounded-Lipschitz distance between two probability vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    delta = a - b
    orig, m, nv = _tableau(delta, snap_metric(np.asarray(d, dtype=np.float64)))
    tab, basis, x, certified = _optimal_basis(orig, m, nv)
    value = -float(tab[m, -1])
    # the basis re-solved against the original rows sheds pivot round-off; an
    # uncertified basis far from the tableau value keeps the latter
    if x is not None:
        refined = float(np.dot(orig[m, basis], x))
        if certified or abs(refined - value) <= RESOLVE_TOL:
            value = refined
    return value if value > 0.0 else 0.0


def bl_distances(query, beliefs, d):
    """Distances from ``query`` to every row of ``beliefs``."""
    beliefs = np.asarray(beliefs, dtype=np.float64)
    out = np.empty(beliefs.shape[0])
    for i in range(beliefs.shape[0]):
        out[i] = bl_distance(query, beliefs[i], d)
    return out
