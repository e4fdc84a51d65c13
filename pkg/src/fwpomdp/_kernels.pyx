# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: exact bounded-Lipschitz distances.

Same single-phase simplex as ``_kernels_py`` (see its module docstring for
the program); the tableau and the final basis solve use malloc'd buffers reused across
calls.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.math cimport fabs, frexp, ldexp, nearbyint
from libc.string cimport memcpy, memset

cnp.import_array()

cdef double EPS = 1e-12
cdef double PIVOT_TOL = 1e-11
cdef double FEAS_TOL = 1e-12
cdef Py_ssize_t MAX_PIVOTS_PER_ROW = 50
cdef double RESOLVE_TOL = 1e-7
cdef double CERT_TOL = 1e-10
cdef int MAX_REINVERSIONS = 3
cdef int SNAP_BITS = 30


cdef bint _solve_basis(double* B, double* x, Py_ssize_t m) noexcept nogil:
    """Solve B x = x in place (B is m-by-m row-major) with partial pivoting."""
    cdef Py_ssize_t i, j, k, p
    cdef double big, f, t
    for k in range(m):
        p = k
        big = fabs(B[k * m + k])
        for i in range(k + 1, m):
            if fabs(B[i * m + k]) > big:
                big = fabs(B[i * m + k])
                p = i
        if big == 0.0:
            return False
        if p != k:
            for j in range(m):
                t = B[k * m + j]
                B[k * m + j] = B[p * m + j]
                B[p * m + j] = t
            t = x[k]
            x[k] = x[p]
            x[p] = t
        for i in range(k + 1, m):
            f = B[i * m + k] / B[k * m + k]
            if f != 0.0:
                for j in range(k, m):
                    B[i * m + j] -= f * B[k * m + j]
                x[i] -= f * x[k]
    for k in range(m - 1, -1, -1):
        t = x[k]
        for j in range(k + 1, m):
            t -= B[k * m + j] * x[j]
        x[k] = t / B[k * m + k]
    return True


cdef Py_ssize_t _leaving_row(const double* tab, Py_ssize_t m, Py_ssize_t w, Py_ssize_t j,
                             const Py_ssize_t* basis, bint harris) noexcept nogil:
    """Leaving row for entering column j (-1 if none); see _kernels_py."""
    cdef Py_ssize_t i, pr = -1
    cdef Py_ssize_t rhs = w - 1
    cdef double aij, ratio, theta = 0.0, big = 0.0, best = 0.0
    if harris:
        for i in range(m):
            aij = tab[i * w + j]
            if aij > PIVOT_TOL:
                ratio = (tab[i * w + rhs] + FEAS_TOL) / aij
                if pr < 0 or ratio < theta:
                    theta = ratio
                    pr = i
        if pr < 0:
            return -1
        pr = -1
        for i in range(m):
            aij = tab[i * w + j]
            if aij > PIVOT_TOL and tab[i * w + rhs] / aij <= theta:
                if pr < 0 or aij > big or (aij == big and basis[i] < basis[pr]):
                    big = aij
                    pr = i
        return pr
    for i in range(m):
        aij = tab[i * w + j]
        if aij > PIVOT_TOL:
            ratio = tab[i * w + rhs] / aij
            if pr < 0 or ratio < best or (ratio == best and basis[i] < basis[pr]):
                pr = i
                best = ratio
    return pr


cdef bint _simplex(double* tab, Py_ssize_t m, Py_ssize_t nv, Py_ssize_t w,
                   Py_ssize_t* basis, bint harris) noexcept nogil:
    """Primal simplex in place; False when the Harris run hits its pivot cap."""
    cdef Py_ssize_t i, j, pr, pc, pivots = 0
    cdef Py_ssize_t rhs = w - 1
    cdef double piv, f
    cdef double* row = tab + m * w
    cdef double* prow
    while not harris or pivots < MAX_PIVOTS_PER_ROW * m:
        pivots += 1
        pc = -1
        pr = -1
        for j in range(nv + m):
            if row[j] <= EPS:
                continue
            # a column with no positive entry is a round-off artefact: skip it
            pr = _leaving_row(tab, m, w, j, basis, harris)
            if pr >= 0:
                pc = j
                break
        if pc < 0:
            return True
        prow = tab + pr * w
        piv = prow[pc]
        for j in range(w):
            prow[j] = prow[j] / piv
        for i in range(m + 1):
            if i == pr:
                continue
            f = tab[i * w + pc]
            if f != 0.0:
                for j in range(w):
                    tab[i * w + j] = tab[i * w + j] - f * prow[j]
        for i in range(m):
            if tab[i * w + rhs] < 0.0:
                tab[i * w + rhs] = 0.0
        basis[pr] = pc
    return False


cdef bint _certified(const double* orig, Py_ssize_t m, Py_ssize_t w, const Py_ssize_t* basis,
                     const double* xb, double* lu, double* dual) noexcept nogil:
    """True when the basis is primal and dual feasible against the original rows."""
    cdef Py_ssize_t i, j, k
    cdef double rc
    for k in range(m):
        if xb[k] < -CERT_TOL:
            return False
    # duals from B^T y = c_B
    for i in range(m):
        for k in range(m):
            lu[k * m + i] = orig[i * w + basis[k]]
        dual[i] = orig[m * w + basis[i]]
    if not _solve_basis(lu, dual, m):
        return False
    for j in range(w - 1):
        rc = orig[m * w + j]
        for i in range(m):
            rc -= dual[i] * orig[i * w + j]
        if rc > CERT_TOL:
            return False
    return True


cdef bint _reinvert(double* tab, const double* orig, Py_ssize_t m, Py_ssize_t w,
                    Py_ssize_t* basis, Py_ssize_t* work) noexcept nogil:
    """Rebuild the tableau of the original rows for basis; False if singular.

    Gauss-Jordan pivoting on a fresh copy, each pivot row chosen by largest
    magnitude; basis is rewritten in row order.  work holds 2 m entries.
    """
    cdef Py_ssize_t i, j, k, r, col
    cdef Py_ssize_t* rows = work
    cdef Py_ssize_t* used = work + m
    cdef double big, piv, f
    cdef double* prow
    memcpy(tab, orig, (m + 1) * w * sizeof(double))
    for i in range(m):
        used[i] = 0
    for k in range(m):
        col = basis[k]
        r = -1
        big = 0.0
        for i in range(m):
            if not used[i] and (r < 0 or fabs(tab[i * w + col]) > big):
                big = fabs(tab[i * w + col])
                r = i
        if big <= PIVOT_TOL:
            return False
        used[r] = 1
        rows[r] = col
        prow = tab + r * w
        piv = prow[col]
        for j in range(w):
            prow[j] = prow[j] / piv
        for i in range(m + 1):
            if i == r:
                continue
            f = tab[i * w + col]
            if f != 0.0:
                for j in range(w):
                    tab[i * w + j] = tab[i * w + j] - f * prow[j]
    for i in range(m):
        basis[i] = rows[i]
        if tab[i * w + w - 1] < 0.0:
            tab[i * w + w - 1] = 0.0
    return True


cdef bint _basic_solution(const double* orig, Py_ssize_t m, Py_ssize_t w, const Py_ssize_t* basis,
                          double* lu, double* sol) noexcept nogil:
    """Solve B x_B = rhs against the original rows; False if B is singular."""
    cdef Py_ssize_t i, k
    for i in range(m):
        for k in range(m):
            lu[i * m + k] = orig[i * w + basis[k]]
        sol[i] = orig[i * w + w - 1]
    return _solve_basis(lu, sol, m)


cdef double _bl_lp(const double* a, const double* b, const double* d, Py_ssize_t n,
                   double* tab, double* orig, double* lu, double* sol, double* dual,
                   Py_ssize_t* basis, Py_ssize_t* work) noexcept nogil:
    cdef Py_ssize_t nv = n + 2
    cdef Py_ssize_t m = n + n * (n - 1) + 1
    cdef Py_ssize_t w = nv + m + 1
    cdef Py_ssize_t rhs = w - 1
    cdef Py_ssize_t s_col = n, l_col = n + 1
    cdef Py_ssize_t x, y, r, i, k
    cdef int attempt
    cdef bint solved = False, certified = False
    cdef double total = 0.0, f, val, top = 0.0, step = 0.0
    cdef int ex
    cdef double* row

    # snap the metric to a relative grid so near-equal distances tie exactly
    for i in range(n * n):
        if d[i] > top:
            top = d[i]
    if top > 0.0:
        frexp(top, &ex)
        step = ldexp(1.0, ex - SNAP_BITS)

    memset(tab, 0, (m + 1) * w * sizeof(double))
    for x in range(n):
        tab[x * w + x] = 1.0
        tab[x * w + s_col] = -2.0
    r = n
    for x in range(n):
        for y in range(n):
            if x == y:
                continue
            tab[r * w + x] = 1.0
            tab[r * w + y] = -1.0
            if step > 0.0:
                tab[r * w + l_col] = -(nearbyint(d[x * n + y] / step) * step)
            else:
                tab[r * w + l_col] = -d[x * n + y]
            r += 1
    tab[r * w + s_col] = 1.0
    tab[r * w + l_col] = 1.0
    tab[r * w + rhs] = 1.0
    for i in range(m):
        tab[i * w + nv + i] = 1.0
        basis[i] = nv + i
    row = tab + m * w
    for x in range(n):
        row[x] = a[x] - b[x]
        total += a[x] - b[x]
    row[s_col] = -total
    memcpy(orig, tab, (m + 1) * w * sizeof(double))

    if not _simplex(tab, m, nv, w, basis, True):
        # Harris row choice may cycle on degenerate vertices; Bland cannot
        memcpy(tab, orig, (m + 1) * w * sizeof(double))
        for i in range(m):
            basis[i] = nv + i
        _simplex(tab, m, nv, w, basis, False)

    # an uncertified basis means round-off hid an improving column: rebuild
    # the tableau for that basis from the original rows and resume
    val = -row[rhs]
    for attempt in range(MAX_REINVERSIONS + 1):
        solved = _basic_solution(orig, m, w, basis, lu, sol)
        if not solved:
            break
        certified = _certified(orig, m, w, basis, sol, lu, dual)
        if certified or attempt == MAX_REINVERSIONS:
            break
        if not _reinvert(tab, orig, m, w, basis, work):
            break
        memcpy(work, basis, m * sizeof(Py_ssize_t))
        if not _simplex(tab, m, nv, w, basis, True):
            memcpy(basis, work, m * sizeof(Py_ssize_t))
            _reinvert(tab, orig, m, w, basis, work)
            _simplex(tab, m, nv, w, basis, False)
        val = -row[rhs]

    # the basis re-solved against the original rows sheds pivot round-off; an
    # uncertified basis far from the tableau value keeps the latter
    if solved:
        f = 0.0
        for k in range(m):
            f += orig[m * w + basis[k]] * sol[k]
        if certified or fabs(f - val) <= RESOLVE_TOL:
            val = f
    return val if val > 0.0 else 0.0


cdef class _Workspace:
    cdef double* tab
    cdef double* orig
    cdef double* lu
    cdef double* sol
    cdef double* dual
    cdef Py_ssize_t* basis
    cdef Py_ssize_t* work

    def __cinit__(self, Py_ssize_t n):
        cdef Py_ssize_t m = n + n * (n - 1) + 1
        cdef Py_ssize_t w = n + 2 + m + 1
        self.tab = <double*> malloc((m + 1) * w * sizeof(double))
        self.orig = <double*> malloc((m + 1) * w * sizeof(double))
        self.lu = <double*> malloc(m * m * sizeof(double))
        self.sol = <double*> malloc(m * sizeof(double))
        self.dual = <double*> malloc(m * sizeof(double))
        self.basis = <Py_ssize_t*> malloc(m * sizeof(Py_ssize_t))
        self.work = <Py_ssize_t*> malloc(2 * m * sizeof(Py_ssize_t))
        if (self.tab == NULL or self.orig == NULL or self.lu == NULL or self.sol == NULL or self.dual == NULL
                or self.basis == NULL or self.work == NULL):
            raise MemoryError()

    def __dealloc__(self):
        free(self.tab)
        free(self.orig)
        free(self.lu)
        free(self.sol)
        free(self.dual)
        free(self.basis)
        free(self.work)


def bl_distance(a, b, d):
    """Exact bounded-Lipschitz distance between two probability vectors."""
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0]
    cdef _Workspace ws = _Workspace(n)
    cdef double out
    with nogil:
        out = _bl_lp(&av[0], &bv[0], &dv[0, 0], n, ws.tab, ws.orig, ws.lu, ws.sol, ws.dual, ws.basis, ws.work)
    return out


def bl_distances(query, beliefs, d):
    """Distances from ``query`` to every row of ``beliefs``."""
    cdef const double[::1] qv = np.ascontiguousarray(query, dtype=np.float64)
    cdef const double[:, ::1] bv = np.ascontiguousarray(beliefs, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef Py_ssize_t n = qv.shape[0]
    cdef Py_ssize_t k = bv.shape[0], i
    cdef _Workspace ws = _Workspace(n)
    out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(k):
            out[i] = _bl_lp(&qv[0], &bv[i, 0], &dv[0, 0], n, ws.tab, ws.orig, ws.lu, ws.sol, ws.dual, ws.basis, ws.work)
    return out_arr
