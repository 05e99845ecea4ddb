# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for fixed-direction power control under per-antenna limits.

Given candidate beamforming directions, the minimum-power SINR subproblem has a
unique minimal solution (its requirement map is monotone and scalable), found
here by value iteration accelerated with exact solves of the binding-user
linear system. The fairness level is then located by bisection with the
per-antenna load as the feasibility oracle. Semantics match fairbeam.kernels'
pure-python implementation.
"""

import numpy as np

DEF BIG = 1e100
DEF C_OK = 0
DEF C_INFEASIBLE = 1
DEF C_NO_CONVERGENCE = 2

STATUS_OK = 0
STATUS_INFEASIBLE = 1
STATUS_NO_CONVERGENCE = 2


cdef int _solve_dense(double* a, double* b, Py_ssize_t m) noexcept nogil:
    """In-place Gaussian elimination with partial pivoting; 0 on success."""
    cdef Py_ssize_t i, j, k, piv
    cdef double best, tmp, f
    for k in range(m):
        piv = k
        best = a[k * m + k]
        if best < 0:
            best = -best
        for i in range(k + 1, m):
            tmp = a[i * m + k]
            if tmp < 0:
                tmp = -tmp
            if tmp > best:
                best = tmp
                piv = i
        if best <= 0:
            return 1
        if piv != k:
            for j in range(m):
                tmp = a[k * m + j]
                a[k * m + j] = a[piv * m + j]
                a[piv * m + j] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        for i in range(k + 1, m):
            f = a[i * m + k] / a[k * m + k]
            if f != 0.0:
                for j in range(k, m):
                    a[i * m + j] -= f * a[k * m + j]
                b[i] -= f * b[k]
    for k in range(m - 1, -1, -1):
        tmp = b[k]
        for j in range(k + 1, m):
            tmp -= a[k * m + j] * b[j]
        b[k] = tmp / a[k * m + k]
    return 0


cdef int _min_power(double[:, ::1] gains, double[::1] tg, double[::1] sig2,
                    long long[::1] owner, Py_ssize_t nu, Py_ssize_t ng,
                    double[::1] p, double[::1] fk, double[::1] q,
                    long long[::1] sel, long long[::1] prev_sel,
                    double[::1] amat, double[::1] rhs, long long[::1] active,
                    double rtol, int max_iter) noexcept nogil:
    cdef Py_ssize_t i, k, l, a, bcol, m
    cdef int it, ok
    cdef double acc, req, scale, diff, dmax

    for k in range(ng):
        p[k] = 0.0
        prev_sel[k] = -2
    # a positive requirement with zero own-group gain can never be met
    for i in range(nu):
        if tg[i] > 0.0 and gains[i, owner[i]] <= 0.0:
            return C_INFEASIBLE

    for it in range(max_iter):
        for k in range(ng):
            fk[k] = 0.0
            sel[k] = -1
        for i in range(nu):
            if tg[i] <= 0.0:
                continue
            k = owner[i]
            acc = sig2[i]
            for l in range(ng):
                if l != k:
                    acc += gains[i, l] * p[l]
            req = tg[i] * acc / gains[i, k]
            if req > fk[k]:
                fk[k] = req
                sel[k] = i
        for k in range(ng):
            if fk[k] > BIG:
                # iterates from zero are monotone, so crossing BIG proves
                # the requirement system has no fixed point
                return C_INFEASIBLE

        ok = 1
        for k in range(ng):
            if sel[k] != prev_sel[k]:
                ok = 0
                break
        if ok:
            # selection stable: solve the binding-user system exactly
            m = 0
            for k in range(ng):
                if sel[k] >= 0:
                    active[m] = k
                    m += 1
            for a in range(m):
                k = active[a]
                i = sel[k]
                rhs[a] = tg[i] * sig2[i] / gains[i, k]
                for bcol in range(m):
                    l = active[bcol]
                    if l == k:
                        amat[a * m + bcol] = 1.0
                    else:
                        amat[a * m + bcol] = -tg[i] * gains[i, l] / gains[i, k]
            if _solve_dense(&amat[0], &rhs[0], m) == 0:
                ok = 1
                for a in range(m):
                    if not (rhs[a] >= 0.0):
                        ok = 0
                        break
                if ok:
                    for k in range(ng):
                        q[k] = 0.0
                    for a in range(m):
                        q[active[a]] = rhs[a]
                    # verify every user; the fixed point is unique, so any
                    # verified fixed point is the minimal one
                    for i in range(nu):
                        if tg[i] <= 0.0:
                            continue
                        k = owner[i]
                        acc = sig2[i]
                        for l in range(ng):
                            if l != k:
                                acc += gains[i, l] * q[l]
                        req = tg[i] * acc / gains[i, k]
                        scale = q[k] if q[k] > 1.0 else 1.0
                        if req > q[k] + rtol * scale:
                            ok = 0
                            break
                    if ok:
                        for k in range(ng):
                            p[k] = q[k]
                        return C_OK

        # plain value-iteration fallback step; accept once the sweep is a
        # numerical no-op
        dmax = 0.0
        for k in range(ng):
            diff = fk[k] - p[k]
            if diff < 0:
                diff = -diff
            scale = p[k] if p[k] > 1.0 else 1.0
            diff /= scale
            if diff > dmax:
                dmax = diff
            p[k] = fk[k]
            prev_sel[k] = sel[k]
        if dmax <= 1e-15:
            return C_OK
    return C_NO_CONVERGENCE


def min_power_fixed_point(double[:, ::1] gains, double[::1] tg, double[::1] sig2,
                          long long[::1] owner, Py_ssize_t ng,
                          double rtol=1e-12, int max_iter=100000):
    """Minimal per-group powers meeting every user's scaled SINR requirement.

    gains[i, l] holds |w_l^H h_i|^2, tg the effective per-user targets.
    Returns (p, status) with status 0 ok, 1 infeasible, 2 not converged.
    """
    cdef Py_ssize_t nu = gains.shape[0]
    if gains.shape[1] != ng:
        raise ValueError("gains must have one column per group")
    p = np.zeros(ng)
    fk = np.zeros(ng)
    q = np.zeros(ng)
    sel = np.zeros(ng, dtype=np.int64)
    prev_sel = np.zeros(ng, dtype=np.int64)
    amat = np.zeros(ng * ng)
    rhs = np.zeros(ng)
    active = np.zeros(ng, dtype=np.int64)
    cdef double[::1] pv = p
    cdef double[::1] fkv = fk
    cdef double[::1] qv = q
    cdef long long[::1] selv = sel
    cdef long long[::1] prevv = prev_sel
    cdef double[::1] amatv = amat
    cdef double[::1] rhsv = rhs
    cdef long long[::1] activev = active
    cdef int status
    with nogil:
        status = _min_power(gains, tg, sig2, owner, nu, ng, pv, fkv, qv,
                            selv, prevv, amatv, rhsv, activev, rtol, max_iter)
    return p, status


cdef double _load(double[:, ::1] coeff, double[::1] budgets, double[::1] p,
                  Py_ssize_t na, Py_ssize_t ng) noexcept nogil:
    cdef Py_ssize_t n, k
    cdef double acc, worst
    worst = 0.0
    for n in range(na):
        acc = 0.0
        for k in range(ng):
            acc += coeff[n, k] * p[k]
        acc /= budgets[n]
        if acc > worst:
            worst = acc
    return worst


def fairness_bisect(double[:, ::1] gains, double[::1] gamma, double[::1] sig2,
                    long long[::1] owner, Py_ssize_t ng,
                    double[:, ::1] coeff, double[::1] budgets,
                    double t_hi, double eps, int max_steps=200,
                    double rtol=1e-12, int max_iter=100000):
    """Largest t whose minimal powers keep every per-antenna load at or below 1.

    Returns (t, p, status, steps). status 2 signals an inner solve that did
    not converge; callers should fall back to a generic LP route.
    """
    cdef Py_ssize_t nu = gains.shape[0]
    cdef Py_ssize_t na = coeff.shape[0]
    if coeff.shape[1] != ng or budgets.shape[0] != na:
        raise ValueError("coeff/budgets shapes do not match")
    if t_hi <= 0:
        raise ValueError("t_hi must be positive")

    p = np.zeros(ng)
    p_lo = np.zeros(ng)
    fk = np.zeros(ng)
    q = np.zeros(ng)
    sel = np.zeros(ng, dtype=np.int64)
    prev_sel = np.zeros(ng, dtype=np.int64)
    amat = np.zeros(ng * ng)
    rhs = np.zeros(ng)
    active = np.zeros(ng, dtype=np.int64)
    tgbuf = np.zeros(nu)

    cdef double[::1] pv = p
    cdef double[::1] plov = p_lo
    cdef double[::1] fkv = fk
    cdef double[::1] qv = q
    cdef long long[::1] selv = sel
    cdef long long[::1] prevv = prev_sel
    cdef double[::1] amatv = amat
    cdef double[::1] rhsv = rhs
    cdef long long[::1] activev = active
    cdef double[::1] tgv = tgbuf

    cdef double lo = 0.0
    cdef double hi = t_hi
    cdef double mid, floor_
    cdef Py_ssize_t i, k
    cdef int status, steps = 0, feas

    with nogil:
        # the upper bound itself may be achievable; never exceed it
        for i in range(nu):
            tgv[i] = t_hi * gamma[i]
        status = _min_power(gains, tgv, sig2, owner, nu, ng, pv, fkv, qv,
                            selv, prevv, amatv, rhsv, activev, rtol, max_iter)
        if status == C_NO_CONVERGENCE:
            with gil:
                return 0.0, p_lo, STATUS_NO_CONVERGENCE, steps
        if status == C_OK and _load(coeff, budgets, pv, na, ng) <= 1.0:
            with gil:
                return t_hi, p, STATUS_OK, steps

        while steps < max_steps:
            floor_ = lo if lo > eps else eps
            if hi - lo <= eps * floor_:
                break
            mid = 0.5 * (lo + hi)
            for i in range(nu):
                tgv[i] = mid * gamma[i]
            status = _min_power(gains, tgv, sig2, owner, nu, ng, pv, fkv, qv,
                                selv, prevv, amatv, rhsv, activev, rtol, max_iter)
            if status == C_NO_CONVERGENCE:
                with gil:
                    return 0.0, p_lo, STATUS_NO_CONVERGENCE, steps
            feas = 0
            if status == C_OK:
                if _load(coeff, budgets, pv, na, ng) <= 1.0:
                    feas = 1
            if feas:
                lo = mid
                for k in range(ng):
                    plov[k] = pv[k]
            else:
                hi = mid
            steps += 1

    return lo, p_lo, STATUS_OK, steps
