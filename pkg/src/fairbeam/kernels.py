"""Power-control kernels: compiled extension when available, numpy fallback otherwise.

Set FAIRBEAM_PURE_PYTHON=1 to force the fallback. Both backends implement the
same two operations with identical statuses:

  min_power_fixed_point -- minimal per-group powers meeting every user's
      scaled SINR requirement for fixed beamforming directions (the unique
      fixed point of the monotone requirement map, or infeasibility).
  fairness_bisect -- bisection for the largest fairness level whose minimal
      powers keep every per-antenna load at or below one.
"""

from __future__ import annotations

import os

import numpy as np

STATUS_OK = 0
STATUS_INFEASIBLE = 1
STATUS_NO_CONVERGENCE = 2

_BIG = 1e100

_fastpc = None
if os.environ.get("FAIRBEAM_PURE_PYTHON") != "1":
    try:
        from fairbeam import _fastpc  # type: ignore[attr-defined]
    except ImportError:
        _fastpc = None


def backend_name() -> str:
    return "compiled" if _fastpc is not None else "numpy"


def _min_power_py(gains, tg, sig2, owner, ng, rtol=1e-12, max_iter=100000):
    nu = gains.shape[0]
    members = [np.flatnonzero(owner == k) for k in range(ng)]
    own = gains[np.arange(nu), owner]
    need = tg > 0
    if np.any(need & (own <= 0)):
        return np.zeros(ng), STATUS_INFEASIBLE

    p = np.zeros(ng)
    prev_sel = np.full(ng, -2, dtype=np.int64)
    safe_own = np.where(own > 0, own, 1.0)
    for _ in range(max_iter):
        interference = gains @ p - own * p[owner]
        req = np.where(need, tg * (sig2 + interference) / safe_own, 0.0)
        fk = np.zeros(ng)
        sel = np.full(ng, -1, dtype=np.int64)
        for k in range(ng):
            mem = members[k]
            if mem.size == 0:
                continue
            j = int(np.argmax(req[mem]))
            if req[mem[j]] > 0.0:
                fk[k] = req[mem[j]]
                sel[k] = mem[j]
        if np.any(fk > _BIG):
            # iterates from zero are monotone; crossing _BIG proves divergence
            return p, STATUS_INFEASIBLE

        if np.array_equal(sel, prev_sel):
            active = np.flatnonzero(sel >= 0)
            m = active.size
            amat = np.eye(m)
            rhs = np.empty(m)
            for a, k in enumerate(active):
                i = sel[k]
                rhs[a] = tg[i] * sig2[i] / gains[i, k]
                for b, l in enumerate(active):
                    if l != k:
                        amat[a, b] = -tg[i] * gains[i, l] / gains[i, k]
            try:
                q_act = np.linalg.solve(amat, rhs)
            except np.linalg.LinAlgError:
                q_act = None
            if q_act is not None and np.all(q_act >= 0.0):
                q = np.zeros(ng)
                q[active] = q_act
                qi = gains @ q - own * q[owner]
                qreq = np.where(need, tg * (sig2 + qi) / safe_own, 0.0)
                scale = np.maximum(q[owner], 1.0)
                # the fixed point is unique, so a verified fixed point is
                # the minimal one
                if np.all(qreq <= q[owner] + rtol * scale):
                    return q, STATUS_OK

        dmax = float(np.max(np.abs(fk - p) / np.maximum(p, 1.0))) if ng else 0.0
        p = fk
        prev_sel = sel
        if dmax <= 1e-15:
            return p, STATUS_OK
    return p, STATUS_NO_CONVERGENCE


def _bisect_py(gains, gamma, sig2, owner, ng, coeff, budgets, t_hi, eps,
               max_steps=200, rtol=1e-12, max_iter=100000):
    if t_hi <= 0:
        raise ValueError("t_hi must be positive")

    def load(p):
        return float(np.max((coeff @ p) / budgets))

    p, status = _min_power_py(gains, t_hi * gamma, sig2, owner, ng, rtol, max_iter)
    if status == STATUS_NO_CONVERGENCE:
        return 0.0, np.zeros(ng), STATUS_NO_CONVERGENCE, 0
    if status == STATUS_OK and load(p) <= 1.0:
        return t_hi, p, STATUS_OK, 0

    lo, hi = 0.0, t_hi
    p_lo = np.zeros(ng)
    steps = 0
    while steps < max_steps and hi - lo > eps * max(lo, eps):
        mid = 0.5 * (lo + hi)
        p, status = _min_power_py(gains, mid * gamma, sig2, owner, ng, rtol, max_iter)
        if status == STATUS_NO_CONVERGENCE:
            return 0.0, p_lo, STATUS_NO_CONVERGENCE, steps
        if status == STATUS_OK and load(p) <= 1.0:
            lo = mid
            p_lo = p
        else:
            hi = mid
        steps += 1
    return lo, p_lo, STATUS_OK, steps


def _c(x, dtype):
    # compiled kernels take writable buffers; frozen model arrays are read-only
    x = np.ascontiguousarray(x, dtype=dtype)
    if not x.flags.writeable:
        x = x.copy()
    return x


def _prep(gains, owner):
    return _c(gains, np.float64), _c(owner, np.int64)


def min_power_fixed_point(gains, tg, sig2, owner, ng, rtol=1e-12, max_iter=100000):
    """Minimal powers p (len ng) with status; see module docstring."""
    gains, owner = _prep(gains, owner)
    tg = _c(tg, np.float64)
    sig2 = _c(sig2, np.float64)
    if _fastpc is not None:
        return _fastpc.min_power_fixed_point(gains, tg, sig2, owner, ng, rtol, max_iter)
    return _min_power_py(gains, tg, sig2, owner, ng, rtol, max_iter)


def fairness_bisect(gains, gamma, sig2, owner, ng, coeff, budgets, t_hi, eps,
                    max_steps=200, rtol=1e-12, max_iter=100000):
    """Bisect the fairness level for fixed directions; see module docstring."""
    gains, owner = _prep(gains, owner)
    gamma = _c(gamma, np.float64)
    sig2 = _c(sig2, np.float64)
    coeff = _c(coeff, np.float64)
    budgets = _c(budgets, np.float64)
    if _fastpc is not None:
        return _fastpc.fairness_bisect(gains, gamma, sig2, owner, ng, coeff,
                                       budgets, t_hi, eps, max_steps, rtol, max_iter)
    return _bisect_py(gains, gamma, sig2, owner, ng, coeff, budgets, t_hi, eps,
                      max_steps, rtol, max_iter)
