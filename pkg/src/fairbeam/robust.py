"""Worst-case robust fairness under ellipsoidal channel uncertainty.

Each user's true channel lives in an ellipsoid around the nominal estimate:
h_i = hbar_i + e_i with e_i^H C_i e_i <= 1 (a sphere of radius sigma when
C_i = I/sigma^2). The per-user worst-case SINR constraint over the whole
ellipsoid is turned into one linear matrix inequality per user via the
S-lemma, so the same bisection machinery as the nominal solver applies.

Certification of final precoders runs through an independent route: for fixed
powers the per-user block is affine in one multiplier, and its smallest
eigenvalue is concave in that multiplier, so a scalar search decides each
constraint without the conic solver.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from fairbeam import conic
from fairbeam import fair_solver as fs
from fairbeam import randomization as rz
from fairbeam.model import (
    CovarianceSet,
    PrecoderSet,
    ProblemInstance,
    sinr_all,
)


@dataclasses.dataclass(frozen=True)
class RobustSpec:
    """Uncertainty region description: one ellipsoid per user.

    radius > 0 with shapes None gives the sphere ||e_i|| <= radius for every
    user. shapes, when given, is a (Nu, Nt, Nt) stack of Hermitian positive
    definite matrices C_i defining e^H C_i e <= 1 (radius is then ignored).
    radius == 0 with no shapes means no uncertainty; callers treat that as
    the nominal problem.
    """

    radius: float = 0.0
    shapes: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.shapes is None:
            if self.radius < 0:
                raise ValueError("radius must be nonnegative")
            return
        s = np.asarray(self.shapes, dtype=complex)
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise ValueError("shapes must be a (Nu, Nt, Nt) stack")
        for i in range(s.shape[0]):
            if not np.allclose(s[i], s[i].conj().T, atol=1e-9):
                raise ValueError("shape %d is not Hermitian" % i)
            if np.linalg.eigvalsh(s[i])[0] <= 0:
                raise ValueError("shape %d is not positive definite" % i)
        object.__setattr__(self, "shapes", s)

    @property
    def is_trivial(self) -> bool:
        return self.shapes is None and self.radius == 0.0

    def shape_for(self, i: int, nt: int) -> np.ndarray:
        if self.shapes is not None:
            return self.shapes[i]
        if self.radius == 0.0:
            raise ValueError("trivial spec has no uncertainty shape")
        return np.eye(nt, dtype=complex) / (self.radius ** 2)


def _lift(h: np.ndarray) -> np.ndarray:
    # P = [I | hbar]: P^H M P stacks the S-lemma block [[M, M h], [h^H M, h^H M h]]
    n = h.shape[0]
    return np.concatenate([np.eye(n, dtype=complex), h[:, None]], axis=1)


def _shift_matrix(i: int, inst: ProblemInstance, spec: RobustSpec) -> np.ndarray:
    # constant multiplier coefficient blkdiag(C_i, -1)
    n = inst.nt
    B = np.zeros((n + 1, n + 1), dtype=complex)
    B[:n, :n] = spec.shape_for(i, n)
    B[n, n] = -1.0
    return B


def robust_block(i: int, inst: ProblemInstance, spec: RobustSpec, t: float,
                 X: CovarianceSet, lam: float) -> np.ndarray:
    """Numeric S-lemma block for user i; PSD iff the worst-case SINR of user
    i over the ellipsoid reaches t times its weight with multiplier lam."""
    k = inst.partition.group_of(i)
    tg = t * inst.targets[i]
    M = X.x(k).astype(complex).copy()
    for l in range(inst.ng):
        if l != k:
            M -= tg * X.x(l)
    P = _lift(inst.channels.h(i))
    A = P.conj().T @ M @ P
    A[inst.nt, inst.nt] -= tg * inst.noise[i]
    return A + lam * _shift_matrix(i, inst, spec)


def _user_margin(i, inst, spec, t, X, lam_hi_start=1.0):
    """max over lam >= 0 of the smallest eigenvalue of the user-i block.

    Nonnegative iff the robust constraint certifies. The smallest eigenvalue
    is concave in lam, so a bounded scalar search is exact enough.
    """
    base = robust_block(i, inst, spec, t, X, 0.0)
    B = _shift_matrix(i, inst, spec)

    def g(lam):
        return float(np.linalg.eigvalsh(base + lam * B)[0])

    best = g(0.0)
    hi = lam_hi_start
    # expand until the concave profile has turned over
    prev = best
    for _ in range(60):
        v = g(hi)
        best = max(best, v)
        if v < prev:
            break
        prev = v
        hi *= 4.0
    res = minimize_scalar(lambda lam: -g(lam), bounds=(0.0, hi),
                          method="bounded",
                          options={"xatol": 1e-12 * max(1.0, hi)})
    return max(best, float(-res.fun))


def certify_level(w: PrecoderSet, inst: ProblemInstance, spec: RobustSpec,
                  t: float, slack: float = 1e-9) -> bool:
    """True when every user's worst-case SINR over its ellipsoid reaches
    t times its weight, checked without the conic solver."""
    if spec.is_trivial:
        return bool(np.min(sinr_all(w, inst) / inst.targets) >= t * (1 - slack))
    X = CovarianceSet(np.stack([np.outer(w.w(k), w.w(k).conj())
                                for k in range(w.ng)]))
    scale = max(1.0, float(np.max(np.abs(X.X))))
    for i in range(inst.nu):
        if _user_margin(i, inst, spec, t, X) < -slack * scale:
            return False
    return True


def certified_fair_level(w: PrecoderSet, inst: ProblemInstance, spec: RobustSpec,
                         t_upper: float, eps: float = 1e-5) -> float:
    """Largest certified fairness level of fixed precoders, by bisection."""
    if certify_level(w, inst, spec, t_upper):
        return float(t_upper)
    lo, hi = 0.0, float(t_upper)
    while hi - lo > eps * max(lo, eps):
        mid = 0.5 * (lo + hi)
        if certify_level(w, inst, spec, mid):
            lo = mid
        else:
            hi = mid
    return lo


def _robust_power_min(inst: ProblemInstance, spec: RobustSpec, t: float,
                      power: str, total: float,
                      dirs: Optional[PrecoderSet] = None,
                      tol: Optional[conic.Tolerances] = None):
    """min r over the robust feasible set at level t.

    dirs None: full relaxation with PSD covariance variables.
    dirs given: fixed directions, scalar per-group powers (used on the
    randomized candidate path).
    Returns (r, CovarianceSet or p, status).
    """
    prog = conic.ConicProgram()
    if dirs is None:
        xs = [prog.add_psd_var("X%d" % k, inst.nt) for k in range(inst.ng)]
        outers = None
    else:
        xs = [prog.add_scalar_var("p%d" % k, nonneg=True) for k in range(inst.ng)]
        outers = [np.outer(dirs.w(k), dirs.w(k).conj()) for k in range(inst.ng)]
    r = prog.add_scalar_var("r")
    lams = [prog.add_scalar_var("lam%d" % i, nonneg=True) for i in range(inst.nu)]
    prog.set_objective("min", [(r, 1.0)])

    for i in range(inst.nu):
        k = inst.partition.group_of(i)
        tg = t * inst.targets[i]
        P = _lift(inst.channels.h(i))
        const = np.zeros((inst.nt + 1, inst.nt + 1), dtype=complex)
        const[inst.nt, inst.nt] = -tg * inst.noise[i]
        lam_term = (lams[i], _shift_matrix(i, inst, spec))
        if dirs is None:
            psd_terms = [(xs[k], 1.0, P)]
            for l in range(inst.ng):
                if l != k:
                    psd_terms.append((xs[l], -tg, P))
            prog.add_lmi(psd_terms=psd_terms, scalar_terms=[lam_term],
                         const=const)
        else:
            scalar_terms = [(xs[k], P.conj().T @ outers[k] @ P)]
            for l in range(inst.ng):
                if l != k:
                    scalar_terms.append((xs[l], -tg * (P.conj().T @ outers[l] @ P)))
            scalar_terms.append(lam_term)
            prog.add_lmi(psd_terms=[], scalar_terms=scalar_terms, const=const)

    if power == "pac":
        for n in range(inst.nt):
            if dirs is None:
                enn = np.zeros((inst.nt, inst.nt), dtype=complex)
                enn[n, n] = 1.0
                terms = [(xs[k], enn) for k in range(inst.ng)]
            else:
                terms = [(xs[k], float(np.abs(dirs.W[n, k]) ** 2))
                         for k in range(inst.ng)]
            terms.append((r, -inst.pac[n]))
            prog.add_constraint(terms, "<=", 0.0)
    elif power == "spc":
        if dirs is None:
            terms = [(xs[k], np.eye(inst.nt, dtype=complex)) for k in range(inst.ng)]
        else:
            terms = [(xs[k], float(np.linalg.norm(dirs.w(k)) ** 2))
                     for k in range(inst.ng)]
        terms.append((r, -total))
        prog.add_constraint(terms, "<=", 0.0)
    else:
        raise ValueError("power must be 'pac' or 'spc'")

    sol = conic.solve(prog, tol or conic.DEFAULT_TOLERANCES)
    if sol.status != conic.OPTIMAL:
        return None, None, sol.status
    if dirs is None:
        stack = np.stack([fs._psd_clip(sol.psd_values[x.label]) for x in xs])
        return float(sol.objective_value), CovarianceSet(stack), conic.OPTIMAL
    p = np.array([max(0.0, sol.scalar_values[x.label]) for x in xs])
    return float(sol.objective_value), p, conic.OPTIMAL


@dataclasses.dataclass
class RobustFairnessResult:
    """Robust relaxation outcome: level, covariances, search telemetry."""

    t_star: float
    covariances: Optional[CovarianceSet]
    rank_ratios: Optional[np.ndarray]
    t_upper: float
    status: str
    n_solves: int = 0

    @property
    def is_rank1(self) -> bool:
        return self.rank_ratios is not None and bool(
            np.all(self.rank_ratios <= fs.RANK1_TOL))


def solve_robust_Fr(inst: ProblemInstance, spec: RobustSpec,
                    eps: float = fs.EPS_FAIR, power: str = "pac",
                    P_tot: Optional[float] = None) -> RobustFairnessResult:
    """Max-min fair robust relaxation by bisection on the level.

    A trivial spec reduces exactly to the nominal relaxation.
    """
    if spec.is_trivial:
        rel = fs.solve_Fr(inst, eps, power, P_tot)
        return RobustFairnessResult(rel.t_star, rel.covariances,
                                    rel.rank_ratios, rel.t_upper, rel.status,
                                    rel.n_solves)
    total = inst.total_power if P_tot is None else float(P_tot)
    upper = fs.bisection_upper_bound(inst, power, total)
    n_solves = 0

    def feasible(t):
        nonlocal n_solves
        n_solves += 1
        r, X, status = _robust_power_min(inst, spec, t, power, total)
        if status == conic.INFEASIBLE:
            return False, None
        if status != conic.OPTIMAL:
            r, X, status = _robust_power_min(
                inst, spec, t, power, total,
                tol=conic.Tolerances(gap=1e-9, max_iters=400))
            if status == conic.INFEASIBLE:
                return False, None
            if status != conic.OPTIMAL:
                # probes far above the crossover can defeat the solver
                # numerically; a level that cannot be certified counts as
                # infeasible, the answer stays witness-backed from below
                return False, None
        return r <= 1.0, X

    # double from level one so probes stay near the crossover; the analytic
    # bound ignores both interference and the error ellipsoids
    lo0, best0, hi0 = 0.0, None, upper
    t = min(1.0, 0.5 * upper)
    while t < upper:
        ok, payload = feasible(t)
        if not ok:
            hi0 = t
            break
        lo0, best0 = t, payload
        t *= 2.0

    lo, best, hi, _ = fs._bisect(feasible, hi0, eps, lo=lo0, best=best0)
    if best is None:
        return RobustFairnessResult(0.0, None, None, hi, "infeasible",
                                    n_solves)
    return RobustFairnessResult(lo, best, best.rank_ratios(), hi, "optimal",
                                n_solves)


def _robust_candidate_bisect(dirs, inst, spec, t_upper, eps, power, total):
    """Best robust level for fixed directions, powers by SDP feasibility."""
    def feasible(t):
        r, p, status = _robust_power_min(inst, spec, t, power, total, dirs=dirs)
        if status != conic.OPTIMAL:
            return False, None
        return r <= 1.0, p

    ok, p0 = feasible(t_upper)
    if ok:
        return float(t_upper), p0
    lo, best, _, _ = fs._bisect(feasible, t_upper, eps)
    if best is None or lo <= 0.0:
        return None, None
    return float(lo), best


@dataclasses.dataclass
class RobustReport:
    """Telemetry of one robust solve, including the certified level."""

    mode: str
    certified_t: float
    nominal_t: float
    t_relaxed: float
    t_upper: float
    rank_ratios: np.ndarray
    power_mode: str
    n_candidates: int = 0
    n_feasible: int = 0
    best_index: int = -1
    seed: object = None
    relaxation: Optional[RobustFairnessResult] = None


def solve_robust_fair(inst: ProblemInstance, spec: RobustSpec,
                      n_rand: int = 100, seed=0, power: str = "pac",
                      P_tot: Optional[float] = None,
                      eps: float = fs.EPS_FAIR,
                      pc_eps: float = rz.EPS_PC):
    """Full robust solve; mirrors the nominal pipeline.

    Returns (PrecoderSet, RobustReport). With a trivial spec the nominal
    pipeline runs and its report is wrapped (certified equals achieved).
    """
    total = inst.total_power if P_tot is None else float(P_tot)
    if spec.is_trivial:
        w, rep = rz.solve_fair_pipeline(inst, n_rand, seed, power, P_tot, eps,
                                        pc_eps)
        rel = RobustFairnessResult(rep.t_relaxed, rep.relaxation.covariances,
                                   rep.rank_ratios, rep.t_upper, "optimal",
                                   rep.relaxation.n_solves)
        return w, RobustReport(rep.mode, rep.achieved_t, rep.achieved_t,
                               rep.t_relaxed, rep.t_upper, rep.rank_ratios,
                               power, rep.n_candidates, rep.n_feasible,
                               rep.best_index, seed, rel)

    rel = solve_robust_Fr(inst, spec, eps, power, P_tot)
    if rel.status != "optimal":
        raise RuntimeError("robust relaxation failed with status %r" % rel.status)

    w0 = fs.extract_rank1(rel.covariances)
    if w0 is not None:
        w = rz._finalize(w0, inst, power, total)
        cert = certified_fair_level(w, inst, spec, rel.t_upper)
        nom = float(np.min(sinr_all(w, inst) / inst.targets))
        return w, RobustReport("rank1", cert, nom, rel.t_star, rel.t_upper,
                               rel.rank_ratios, power, seed=seed,
                               relaxation=rel)

    principal = rz.principal_directions(rel.covariances)

    def run(seed_):
        cands = (principal,) + rz.draw_candidates(rel.covariances, n_rand,
                                                  seed_).candidates
        best_t, best_idx, best = -np.inf, -1, None
        feasible = 0
        for idx, dirs in enumerate(cands):
            t, p = _robust_candidate_bisect(dirs, inst, spec, rel.t_upper,
                                            pc_eps, power, total)
            if t is None or t <= 0:
                continue
            feasible += 1
            if t > best_t:
                best_t, best_idx, best = t, idx, (dirs, p)
        return best_t, best_idx, best, feasible

    best_t, best_idx, best, n_feasible = run(seed)
    used_seed = seed
    if best is None:
        used_seed = (int(seed) + rz._RETRY_SEED_OFFSET) if np.isscalar(seed) \
            else rz._RETRY_SEED_OFFSET
        best_t, best_idx, best, n_feasible = run(used_seed)
    if best is None:
        raise RuntimeError(
            "all %d robust candidates infeasible (tried seeds %r, %r)"
            % (n_rand + 1, seed, used_seed))

    dirs, p = best
    w = rz._finalize(PrecoderSet(dirs.W * np.sqrt(p)[None, :]), inst, power,
                     total)
    cert = certified_fair_level(w, inst, spec, rel.t_upper)
    nom = float(np.min(sinr_all(w, inst) / inst.targets))
    return w, RobustReport("randomized", cert, nom, rel.t_star, rel.t_upper,
                           rel.rank_ratios, power, n_rand + 1, n_feasible,
                           best_idx, used_seed, rel)


def _shape_sqrt_inv(C: np.ndarray) -> np.ndarray:
    ev, u = np.linalg.eigh(C)
    return (u / np.sqrt(ev)) @ u.conj().T


def sample_errors(inst: ProblemInstance, spec: RobustSpec, i: int,
                  n_samples: int, seed) -> np.ndarray:
    """Error draws inside user i's ellipsoid: 80% on the boundary, the rest
    uniform-in-volume, so worst cases near the shell are well covered."""
    rng = np.random.default_rng(seed)
    R = _shape_sqrt_inv(spec.shape_for(i, inst.nt))
    out = np.empty((n_samples, inst.nt), dtype=complex)
    n_boundary = int(round(0.8 * n_samples))
    for j in range(n_samples):
        u = rng.standard_normal(inst.nt) + 1j * rng.standard_normal(inst.nt)
        u = u / np.linalg.norm(u)
        if j >= n_boundary:
            u = u * rng.uniform() ** (1.0 / (2 * inst.nt))
        out[j] = R @ u
    return out


def sampled_worstcase_sinr(w: PrecoderSet, inst: ProblemInstance,
                           spec: RobustSpec, n_samples: int = 1000,
                           seed=0) -> np.ndarray:
    """Per-user smallest sampled SINR over the uncertainty ellipsoid."""
    if spec.is_trivial:
        return sinr_all(w, inst)
    worst = np.empty(inst.nu)
    for i in range(inst.nu):
        k = inst.partition.group_of(i)
        errs = sample_errors(inst, spec, i, n_samples,
                             np.random.SeedSequence([_seed_int(seed), i]))
        hs = inst.channels.h(i)[None, :] + errs
        powers = np.abs(hs.conj() @ w.W) ** 2
        signal = powers[:, k]
        interference = powers.sum(axis=1) - signal
        worst[i] = float(np.min(signal / (interference + inst.noise[i])))
    return worst


def _seed_int(seed) -> int:
    if seed is None:
        return 0
    return int(seed) & 0xFFFFFFFF
