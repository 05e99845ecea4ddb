"""Gaussian randomization over relaxed covariances and fixed-direction power control.

Candidates are drawn with the relaxed covariances, then each one is rescaled
per group to maximize the worst weighted SINR while every per-antenna budget
holds. The best candidate is kept; the relaxed optimum certifies its accuracy.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np
from cvxopt import matrix as _cvxmat
from cvxopt import solvers as _cvxsolvers

from fairbeam import conic, kernels
from fairbeam import fair_solver as fs
from fairbeam.model import (
    CovarianceSet,
    PrecoderSet,
    ProblemInstance,
    received_powers,
    sinr_all,
)

# power-control bisection stop width, relative to the current best level
EPS_PC = 1e-4

STATUS_OK = "ok"
STATUS_INFEASIBLE = "infeasible"
STATUS_FAILED = "numerical-failure"

_RETRY_SEED_OFFSET = 0x9E3779B1


@dataclasses.dataclass(frozen=True)
class CandidateSet:
    """N_rand direction draws sharing one source covariance set and seed."""

    candidates: tuple
    source: CovarianceSet
    seed: object


@dataclasses.dataclass
class PowerControlResult:
    """Per-group power scales for fixed directions, with the level reached."""

    p: Optional[np.ndarray]
    t: Optional[float]
    r: Optional[float]
    status: str
    n_steps: int = 0


def principal_directions(X: CovarianceSet) -> PrecoderSet:
    """Unit-norm principal eigenvector of each group covariance."""
    cols = []
    for k in range(X.ng):
        ev, u = np.linalg.eigh(X.x(k))
        v = u[:, -1]
        cols.append(v / np.linalg.norm(v))
    return PrecoderSet(np.stack(cols, axis=1))


def draw_candidates(X: CovarianceSet, n_rand: int, seed) -> CandidateSet:
    """Unit-norm direction sets drawn group-wise with covariance X_k.

    Factorization is by eigendecomposition with negatives clipped, so rank
    deficient covariances are fine. Draws are sequential in candidate order:
    the first N of a longer run coincide with a shorter run on the same seed.
    """
    if n_rand < 0:
        raise ValueError("n_rand must be nonnegative")
    rng = np.random.default_rng(seed)
    factors = []
    for k in range(X.ng):
        ev, u = np.linalg.eigh(X.x(k))
        if ev[0] < -conic.EPS_PSD * max(1.0, float(ev[-1])):
            raise ValueError("covariance %d is not PSD" % k)
        factors.append(u * np.sqrt(np.clip(ev, 0.0, None)))
    out = []
    for _ in range(n_rand):
        cols = []
        for k in range(X.ng):
            z = (rng.standard_normal(X.n) + 1j * rng.standard_normal(X.n)) / math.sqrt(2.0)
            v = factors[k] @ z
            norm = np.linalg.norm(v)
            if norm > 0:
                v = v / norm
            cols.append(v)
        out.append(PrecoderSet(np.stack(cols, axis=1)))
    return CandidateSet(tuple(out), X, seed)


def _gains_of(dirs: PrecoderSet, inst: ProblemInstance):
    """(gains, coeff): |w_l^H h_i|^2 as (Nu, G) and |w_k[n]|^2 as (Nt, G)."""
    gains = received_powers(dirs, inst.channels).T.copy()
    coeff = (np.abs(dirs.W) ** 2)
    return gains, coeff


def _budget_rows(dirs, inst, power, total):
    coeff = np.abs(dirs.W) ** 2
    if power == "pac":
        return coeff, inst.pac.copy()
    return np.sum(coeff, axis=0, keepdims=True), np.array([float(total)])


def power_control_LP(dirs: PrecoderSet, inst: ProblemInstance, targets,
                     power: str = "pac", P_tot: Optional[float] = None) -> PowerControlResult:
    """Minimize the worst per-antenna budget-overrun ratio at fixed targets.

    targets are effective per-user values (weights already scaled by the
    desired level). The cross-multiplied SINR rows are linear in the per-group
    powers, so this is a plain LP.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (inst.nu,) or np.any(targets < 0):
        raise ValueError("targets must be a nonnegative per-user vector")
    gains, _ = _gains_of(dirs, inst)
    coeff, budgets = _budget_rows(dirs, inst, power, inst.total_power if P_tot is None else P_tot)

    prog = conic.ConicProgram()
    ps = [prog.add_scalar_var("p%d" % k, nonneg=True) for k in range(inst.ng)]
    r = prog.add_scalar_var("r")
    prog.set_objective("min", [(r, 1.0)])
    for i in range(inst.nu):
        k = inst.partition.group_of(i)
        terms = [(ps[k], gains[i, k])]
        for l in range(inst.ng):
            if l != k:
                terms.append((ps[l], -targets[i] * gains[i, l]))
        prog.add_constraint(terms, ">=", targets[i] * inst.noise[i])
    for n in range(coeff.shape[0]):
        terms = [(ps[k], coeff[n, k]) for k in range(inst.ng)]
        terms.append((r, -budgets[n]))
        prog.add_constraint(terms, "<=", 0.0)
    sol = conic.solve(prog)
    if sol.status == conic.INFEASIBLE:
        return PowerControlResult(None, None, None, STATUS_INFEASIBLE)
    if sol.status != conic.OPTIMAL:
        return PowerControlResult(None, None, None, STATUS_FAILED)
    p = np.array([sol.scalar_values[v.label] for v in ps])
    return PowerControlResult(p, None, float(sol.objective_value), STATUS_OK,
                              sol.solver_iterations)


def power_control_bisect(dirs: PrecoderSet, inst: ProblemInstance, t_upper: float,
                         eps: float = EPS_PC, power: str = "pac",
                         P_tot: Optional[float] = None,
                         force_lp: bool = False) -> PowerControlResult:
    """Largest achievable fairness level for fixed directions, by bisection.

    The fast fixed-point kernel decides feasibility of each level; if it ever
    fails to converge the whole search falls back to the generic LP oracle.
    Levels at or above t_upper are clamped to t_upper (the relaxation bound
    cannot be beaten).
    """
    if t_upper <= 0:
        raise ValueError("t_upper must be positive")
    gains, _ = _gains_of(dirs, inst)
    coeff, budgets = _budget_rows(dirs, inst, power, inst.total_power if P_tot is None else P_tot)

    if not force_lp:
        t, p, status, steps = kernels.fairness_bisect(
            gains, inst.targets, inst.noise, inst.owner, inst.ng,
            coeff, budgets, t_upper, eps)
        if status != kernels.STATUS_NO_CONVERGENCE:
            if t <= 0.0:
                return PowerControlResult(None, None, None, STATUS_INFEASIBLE, steps)
            load = float(np.max((coeff @ p) / budgets))
            return PowerControlResult(p, float(t), load, STATUS_OK, steps)

    # generic route: LP feasibility oracle on the same bisection grid
    def feasible(t):
        res = power_control_LP(dirs, inst, t * inst.targets, power, P_tot)
        if res.status != STATUS_OK:
            return False, None
        return res.r <= 1.0, res

    ok, res0 = feasible(t_upper)
    if ok:
        return PowerControlResult(res0.p, float(t_upper), res0.r, STATUS_OK)
    lo, best, _, steps = fs._bisect(lambda t: feasible(t), t_upper, eps)
    if best is None or lo <= 0.0:
        return PowerControlResult(None, None, None, STATUS_INFEASIBLE, steps)
    return PowerControlResult(best.p, float(lo), best.r, STATUS_OK, steps)


def power_control_GP(dirs: PrecoderSet, inst: ProblemInstance,
                     power: str = "pac", P_tot: Optional[float] = None) -> PowerControlResult:
    """Fixed-direction fairness maximization as a geometric program.

    Direct reformulation: minimize 1/t subject to posynomial SINR rows and
    per-antenna monomial-sum budget rows, solved in log space. Requires every
    user's own-group gain to be strictly positive.
    """
    gains, _ = _gains_of(dirs, inst)
    coeff, budgets = _budget_rows(dirs, inst, power, inst.total_power if P_tot is None else P_tot)
    ng = inst.ng
    own = gains[np.arange(inst.nu), inst.owner]
    if np.any(own <= 0):
        raise ValueError("own-group gain is zero for some user; use bisection instead")

    # variables in log space: y_0..y_{G-1} (powers), tau (level)
    nx = ng + 1
    K = [1]
    rows = [np.concatenate([np.zeros(ng), [-1.0]])]
    logc = [0.0]
    for i in range(inst.nu):
        k = inst.partition.group_of(i)
        cnt = 0
        for l in range(ng):
            if l != k and gains[i, l] > 0:
                row = np.zeros(nx)
                row[l] = 1.0
                row[k] = -1.0
                row[ng] = 1.0
                rows.append(row)
                logc.append(math.log(inst.targets[i] * gains[i, l] / own[i]))
                cnt += 1
        row = np.zeros(nx)
        row[k] = -1.0
        row[ng] = 1.0
        rows.append(row)
        logc.append(math.log(inst.targets[i] * inst.noise[i] / own[i]))
        K.append(cnt + 1)
    for n in range(coeff.shape[0]):
        cnt = 0
        for k in range(ng):
            if coeff[n, k] > 0:
                row = np.zeros(nx)
                row[k] = 1.0
                rows.append(row)
                logc.append(math.log(coeff[n, k] / budgets[n]))
                cnt += 1
        if cnt:
            K.append(cnt)

    F = _cvxmat(np.array(rows))
    g = _cvxmat(np.array(logc))
    options = {"show_progress": False, "abstol": 1e-9, "reltol": 1e-9,
               "feastol": 1e-9, "maxiters": 200}
    try:
        sol = _cvxsolvers.gp(K, F, g, options=options)
    except (ValueError, ArithmeticError, ZeroDivisionError) as exc:
        return PowerControlResult(None, None, None, STATUS_FAILED)
    if sol.get("status") != "optimal" or sol.get("x") is None:
        return PowerControlResult(None, None, None, STATUS_FAILED,
                                  int(sol.get("iterations", 0) or 0))
    x = np.asarray(sol["x"]).ravel()
    p = np.exp(x[:ng])
    t = float(math.exp(x[ng]))
    load = float(np.max((coeff @ p) / budgets))
    return PowerControlResult(p, t, load, STATUS_OK)


@dataclasses.dataclass
class SolveReport:
    """Telemetry of one full solve: relaxation, rounding and final metrics."""

    mode: str
    achieved_t: float
    t_relaxed: float
    t_upper: float
    accuracy: float
    rank_ratios: np.ndarray
    power_mode: str
    n_candidates: int = 0
    n_feasible: int = 0
    best_index: int = -1
    best_t: float = 0.0
    seed: object = None
    relaxation: Optional[fs.FairnessResult] = None
    kernel_backend: str = ""


def _finalize(dirs_scaled: PrecoderSet, inst, power, total) -> PrecoderSet:
    if power == "pac":
        return fs.scale_to_full_power(dirs_scaled, inst.pac)
    return fs.scale_to_total_power(dirs_scaled, total)


def _achieved_level(w: PrecoderSet, inst: ProblemInstance) -> float:
    return float(np.min(sinr_all(w, inst) / inst.targets))


def solve_fair_pipeline(inst: ProblemInstance, n_rand: int = 100, seed=0,
                        power: str = "pac", P_tot: Optional[float] = None,
                        eps: float = fs.EPS_FAIR, pc_eps: float = EPS_PC,
                        power_slack: float = 0.0):
    """Full solve: relaxation, rank-1 shortcut or randomization, power control.

    Returns (PrecoderSet, SolveReport). The candidate list is the principal
    eigenvector rounding followed by n_rand gaussian draws, so n_rand=0 gives
    the deterministic rounding alone. The returned precoders are scaled so
    the tightest budget is exactly met (uniform scaling, which never lowers
    any SINR). If every candidate is infeasible the draw is retried once with
    a derived fresh seed before raising. power_slack is forwarded to the
    relaxation cleanup (see solve_Fr); it trades a sliver of fairness for a
    leaner power profile and is off by default.
    """
    total = inst.total_power if P_tot is None else float(P_tot)
    rel = fs.solve_Fr(inst, eps, power, P_tot, power_slack=power_slack)
    if rel.status != "optimal":
        raise RuntimeError("relaxation failed with status %r" % rel.status)

    w0 = fs.extract_rank1(rel.covariances)
    if w0 is not None:
        w = _finalize(w0, inst, power, total)
        ach = _achieved_level(w, inst)
        report = SolveReport("rank1", ach, rel.t_star, rel.t_upper,
                             ach / rel.t_upper, rel.rank_ratios, power,
                             seed=seed, relaxation=rel,
                             kernel_backend=kernels.backend_name())
        return w, report

    # candidate 0 is the deterministic principal-eigenvector rounding; the
    # gaussian draws follow it, so it never consumes randomness
    principal = principal_directions(rel.covariances)

    def run(seed_):
        cands = (principal,) + draw_candidates(rel.covariances, n_rand, seed_).candidates
        best_t, best_idx, best = -np.inf, -1, None
        feasible = 0
        for idx, dirs in enumerate(cands):
            res = power_control_bisect(dirs, inst, rel.t_upper, pc_eps, power, P_tot)
            if res.status != STATUS_OK or res.t is None or res.t <= 0:
                continue
            feasible += 1
            if res.t > best_t:
                best_t, best_idx, best = res.t, idx, (dirs, res.p)
        return best_t, best_idx, best, feasible

    best_t, best_idx, best, feasible = run(seed)
    used_seed = seed
    if best is None:
        used_seed = (int(seed) + _RETRY_SEED_OFFSET) if np.isscalar(seed) else _RETRY_SEED_OFFSET
        best_t, best_idx, best, feasible = run(used_seed)
    if best is None:
        raise RuntimeError(
            "all %d rounding candidates infeasible (tried seeds %r, %r)"
            % (n_rand + 1, seed, used_seed))

    dirs, p = best
    w = _finalize(PrecoderSet(dirs.W * np.sqrt(p)[None, :]), inst, power, total)
    ach = _achieved_level(w, inst)
    report = SolveReport("randomized", ach, rel.t_star, rel.t_upper,
                         ach / rel.t_upper, rel.rank_ratios, power,
                         n_candidates=n_rand + 1, n_feasible=feasible,
                         best_index=best_idx, best_t=best_t, seed=used_seed,
                         relaxation=rel, kernel_backend=kernels.backend_name())
    return w, report
