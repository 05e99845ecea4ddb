"""Linear conic programs over Hermitian PSD matrix variables and scalars.

Programs are stated in complex-domain math: every matrix coefficient pairs
with its variable through the real trace inner product Tr(A X), and LMI
blocks are affine Hermitian-matrix expressions required to be PSD. The
Hermitian-to-real embedding (and its factor-2 trace identity) is handled
entirely inside the assembly step, so callers never see it.

Backends: cvxopt's conelp interior-point solver for programs with PSD
content, scipy's HiGHS for pure LPs. Both are deterministic for fixed inputs.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np
from cvxopt import matrix as _cvxmat
from cvxopt import solvers as _cvxsolvers
from scipy.optimize import linprog as _linprog

EPS_FEAS = 1e-7
EPS_PSD = 1e-8
SOLVER_GAP = 1e-8
EPS_HERM = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


@dataclasses.dataclass(frozen=True)
class Tolerances:
    feas: float = EPS_FEAS
    psd: float = EPS_PSD
    gap: float = SOLVER_GAP
    max_iters: int = 200


DEFAULT_TOLERANCES = Tolerances()


def _check_hermitian(A, n=None, what="matrix"):
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("%s must be square" % what)
    if n is not None and A.shape[0] != n:
        raise ValueError("%s has size %d, expected %d" % (what, A.shape[0], n))
    scale = max(1.0, float(np.abs(A).max()) if A.size else 1.0)
    if np.abs(A - A.conj().T).max() > EPS_HERM * scale:
        raise ValueError("%s must be Hermitian" % what)
    return 0.5 * (A + A.conj().T)


def hermitian_embed(H) -> np.ndarray:
    """Real symmetric [[Re H, -Im H], [Im H, Re H]]; PSD iff H is PSD.

    Under this map Tr(embed(A) embed(X)) = 2 Re Tr(A X); assembly halves
    coefficients where the identity matters so callers can ignore it.
    """
    H = _check_hermitian(H)
    re, im = H.real, H.imag
    top = np.hstack([re, -im])
    bot = np.hstack([im, re])
    return np.vstack([top, bot])


def hermitian_unembed(M) -> np.ndarray:
    """Inverse of hermitian_embed on (possibly asymmetric-noise) 2n x 2n input."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0] // 2
    re = 0.5 * (M[:n, :n] + M[n:, n:])
    im = 0.5 * (M[n:, :n] - M[:n, n:])
    H = re + 1j * im
    return 0.5 * (H + H.conj().T)


@dataclasses.dataclass(frozen=True)
class PsdVar:
    label: str
    n: int
    index: int


@dataclasses.dataclass(frozen=True)
class ScalarVar:
    label: str
    nonneg: bool
    index: int


def _hermitian_basis(n):
    """Deterministic real basis of the Hermitian n x n matrices (n^2 elements)."""
    basis = []
    for i in range(n):
        e = np.zeros((n, n), dtype=np.complex128)
        e[i, i] = 1.0
        basis.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n), dtype=np.complex128)
            e[i, j] = 1.0
            e[j, i] = 1.0
            basis.append(e)
            e = np.zeros((n, n), dtype=np.complex128)
            e[i, j] = 1.0j
            e[j, i] = -1.0j
            basis.append(e)
    return basis


def _trace_coeffs(A):
    """Coefficients of x -> Tr(A X) in the _hermitian_basis parameterization."""
    n = A.shape[0]
    out = np.empty(n * n)
    out[:n] = A.diagonal().real
    pos = n
    for i in range(n):
        for j in range(i + 1, n):
            out[pos] = 2.0 * A[i, j].real
            pos += 1
            out[pos] = 2.0 * A[i, j].imag
            pos += 1
    return out


def _from_coeffs(x, n):
    """Hermitian matrix from its basis coefficients."""
    H = np.zeros((n, n), dtype=np.complex128)
    H[np.diag_indices(n)] = x[:n]
    pos = n
    for i in range(n):
        for j in range(i + 1, n):
            H[i, j] = x[pos] + 1j * x[pos + 1]
            H[j, i] = x[pos] - 1j * x[pos + 1]
            pos += 2
    return H


class ConicProgram:
    """Container for one conic program; build then hand to solve()."""

    def __init__(self):
        self.psd_vars = []
        self.scalar_vars = []
        self.sense = "min"
        self.objective = []
        self.rows = []
        self.lmis = []
        self._labels = set()

    # -- variables ---------------------------------------------------------

    def add_psd_var(self, label: str, n: int) -> PsdVar:
        if label in self._labels:
            raise ValueError("duplicate variable label %r" % label)
        if n < 1:
            raise ValueError("matrix variable size must be positive")
        v = PsdVar(label, int(n), len(self.psd_vars))
        self.psd_vars.append(v)
        self._labels.add(label)
        return v

    def add_scalar_var(self, label: str, nonneg: bool = False) -> ScalarVar:
        if label in self._labels:
            raise ValueError("duplicate variable label %r" % label)
        v = ScalarVar(label, bool(nonneg), len(self.scalar_vars))
        self.scalar_vars.append(v)
        self._labels.add(label)
        return v

    # -- objective and constraints ------------------------------------------

    def _check_terms(self, terms):
        out = []
        for var, coeff in terms:
            if isinstance(var, PsdVar):
                out.append((var, _check_hermitian(coeff, var.n, "coefficient of %s" % var.label)))
            elif isinstance(var, ScalarVar):
                out.append((var, float(coeff)))
            else:
                raise ValueError("unknown variable %r" % (var,))
        return out

    def set_objective(self, sense: str, terms):
        """sense 'min' or 'max'; terms is a list of (var, coefficient)."""
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.sense = sense
        self.objective = self._check_terms(terms)

    def add_constraint(self, terms, rel: str, rhs: float):
        """Scalar row: sum of Tr(A_v X_v) and c_v s_v, related to rhs by rel."""
        if rel not in ("<=", ">=", "=="):
            raise ValueError("rel must be one of <=, >=, ==")
        self.rows.append((self._check_terms(terms), rel, float(rhs)))

    def add_lmi(self, psd_terms, scalar_terms, const):
        """Affine Hermitian block required PSD.

        psd_terms: list of (PsdVar X, real scale c, matrix P of shape (n, m))
            contributing c * P^H X P to the block.
        scalar_terms: list of (ScalarVar s, Hermitian F (m, m)) contributing s*F.
        const: Hermitian (m, m) added unconditionally.
        """
        const = _check_hermitian(const, what="LMI constant")
        m = const.shape[0]
        pt = []
        for var, c, P in psd_terms:
            if not isinstance(var, PsdVar):
                raise ValueError("psd_terms must reference matrix variables")
            P = np.asarray(P, dtype=np.complex128)
            if P.shape != (var.n, m):
                raise ValueError("projection for %s must be (%d, %d)" % (var.label, var.n, m))
            pt.append((var, float(c), P))
        st = []
        for var, F in scalar_terms:
            if not isinstance(var, ScalarVar):
                raise ValueError("scalar_terms must reference scalar variables")
            st.append((var, _check_hermitian(F, m, "LMI coefficient of %s" % var.label)))
        self.lmis.append((pt, st, const, m))

    # -- debug dump ----------------------------------------------------------

    def dump(self) -> str:
        """Sparse text form, one line per nonzero coefficient.

        Grammar (whitespace separated):
          psdvar LABEL N | scalarvar LABEL {nonneg|free}
          objective {min|max}
          obj LABEL I J RE IM        (matrix term entry)   obj LABEL . . C 0
          row R REL RHS
          coef R LABEL I J RE IM     (matrix)              coef R LABEL . . C 0
          lmi L M
          lmiconst L I J RE IM
          lmipsd L LABEL C I J RE IM (projection entry)    lmiscalar L LABEL I J RE IM
        """
        out = []
        for v in self.psd_vars:
            out.append("psdvar %s %d" % (v.label, v.n))
        for v in self.scalar_vars:
            out.append("scalarvar %s %s" % (v.label, "nonneg" if v.nonneg else "free"))
        out.append("objective %s" % self.sense)

        def emit_terms(prefix, terms):
            for var, coeff in terms:
                if isinstance(var, PsdVar):
                    for i in range(var.n):
                        for j in range(var.n):
                            c = coeff[i, j]
                            if c != 0:
                                out.append("%s %s %d %d %.17g %.17g" % (prefix, var.label, i, j, c.real, c.imag))
                elif coeff != 0:
                    out.append("%s %s . . %.17g 0" % (prefix, var.label, coeff))

        emit_terms("obj", self.objective)
        for r, (terms, rel, rhs) in enumerate(self.rows):
            out.append("row %d %s %.17g" % (r, rel, rhs))
            emit_terms("coef %d" % r, terms)
        for li, (pt, st, const, m) in enumerate(self.lmis):
            out.append("lmi %d %d" % (li, m))
            for i in range(m):
                for j in range(m):
                    if const[i, j] != 0:
                        out.append("lmiconst %d %d %d %.17g %.17g" % (li, i, j, const[i, j].real, const[i, j].imag))
            for var, c, P in pt:
                for i in range(P.shape[0]):
                    for j in range(P.shape[1]):
                        if P[i, j] != 0:
                            out.append("lmipsd %d %s %.17g %d %d %.17g %.17g" % (li, var.label, c, i, j, P[i, j].real, P[i, j].imag))
            for var, F in st:
                for i in range(m):
                    for j in range(m):
                        if F[i, j] != 0:
                            out.append("lmiscalar %d %s %d %d %.17g %.17g" % (li, var.label, i, j, F[i, j].real, F[i, j].imag))
        return "\n".join(out) + "\n"


@dataclasses.dataclass
class ConicSolution:
    status: str
    psd_values: dict
    scalar_values: dict
    objective_value: Optional[float]
    solver_iterations: int
    residuals: dict

    def value(self, var):
        if isinstance(var, PsdVar):
            return self.psd_values[var.label]
        return self.scalar_values[var.label]


# ---------------------------------------------------------------------------
# assembly


class _Assembled:
    pass


def _assemble(prog: ConicProgram):
    a = _Assembled()
    n_scalar = len(prog.scalar_vars)
    psd_off = []
    pos = n_scalar
    bases = {}
    for v in prog.psd_vars:
        psd_off.append(pos)
        pos += v.n * v.n
        if v.n not in bases:
            bases[v.n] = _hermitian_basis(v.n)
    a.nx = pos
    a.n_scalar = n_scalar
    a.psd_off = psd_off
    a.bases = bases

    def term_row(terms):
        row = np.zeros(a.nx)
        for var, coeff in terms:
            if isinstance(var, PsdVar):
                off = psd_off[var.index]
                row[off:off + var.n * var.n] += _trace_coeffs(coeff)
            else:
                row[var.index] += coeff
        return row

    a.c = term_row(prog.objective)
    if prog.sense == "max":
        a.c = -a.c

    ineq_rows, ineq_rhs, eq_rows, eq_rhs = [], [], [], []
    for terms, rel, rhs in prog.rows:
        row = term_row(terms)
        if rel == "==":
            eq_rows.append(row)
            eq_rhs.append(rhs)
        elif rel == "<=":
            ineq_rows.append(row)
            ineq_rhs.append(rhs)
        else:
            ineq_rows.append(-row)
            ineq_rhs.append(-rhs)
    for v in prog.scalar_vars:
        if v.nonneg:
            row = np.zeros(a.nx)
            row[v.index] = -1.0
            ineq_rows.append(row)
            ineq_rhs.append(0.0)

    a.G_l = np.array(ineq_rows) if ineq_rows else np.zeros((0, a.nx))
    a.h_l = np.array(ineq_rhs) if ineq_rhs else np.zeros(0)
    a.A = np.array(eq_rows) if eq_rows else np.zeros((0, a.nx))
    a.b = np.array(eq_rhs) if eq_rhs else np.zeros(0)

    # PSD cone blocks: variable cones first, then LMI blocks
    sdims, Gs, hs = [], [], []
    for v in prog.psd_vars:
        m2 = 2 * v.n
        Gblk = np.zeros((m2 * m2, a.nx))
        off = psd_off[v.index]
        for mth, B in enumerate(bases[v.n]):
            Gblk[:, off + mth] = -hermitian_embed(B).flatten(order="F")
        sdims.append(m2)
        Gs.append(Gblk)
        hs.append(np.zeros(m2 * m2))
    for pt, st, const, m in prog.lmis:
        m2 = 2 * m
        Gblk = np.zeros((m2 * m2, a.nx))
        for var, cscale, P in pt:
            off = psd_off[var.index]
            for mth, B in enumerate(bases[var.n]):
                contrib = cscale * (P.conj().T @ B @ P)
                Gblk[:, off + mth] += -hermitian_embed(contrib).flatten(order="F")
        for var, F in st:
            Gblk[:, var.index] += -hermitian_embed(F).flatten(order="F")
        sdims.append(m2)
        Gs.append(Gblk)
        hs.append(hermitian_embed(const).flatten(order="F"))
    a.sdims = sdims
    a.G_s = np.vstack(Gs) if Gs else np.zeros((0, a.nx))
    a.h_s = np.concatenate(hs) if hs else np.zeros(0)
    return a


def _extract(prog, a, x):
    psd_values = {}
    for v in prog.psd_vars:
        off = a.psd_off[v.index]
        psd_values[v.label] = _from_coeffs(x[off:off + v.n * v.n], v.n)
    scalar_values = {v.label: float(x[v.index]) for v in prog.scalar_vars}
    obj = float(a.c @ x)
    if prog.sense == "max":
        obj = -obj
    return psd_values, scalar_values, obj


def _feasibility_report(prog, a, x, tol):
    worst_row = 0.0
    for row, rhs in zip(a.G_l, a.h_l):
        v = float(row @ x - rhs)
        scale = 1.0 + abs(rhs) + max(1.0, float(np.abs(row).max())) * max(1.0, float(np.abs(x).max()))
        worst_row = max(worst_row, v / scale)
    for row, rhs in zip(a.A, a.b):
        v = abs(float(row @ x - rhs))
        scale = 1.0 + abs(rhs) + max(1.0, float(np.abs(row).max())) * max(1.0, float(np.abs(x).max()))
        worst_row = max(worst_row, v / scale)
    worst_eig = 0.0
    pos = 0
    for i, m2 in enumerate(a.sdims):
        blk = (a.h_s[pos:pos + m2 * m2] - a.G_s[pos:pos + m2 * m2] @ x).reshape((m2, m2), order="F")
        pos += m2 * m2
        ev = np.linalg.eigvalsh(0.5 * (blk + blk.T))
        scale = max(1.0, float(ev[-1]))
        worst_eig = max(worst_eig, -float(ev[0]) / scale)
    return worst_row, worst_eig


def _solve_lp(prog, a, tol):
    bounds = []
    for v in prog.scalar_vars:
        bounds.append((0.0, None) if v.nonneg else (None, None))
    res = _linprog(a.c, A_ub=a.G_l if len(a.G_l) else None,
                   b_ub=a.h_l if len(a.h_l) else None,
                   A_eq=a.A if len(a.A) else None,
                   b_eq=a.b if len(a.b) else None,
                   bounds=bounds, method="highs")
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return ConicSolution(INFEASIBLE, {}, {}, None, iters, {})
    if res.status == 3:
        return ConicSolution(UNBOUNDED, {}, {}, None, iters, {})
    if res.status != 0 or res.x is None:
        return ConicSolution(NUMERICAL_FAILURE, {}, {}, None, iters, {"message": res.message})
    psd_values, scalar_values, obj = _extract(prog, a, np.asarray(res.x))
    return ConicSolution(OPTIMAL, psd_values, scalar_values, obj, iters, {})


def solve(prog: ConicProgram, tol: Tolerances = DEFAULT_TOLERANCES) -> ConicSolution:
    """Solve the program; infeasibility and unboundedness arrive as statuses.

    A reported optimum is verified against the stated rows (scaled feasibility
    within tol.feas) and PSD blocks (minimum eigenvalue within -tol.psd of
    zero, relative); verification failure downgrades to numerical-failure with
    the residuals attached.
    """
    a = _assemble(prog)
    if not prog.psd_vars and not prog.lmis:
        return _solve_lp(prog, a, tol)

    # nonneg-scalar rows sit in the 'l' block ahead of the PSD blocks
    G = np.vstack([a.G_l, a.G_s])
    h = np.concatenate([a.h_l, a.h_s])
    dims = {"l": len(a.h_l), "q": [], "s": a.sdims}
    options = {
        "show_progress": False,
        "abstol": tol.gap,
        "reltol": tol.gap,
        "feastol": min(1e-9, tol.feas),
        "maxiters": tol.max_iters,
    }
    try:
        # dense ldl factorization: slower per iteration but much more robust
        # than the default on badly scaled rows; fine at this problem size
        sol = _cvxsolvers.conelp(
            _cvxmat(a.c), _cvxmat(G), _cvxmat(h), dims,
            _cvxmat(a.A) if len(a.A) else _cvxmat(np.zeros((0, a.nx))),
            _cvxmat(a.b) if len(a.b) else _cvxmat(np.zeros((0, 1))),
            options=options, kktsolver="ldl")
    except (ValueError, ArithmeticError, ZeroDivisionError) as exc:
        return ConicSolution(NUMERICAL_FAILURE, {}, {}, None, 0, {"exception": str(exc)})

    status = sol.get("status", "unknown")
    iters = int(sol.get("iterations", 0))
    residuals = {k: sol.get(k) for k in ("gap", "relative gap", "primal infeasibility", "dual infeasibility")}
    if status == "primal infeasible":
        return ConicSolution(INFEASIBLE, {}, {}, None, iters, residuals)
    if status == "dual infeasible":
        return ConicSolution(UNBOUNDED, {}, {}, None, iters, residuals)
    if sol.get("x") is None:
        return ConicSolution(NUMERICAL_FAILURE, {}, {}, None, iters, residuals)

    x = np.asarray(sol["x"]).ravel()
    if status == "unknown":
        pinf = residuals.get("primal infeasibility")
        rgap = residuals.get("relative gap")
        gap = residuals.get("gap")
        ok = (pinf is not None and pinf < 1e-6) and (
            (rgap is not None and rgap < 1e-6) or (gap is not None and gap < 1e-7))
        if not ok:
            return ConicSolution(NUMERICAL_FAILURE, {}, {}, None, iters, residuals)

    worst_row, worst_eig = _feasibility_report(prog, a, x, tol)
    psd_values, scalar_values, obj = _extract(prog, a, x)
    if worst_row > tol.feas or worst_eig > tol.psd * 10:
        residuals["worst_row_violation"] = worst_row
        residuals["worst_eig_violation"] = worst_eig
        return ConicSolution(NUMERICAL_FAILURE, psd_values, scalar_values, obj, iters, residuals)
    return ConicSolution(OPTIMAL, psd_values, scalar_values, obj, iters, residuals)
