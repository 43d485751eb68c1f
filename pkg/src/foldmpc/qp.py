"""Dense convex QP solver for MPC.

Solves::

    minimize    0.5 x'Hx + g'x
    subject to  c_lo <= Cx <= c_hi

with the dual active-set method of Goldfarb and Idnani.  The method starts
from the unconstrained minimiser, so no feasible initial point is needed, and
keeps the working-set Cholesky factor up to date as constraints enter.  All
quantities depending only on ``H`` and ``C`` (``H^-1``, ``H^-1 C'`` and
``C H^-1 C'``) are computed once by :class:`QpSolver` and reused across calls,
which is what the MPC layers do every tick.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

INF_BOUND = 1e20

LOWER = -1
UPPER = 1


class QpError(RuntimeError):
    pass


class NotPositiveDefiniteError(QpError, ValueError):
    pass


class InfeasibleQpError(QpError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    C: np.ndarray | None = None
    c_lo: np.ndarray | None = None
    c_hi: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        if not np.allclose(self.H, self.H.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(self.H).max())):
            raise ValueError("H must be symmetric")
        if self.C is None:
            self.C = np.zeros((0, n))
        self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
        m = self.C.shape[0]
        self.c_lo = np.full(m, -np.inf) if self.c_lo is None else np.asarray(self.c_lo, dtype=float).reshape(-1)
        self.c_hi = np.full(m, np.inf) if self.c_hi is None else np.asarray(self.c_hi, dtype=float).reshape(-1)
        if self.c_lo.shape != (m,) or self.c_hi.shape != (m,):
            raise ValueError("constraint bounds must match the rows of C")
        if np.any(self.c_lo > self.c_hi):
            bad = int(np.argmax(self.c_lo > self.c_hi))
            raise ValueError(f"constraint {bad} has c_lo > c_hi")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    active: tuple
    multipliers: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    complementarity: float
    converged: bool
    status: str = "optimal"
    objective: float = field(default=float("nan"))

    @property
    def active_set(self) -> tuple:
        """Indices of constraints held at a bound."""
        return tuple(i for i, _ in self.active)


def kkt_residuals(problem: QpProblem, x, lam):
    """Stationarity, primal feasibility and complementarity residuals.

    ``lam`` is signed: positive on rows at their upper bound, negative at the lower.
    """
    H, g, C = problem.H, problem.g, problem.C
    lo = np.where(problem.c_lo <= -INF_BOUND, -np.inf, problem.c_lo)
    hi = np.where(problem.c_hi >= INF_BOUND, np.inf, problem.c_hi)
    cx = C @ x
    stat = H @ x + g + C.T @ lam
    dual = float(np.max(np.abs(stat))) if stat.size else 0.0
    viol = np.maximum(lo - cx, cx - hi)
    primal = float(max(0.0, np.max(viol))) if viol.size else 0.0
    comp = 0.0
    if lam.size:
        up, dn = lam > 0, lam < 0
        terms = np.zeros(lam.size)
        terms[up] = lam[up] * np.abs(hi[up] - cx[up])
        terms[dn] = -lam[dn] * np.abs(cx[dn] - lo[dn])
        comp = float(terms.max())
    return dual, primal, comp


class QpSolver:
    """Reusable workspace for QPs sharing ``H`` and ``C``.

    Parameters
    ----------
    H : (n, n) array
        Symmetric positive definite Hessian.
    C : (m, n) array, optional
        Constraint matrix.
    """

    def __init__(self, H, C=None):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        n = H.shape[0]
        self.H = H
        self.C = np.zeros((0, n)) if C is None else np.asarray(C, dtype=float).reshape(-1, n)
        try:
            self._chol = cho_factor(H, lower=True)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError("Hessian is not positive definite") from None
        self.Hinv = cho_solve(self._chol, np.eye(n))
        self.Hinv = 0.5 * (self.Hinv + self.Hinv.T)
        self.HinvCt = self.Hinv @ self.C.T
        self.Z = self.C @ self.HinvCt
        self.Z = 0.5 * (self.Z + self.Z.T)
        self._zdiag = np.diag(self.Z).copy()

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def solve(self, g, c_lo=None, c_hi=None, warm=None, tol: float = 1e-8, max_iter: int = 500) -> QpSolution:
        """Solve for a new linear term and bounds.

        ``warm`` may be a previous :class:`QpSolution`, an iterable of
        ``(index, side)`` pairs with side ``+1`` for an upper and ``-1`` for a
        lower bound, or a candidate point whose tight constraints seed the
        working set.
        """
        g = np.asarray(g, dtype=float).reshape(-1)
        m = self.m
        lo = np.full(m, -np.inf) if c_lo is None else np.asarray(c_lo, dtype=float).reshape(-1).copy()
        hi = np.full(m, np.inf) if c_hi is None else np.asarray(c_hi, dtype=float).reshape(-1).copy()
        if np.any(lo > hi):
            raise ValueError("c_lo > c_hi")
        lo[lo <= -INF_BOUND] = -np.inf
        hi[hi >= INF_BOUND] = np.inf
        return _GoldfarbIdnani(self, g, lo, hi, tol, max_iter).run(warm)

    def problem(self, g, c_lo=None, c_hi=None) -> QpProblem:
        return QpProblem(self.H, g, self.C, c_lo, c_hi)


def solve(problem: QpProblem, warm=None, tol: float = 1e-8, max_iter: int = 500) -> QpSolution:
    """One-shot solve of a :class:`QpProblem`."""
    return QpSolver(problem.H, problem.C).solve(problem.g, problem.c_lo, problem.c_hi, warm, tol, max_iter)


class _GoldfarbIdnani:
    # relative Schur-complement size below which a constraint is treated as
    # linearly dependent on the working set
    DEP_TOL = 1e-11

    def __init__(self, ws: QpSolver, g, lo, hi, tol, max_iter):
        self.ws = ws
        self.g = g
        self.lo = lo
        self.hi = hi
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0
        self.idx: list[int] = []
        self.sig: list[int] = []
        self.u = np.zeros(0)
        self.L = np.zeros((0, 0))
        self.x_free = -(ws.Hinv @ g)

    # -- working-set bookkeeping ------------------------------------------

    def _bound(self, i, s):
        return self.hi[i] if s == UPPER else self.lo[i]

    def _coupling(self, i, s):
        """Oriented column of C H^-1 C' between the working set and constraint (i, s)."""
        if not self.idx:
            return np.zeros(0)
        # oriented normal of (j, s_j) is -s_j * C_j
        return np.array(self.sig, dtype=float) * self.ws.Z[self.idx, i] * s

    def _solve_ws(self, rhs):
        if rhs.size == 0:
            return rhs
        y = solve_triangular(self.L, rhs, lower=True, check_finite=False)
        return solve_triangular(self.L.T, y, lower=False, check_finite=False)

    def _schur(self, i, s):
        """Return (r, schur, l) for adding (i, s): r = A_W^-1 a, schur = a'H^-1a - a'...r."""
        col = self._coupling(i, s)
        if col.size == 0:
            return col, self.ws._zdiag[i], col
        l = solve_triangular(self.L, col, lower=True, check_finite=False)
        r = solve_triangular(self.L.T, l, lower=False, check_finite=False)
        return r, self.ws._zdiag[i] - l @ l, l

    def _append(self, i, s, l, schur, mult):
        k = len(self.idx)
        L = np.zeros((k + 1, k + 1))
        L[:k, :k] = self.L
        L[k, :k] = l
        L[k, k] = np.sqrt(schur)
        self.L = L
        self.idx.append(i)
        self.sig.append(s)
        self.u = np.append(self.u, mult)

    def _remove(self, pos):
        del self.idx[pos]
        del self.sig[pos]
        self.u = np.delete(self.u, pos)
        self._refactor()

    def _refactor(self):
        if not self.idx:
            self.L = np.zeros((0, 0))
            return
        sig = np.array(self.sig, dtype=float)
        M = self.ws.Z[np.ix_(self.idx, self.idx)] * np.outer(sig, sig)
        self.L = np.linalg.cholesky(M)

    def _x_from_multipliers(self):
        if not self.idx:
            return self.x_free.copy()
        sig = np.array(self.sig, dtype=float)
        # oriented normals are -s_j C_j; x = H^-1 (A'u - g)
        return self.x_free - self.ws.HinvCt[:, self.idx] @ (sig * self.u)

    # -- warm start ---------------------------------------------------------

    def _warm_candidates(self, warm):
        if warm is None:
            return []
        if isinstance(warm, QpSolution):
            return list(warm.active)
        arr = None
        try:
            arr = np.asarray(warm, dtype=float)
        except (TypeError, ValueError):
            arr = None
        if arr is not None and arr.ndim == 1 and arr.size == self.ws.n:
            cx = self.ws.C @ arr
            cand = []
            for i in range(self.ws.m):
                if np.isfinite(self.hi[i]) and abs(cx[i] - self.hi[i]) <= 1e-9 * (1 + abs(self.hi[i])):
                    cand.append((i, UPPER))
                elif np.isfinite(self.lo[i]) and abs(cx[i] - self.lo[i]) <= 1e-9 * (1 + abs(self.lo[i])):
                    cand.append((i, LOWER))
            return cand
        return [(int(i), int(s)) for i, s in warm]

    def _warm_start(self, warm):
        for i, s in sorted(set(self._warm_candidates(warm))):
            if not 0 <= i < self.ws.m or s not in (LOWER, UPPER) or not np.isfinite(self._bound(i, s)):
                continue
            if i in self.idx:
                continue
            r, schur, l = self._schur(i, s)
            if schur > self.DEP_TOL * max(self.ws._zdiag[i], 1e-300):
                self._append(i, s, l, schur, 0.0)
        # equality-constrained minimiser, then shed constraints with negative multipliers
        while self.idx:
            sig = np.array(self.sig, dtype=float)
            beta = -sig * np.array([self._bound(i, s) for i, s in zip(self.idx, self.sig)])
            resid = beta - (-sig * (self.ws.C[self.idx] @ self.x_free))
            self.u = self._solve_ws(resid)
            worst = int(np.argmin(self.u))
            if self.u[worst] >= 0:
                break
            self._remove(worst)
            self.iterations += 1

    # -- main loop ----------------------------------------------------------

    def _violations(self, cx):
        with np.errstate(invalid="ignore"):
            v = np.maximum(self.lo - cx, cx - self.hi)
        if self.idx:
            v[self.idx] = -np.inf
        return v

    def run(self, warm):
        ws = self.ws
        self._warm_start(warm)
        x = self._x_from_multipliers()
        cx = ws.C @ x
        status = "optimal"
        polished = 0
        while True:
            if ws.m == 0:
                break
            v = self._violations(cx)
            p = int(np.argmax(v))
            if not v[p] > self.tol:
                # refine on the final working set, then re-check feasibility
                if polished >= 2:
                    break
                x = self._polish(x)
                cx = ws.C @ x
                polished += 1
                v = self._violations(cx)
                if not np.max(v) > self.tol:
                    break
                continue
            if self.iterations >= self.max_iter:
                status = "max_iter"
                break
            s = UPPER if cx[p] > self.hi[p] else LOWER
            bound = self._bound(p, s)
            added = False
            u_p = 0.0
            while not added:
                if self.iterations >= self.max_iter:
                    status = "max_iter"
                    break
                self.iterations += 1
                r, schur, l = self._schur(p, s)
                # partial step limit: a working-set multiplier reaching zero
                t1, drop = np.inf, -1
                if r.size:
                    pos = np.flatnonzero(r > 0)
                    if pos.size:
                        ratios = self.u[pos] / r[pos]
                        k = int(np.argmin(ratios))
                        t1, drop = ratios[k], int(pos[k])
                viol = (cx[p] - bound) if s == UPPER else (bound - cx[p])
                dependent = schur <= self.DEP_TOL * max(ws._zdiag[p], 1e-300)
                t2 = np.inf if dependent else max(viol, 0.0) / schur
                t = min(t1, t2)
                if not np.isfinite(t):
                    status = "infeasible"
                    break
                sig = np.array(self.sig, dtype=float)
                if not dependent:
                    w = -s * ws.HinvCt[:, p]
                    dz = -s * ws.Z[:, p]
                    if self.idx:
                        w = w + ws.HinvCt[:, self.idx] @ (sig * r)
                        dz = dz + ws.Z[:, self.idx] @ (sig * r)
                    x = x + t * w
                    cx = cx + t * dz
                if r.size:
                    self.u = self.u - t * r
                u_p += t
                if t == t2:
                    r2, schur2, l2 = self._schur(p, s)
                    self._append(p, s, l2, schur2, u_p)
                    added = True
                else:
                    # a dependent constraint takes a pure dual step; x is unchanged
                    self.u[drop] = 0.0
                    self._remove(drop)
            if status != "optimal":
                break

        lam = np.zeros(ws.m)
        for k, (i, s) in enumerate(zip(self.idx, self.sig)):
            lam[i] = s * max(self.u[k], 0.0)
        problem = QpProblem.__new__(QpProblem)
        problem.H, problem.g, problem.C, problem.c_lo, problem.c_hi = ws.H, self.g, ws.C, self.lo, self.hi
        dual, primal, comp = kkt_residuals(problem, x, lam)
        converged = status == "optimal"
        return QpSolution(
            x=x,
            active=tuple(sorted(zip(self.idx, self.sig))),
            multipliers=lam,
            iterations=self.iterations,
            primal_residual=primal,
            dual_residual=dual,
            complementarity=comp,
            converged=converged,
            status=status,
            objective=float(0.5 * x @ ws.H @ x + self.g @ x),
        )

    def _polish(self, x):
        """Re-solve the KKT system of the final working set directly."""
        ws = self.ws
        n = ws.n
        if not self.idx:
            return np.asarray(cho_solve(ws._chol, -self.g))
        k = len(self.idx)
        A = ws.C[self.idx]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = ws.H
        K[:n, n:] = A.T
        K[n:, :n] = A
        rhs = np.concatenate([-self.g, [self._bound(i, s) for i, s in zip(self.idx, self.sig)]])
        sol = np.linalg.solve(K, rhs)
        # refine once against the original system
        sol = sol + np.linalg.solve(K, rhs - K @ sol)
        lam = sol[n:]
        sig = np.array(self.sig, dtype=float)
        self.u = np.maximum(sig * lam, 0.0)
        return sol[:n]
