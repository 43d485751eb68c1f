"""Condensed linear MPC shared by the attitude and trajectory layers.

The predicted states are eliminated, leaving a dense QP over the stacked
input moves ``U = (u_0, ..., u_{Nc-1})``.  Inputs after the control horizon
are held at ``u_{Nc-1}``.  The cost is::

    sum_{k=1..Np} (x_k - x*)' Q (x_k - x*)  +  sum_{k=0..Np-1} u_k' R u_k

subject to input bounds, input-rate bounds (the first move measured from the
previously applied input) and state bounds at every predicted step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .qp import INF_BOUND, QpProblem, QpSolution, QpSolver


class MpcError(RuntimeError):
    pass


def discretize(A_c, B_c, T_s: float):
    """Exact zero-order-hold discretisation via the augmented matrix exponential."""
    if T_s <= 0:
        raise ValueError("sample time must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float).reshape(A_c.shape[0], -1)
    n, m = B_c.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A_c
    M[:n, n:] = B_c
    E = expm(M * T_s)
    return E[:n, :n], E[:n, n:]


def _vec(value, size, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (size,)).copy()
    if arr.shape != (size,):
        raise ValueError(f"{name} must have {size} entries")
    return arr


@dataclass
class MpcConfig:
    """Horizons, weights and bounds of one MPC layer.

    Weight vectors are the diagonals of ``Q`` and ``R``.  Bounds may be
    infinite; any magnitude of at least 1e20 counts as absent.
    """

    N_p: int
    N_c: int
    Q_x: np.ndarray
    R_u: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    du_min: np.ndarray
    du_max: np.ndarray
    x_min: np.ndarray | None = None
    x_max: np.ndarray | None = None
    T_s: float = 0.01

    def __post_init__(self):
        self.N_p, self.N_c = int(self.N_p), int(self.N_c)
        if not 1 <= self.N_c <= self.N_p:
            raise ValueError("horizons must satisfy 1 <= N_c <= N_p")
        if self.T_s <= 0:
            raise ValueError("T_s must be positive")
        self.Q_x = np.asarray(self.Q_x, dtype=float).reshape(-1)
        nx = self.Q_x.size
        self.R_u = np.asarray(self.R_u, dtype=float).reshape(-1)
        nu = self.R_u.size
        if np.any(self.Q_x < 0):
            raise ValueError("state weights must be non-negative")
        if np.any(self.R_u <= 0):
            raise ValueError("input weights must be positive")
        self.u_min = _vec(self.u_min, nu, "u_min")
        self.u_max = _vec(self.u_max, nu, "u_max")
        self.du_min = _vec(self.du_min, nu, "du_min")
        self.du_max = _vec(self.du_max, nu, "du_max")
        self.x_min = _vec(-np.inf if self.x_min is None else self.x_min, nx, "x_min")
        self.x_max = _vec(np.inf if self.x_max is None else self.x_max, nx, "x_max")
        for lo, hi, name in ((self.u_min, self.u_max, "u"), (self.du_min, self.du_max, "du"),
                             (self.x_min, self.x_max, "x")):
            if np.any(lo > hi):
                raise ValueError(f"infeasible {name} bounds: min > max")
        for arr in (self.u_min, self.u_max, self.du_min, self.du_max, self.x_min, self.x_max):
            arr[arr >= INF_BOUND] = np.inf
            arr[arr <= -INF_BOUND] = -np.inf
        if np.any(self.du_min > 0) or np.any(self.du_max < 0):
            raise ValueError("rate bounds must admit a zero move")

    @property
    def nx(self) -> int:
        return self.Q_x.size

    @property
    def nu(self) -> int:
        return self.R_u.size


def condense(A_d, B_d, N_p: int, N_c: int):
    """Prediction matrices ``X = F x0 + G U`` for the stacked states x_1..x_Np."""
    nx, nu = B_d.shape
    powers = [np.eye(nx)]
    for _ in range(N_p):
        powers.append(A_d @ powers[-1])
    F = np.vstack(powers[1:])
    G = np.zeros((N_p * nx, N_c * nu))
    for k in range(1, N_p + 1):
        rows = slice((k - 1) * nx, k * nx)
        for i in range(k):
            j = min(i, N_c - 1)
            G[rows, j * nu:(j + 1) * nu] += powers[k - 1 - i] @ B_d
    return F, G


@dataclass
class _RowBlock:
    kind: str
    C: np.ndarray
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


class CondensedMpc:
    """Precomputed condensed QP for one linear model and configuration.

    Everything that does not depend on the current state, reference or
    previous input is built once; :meth:`qp_terms` fills in the rest.
    """

    def __init__(self, A_d, B_d, cfg: MpcConfig):
        self.A_d = np.asarray(A_d, dtype=float)
        self.B_d = np.asarray(B_d, dtype=float)
        self.cfg = cfg
        nx, nu = self.B_d.shape
        if nx != cfg.nx or nu != cfg.nu:
            raise ValueError("model dimensions do not match the weights")
        N_p, N_c = cfg.N_p, cfg.N_c
        self.F, self.G = condense(self.A_d, self.B_d, N_p, N_c)
        self.Qbar = np.tile(cfg.Q_x, N_p)
        rbar = np.tile(cfg.R_u, N_c)
        rbar[(N_c - 1) * nu:] *= N_p - N_c + 1
        self.Rbar = rbar
        GtQ = self.G.T * self.Qbar
        H = 2.0 * (GtQ @ self.G + np.diag(rbar))
        self.H = 0.5 * (H + H.T)
        self._GtQ2 = 2.0 * GtQ

        n = N_c * nu
        rows, lo, hi = [], [], []
        # input bounds, one row per finite channel and move
        box = np.tile(np.isfinite(cfg.u_min) | np.isfinite(cfg.u_max), N_c)
        self._box_idx = np.flatnonzero(box)
        rows.append(np.eye(n)[self._box_idx])
        # rate bounds; the first move is measured from the previous input
        D = np.eye(n) - np.eye(n, k=-nu)
        rate = np.tile(np.isfinite(cfg.du_min) | np.isfinite(cfg.du_max), N_c)
        self._rate_idx = np.flatnonzero(rate)
        rows.append(D[self._rate_idx])
        # state bounds at every predicted step
        state = np.tile(np.isfinite(cfg.x_min) | np.isfinite(cfg.x_max), N_p)
        self._state_idx = np.flatnonzero(state)
        rows.append(self.G[self._state_idx])
        self.C = np.vstack(rows) if rows else np.zeros((0, n))
        self._n_box = self._box_idx.size
        self._n_rate = self._rate_idx.size

        self._u_lo = np.tile(cfg.u_min, N_c)[self._box_idx]
        self._u_hi = np.tile(cfg.u_max, N_c)[self._box_idx]
        self._du_lo = np.tile(cfg.du_min, N_c)
        self._du_hi = np.tile(cfg.du_max, N_c)
        self._x_lo = np.tile(cfg.x_min, N_p)[self._state_idx]
        self._x_hi = np.tile(cfg.x_max, N_p)[self._state_idx]
        self.solver = QpSolver(self.H, self.C)

    @property
    def n_var(self) -> int:
        return self.cfg.N_c * self.cfg.nu

    def qp_terms(self, x0, x_ref, u_prev):
        """Linear term and constraint bounds for the current tick."""
        cfg = self.cfg
        x0 = np.asarray(x0, dtype=float)
        free = self.F @ x0
        ref = np.tile(np.asarray(x_ref, dtype=float), cfg.N_p)
        g = self._GtQ2 @ (free - ref)
        du_lo = self._du_lo.copy()
        du_hi = self._du_hi.copy()
        u_prev = np.asarray(u_prev, dtype=float)
        du_lo[:cfg.nu] += u_prev
        du_hi[:cfg.nu] += u_prev
        lo = np.concatenate([self._u_lo, du_lo[self._rate_idx], self._x_lo - free[self._state_idx]])
        hi = np.concatenate([self._u_hi, du_hi[self._rate_idx], self._x_hi - free[self._state_idx]])
        return g, lo, hi

    def problem(self, x0, x_ref, u_prev) -> QpProblem:
        g, lo, hi = self.qp_terms(x0, x_ref, u_prev)
        return QpProblem(self.H, g, self.C, lo, hi)

    def solve(self, x0, x_ref, u_prev, warm=None, tol=1e-8, max_iter=500) -> QpSolution:
        g, lo, hi = self.qp_terms(x0, x_ref, u_prev)
        return self.solver.solve(g, lo, hi, warm=warm, tol=tol, max_iter=max_iter)

    def shifted(self, U) -> np.ndarray:
        """Previous input sequence advanced by one step, last move repeated."""
        nu = self.cfg.nu
        U = np.asarray(U, dtype=float)
        return np.concatenate([U[nu:], U[-nu:]])


def build_qp(A_d, B_d, x0, x_ref, u_prev, cfg: MpcConfig) -> QpProblem:
    """Condensed QP for a single solve; the controllers cache :class:`CondensedMpc` instead."""
    return CondensedMpc(A_d, B_d, cfg).problem(x0, x_ref, u_prev)


def clamp_move(u, u_prev, cfg: MpcConfig) -> np.ndarray:
    """Project a move onto the input and rate bounds so both hold exactly in floating point.

    The solver meets constraints to within its tolerance; the applied input
    has to satisfy them with no tolerance at all, including when the rate is
    recomputed as ``u - u_prev``.
    """
    u = np.array(u, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    for i in range(u.size):
        lo = max(cfg.u_min[i], u_prev[i] + cfg.du_min[i])
        hi = min(cfg.u_max[i], u_prev[i] + cfg.du_max[i])
        if lo > hi:
            raise MpcError(f"previous input {u_prev[i]} leaves no admissible move on channel {i}")
        v = min(max(u[i], lo), hi)
        while v > cfg.u_max[i] or v - u_prev[i] > cfg.du_max[i]:
            v = np.nextafter(v, -np.inf)
        while v < cfg.u_min[i] or v - u_prev[i] < cfg.du_min[i]:
            v = np.nextafter(v, np.inf)
        u[i] = v
    return u
