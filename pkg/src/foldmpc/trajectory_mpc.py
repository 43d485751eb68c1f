"""Position MPC producing roll/pitch references and total thrust.

The translation model is linearised about hover with zero yaw.  Its states
are ``(x, y, z, vx, vy, vz, phi*, theta*)`` where the last two are the
attitude actually achieved by the inner loop, modelled as a first-order lag
on the commanded angles.  Inputs are ``(phi_cmd, theta_cmd, dT)`` with the
thrust expressed as a fraction of hover thrust: ``T = m g (1 + dT)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mpc import CondensedMpc, MpcConfig, clamp_move, discretize

DEG = np.pi / 180.0


@dataclass(frozen=True, eq=False)
class TranslationModel:
    A_d: np.ndarray
    B_d: np.ndarray
    g: float
    m: float
    attitude_lag: float
    T_s: float

    def thrust(self, dT: float) -> float:
        return self.m * self.g * (1.0 + dT)

    def normalized_thrust(self, T: float) -> float:
        return T / (self.m * self.g) - 1.0


def translation_continuous(g: float, attitude_lag: float):
    A = np.zeros((8, 8))
    A[0:3, 3:6] = np.eye(3)
    A[3, 7] = g
    A[4, 6] = -g
    A[6, 6] = A[7, 7] = -1.0 / attitude_lag
    B = np.zeros((8, 3))
    B[6, 0] = B[7, 1] = 1.0 / attitude_lag
    B[5, 2] = g
    return A, B


def build_translation_model(m: float, g: float, attitude_lag: float, T_s: float) -> TranslationModel:
    if min(m, g, attitude_lag, T_s) <= 0:
        raise ValueError("mass, gravity, attitude lag and sample time must be positive")
    A, B = translation_continuous(g, attitude_lag)
    A_d, B_d = discretize(A, B, T_s)
    return TranslationModel(A_d, B_d, g, m, attitude_lag, T_s)


def trajectory_config(N_p=30, N_c=10, T_s=0.1, Q_x=(40, 40, 60, 80, 80, 80, 0.1, 0.1), R_u=(25, 25, 8),
                      angle_max_deg=12.0, angle_rate_deg=0.3, thrust_rate=0.0025,
                      thrust_min=-np.inf, thrust_max=np.inf) -> MpcConfig:
    """Position-layer defaults.  Angle bounds are given in degrees, thrust bounds as fractions of hover thrust."""
    a, da = angle_max_deg * DEG, angle_rate_deg * DEG
    return MpcConfig(
        N_p=N_p, N_c=N_c, Q_x=Q_x, R_u=R_u,
        u_min=[-a, -a, thrust_min], u_max=[a, a, thrust_max],
        du_min=[-da, -da, -thrust_rate], du_max=[da, da, thrust_rate],
        T_s=T_s,
    )


@dataclass
class TrajectoryMpc:
    """Position controller.  ``u_prev`` holds the last applied ``(phi_cmd, theta_cmd, dT)``."""

    model: TranslationModel
    cfg: MpcConfig = field(default_factory=trajectory_config)
    tol: float = 1e-8
    max_iter: int = 500
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if abs(self.cfg.T_s - self.model.T_s) > 1e-12:
            raise ValueError("model and configuration sample times differ")
        self._qp = CondensedMpc(self.model.A_d, self.model.B_d, self.cfg)
        self._warm = None
        self.last_solution = None
        self.u_prev = np.asarray(self.u_prev, dtype=float).copy()
        # achieved-angle estimate used when no attitude measurement is given
        self._lag_state = self.u_prev[:2].copy()

    @classmethod
    def create(cls, m=1.0, g=9.81, attitude_lag=0.2, cfg: MpcConfig | None = None, **kw):
        cfg = trajectory_config() if cfg is None else cfg
        return cls(build_translation_model(m, g, attitude_lag, cfg.T_s), cfg, **kw)

    @property
    def qp(self) -> CondensedMpc:
        return self._qp

    def position_control_step(self, p, v, ref_p, ref_v=(0.0, 0.0, 0.0), u_prev=None, angles=None):
        """Return ``(phi*, theta*, T)`` in radians and newtons.

        ``angles`` is the measured ``(roll, pitch)``; without it the lag
        states are propagated from previous commands.
        """
        if u_prev is not None:
            self.u_prev = np.asarray(u_prev, dtype=float).copy()
        lag = self._lag_state if angles is None else np.asarray(angles, dtype=float)[:2]
        x = np.concatenate([np.asarray(p, dtype=float), np.asarray(v, dtype=float), lag])
        x_ref = np.concatenate([np.asarray(ref_p, dtype=float), np.asarray(ref_v, dtype=float), [0.0, 0.0]])
        sol = self._qp.solve(x, x_ref, self.u_prev, warm=self._warm, tol=self.tol, max_iter=self.max_iter)
        if not sol.converged:
            raise RuntimeError(f"trajectory QP failed: {sol.status}")
        u = clamp_move(sol.x[:3], self.u_prev, self.cfg)
        self._warm = self._qp.shifted(sol.x)
        self.last_solution = sol
        self.u_prev = u
        self._lag_state = (self.model.A_d @ x + self.model.B_d @ u)[6:8]
        return float(u[0]), float(u[1]), self.model.thrust(u[2])

    def reset(self):
        self.u_prev = np.zeros(3)
        self._lag_state = np.zeros(2)
        self._warm = None
        self.last_solution = None
