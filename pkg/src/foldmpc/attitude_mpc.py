"""Switching MPC for the attitude loop.

One linear attitude model per formation is kept in a bank.  The controller
state is ``(roll, pitch, yaw, roll_rate, pitch_rate, yaw_rate, tau_x, tau_y,
tau_z)`` and the input is the desired torque.  The switching signal picks
the model; each model's QP matrices are built once at start-up.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .morphology import Formation, table_inertia
from .mpc import CondensedMpc, MpcConfig, MpcError, build_qp, clamp_move, discretize
from .plant import body_rates_to_euler_rates

__all__ = [
    "AttitudeModel",
    "SwitchingAttitudeMpc",
    "attitude_config",
    "build_qp",
    "discretize",
    "linearize_attitude",
    "make_model",
    "make_bank",
    "select_model",
]


def linearize_attitude(inertia, tau_alpha: float):
    """Continuous attitude model linearised at zero rate and zero torque."""
    inertia = np.asarray(inertia, dtype=float)
    if inertia.shape != (3,) or np.any(inertia <= 0):
        raise ValueError("inertia must be three positive values")
    if tau_alpha <= 0:
        raise ValueError("tau_alpha must be positive")
    A = np.zeros((9, 9))
    A[0:3, 3:6] = np.eye(3)
    A[3:6, 6:9] = np.diag(1.0 / inertia)
    A[6:9, 6:9] = -np.eye(3) / tau_alpha
    B = np.zeros((9, 3))
    B[6:9, :] = np.eye(3) / tau_alpha
    return A, B


@dataclass(frozen=True, eq=False)
class AttitudeModel:
    formation: Formation
    inertia: np.ndarray
    A_c: np.ndarray
    B_c: np.ndarray
    A_d: np.ndarray
    B_d: np.ndarray
    T_s: float


def make_model(formation, inertia, tau_alpha: float, T_s: float) -> AttitudeModel:
    A_c, B_c = linearize_attitude(inertia, tau_alpha)
    A_d, B_d = discretize(A_c, B_c, T_s)
    return AttitudeModel(Formation.parse(formation), np.asarray(inertia, dtype=float), A_c, B_c, A_d, B_d, T_s)


def make_bank(tau_alpha: float, T_s: float, inertia_table=None) -> dict:
    """One model per formation, using the CAD inertia table by default."""
    return {f: make_model(f, table_inertia(f, inertia_table), tau_alpha, T_s) for f in Formation}


def select_model(t_f, bank: dict) -> AttitudeModel:
    return bank[Formation.parse(t_f)]


DEG_PER_RAD = 180.0 / np.pi


def attitude_config(angle_weight_unit: str = "deg", **overrides) -> MpcConfig:
    """Attitude-layer defaults: horizons, weights and torque bounds of the reference design.

    The angle weights are quoted per squared degree when ``angle_weight_unit``
    is ``"deg"`` and are converted here to act on radians; rate and torque
    weights are always per SI unit.
    """
    kw = dict(
        N_p=40,
        N_c=12,
        Q_x=[40, 40, 40, 80, 80, 80, 0.1, 0.1, 0.1],
        R_u=[80, 80, 120],
        u_min=[-0.1] * 3,
        u_max=[0.1] * 3,
        du_min=[-0.03] * 3,
        du_max=[0.03] * 3,
        T_s=0.01,
    )
    kw.update(overrides)
    Q = np.array(kw["Q_x"], dtype=float)
    if angle_weight_unit == "deg":
        Q[:3] *= DEG_PER_RAD**2
    elif angle_weight_unit != "rad":
        raise ValueError("angle_weight_unit must be 'deg' or 'rad'")
    kw["Q_x"] = Q
    return MpcConfig(**kw)


class MpcSolveError(MpcError):
    def __init__(self, message, tick=None, formation=None):
        self.tick = tick
        self.formation = formation
        super().__init__(f"{message} (tick {tick}, formation {getattr(formation, 'value', formation)})")


@dataclass
class SwitchingAttitudeMpc:
    """Attitude controller with one cached QP per formation.

    ``u_prev`` and the warm-start sequence are the only mutable state and
    are changed only by :meth:`control_step`.
    """

    bank: dict
    cfg: MpcConfig = field(default_factory=attitude_config)
    tol: float = 1e-8
    max_iter: int = 500
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tick: int = 0

    def __post_init__(self):
        if set(self.bank) != set(Formation):
            raise ValueError("the model bank needs exactly one model per formation")
        self._qp = {f: CondensedMpc(m.A_d, m.B_d, self.cfg) for f, m in self.bank.items()}
        self._warm = None
        self.last_solution = None
        self.u_prev = np.asarray(self.u_prev, dtype=float).copy()

    @classmethod
    def from_table(cls, tau_alpha=0.05, cfg: MpcConfig | None = None, inertia_table=None, **kw):
        cfg = attitude_config() if cfg is None else cfg
        return cls(make_bank(tau_alpha, cfg.T_s, inertia_table), cfg, **kw)

    def select_model(self, t_f) -> AttitudeModel:
        return select_model(t_f, self.bank)

    def condensed(self, t_f) -> CondensedMpc:
        return self._qp[Formation.parse(t_f)]

    @staticmethod
    def controller_state(eta, omega, tau) -> np.ndarray:
        """Map plant attitude, body rates and realised torques to the MPC state."""
        eta = np.asarray(eta, dtype=float)
        return np.concatenate([eta, body_rates_to_euler_rates(eta, omega), np.asarray(tau, dtype=float)])

    def control_step(self, x, ref, t_f) -> np.ndarray:
        """Desired torques for controller state ``x`` and angle reference ``ref``."""
        f = Formation.parse(t_f)
        qp = self._qp[f]
        x_ref = np.zeros(9)
        x_ref[:3] = ref
        sol = qp.solve(x, x_ref, self.u_prev, warm=self._warm, tol=self.tol, max_iter=self.max_iter)
        if not sol.converged:
            raise MpcSolveError(f"attitude QP failed: {sol.status}", self.tick, f)
        u = clamp_move(sol.x[:3], self.u_prev, self.cfg)
        self._warm = qp.shifted(sol.x)
        self.last_solution = sol
        self.u_prev = u
        self.tick += 1
        return u.copy()

    def reset(self):
        self.u_prev = np.zeros(3)
        self._warm = None
        self.last_solution = None
        self.tick = 0
