"""Nonlinear 6-DOF model of the foldable quadrotor and its RK4 integrator.

The full state vector is laid out as ``[p(3), v(3), eta(3), omega(3), tau(3)]``
where ``eta = (roll, pitch, yaw)`` are Z-Y-X Euler angles, ``omega`` body rates
and ``tau`` the realised (lagged) body torques.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PITCH_LIMIT = math.pi / 2 - 1e-3
STATE_DIM = 15

P, V, ETA, OMEGA, TAU = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))


class PitchSingularityError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlantParams:
    inertia: tuple = (0.004233, 0.004380, 0.007834)
    mass: float = 1.0
    tau_alpha: float = 0.05
    gravity: float = 9.81

    def __post_init__(self):
        object.__setattr__(self, "inertia", tuple(float(v) for v in self.inertia))
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise ValueError("inertia must be three positive values")
        if self.tau_alpha <= 0:
            raise ValueError("tau_alpha must be positive")
        if self.mass <= 0:
            raise ValueError("mass must be positive")


@dataclass(frozen=True)
class PlantInputs:
    tau_d: tuple = (0.0, 0.0, 0.0)
    thrust: float = 0.0

    def __post_init__(self):
        if self.thrust < 0:
            raise ValueError("thrust must be non-negative")


@dataclass
class PlantState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.eta, self.omega, self.tau]).astype(float)

    @classmethod
    def from_vector(cls, x) -> "PlantState":
        x = np.asarray(x, dtype=float)
        return cls(x[P].copy(), x[V].copy(), x[ETA].copy(), x[OMEGA].copy(), x[TAU].copy())


def euler_rate_matrix(eta) -> np.ndarray:
    """W_eta such that omega = W_eta @ eta_dot."""
    phi, theta = eta[0], eta[1]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    return np.array([[1.0, 0.0, -st], [0.0, cp, ct * sp], [0.0, -sp, ct * cp]])


def euler_rate_to_body_rates(eta, eta_dot) -> np.ndarray:
    return euler_rate_matrix(eta) @ np.asarray(eta_dot, dtype=float)


def body_rates_to_euler_rates(eta, omega) -> np.ndarray:
    """Inverse of the Euler-rate transform; singular at pitch = +-pi/2."""
    phi, theta = eta[0], eta[1]
    sp, cp = math.sin(phi), math.cos(phi)
    ct, tt = math.cos(theta), math.tan(theta)
    p, q, r = omega
    return np.array([p + (sp * q + cp * r) * tt, cp * q - sp * r, (sp * q + cp * r) / ct])


def attitude_dynamics(omega, tau, inertia) -> np.ndarray:
    """Body angular acceleration for a diagonal inertia (Newton-Euler)."""
    wx, wy, wz = omega
    ixx, iyy, izz = inertia
    return np.array([
        ((iyy - izz) * wy * wz + tau[0]) / ixx,
        ((izz - ixx) * wz * wx + tau[1]) / iyy,
        ((ixx - iyy) * wx * wy + tau[2]) / izz,
    ])


def torque_lag(tau, tau_d, tau_alpha: float) -> np.ndarray:
    return (np.asarray(tau_d, dtype=float) - np.asarray(tau, dtype=float)) / tau_alpha


def rotation_matrix(eta) -> np.ndarray:
    """Body-to-inertial rotation for Z-Y-X (yaw, pitch, roll) Euler angles."""
    phi, theta, psi = eta
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    ss, cs = math.sin(psi), math.cos(psi)
    return np.array([
        [ct * cs, sp * st * cs - cp * ss, cp * st * cs + sp * ss],
        [ct * ss, sp * st * ss + cp * cs, cp * st * ss - sp * cs],
        [-st, sp * ct, cp * ct],
    ])


def translational_dynamics(eta, thrust: float, params: PlantParams) -> np.ndarray:
    if thrust < 0:
        raise ValueError("thrust must be non-negative")
    return rotation_matrix(eta)[:, 2] * (thrust / params.mass) - np.array([0.0, 0.0, params.gravity])


def state_derivative(x, tau_d, thrust, params: PlantParams) -> np.ndarray:
    """Right-hand side of the full nonlinear ODE."""
    phi, theta, psi = x[6], x[7], x[8]
    p, q, r = x[9], x[10], x[11]
    tx, ty, tz = x[12], x[13], x[14]
    ixx, iyy, izz = params.inertia
    ta = params.tau_alpha

    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    ss, cs = math.sin(psi), math.cos(psi)
    a = thrust / params.mass
    spq = sp * q + cp * r
    return np.array([
        x[3], x[4], x[5],
        a * (cp * st * cs + sp * ss),
        a * (cp * st * ss - sp * cs),
        a * cp * ct - params.gravity,
        p + spq * st / ct,
        cp * q - sp * r,
        spq / ct,
        ((iyy - izz) * q * r + tx) / ixx,
        ((izz - ixx) * r * p + ty) / iyy,
        ((ixx - iyy) * p * q + tz) / izz,
        (tau_d[0] - tx) / ta,
        (tau_d[1] - ty) / ta,
        (tau_d[2] - tz) / ta,
    ])


def rk4_vector(x, tau_d, thrust, params: PlantParams, dt: float) -> np.ndarray:
    """One classical RK4 step on the flat state vector, inputs held constant."""
    k1 = state_derivative(x, tau_d, thrust, params)
    k2 = state_derivative(x + 0.5 * dt * k1, tau_d, thrust, params)
    k3 = state_derivative(x + 0.5 * dt * k2, tau_d, thrust, params)
    k4 = state_derivative(x + dt * k3, tau_d, thrust, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def check_state(x) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("plant state became non-finite")
    if abs(x[7]) >= PITCH_LIMIT:
        raise PitchSingularityError(f"pitch {x[7]:.6f} rad reached the Euler-angle singularity")


def step_rk4(state: PlantState, inputs: PlantInputs, params: PlantParams, dt: float,
             noise=None) -> PlantState:
    """Advance the plant by ``dt`` and add an optional 15-vector state perturbation."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = rk4_vector(state.as_vector(), inputs.tau_d, inputs.thrust, params, dt)
    if noise is not None:
        x = x + np.asarray(noise, dtype=float)
    check_state(x)
    return PlantState.from_vector(x)


def attitude_subsystem(x9, tau_d, params: PlantParams) -> np.ndarray:
    """Nonlinear attitude dynamics over the controller state (eta, eta_dot, tau).

    Used to check the linear model: the body rates are recovered from the
    Euler rates before applying Newton-Euler and mapped back afterwards.
    """
    x9 = np.asarray(x9, dtype=float)
    eta, eta_dot, tau = x9[:3], x9[3:6], x9[6:]
    W = euler_rate_matrix(eta)
    omega = W @ eta_dot
    omega_dot = attitude_dynamics(omega, tau, params.inertia)
    # d/dt (W^-1 omega) = W^-1 (omega_dot - dW/dt eta_dot)
    phi, theta = eta[0], eta[1]
    dphi, dtheta = eta_dot[0], eta_dot[1]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    dW = np.array([
        [0.0, 0.0, -ct * dtheta],
        [0.0, -sp * dphi, -st * dtheta * sp + ct * cp * dphi],
        [0.0, -cp * dphi, -st * dtheta * cp - ct * sp * dphi],
    ])
    eta_ddot = np.linalg.solve(W, omega_dot - dW @ eta_dot)
    return np.concatenate([eta_dot, eta_ddot, torque_lag(tau, tau_d, params.tau_alpha)])
