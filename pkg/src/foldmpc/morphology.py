"""Morphology-dependent mass properties and control allocation.

Every quantity here is a pure function of the vehicle geometry and the four
servo angles.  Arms are numbered 1..4 with corner sign pattern
(+,+), (+,-), (-,-), (-,+) in body (x, y).  x is the longitudinal axis (body
half length ``l``, arm component ``alpha * sin(theta)``) and y the lateral axis
(body half width ``w``, arm component ``alpha * cos(theta)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

SIGN_X = np.array([1.0, 1.0, -1.0, -1.0])
SIGN_Y = np.array([1.0, -1.0, -1.0, 1.0])

ANGLE_MIN = 0.0
ANGLE_MAX = math.pi / 2

# condition number above which the allocation matrix is treated as singular
MAX_ALLOCATION_CONDITION = 1e6


class Formation(str, Enum):
    X = "X"
    H = "H"
    Y = "Y"
    T = "T"

    @classmethod
    def parse(cls, tag) -> "Formation":
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).strip().upper())
        except ValueError:
            raise ValueError(f"unknown formation {tag!r}; expected one of X, H, Y, T") from None


FORMATION_ANGLES_DEG = {
    Formation.X: (45.0, 45.0, 45.0, 45.0),
    Formation.H: (0.0, 0.0, 0.0, 0.0),
    Formation.Y: (45.0, 0.0, 0.0, 45.0),
    Formation.T: (90.0, 0.0, 0.0, 90.0),
}

# CAD-derived diagonal inertia per formation, kg m^2
TABLE_INERTIA = {
    Formation.X: (0.004233, 0.004380, 0.007834),
    Formation.H: (0.005885, 0.001812, 0.006918),
    Formation.Y: (0.005042, 0.003096, 0.007369),
    Formation.T: (0.003654, 0.003917, 0.006792),
}


class AllocationSingularError(ValueError):
    """Raised when the allocation matrix cannot be inverted reliably."""

    def __init__(self, condition: float, angles=None):
        self.condition = condition
        self.angles = None if angles is None else np.asarray(angles, dtype=float)
        where = ""
        if self.angles is not None:
            where = " for servo angles (deg) " + ", ".join(f"{a:.3f}" for a in np.degrees(self.angles))
        super().__init__(f"allocation matrix is ill-conditioned (cond={condition:.3e}){where}")


@dataclass(frozen=True)
class VehicleGeometry:
    """Fixed geometric and mass parameters of the foldable frame.

    Lengths are in metres and masses in kilograms.  ``arm_mass`` and
    ``motor_assembly_mass`` are per arm.  ``thrust_coeff`` maps motor force to
    thrust and ``torque_coeff`` maps motor force to reaction torque (metres).
    """

    body_mass: float = 0.6
    arm_mass: float = 0.025
    motor_assembly_mass: float = 0.075
    half_length: float = 0.06
    half_width: float = 0.05
    half_height: float = 0.02
    arm_length: float = 0.15
    body_cog_offset: tuple = (0.0, 0.0, 0.0)
    motor_z_offset: float = 0.02
    thrust_coeff: float = 1.0
    torque_coeff: float = 0.016

    def __post_init__(self):
        for name in ("body_mass", "arm_mass", "motor_assembly_mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("half_length", "half_width", "half_height", "arm_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.thrust_coeff > 0 and self.torque_coeff > 0):
            raise ValueError("thrust and torque coefficients must be positive")
        object.__setattr__(self, "body_cog_offset", tuple(float(v) for v in self.body_cog_offset))
        if len(self.body_cog_offset) != 3:
            raise ValueError("body_cog_offset must have three components")

    @property
    def total_mass(self) -> float:
        return self.body_mass + 4 * (self.arm_mass + self.motor_assembly_mass)


@dataclass(frozen=True)
class MorphologyState:
    angles: np.ndarray
    r_cog: np.ndarray
    motor_positions: np.ndarray
    inertia: np.ndarray
    allocation: np.ndarray
    mass: float
    formation: Formation | None = None


def check_angles(angles) -> np.ndarray:
    """Return the servo angles as a float array, validating range and shape."""
    theta = np.asarray(angles, dtype=float).reshape(-1)
    if theta.shape != (4,):
        raise ValueError(f"expected 4 servo angles, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("servo angles must be finite")
    if np.any(theta < ANGLE_MIN - 1e-12) or np.any(theta > ANGLE_MAX + 1e-12):
        raise ValueError("servo angles must lie in [0, pi/2] rad")
    return np.clip(theta, ANGLE_MIN, ANGLE_MAX)


def formation_servo_angles(formation, table=None) -> np.ndarray:
    """Servo angles (rad) of a named formation."""
    f = Formation.parse(formation)
    table = FORMATION_ANGLES_DEG if table is None else table
    return check_angles(np.radians(table[f]))


def table_inertia(formation, table=None) -> np.ndarray:
    f = Formation.parse(formation)
    table = TABLE_INERTIA if table is None else table
    return np.array(table[f], dtype=float)


def _arm_directions(theta):
    return np.column_stack([SIGN_X * np.sin(theta), SIGN_Y * np.cos(theta), np.zeros(4)])


def _servo_positions(g: VehicleGeometry):
    return np.column_stack([SIGN_X * g.half_length, SIGN_Y * g.half_width, np.zeros(4)])


def component_layout(g: VehicleGeometry, angles):
    """Masses and CoG positions (relative to the geometric centre) of all nine components.

    Returns ``(masses, positions)`` ordered body, arms 1..4, motor assemblies 1..4.
    """
    theta = check_angles(angles)
    servo = _servo_positions(g)
    d = _arm_directions(theta)
    arms = servo + 0.5 * g.arm_length * d
    motors = servo + g.arm_length * d
    motors[:, 2] = g.motor_z_offset
    masses = np.concatenate([[g.body_mass], np.full(4, g.arm_mass), np.full(4, g.motor_assembly_mass)])
    positions = np.vstack([np.asarray(g.body_cog_offset)[None, :], arms, motors])
    return masses, positions


def compute_cog(g: VehicleGeometry, angles) -> np.ndarray:
    """Offset of the centre of gravity from the geometric centre."""
    masses, positions = component_layout(g, angles)
    return masses @ positions / g.total_mass


def motor_positions(g: VehicleGeometry, angles, r_cog) -> np.ndarray:
    """Thrust points of the four motors relative to the CoG, shape (4, 3)."""
    theta = check_angles(angles)
    r_cog = np.asarray(r_cog, dtype=float)
    pos = np.empty((4, 3))
    pos[:, 0] = SIGN_X * (g.half_length + g.arm_length * np.sin(theta)) - r_cog[0]
    pos[:, 1] = SIGN_Y * (g.half_width + g.arm_length * np.cos(theta)) - r_cog[1]
    pos[:, 2] = g.motor_z_offset - r_cog[2]
    return pos


def allocation_matrix(motors, b: float, kappa: float) -> np.ndarray:
    """Map motor forces (f1..f4) to (T, tau_x, tau_y, tau_z).

    A force ``f`` along body +z applied at ``(x, y)`` produces roll torque
    ``y f`` and pitch torque ``-x f``.  Reaction torques alternate in sign.
    """
    motors = np.asarray(motors, dtype=float)
    if motors.shape != (4, 3) or not np.all(np.isfinite(motors)):
        raise ValueError("motor positions must be a finite (4, 3) array")
    A = np.empty((4, 4))
    A[0] = b
    A[1] = b * motors[:, 1]
    A[2] = -b * motors[:, 0]
    A[3] = kappa * np.array([-1.0, 1.0, -1.0, 1.0])
    return A


def motor_forces_from_wrench(A, wrench, angles=None, max_condition=MAX_ALLOCATION_CONDITION) -> np.ndarray:
    """Invert the allocation: motor forces producing ``wrench = (T, tau_x, tau_y, tau_z)``."""
    A = np.asarray(A, dtype=float)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > max_condition:
        raise AllocationSingularError(cond, angles)
    return np.linalg.solve(A, np.asarray(wrench, dtype=float))


def parallel_axis(inertia, mass: float, offset) -> np.ndarray:
    """Shift a 3x3 inertia tensor from a component's CoG by ``offset``."""
    r = np.asarray(offset, dtype=float)
    return np.asarray(inertia, dtype=float) + mass * (r @ r * np.eye(3) - np.outer(r, r))


def composite_inertia_tensor(g: VehicleGeometry, angles, about: str = "cog") -> np.ndarray:
    """Full 3x3 inertia of the assembled vehicle.

    The body is a solid box, each arm a slender rod along its direction, and
    each motor assembly a point mass.  ``about`` selects the reference point:
    the composite centre of gravity (default) or the geometric centre ("gc").
    """
    theta = check_angles(angles)
    masses, positions = component_layout(g, theta)
    if about == "cog":
        origin = masses @ positions / g.total_mass
    elif about == "gc":
        origin = np.zeros(3)
    else:
        raise ValueError("about must be 'cog' or 'gc'")

    l, w, h = g.half_length, g.half_width, g.half_height
    body = g.body_mass / 3.0 * np.diag([w * w + h * h, l * l + h * h, l * l + w * w])
    total = parallel_axis(body, g.body_mass, positions[0] - origin)

    d = _arm_directions(theta)
    rod = g.arm_mass * g.arm_length**2 / 12.0
    for i in range(4):
        own = rod * (np.eye(3) - np.outer(d[i], d[i]))
        total += parallel_axis(own, g.arm_mass, positions[1 + i] - origin)
        total += parallel_axis(np.zeros((3, 3)), g.motor_assembly_mass, positions[5 + i] - origin)
    return total


def composite_inertia(g: VehicleGeometry, angles, about: str = "cog") -> np.ndarray:
    """Diagonal (I_xx, I_yy, I_zz) of the composite inertia; products of inertia are dropped."""
    return np.diag(composite_inertia_tensor(g, angles, about)).copy()


def morphology_state(g: VehicleGeometry, angles=None, formation=None, inertia_table=None,
                     angle_table=None) -> MorphologyState:
    """Assemble every geometry-dependent quantity for one arm configuration.

    Named formations take their inertia from the CAD table; arbitrary angles
    use the geometric composite inertia.
    """
    if formation is not None:
        formation = Formation.parse(formation)
        theta = formation_servo_angles(formation, angle_table)
        inertia = table_inertia(formation, inertia_table)
    elif angles is not None:
        theta = check_angles(angles)
        inertia = composite_inertia(g, theta)
    else:
        raise ValueError("give either servo angles or a formation")
    r_cog = compute_cog(g, theta)
    motors = motor_positions(g, theta, r_cog)
    A = allocation_matrix(motors, g.thrust_coeff, g.torque_coeff)
    return MorphologyState(theta, r_cog, motors, inertia, A, g.total_mass, formation)
