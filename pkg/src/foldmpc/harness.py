"""Closed-loop scenario runner.

Position MPC (0.1 s) -> switching attitude MPC (0.01 s) -> allocation ->
nonlinear plant (RK4, 0.001 s).  Inputs are held between ticks.  A formation
switch changes the controller model, the plant inertia and the allocation
matrix on the same attitude tick.
"""
from __future__ import annotations

import io

from dataclasses import dataclass, field

import numpy as np

from .attitude_mpc import SwitchingAttitudeMpc, attitude_config, make_bank
from .morphology import Formation, TABLE_INERTIA, VehicleGeometry, morphology_state
from .mpc import MpcConfig
from .plant import PlantParams, check_state, rk4_vector
from .trajectory_mpc import TrajectoryMpc, build_translation_model, trajectory_config

ATT_PER_TRAJ = 10
PLANT_PER_ATT = 10

COLUMNS = (
    ["t", "px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi", "wx", "wy", "wz",
     "tau_cmd_x", "tau_cmd_y", "tau_cmd_z", "tau_x", "tau_y", "tau_z", "f1", "f2", "f3", "f4",
     "formation", "phi_ref", "theta_ref", "psi_ref", "px_ref", "py_ref", "pz_ref"]
)
NUMERIC = [c for c in COLUMNS if c != "formation"]


class ScenarioError(RuntimeError):
    """Controller or plant failure, tagged with the simulation time."""

    def __init__(self, t, cause):
        self.t = t
        super().__init__(f"t = {t:.2f} s: {cause}")


def square_reference(side: float = 2.0, altitude: float = 2.0, segment_duration: float = 15.0):
    """Waypoint schedule ``[(t_start, (x, y, z)), ...]`` around a square.

    The vehicle starts over the first corner; the segments visit the other
    three corners and then return to the first.
    """
    if side <= 0:
        raise ValueError("side must be positive")
    if segment_duration <= 0:
        raise ValueError("segment_duration must be positive")
    corners = [(0.0, 0.0, altitude), (side, 0.0, altitude), (side, side, altitude), (0.0, side, altitude)]
    order = corners[1:] + corners[:1]
    return [(i * segment_duration, c) for i, c in enumerate(order)]


def corners_of(side: float, altitude: float):
    return [(0.0, 0.0, altitude), (side, 0.0, altitude), (side, side, altitude), (0.0, side, altitude)]


def default_schedule(period: float = 15.0, sequence="XHYT"):
    return [(i * period, Formation.parse(f)) for i, f in enumerate(sequence)]


def parse_schedule(text: str):
    """``"0:X,15:H,30:Y"`` -> [(0.0, X), (15.0, H), (30.0, Y)]."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        t, _, f = item.partition(":")
        if not f:
            raise ValueError(f"schedule entry {item!r} must look like time:formation")
        out.append((float(t), Formation.parse(f)))
    return out


@dataclass
class NoiseConfig:
    """Zero-mean Gaussian state perturbation added once per attitude tick."""

    eta_sigma: float = 0.002
    omega_sigma: float = 0.01
    scale: float = 1.0


@dataclass
class ScenarioConfig:
    scenario: str = "hover"
    duration: float = 60.0
    seed: int = 0
    formation_schedule: list = field(default_factory=default_schedule)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    hover_position: tuple = (0.0, 0.0, 2.0)
    square_side: float = 2.0
    square_altitude: float = 2.0
    segment_duration: float = 15.0
    start_position: tuple | None = None
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    inertia_table: dict = field(default_factory=lambda: dict(TABLE_INERTIA))
    angle_table: dict | None = None
    gravity: float = 9.81
    tau_alpha: float = 0.05
    attitude: MpcConfig = field(default_factory=attitude_config)
    trajectory: MpcConfig = field(default_factory=trajectory_config)
    attitude_lag: float = 0.2
    plant_dt: float = 0.001
    out: str | None = None
    metrics_out: str | None = None

    def validate(self):
        if self.scenario not in ("hover", "square"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.formation_schedule:
            raise ValueError("formation schedule is empty")
        times = [t for t, _ in self.formation_schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        if times[0] > 0:
            raise ValueError("schedule must start at t = 0")
        if min(self.noise.eta_sigma, self.noise.omega_sigma, self.noise.scale) < 0:
            raise ValueError("noise levels must be non-negative")
        att_dt = self.plant_dt * PLANT_PER_ATT
        if abs(self.attitude.T_s - att_dt) > 1e-12:
            raise ValueError("attitude sample time must be 10 plant steps")
        if abs(self.trajectory.T_s - att_dt * ATT_PER_TRAJ) > 1e-12:
            raise ValueError("trajectory sample time must be 10 attitude ticks")
        if self.scenario == "square" and self.square_side <= 0:
            raise ValueError("square side must be positive")
        return self

    @property
    def attitude_dt(self) -> float:
        return self.plant_dt * PLANT_PER_ATT

    def reference_schedule(self):
        if self.scenario == "hover":
            return [(0.0, tuple(float(v) for v in self.hover_position))]
        return square_reference(self.square_side, self.square_altitude, self.segment_duration)

    def initial_position(self):
        if self.start_position is not None:
            return tuple(self.start_position)
        if self.scenario == "hover":
            return tuple(self.hover_position)
        return corners_of(self.square_side, self.square_altitude)[0]


def _tick_index(t, dt):
    return int(round(t / dt))


def _piecewise(schedule, dt, n):
    """Per-tick value of a ``[(t, value), ...]`` schedule."""
    idx = np.zeros(n, dtype=int)
    for j, (t, _) in enumerate(schedule):
        idx[min(_tick_index(t, dt), n):] = j
    return [schedule[j][1] for j in idx]


@dataclass
class SimTrace:
    """Per-attitude-tick record; ``data`` holds the numeric columns in :data:`NUMERIC` order."""

    data: np.ndarray
    formation: list
    attitude_dt: float = 0.01
    solver_residuals: np.ndarray | None = None

    def __len__(self):
        return self.data.shape[0]

    def column(self, name) -> np.ndarray:
        return self.data[:, NUMERIC.index(name)]

    def columns(self, *names) -> np.ndarray:
        return self.data[:, [NUMERIC.index(n) for n in names]]

    @property
    def t(self):
        return self.column("t")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        fpos = COLUMNS.index("formation")
        for row, f in zip(self.data, self.formation):
            vals = [repr(float(v)) for v in row]
            vals.insert(fpos, f.value if isinstance(f, Formation) else str(f))
            buf.write(",".join(vals) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header != COLUMNS:
                raise ValueError("unexpected CSV header")
            rows, forms = [], []
            fpos = COLUMNS.index("formation")
            for line in fh:
                parts = line.strip().split(",")
                forms.append(Formation.parse(parts.pop(fpos)))
                rows.append([float(v) for v in parts])
        data = np.array(rows, dtype=float).reshape(-1, len(NUMERIC))
        dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.01
        return cls(data, forms, round(dt, 12))


def run_scenario(cfg: ScenarioConfig) -> SimTrace:
    cfg.validate()
    dt_att = cfg.attitude_dt
    n = _tick_index(cfg.duration, dt_att)
    forms = _piecewise(cfg.formation_schedule, dt_att, n)
    refs = _piecewise(cfg.reference_schedule(), dt_att, n)

    geo = cfg.geometry
    mass = geo.total_mass
    morph = {f: morphology_state(geo, formation=f, inertia_table=cfg.inertia_table, angle_table=cfg.angle_table)
             for f in Formation}
    alloc_inv = {f: np.linalg.inv(m.allocation) for f, m in morph.items()}
    plant = {f: PlantParams(inertia=tuple(m.inertia), mass=mass, tau_alpha=cfg.tau_alpha, gravity=cfg.gravity)
             for f, m in morph.items()}

    att = SwitchingAttitudeMpc(make_bank(cfg.tau_alpha, dt_att, cfg.inertia_table), cfg.attitude)
    traj = TrajectoryMpc(build_translation_model(mass, cfg.gravity, cfg.attitude_lag, cfg.trajectory.T_s),
                         cfg.trajectory)

    rng = np.random.default_rng(cfg.seed)
    sig = np.zeros(15)
    sig[6:9] = cfg.noise.eta_sigma * cfg.noise.scale
    sig[9:12] = cfg.noise.omega_sigma * cfg.noise.scale
    noisy = bool(np.any(sig > 0))

    x = np.zeros(15)
    x[0:3] = cfg.initial_position()
    data = np.empty((n, len(NUMERIC)))
    residuals = np.empty(n)
    phi_ref = theta_ref = 0.0
    # the attitude layer tracks the commanded angles through the same lag the
    # position model assumes for the closed inner loop
    lag_gain = 1.0 - np.exp(-dt_att / cfg.attitude_lag)
    att_ref = np.zeros(2)
    thrust = mass * cfg.gravity
    for k in range(n):
        t = k * dt_att
        f = forms[k]
        ref_p = refs[k]
        try:
            if k % ATT_PER_TRAJ == 0:
                phi_ref, theta_ref, thrust = traj.position_control_step(x[0:3], x[3:6], ref_p, angles=x[6:8])
                thrust = max(thrust, 0.0)
            att_ref += lag_gain * (np.array([phi_ref, theta_ref]) - att_ref)
            xa = att.controller_state(x[6:9], x[9:12], x[12:15])
            tau_d = att.control_step(xa, (att_ref[0], att_ref[1], 0.0), f)
        except Exception as exc:
            raise ScenarioError(t, exc) from exc
        sol = att.last_solution
        residuals[k] = max(sol.primal_residual, sol.dual_residual, sol.complementarity)
        forces = alloc_inv[f] @ np.array([thrust, tau_d[0], tau_d[1], tau_d[2]])
        data[k] = [t, *x[0:15].tolist()[:12], *tau_d, *x[12:15], *forces,
                   phi_ref, theta_ref, 0.0, *ref_p]
        params = plant[f]
        td = (float(tau_d[0]), float(tau_d[1]), float(tau_d[2]))
        try:
            for _ in range(PLANT_PER_ATT):
                x = rk4_vector(x, td, thrust, params, cfg.plant_dt)
            if noisy:
                x = x + sig * rng.standard_normal(15)
            check_state(x)
        except Exception as exc:
            raise ScenarioError(t + dt_att, exc) from exc
    trace = SimTrace(data, forms, dt_att, residuals)
    if cfg.out:
        trace.to_csv(cfg.out)
    if cfg.metrics_out:
        write_metrics(compute_metrics(trace, cfg), cfg.metrics_out)
    return trace


@dataclass
class MetricsSummary:
    steady_state_error: np.ndarray  # per segment x axis, max |p - p*| over the window
    segments: list  # (t_start, t_end, formation, reference)
    max_abs_torque: np.ndarray
    violations: int
    negative_force_samples: int
    mean_forces: dict
    rmse: np.ndarray

    @property
    def worst_steady_state_error(self) -> np.ndarray:
        return self.steady_state_error.max(axis=0) if len(self.steady_state_error) else np.zeros(3)

    def report(self) -> str:
        lines = []
        lines.append("steady_state_error_max = " + _fmt(self.worst_steady_state_error))
        for (t0, t1, f, ref), e in zip(self.segments, self.steady_state_error):
            lines.append(f"segment_{t0:g}_{t1:g}_{f.value} = " + _fmt(e))
        lines.append("max_abs_torque = " + _fmt(self.max_abs_torque))
        lines.append(f"constraint_violations = {self.violations}")
        lines.append(f"negative_force_samples = {self.negative_force_samples}")
        for f, v in self.mean_forces.items():
            lines.append(f"mean_forces_{f.value} = " + _fmt(v))
        lines.append("rmse = " + _fmt(self.rmse))
        return "\n".join(lines) + "\n"


def _fmt(values) -> str:
    return ", ".join(repr(float(a)) for a in values)


def write_metrics(m: MetricsSummary, path):
    with open(path, "w") as fh:
        fh.write(m.report())


def _segments(trace: SimTrace):
    ref = trace.columns("px_ref", "py_ref", "pz_ref")
    bounds = [0]
    for k in range(1, len(trace)):
        if trace.formation[k] != trace.formation[k - 1] or np.any(ref[k] != ref[k - 1]):
            bounds.append(k)
    bounds.append(len(trace))
    return list(zip(bounds[:-1], bounds[1:]))


def compute_metrics(trace: SimTrace, cfg: ScenarioConfig | None = None, window: float = 5.0) -> MetricsSummary:
    """Summarise a trace.  Constraint checks use the attitude bounds with zero tolerance."""
    if trace is None or len(trace) == 0:
        raise ValueError("empty trace")
    acfg = cfg.attitude if cfg is not None else attitude_config()
    dt = trace.attitude_dt
    p = trace.columns("px", "py", "pz")
    ref = trace.columns("px_ref", "py_ref", "pz_ref")
    tau = trace.columns("tau_cmd_x", "tau_cmd_y", "tau_cmd_z")
    forces = trace.columns("f1", "f2", "f3", "f4")

    violations = int(np.sum(tau > acfg.u_max) + np.sum(tau < acfg.u_min))
    # the first move is measured from the zero input the controller starts with
    dtau = np.diff(np.vstack([np.zeros(3), tau]), axis=0)
    violations += int(np.sum(dtau > acfg.du_max) + np.sum(dtau < acfg.du_min))

    n_win = max(1, int(round(window / dt)))
    errs, segs, mean_forces, acc = [], [], {}, {}
    for a, b in _segments(trace):
        w0 = max(a, b - n_win)
        e = np.abs(p[w0:b] - ref[w0:b]).max(axis=0)
        errs.append(e)
        f = trace.formation[a]
        segs.append((a * dt, b * dt, f, tuple(ref[a])))
        acc.setdefault(f, []).append(forces[w0:b])
    for f, chunks in acc.items():
        mean_forces[f] = np.vstack(chunks).mean(axis=0)
    return MetricsSummary(
        steady_state_error=np.array(errs),
        segments=segs,
        max_abs_torque=np.abs(tau).max(axis=0),
        violations=violations,
        negative_force_samples=int(np.sum(np.any(forces < 0, axis=1))),
        mean_forces=mean_forces,
        rmse=np.sqrt(np.mean((p - ref) ** 2, axis=0)),
    )


def waypoint_errors(trace: SimTrace, cfg: ScenarioConfig):
    """Euclidean distance to each waypoint at the end of its segment."""
    p = trace.columns("px", "py", "pz")
    dt = trace.attitude_dt
    sched = cfg.reference_schedule()
    out = []
    for j, (t0, c) in enumerate(sched):
        t1 = sched[j + 1][0] if j + 1 < len(sched) else cfg.duration
        k = min(_tick_index(t1, dt), len(trace)) - 1
        out.append(float(np.linalg.norm(p[k] - np.asarray(c))))
    return out


def hover_config(**kw) -> ScenarioConfig:
    return ScenarioConfig(scenario="hover", **kw)


def square_config(**kw) -> ScenarioConfig:
    kw.setdefault("noise", NoiseConfig(scale=0.0))
    return ScenarioConfig(scenario="square", **kw)


__all__ = [
    "COLUMNS", "MetricsSummary", "NoiseConfig", "ScenarioConfig", "ScenarioError", "SimTrace",
    "compute_metrics", "default_schedule", "hover_config", "parse_schedule", "run_scenario",
    "square_config", "square_reference", "waypoint_errors", "write_metrics",
]


