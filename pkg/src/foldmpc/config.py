"""Scenario configuration from a flat ``key = value`` file.

Sections: ``geometry``, ``plant``, ``attitude_mpc``, ``trajectory`` and
``scenario``.  Vectors are comma separated; ``inf`` is accepted.  SI units,
except the trajectory angle bounds which are in degrees.  Unknown keys are
rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import configparser
import dataclasses

from .attitude_mpc import attitude_config
from .harness import NoiseConfig, ScenarioConfig, default_schedule, parse_schedule
from .morphology import FORMATION_ANGLES_DEG, TABLE_INERTIA, Formation, VehicleGeometry
from .trajectory_mpc import trajectory_config

GEOMETRY_KEYS = {f.name for f in dataclasses.fields(VehicleGeometry)}
ATTITUDE_KEYS = {"N_p", "N_c", "Q_x", "R_u", "u_min", "u_max", "du_min", "du_max", "angle_weight_unit"}
TRAJECTORY_KEYS = {"N_p", "N_c", "Q_x", "R_u", "angle_max_deg", "angle_rate_deg", "thrust_rate",
                   "thrust_min", "thrust_max", "attitude_lag"}
PLANT_KEYS = {"tau_alpha", "gravity", "dt"} | {f"inertia_{f.value}" for f in Formation} | {
    f"servo_angles_{f.value}" for f in Formation}
SCENARIO_KEYS = {"scenario", "duration", "seed", "schedule", "switch_period", "sequence", "noise_scale",
                 "eta_sigma", "omega_sigma", "hover_position", "square_side", "square_altitude",
                 "segment_duration", "start_position"}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _scalar(text):
    return float(text)


def _check(section, allowed):
    extra = set(section) - allowed
    if extra:
        raise ValueError(f"unknown key(s) in [{section.name}]: {', '.join(sorted(extra))}")


def _mpc_kwargs(section, ints=("N_p", "N_c")):
    out = {}
    for key, val in section.items():
        if key in ints:
            out[key] = int(val)
        elif key == "angle_weight_unit":
            out[key] = val.strip()
        else:
            vec = _floats(val)
            out[key] = vec[0] if len(vec) == 1 and key not in ("Q_x", "R_u") else vec
    return out


def load_config(path=None, text=None, **overrides) -> ScenarioConfig:
    """Read a configuration file (or string); missing keys keep their defaults."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    cp.optionxform = str
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    if text is not None:
        cp.read_string(text)
    for name in cp.sections():
        if name not in ("geometry", "plant", "attitude_mpc", "trajectory", "scenario"):
            raise ValueError(f"unknown section [{name}]")
    empty = {}

    geo = cp["geometry"] if cp.has_section("geometry") else empty
    if geo:
        _check(geo, GEOMETRY_KEYS)
    gkw = {}
    for k, v in geo.items():
        vec = _floats(v)
        gkw[k] = tuple(vec) if k == "body_cog_offset" else vec[0]
    geometry = VehicleGeometry(**gkw)

    plant = cp["plant"] if cp.has_section("plant") else empty
    if plant:
        _check(plant, PLANT_KEYS)
    inertia = dict(TABLE_INERTIA)
    angle_table = None
    for f in Formation:
        if f"inertia_{f.value}" in plant:
            inertia[f] = tuple(_floats(plant[f"inertia_{f.value}"]))
        if f"servo_angles_{f.value}" in plant:
            angle_table = angle_table or {}
            angle_table[f] = tuple(_floats(plant[f"servo_angles_{f.value}"]))
    if angle_table is not None:
        angle_table = {**FORMATION_ANGLES_DEG, **angle_table}
    tau_alpha = _scalar(plant.get("tau_alpha", "0.05"))
    gravity = _scalar(plant.get("gravity", "9.81"))
    plant_dt = _scalar(plant.get("dt", "0.001"))

    att = cp["attitude_mpc"] if cp.has_section("attitude_mpc") else empty
    if att:
        _check(att, ATTITUDE_KEYS)
    attitude = attitude_config(T_s=plant_dt * 10, **_mpc_kwargs(att))

    tr = cp["trajectory"] if cp.has_section("trajectory") else empty
    if tr:
        _check(tr, TRAJECTORY_KEYS)
    tkw = _mpc_kwargs(tr)
    attitude_lag = tkw.pop("attitude_lag", 0.2)
    trajectory = trajectory_config(T_s=plant_dt * 100, **tkw)

    sc = cp["scenario"] if cp.has_section("scenario") else empty
    if sc:
        _check(sc, SCENARIO_KEYS)
    # the square scenario is run noise-free unless a noise scale is given
    scenario = overrides.pop("scenario", sc.get("scenario", "hover").strip())
    if "schedule" in sc:
        schedule = parse_schedule(sc["schedule"])
    else:
        schedule = default_schedule(_scalar(sc.get("switch_period", "15")), sc.get("sequence", "XHYT").strip())
    noise = NoiseConfig(
        eta_sigma=_scalar(sc.get("eta_sigma", str(NoiseConfig.eta_sigma))),
        omega_sigma=_scalar(sc.get("omega_sigma", str(NoiseConfig.omega_sigma))),
        scale=_scalar(sc.get("noise_scale", "0" if scenario == "square" else "1")),
    )
    kw = dict(
        scenario=scenario,
        duration=_scalar(sc.get("duration", "60")),
        seed=int(sc.get("seed", "0")),
        formation_schedule=schedule,
        noise=noise,
        geometry=geometry,
        inertia_table=inertia,
        angle_table=angle_table,
        gravity=gravity,
        tau_alpha=tau_alpha,
        attitude=attitude,
        trajectory=trajectory,
        attitude_lag=attitude_lag,
        plant_dt=plant_dt,
    )
    for key in ("hover_position", "start_position"):
        if key in sc:
            kw[key] = tuple(_floats(sc[key]))
    for key in ("square_side", "square_altitude", "segment_duration"):
        if key in sc:
            kw[key] = _scalar(sc[key])
    kw.update(overrides)
    return ScenarioConfig(**kw).validate()
