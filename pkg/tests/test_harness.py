import numpy as np
import pytest

from foldmpc import harness
from foldmpc.cli import main
from foldmpc.config import load_config
from foldmpc.harness import (
    COLUMNS,
    NUMERIC,
    NoiseConfig,
    ScenarioConfig,
    ScenarioError,
    SimTrace,
    compute_metrics,
    hover_config,
    parse_schedule,
    run_scenario,
    square_config,
    square_reference,
)
from foldmpc.morphology import Formation, morphology_state

QUIET = NoiseConfig(scale=0.0)


@pytest.fixture(scope="module")
def short_hover():
    cfg = hover_config(duration=4.0, formation_schedule=parse_schedule("0:X,1:H,2:Y,3:T"), seed=3)
    return cfg, run_scenario(cfg)


class TestSquareReference:
    def test_corners(self):
        ref = square_reference(2.0, 2.0, 15.0)
        targets = {c for _, c in ref}
        assert targets == {(0.0, 0.0, 2.0), (2.0, 0.0, 2.0), (2.0, 2.0, 2.0), (0.0, 2.0, 2.0)}
        # starts over the first corner, so the last target returns there
        assert ref[-1][1] == (0.0, 0.0, 2.0)

    def test_total_duration(self):
        ref = square_reference(2.0, 2.0, 15.0)
        assert [t for t, _ in ref] == [0, 15, 30, 45]
        assert ref[-1][0] + 15.0 == 60.0

    def test_side_must_be_positive(self):
        with pytest.raises(ValueError):
            square_reference(0.0, 2.0, 15.0)


class TestMetrics:
    def _trace(self, n=700):
        data = np.zeros((n, len(NUMERIC)))
        data[:, NUMERIC.index("t")] = np.arange(n) * 0.01
        data[:, NUMERIC.index("pz")] = 2.0
        data[:, NUMERIC.index("pz_ref")] = 2.0
        data[:, [NUMERIC.index(c) for c in ("f1", "f2", "f3", "f4")]] = 2.4525
        return SimTrace(data, [Formation.X] * n)

    def test_constant_trace_at_reference(self):
        m = compute_metrics(self._trace())
        assert not m.steady_state_error.any()
        assert m.violations == 0 and m.negative_force_samples == 0
        assert not m.rmse.any()

    def test_one_sample_over_the_bound(self):
        tr = self._trace()
        col = NUMERIC.index("tau_cmd_x")
        # ramp up within the rate bound and hold at the limit, then one sample at 0.11
        tr.data[:, col] = np.minimum(np.arange(len(tr)) * 0.01, 0.1)
        tr.data[300, col] = 0.11
        assert compute_metrics(tr).violations == 1

    def test_isolated_spike_also_breaks_rate_bound(self):
        tr = self._trace()
        col = NUMERIC.index("tau_cmd_x")
        tr.data[300, col] = 0.11
        # magnitude once, plus the moves into and out of the spike
        assert compute_metrics(tr).violations == 3

    def test_magnitude_violation_alone(self):
        tr = self._trace()
        col = NUMERIC.index("tau_cmd_y")
        tr.data[:, col] = np.minimum(np.arange(len(tr)) * 0.01, 0.1)
        tr.data[20, col] = 0.1 + 1e-12
        assert compute_metrics(tr).violations == 1

    def test_empty_trace_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics(SimTrace(np.zeros((0, len(NUMERIC))), []))

    def test_segments_follow_formation_changes(self):
        tr = self._trace()
        tr.formation = [Formation.X] * 300 + [Formation.T] * 400
        m = compute_metrics(tr)
        assert [s[2] for s in m.segments] == [Formation.X, Formation.T]
        assert set(m.mean_forces) == {Formation.X, Formation.T}


class TestRunScenario:
    def test_equilibrium_hold_without_noise(self):
        cfg = hover_config(duration=3.0, noise=QUIET, formation_schedule=[(0.0, Formation.X)])
        tr = run_scenario(cfg)
        err = tr.columns("px", "py", "pz") - np.array([0.0, 0.0, 2.0])
        assert np.abs(err).max() < 1e-6

    def test_uniform_time_grid(self, short_hover):
        _, tr = short_hover
        assert len(tr) == 400
        assert np.array_equal(tr.t, np.arange(400) * 0.01)

    def test_rate_hierarchy(self, short_hover):
        _, tr = short_hover
        ref = tr.columns("phi_ref", "theta_ref")
        changes = np.flatnonzero(np.any(np.diff(ref, axis=0) != 0, axis=1)) + 1
        assert np.all(changes % 10 == 0)

    def test_formation_changes_only_on_schedule(self, short_hover):
        _, tr = short_hover
        switches = [k for k in range(1, len(tr)) if tr.formation[k] != tr.formation[k - 1]]
        assert switches == [100, 200, 300]
        assert [tr.formation[k] for k in (0, 100, 200, 300)] == list(Formation)

    def test_allocation_consistency(self, short_hover):
        cfg, tr = short_hover
        forces = tr.columns("f1", "f2", "f3", "f4")
        tau = tr.columns("tau_cmd_x", "tau_cmd_y", "tau_cmd_z")
        total = forces.sum(axis=1)
        for k in range(len(tr)):
            A = morphology_state(cfg.geometry, formation=tr.formation[k]).allocation
            w = A @ forces[k]
            assert np.abs(w[1:] - tau[k]).max() <= 1e-9
            # thrust is held over each position tick
            assert abs(w[0] - total[k] * cfg.geometry.thrust_coeff) <= 1e-9
        blocks = total.reshape(-1, 10)
        assert np.abs(blocks - blocks[:, :1]).max() <= 1e-9

    def test_finite_values(self, short_hover):
        _, tr = short_hover
        assert np.all(np.isfinite(tr.data))

    def test_deterministic_csv(self, short_hover, tmp_path):
        cfg, tr = short_hover
        again = run_scenario(cfg)
        assert tr.to_csv() == again.to_csv()
        other = run_scenario(hover_config(duration=4.0, formation_schedule=cfg.formation_schedule, seed=4))
        assert tr.to_csv() != other.to_csv()

    def test_csv_round_trip(self, short_hover, tmp_path):
        _, tr = short_hover
        path = tmp_path / "t.csv"
        tr.to_csv(path)
        back = SimTrace.from_csv(path)
        assert np.array_equal(back.data, tr.data)
        assert back.formation == tr.formation
        assert path.read_text().splitlines()[0] == ",".join(COLUMNS)

    def test_noise_free_square_forces_positive(self):
        cfg = square_config(duration=20.0)
        m = compute_metrics(run_scenario(cfg), cfg)
        assert m.negative_force_samples == 0 and m.violations == 0

    def test_errors_carry_time(self, monkeypatch):
        calls = {"n": 0}
        original = harness.SwitchingAttitudeMpc.control_step

        def failing(self, x, ref, t_f):
            calls["n"] += 1
            if calls["n"] > 25:
                raise RuntimeError("boom")
            return original(self, x, ref, t_f)

        monkeypatch.setattr(harness.SwitchingAttitudeMpc, "control_step", failing)
        with pytest.raises(ScenarioError) as info:
            run_scenario(hover_config(duration=1.0, noise=QUIET))
        assert info.value.t == pytest.approx(0.25)


class TestValidation:
    @pytest.mark.parametrize("kw", [
        dict(duration=0.0),
        dict(formation_schedule=[(0.0, Formation.X), (0.0, Formation.H)]),
        dict(formation_schedule=[(1.0, Formation.X)]),
        dict(formation_schedule=[]),
        dict(scenario="loop"),
        dict(noise=NoiseConfig(eta_sigma=-1.0)),
    ])
    def test_invalid_config_rejected(self, kw):
        with pytest.raises(ValueError):
            run_scenario(ScenarioConfig(**kw))

    def test_bad_schedule_text(self):
        with pytest.raises(ValueError):
            parse_schedule("0-X")
        with pytest.raises(ValueError):
            parse_schedule("0:Q")


class TestConfigFile:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.scenario == "hover" and cfg.duration == 60.0
        assert [f for _, f in cfg.formation_schedule] == list(Formation)
        assert cfg.noise.scale == 1.0

    def test_square_defaults_to_no_noise(self):
        assert load_config(scenario="square").noise.scale == 0.0

    def test_values_and_comments(self):
        text = """
        [scenario]
        duration = 12.5   # seconds
        schedule = 0:T, 6:X
        seed = 9
        eta_sigma = 0.003
        [plant]
        tau_alpha = 0.04
        inertia_H = 0.006, 0.002, 0.007
        [attitude_mpc]
        N_p = 20
        R_u = 10, 10, 10
        [trajectory]
        angle_max_deg = 10
        attitude_lag = 0.25
        [geometry]
        arm_length = 0.16
        """
        text = "\n".join(line.strip() for line in text.splitlines())
        cfg = load_config(text=text)
        assert cfg.duration == 12.5 and cfg.seed == 9
        assert cfg.formation_schedule == [(0.0, Formation.T), (6.0, Formation.X)]
        assert cfg.noise.eta_sigma == 0.003
        assert cfg.tau_alpha == 0.04
        assert cfg.inertia_table[Formation.H] == (0.006, 0.002, 0.007)
        assert cfg.attitude.N_p == 20 and list(cfg.attitude.R_u) == [10, 10, 10]
        assert cfg.trajectory.u_max[0] == pytest.approx(np.radians(10))
        assert cfg.attitude_lag == 0.25
        assert cfg.geometry.arm_length == 0.16

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            load_config(text="[scenario]\ndurration = 3\n")

    def test_unknown_section(self):
        with pytest.raises(ValueError):
            load_config(text="[misc]\na = 1\n")


class TestCli:
    def test_hover_writes_trace_and_metrics(self, tmp_path, capsys):
        out, met = tmp_path / "h.csv", tmp_path / "m.txt"
        rc = main(["hover", "--duration", "0.5", "--seed", "2", "--out", str(out), "--metrics", str(met),
                   "--schedule", "0:X,0.2:T", "--noise", "0.5"])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(COLUMNS) and len(lines) == 51
        assert "constraint_violations = 0" in met.read_text()
        assert "max_abs_torque" in capsys.readouterr().out

    def test_config_file(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[scenario]\nduration = 0.3\n")
        out = tmp_path / "s.csv"
        assert main(["square", "--config", str(path), "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 31

    def test_bad_arguments(self, capsys):
        assert main(["hover", "--schedule", "0:Z"]) == 2
        assert main(["hover", "--duration", "-1"]) == 2
        assert "configuration error" in capsys.readouterr().err


def test_shipped_config_matches_defaults():
    from pathlib import Path

    shipped = load_config(Path(__file__).resolve().parents[1] / "configs" / "default.ini")
    ref = hover_config()
    for name in ("attitude", "trajectory"):
        a, b = getattr(shipped, name), getattr(ref, name)
        assert (a.N_p, a.N_c, a.T_s) == (b.N_p, b.N_c, b.T_s)
        for field in ("Q_x", "R_u", "u_min", "u_max", "du_min", "du_max"):
            assert np.array_equal(getattr(a, field), getattr(b, field))
    assert shipped.geometry == ref.geometry
    assert shipped.inertia_table == ref.inertia_table
    assert shipped.noise == ref.noise
    assert shipped.formation_schedule == ref.formation_schedule
