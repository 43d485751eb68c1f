import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from foldmpc.morphology import (
    AllocationSingularError,
    Formation,
    TABLE_INERTIA,
    VehicleGeometry,
    allocation_matrix,
    check_angles,
    composite_inertia,
    composite_inertia_tensor,
    compute_cog,
    formation_servo_angles,
    morphology_state,
    motor_forces_from_wrench,
    motor_positions,
    parallel_axis,
    table_inertia,
)
from oracles import point_mass_cog

# geometry used by the worked examples: square body, everything in one plane
FLAT = VehicleGeometry(half_length=0.05, half_width=0.05, motor_z_offset=0.0)
DEG = math.pi / 180

angles4 = arrays(np.float64, 4, elements=st.floats(0.0, math.pi / 2))


def hand_layout(g, theta):
    """Nine component CoGs written out per arm, independent of the module's vector code."""
    signs = [(1, 1), (1, -1), (-1, -1), (-1, 1)]
    masses = [g.body_mass]
    pos = [list(g.body_cog_offset)]
    for (sx, sy), t in zip(signs, theta):
        masses.append(g.arm_mass)
        pos.append([sx * (g.half_length + 0.5 * g.arm_length * math.sin(t)),
                    sy * (g.half_width + 0.5 * g.arm_length * math.cos(t)), 0.0])
    for (sx, sy), t in zip(signs, theta):
        masses.append(g.motor_assembly_mass)
        pos.append([sx * (g.half_length + g.arm_length * math.sin(t)),
                    sy * (g.half_width + g.arm_length * math.cos(t)), g.motor_z_offset])
    return masses, pos


class TestFormations:
    def test_x_is_symmetric_cross(self):
        assert np.allclose(formation_servo_angles("X"), [45 * DEG] * 4)

    def test_h_is_all_zero(self):
        assert np.array_equal(formation_servo_angles(Formation.H), np.zeros(4))

    def test_h_matches_table_ordering(self):
        # CAD table, H row: I_zz > I_xx > I_yy
        I = composite_inertia(VehicleGeometry(), formation_servo_angles("H"))
        assert I[2] > I[0] > I[1]

    def test_t_displaces_cog_along_one_axis(self):
        r = compute_cog(VehicleGeometry(), formation_servo_angles("T"))
        assert abs(r[0]) < 1e-12
        assert abs(r[1]) > 0.01

    @pytest.mark.parametrize("f", list(Formation))
    def test_angles_valid(self, f):
        theta = formation_servo_angles(f)
        assert np.all((theta >= 0) & (theta <= math.pi / 2))

    def test_unknown_tag(self):
        with pytest.raises(ValueError):
            formation_servo_angles("Q")

    def test_parse_lowercase(self):
        assert Formation.parse("t") is Formation.T


class TestCog:
    def test_cross_symmetric(self):
        assert np.allclose(compute_cog(FLAT, [45 * DEG] * 4), 0.0, atol=1e-15)

    def test_h_symmetric(self):
        assert np.allclose(compute_cog(FLAT, np.zeros(4)), 0.0, atol=1e-15)

    def test_asymmetric_example(self):
        theta = np.array([90, 90, 0, 0]) * DEG
        expected = point_mass_cog(*hand_layout(FLAT, theta))
        assert expected == pytest.approx([0.02625, 0.0, 0.0], abs=1e-15)
        assert compute_cog(FLAT, theta) == pytest.approx(expected, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(angles4)
    def test_matches_hand_layout(self, theta):
        g = VehicleGeometry()
        assert np.allclose(compute_cog(g, theta), point_mass_cog(*hand_layout(g, theta)), atol=1e-14)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            compute_cog(FLAT, [0, 0, 0, 2.0])
        with pytest.raises(ValueError):
            check_angles([0, 0, 0])


class TestMotorPositions:
    def test_cross(self):
        pos = motor_positions(FLAT, [45 * DEG] * 4, np.zeros(3))
        a = 0.05 + 0.15 * math.cos(45 * DEG)
        assert pos[0] == pytest.approx([a, a, 0.0])
        assert round(pos[0, 0], 4) == 0.1561

    def test_h(self):
        pos = motor_positions(FLAT, np.zeros(4), np.zeros(3))
        assert pos[0] == pytest.approx([0.05, 0.20, 0.0])

    def test_shifted_by_cog(self):
        theta = np.array([90, 90, 0, 0]) * DEG
        pos = motor_positions(FLAT, theta, [0.02625, 0, 0])
        assert pos[:, 0] == pytest.approx([0.17375, 0.17375, -0.07625, -0.07625])

    def test_z_constant(self):
        g = VehicleGeometry(motor_z_offset=0.03)
        pos = motor_positions(g, [0.1, 0.2, 0.3, 0.4], [0.0, 0.0, 0.01])
        assert np.allclose(pos[:, 2], 0.02)

    @settings(max_examples=100, deadline=None)
    @given(angles4, st.integers(0, 3), st.floats(0.0, math.pi / 2))
    def test_angle_only_moves_its_own_motor(self, theta, k, new):
        g = VehicleGeometry()
        r = np.array([0.01, -0.02, 0.003])
        before = motor_positions(g, theta, r)
        theta2 = theta.copy()
        theta2[k] = new
        after = motor_positions(g, theta2, r)
        others = [i for i in range(4) if i != k]
        assert np.array_equal(before[others], after[others])


class TestAllocation:
    def test_cross_entries(self):
        A = allocation_matrix(motor_positions(FLAT, [45 * DEG] * 4, np.zeros(3)), 1.0, 0.016)
        a = 0.05 + 0.15 * math.cos(45 * DEG)
        assert A[0] == pytest.approx([1, 1, 1, 1])
        assert A[1] == pytest.approx([a, -a, -a, a])
        assert A[2] == pytest.approx([-a, -a, a, a])
        assert A[3] == pytest.approx([-0.016, 0.016, -0.016, 0.016])

    @settings(max_examples=100, deadline=None)
    @given(angles4, st.floats(0.1, 5.0))
    def test_thrust_row_sums_to_4b(self, theta, b):
        g = VehicleGeometry(thrust_coeff=b)
        s = morphology_state(g, theta)
        assert s.allocation[0].sum() == pytest.approx(4 * b)
        assert np.allclose(s.allocation[3], [-g.torque_coeff, g.torque_coeff, -g.torque_coeff, g.torque_coeff])

    @pytest.mark.parametrize("f", ["X", "H"])
    def test_symmetric_rows_cancel(self, f):
        A = morphology_state(VehicleGeometry(), formation=f).allocation
        assert abs(A[1].sum()) < 1e-12
        assert abs(A[2].sum()) < 1e-12

    def test_roll_sign_right_hand_rule(self):
        # extra thrust on the +y motors rolls the vehicle positively about x
        A = morphology_state(VehicleGeometry(), formation="X").allocation
        f = np.array([1.0, 0.0, 0.0, 1.0])
        assert (A @ f)[1] > 0
        # extra thrust on the +x motors pitches nose down (negative about y)
        assert (A @ np.array([1.0, 1.0, 0.0, 0.0]))[2] < 0


class TestForces:
    def test_cross_hover_split(self):
        A = morphology_state(FLAT, [45 * DEG] * 4).allocation
        assert motor_forces_from_wrench(A, [9.81, 0, 0, 0]) == pytest.approx([2.4525] * 4, abs=1e-12)

    def test_asymmetric_pairs(self):
        theta = np.array([90, 90, 0, 0]) * DEG
        s = morphology_state(FLAT, theta)
        # hand balance: two pairs at x1 and x2 relative to the CoG
        x1, x2 = 0.2 - 0.02625, -0.05 - 0.02625
        pair2 = 9.81 * x1 / (x1 - x2) / 2
        pair1 = 9.81 / 2 - pair2
        assert pair1 == pytest.approx(1.496, abs=1e-3)
        assert pair2 == pytest.approx(3.409, abs=1e-3)
        f = motor_forces_from_wrench(s.allocation, [9.81, 0, 0, 0])
        assert f == pytest.approx([pair1, pair1, pair2, pair2], abs=1e-12)

    def test_t_formation_pairs_motors_1_4_high(self):
        s = morphology_state(VehicleGeometry(), formation="T")
        f = motor_forces_from_wrench(s.allocation, [9.81, 0, 0, 0])
        assert f[0] == pytest.approx(f[3]) and f[1] == pytest.approx(f[2])
        assert f[0] == pytest.approx(3.409, abs=1e-3)
        assert f[1] == pytest.approx(1.496, abs=1e-3)

    def test_zero_wrench(self):
        A = morphology_state(VehicleGeometry(), formation="Y").allocation
        assert np.array_equal(motor_forces_from_wrench(A, np.zeros(4)), np.zeros(4))

    def test_round_trip_random_morphologies(self):
        rng = np.random.default_rng(42)
        g = VehicleGeometry()
        for _ in range(100):
            s = morphology_state(g, rng.uniform(0, math.pi / 2, 4))
            w = rng.normal(size=4) * [10, 0.1, 0.1, 0.05]
            f = motor_forces_from_wrench(s.allocation, w, s.angles)
            assert np.max(np.abs(s.allocation @ f - w)) <= 1e-9 * np.max(np.abs(w))

    def test_singular_allocation_reported(self):
        motors = np.array([[0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [-0.1, 0.0, 0.0], [-0.2, 0.0, 0.0]])
        A = allocation_matrix(motors, 1.0, 0.016)
        with pytest.raises(AllocationSingularError, match="ill-conditioned") as err:
            motor_forces_from_wrench(A, [1, 0, 0, 0], angles=[0.1, 0.2, 0.3, 0.4])
        assert err.value.angles is not None


class TestInertia:
    def test_point_mass_parallel_axis(self):
        d = 0.3
        assert np.diag(parallel_axis(np.zeros((3, 3)), 0.075, [d, 0, 0])) == pytest.approx(
            [0.0, 0.075 * d * d, 0.075 * d * d])

    def test_table_lookup(self):
        assert table_inertia("H") == pytest.approx([0.005885, 0.001812, 0.006918])
        assert morphology_state(VehicleGeometry(), formation="H").inertia == pytest.approx(
            [0.005885, 0.001812, 0.006918])

    @pytest.mark.parametrize("f", list(Formation))
    def test_geometric_ordering_matches_table(self, f):
        geo = composite_inertia(VehicleGeometry(), formation_servo_angles(f))
        tab = np.array(TABLE_INERTIA[f])
        assert list(np.argsort(geo)) == list(np.argsort(tab))

    @settings(max_examples=100, deadline=None)
    @given(angles4)
    def test_tensor_symmetric_and_positive(self, theta):
        I = composite_inertia_tensor(VehicleGeometry(), theta)
        assert np.allclose(I, I.T)
        assert np.all(np.linalg.eigvalsh(I) > 0)
        assert np.all(composite_inertia(VehicleGeometry(), theta) > 0)

    def test_about_gc_adds_shift(self):
        g = VehicleGeometry()
        theta = formation_servo_angles("T")
        r = compute_cog(g, theta)
        shift = parallel_axis(np.zeros((3, 3)), g.total_mass, r)
        assert np.allclose(composite_inertia_tensor(g, theta, "gc"),
                           composite_inertia_tensor(g, theta) + shift, atol=1e-15)


class TestInvariants:
    def test_total_mass_constant(self):
        rng = np.random.default_rng(0)
        g = VehicleGeometry()
        m = g.body_mass + 4 * (g.arm_mass + g.motor_assembly_mass)
        for _ in range(1000):
            assert morphology_state(g, rng.uniform(0, math.pi / 2, 4)).mass == m

    @settings(max_examples=200, deadline=None)
    @given(angles4, angles4)
    def test_cog_z_independent_of_angles(self, a, b):
        g = VehicleGeometry(body_cog_offset=(0.001, -0.002, 0.004))
        assert compute_cog(g, a)[2] == compute_cog(g, b)[2]

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, math.pi / 2), st.floats(0.0, math.pi / 2))
    def test_half_turn_symmetric_cog_centred(self, t1, t2):
        theta = [t1, t2, t1, t2]
        r = compute_cog(VehicleGeometry(), theta)
        assert abs(r[0]) <= 1e-12 and abs(r[1]) <= 1e-12

    def test_geometry_validation(self):
        with pytest.raises(ValueError):
            VehicleGeometry(body_mass=0.0)
        with pytest.raises(ValueError):
            VehicleGeometry(arm_length=-1.0)
