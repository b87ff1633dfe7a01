import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg as sla

from entrapsim.control import (
    ControlGains,
    GainConditionViolated,
    InvalidClearance,
    NoNeighbors,
    avoidance_certificate,
    control_input,
    signum,
    stability_certificate,
    sup_follower_accel,
    validate_gains,
)
from entrapsim.formation import Configuration, StressMatrix
from entrapsim.geometry import vec2
from entrapsim.sensing import EdgeObservation

from conftest import EXACT_WEIGHTS_UNIT, PUBLISHED_WEIGHTS

GAINS = ControlGains(k_p=1.0, k_v=1.5, k_delta=4.0, delta_bar=0.2)

# Frozen eigen-oracle values (scipy.linalg.eigh, computed before the build):
# the follower block of the unit exact stress has spectrum
# {6-4*sqrt(2), 4, 6+4*sqrt(2), 14}; the bundled scenario scales it by 3.
LAMBDA_MIN_EXACT_UNIT = 6.0 - 4.0 * math.sqrt(2.0)
LAMBDA_MIN_BUNDLED = 18.0 - 12.0 * math.sqrt(2.0)          # 1.0294372515228574
INV_LAMBDA_MIN_BUNDLED = 0.5 + math.sqrt(2.0) / 3.0        # 0.9714045207910318
LAMBDA_MIN_PUBLISHED = 0.02273957942251813                 # eigh on printed weights
OPERATOR_GAIN_BUNDLED = 4.786722491487604                  # ||L_ff^-1 L_fl||_2


def bundled_stress():
    return StressMatrix(
        weights={e: 3.0 * w for e, w in EXACT_WEIGHTS_UNIT.items()}, n=7, n_l=3
    )


def published_stress():
    return StressMatrix(weights=dict(PUBLISHED_WEIGHTS), n=7, n_l=3)


def one_neighbor(l_ij, rho_hat, phi=(1, 0), v=(0, 0)):
    o = EdgeObservation(phi=vec2(*phi), phi_dot=vec2(0, 0), v_ij=vec2(*v))
    return (l_ij, rho_hat, o)


class TestControlInput:
    def test_equilibrium_gives_zero(self):
        u = control_input(
            [one_neighbor(1.0, 2.0, (1, 0)), one_neighbor(1.0, 2.0, (-1, 0))], GAINS
        )
        assert np.array_equal(u, [0.0, 0.0])

    def test_single_neighbor(self):
        u = control_input([one_neighbor(1.0, 2.0)], GAINS)
        assert np.allclose(u, [6.0, 0.0])   # (2,0) + 4*sgn((2,0))

    def test_negative_estimate_flips_sign(self):
        u = control_input([one_neighbor(1.0, -2.0)], GAINS)
        assert np.allclose(u, [-6.0, 0.0])

    def test_no_neighbors(self):
        with pytest.raises(NoNeighbors):
            control_input([], GAINS)

    def test_smooth_mode(self):
        u = control_input([one_neighbor(1.0, 2.0)], GAINS, smooth_eps=2.0)
        assert np.allclose(u, [2.0 + 4.0 * 2.0 / 4.0, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(
        st.tuples(st.floats(-5, 5), st.floats(-10, 10),
                  st.floats(-3, 3), st.floats(-3, 3)),
        min_size=1, max_size=5,
    ))
    def test_switching_term_is_bounded(self, raw):
        neighbors = [
            one_neighbor(l, r, (1, 0), (vx, vy)) for (l, r, vx, vy) in raw
        ]
        u = control_input(neighbors, GAINS)
        lin = sum(
            l * (GAINS.k_p * r * np.array([1.0, 0.0]) + GAINS.k_v * np.array([vx, vy]))
            for (l, r, vx, vy) in raw
        )
        assert np.abs(u - lin).max() <= GAINS.k_delta + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.lists(
        st.tuples(st.floats(-5, 5), st.floats(-10, 10),
                  st.floats(-3, 3), st.floats(-3, 3)),
        min_size=1, max_size=5,
    ))
    def test_oddness(self, raw):
        fwd = control_input(
            [one_neighbor(l, r, (1, 0), (vx, vy)) for (l, r, vx, vy) in raw], GAINS
        )
        rev = control_input(
            [one_neighbor(l, -r, (1, 0), (-vx, -vy)) for (l, r, vx, vy) in raw], GAINS
        )
        assert np.array_equal(fwd, -rev)


class TestSignum:
    def test_exact(self):
        assert np.array_equal(signum(np.array([-2.0, 0.0])), [-1.0, 0.0])

    def test_smooth(self):
        out = signum(np.array([1.0, -1.0]), smooth_eps=1.0)
        assert np.allclose(out, [0.5, -0.5])


class TestValidateGains:
    def test_bundled_margins(self):
        report = validate_gains(GAINS, bundled_stress(), sup_vdot_f=3.5)
        assert report.passes
        assert report.k_delta_margin == pytest.approx(0.3, abs=1e-12)
        assert report.lambda_min_ff == pytest.approx(LAMBDA_MIN_BUNDLED, rel=1e-12)
        assert report.k_v_required == pytest.approx(INV_LAMBDA_MIN_BUNDLED, rel=1e-12)
        assert report.k_v_margin == pytest.approx(1.5 - INV_LAMBDA_MIN_BUNDLED, rel=1e-9)

    def test_boundary_k_delta_fails(self):
        gains = ControlGains(k_p=1.0, k_v=1.5, k_delta=3.7, delta_bar=0.2)
        report = validate_gains(gains, bundled_stress(), sup_vdot_f=3.5)
        assert not report.k_delta_ok       # strict inequality
        assert not report.passes

    def test_published_weights_fail_velocity_condition(self):
        # The published four-digit stress is valid for the formation but far
        # too weakly scaled for the published velocity gain: its follower
        # block has lambda_min ~ 0.0227, demanding k_v > 43.98.
        report = validate_gains(GAINS, published_stress(), sup_vdot_f=3.5)
        assert report.lambda_min_ff == pytest.approx(LAMBDA_MIN_PUBLISHED, rel=1e-9)
        assert report.k_v_required == pytest.approx(43.976187132, rel=1e-9)
        assert not report.k_v_ok
        assert not report.passes
        assert report.k_delta_ok           # the switching margin still holds


class TestSupFollowerAccel:
    def test_zero_leader_bound(self):
        assert sup_follower_accel(bundled_stress(), 0.0) == 0.0

    def test_operator_gain_frozen(self):
        assert sup_follower_accel(bundled_stress(), 1.0) == pytest.approx(
            OPERATOR_GAIN_BUNDLED, rel=1e-12
        )

    def test_scale_invariance(self):
        a = sup_follower_accel(bundled_stress(), 2.0)
        b = sup_follower_accel(bundled_stress().scaled(5.0), 2.0)
        assert a == pytest.approx(b, rel=1e-12)


class TestStabilityCertificate:
    def test_bundled_certificate(self):
        cert = stability_certificate(GAINS, bundled_stress())
        # Independent oracle: assemble both quadratic forms from scratch and
        # diagonalize with scipy.
        lff_bar = np.kron(bundled_stress().follower_block(), np.eye(2))
        P = np.block([[2.5 * lff_bar @ lff_bar, lff_bar], [lff_bar, lff_bar]])
        Q = sla.block_diag(lff_bar @ lff_bar, 1.5 * lff_bar @ lff_bar - lff_bar)
        evp = sla.eigh(P, eigvals_only=True)
        evq = sla.eigh(Q, eigvals_only=True)
        assert cert.lambda_min_P == pytest.approx(evp[0], rel=1e-9)
        assert cert.lambda_max_P == pytest.approx(evp[-1], rel=1e-9)
        assert cert.lambda_min_Q == pytest.approx(evq[0], rel=1e-9)
        assert cert.lambda_min_P > 0 and cert.lambda_min_Q > 0
        assert cert.decay_rate == pytest.approx(evq[0] / evp[-1], rel=1e-9)
        assert cert.envelope_coeff == pytest.approx(
            math.sqrt(evp[-1] / evp[0]), rel=1e-9
        )

    def test_insufficient_velocity_gain_raises(self):
        bad = ControlGains(k_p=1.0, k_v=0.9, k_delta=4.0, delta_bar=0.2)
        with pytest.raises(GainConditionViolated):
            stability_certificate(bad, bundled_stress())

    def test_published_stress_raises(self):
        with pytest.raises(GainConditionViolated):
            stability_certificate(GAINS, published_stress())

    def test_single_follower_closed_form(self):
        # One follower with total neighbor weight 2: the follower block is
        # the scalar [2], so with k_p = k_v = 1 the quadratic forms reduce to
        # P = [[8, 2], [2, 2]] (x) I2 and Q = diag(4, 2) (x) I2.
        stress = StressMatrix(
            weights={(1, 4): 1.0, (2, 4): 0.5, (3, 4): 0.5}, n=4, n_l=3
        )
        gains = ControlGains(k_p=1.0, k_v=1.0, k_delta=1.0, delta_bar=0.5)
        cert = stability_certificate(gains, stress)
        expected_P = np.kron(np.array([[8.0, 2.0], [2.0, 2.0]]), np.eye(2))
        assert np.allclose(cert.P, expected_P)
        assert np.allclose(sorted(np.linalg.eigvalsh(cert.Q)), [2, 2, 4, 4])
        assert cert.lambda_min_P == pytest.approx(5.0 - math.sqrt(13.0), rel=1e-12)
        assert cert.lambda_max_P == pytest.approx(5.0 + math.sqrt(13.0), rel=1e-12)

    def test_schur_and_eigen_routes_agree_near_boundary(self):
        stress = bundled_stress()
        lam_min = LAMBDA_MIN_BUNDLED
        for k_v in (1.0 / lam_min * (1 + 1e-6), 1.0 / lam_min * (1 - 1e-6)):
            gains = ControlGains(k_p=1.0, k_v=k_v, k_delta=4.0, delta_bar=0.2)
            try:
                cert = stability_certificate(gains, stress)
                assert cert.lambda_min_Q > 0
            except GainConditionViolated as exc:
                assert "disagree" not in str(exc)


class TestAvoidanceCertificate:
    def test_zero_initial_errors_budget(self):
        stress = bundled_stress()
        cert = stability_certificate(GAINS, stress)
        edges = [(i, j) for i in range(4, 8) for j in stress.neighbors(i)]
        rho0 = {e: 0.0 for e in edges}
        av = avoidance_certificate(0.0, rho0, GAINS, stress, cert, 1.0, 0.05)
        # the 2 k_delta terms never vanish: 14 directed edges * 8
        assert av.c_e == pytest.approx(112.0)
        assert av.lhs == pytest.approx(
            cert.lambda_max_P * 112.0 / (2.0 * cert.lambda_min_Q), rel=1e-12
        )
        assert av.lhs > 0
        assert not av.passes

    def test_invalid_clearance(self):
        stress = bundled_stress()
        cert = stability_certificate(GAINS, stress)
        with pytest.raises(InvalidClearance):
            avoidance_certificate(0.0, {}, GAINS, stress, cert, 0.5, 0.6)

    def test_small_system_can_pass(self):
        # One follower, tiny switching gain, tight estimates: the budget is
        # small enough for a generous desired gap.
        stress = StressMatrix(
            weights={(1, 4): 1.0, (2, 4): 0.5, (3, 4): 0.5}, n=4, n_l=3
        )
        gains = ControlGains(k_p=1.0, k_v=1.0, k_delta=1e-3, delta_bar=5e-4)
        cert = stability_certificate(gains, stress)
        rho0 = {(4, 1): 0.0, (4, 2): 0.0, (4, 3): 0.0}
        av = avoidance_certificate(1e-4, rho0, gains, stress, cert, 10.0, 0.05)
        assert av.passes


def test_gains_must_be_positive():
    with pytest.raises(ValueError):
        ControlGains(k_p=0.0, k_v=1.0, k_delta=1.0, delta_bar=0.1)
    with pytest.raises(ValueError):
        ControlGains(k_p=1.0, k_v=1.0, k_delta=1.0, delta_bar=math.nan)
