"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines.  The expensive closed-loop runs are shared session fixtures.
"""

import math
import time

import numpy as np
import pytest

from entrapsim import cli, control as ctl, engine, formation as fm
from entrapsim.formation import Configuration, StressMatrix
from entrapsim.geometry import bearing_rate, perp, vec2
from entrapsim.scenario import bundled_scenario_path
from entrapsim.sensing import EdgeObservation, estimator_rhs

from conftest import CONFIG_POINTS, PUBLISHED_WEIGHTS

REMARK_LEADERS = np.array([[2.0, 0.0], [2.0 / 3.0, 1.0], [4.0 / 3.0, -1.0]])
REMARK_A = np.array([[1.0, -1.0 / 3.0], [0.0, 1.0]])
REMARK_FOLLOWERS = np.array(
    [[-1.0 / 3.0, 1.0], [1.0 / 3.0, -1.0], [-4.0 / 3.0, 1.0], [-2.0 / 3.0, -1.0]]
)


def report(criterion, detail):
    print(f"[acceptance] criterion {criterion}: PASS ({detail})")


def test_criterion_1_affine_reproduction():
    config = Configuration(points=np.array(CONFIG_POINTS, dtype=float), n_l=3)
    # warm-up, then time the two calls
    fm.affine_fit(REMARK_LEADERS, config)
    t0 = time.perf_counter()
    pose = fm.affine_fit(REMARK_LEADERS, config)
    followers = fm.desired_followers_affine(pose, config)
    elapsed = time.perf_counter() - t0
    assert np.abs(pose.A - REMARK_A).max() <= 1e-9
    assert np.abs(pose.b).max() <= 1e-9
    assert np.abs(followers - REMARK_FOLLOWERS).max() <= 1e-9
    assert elapsed < 1e-3
    report(1, f"max pose error {np.abs(pose.A - REMARK_A).max():.2e}, "
              f"runtime {elapsed * 1e6:.0f} us")


def test_criterion_2_stress_consistency(bundled):
    t0 = time.perf_counter()
    config = Configuration(points=np.array(CONFIG_POINTS, dtype=float), n_l=3)
    published = StressMatrix(weights=dict(PUBLISHED_WEIGHTS), n=7, n_l=3)
    a1 = fm.validate_assumption1(published, config)
    assert a1.passes
    assert a1.equilibrium_residual <= 1e-2
    # Stress route vs affine route on the bundled scenario's stress, at the
    # initial pose and at 20 poses sampled along the leader trajectories.
    cs = engine.compile_scenario(bundled)
    worst = 0.0
    for t in np.linspace(0.0, bundled.horizon, 21):
        leaders = cs.generator.positions(float(t))
        via_affine = fm.desired_followers_affine(
            fm.affine_fit(leaders, cs.config), cs.config
        )
        via_stress = fm.desired_followers_stress(cs.stress, leaders)
        worst = max(worst, float(np.abs(via_affine - via_stress).max()))
    elapsed = time.perf_counter() - t0
    assert worst <= 2e-2
    assert elapsed < 0.1
    report(2, f"residual {a1.equilibrium_residual:.2e}, "
              f"route mismatch {worst:.2e}, runtime {elapsed * 1e3:.1f} ms")


def test_criterion_3_gain_certificate(bundled):
    cs = engine.compile_scenario(bundled)
    gains = cs.gains
    assert gains.k_delta == 4.0 and gains.delta_bar == 0.2
    rep = ctl.validate_gains(gains, cs.stress, sup_vdot_f=3.5)
    assert rep.k_delta_margin == pytest.approx(0.3, abs=1e-12)
    assert rep.k_delta_ok
    # The velocity-gain requirement, against the independent eigen oracle
    # (follower-block spectrum is {18-12*sqrt(2), 12, 18+12*sqrt(2), 42}).
    oracle_inv_lambda_min = 1.0 / (18.0 - 12.0 * math.sqrt(2.0))
    assert rep.k_v_required == pytest.approx(oracle_inv_lambda_min, rel=1e-12)
    assert gains.k_v > rep.k_v_required
    assert rep.passes
    cert = ctl.stability_certificate(gains, cs.stress)
    assert cert.lambda_min_P > 0.0
    assert cert.lambda_min_Q > 0.0
    report(3, f"k_delta margin {rep.k_delta_margin:.3f}, "
              f"k_v 1.5 vs required {rep.k_v_required:.4f}, "
              f"lambda_min(P) {cert.lambda_min_P:.4f} > 0, "
              f"lambda_min(Q) {cert.lambda_min_Q:.4f} > 0")


def test_criterion_4_closed_loop_run(bundled, full_run):
    result, elapsed = full_run
    s = result.summary
    assert s["horizon"] == 60.0
    term, init = s["terminal"], s["initial"]
    assert term["max_abs_rho_tilde"] <= 0.05
    assert term["dp_norm"] <= 0.05
    assert term["dv_norm"] <= 0.1
    assert s["ratios"]["dp"] >= 100.0
    assert s["ratios"]["dv"] >= 100.0
    assert s["min_gap"]["value"] > 0.0
    assert np.all(result.trace.column("min_gap") > 0.0)
    assert elapsed < 30.0
    report(4, f"max|rho_tilde(T)| {term['max_abs_rho_tilde']:.1e} m, "
              f"|dp(T)| {term['dp_norm']:.1e} m (ratio {s['ratios']['dp']:.0f}), "
              f"|dv(T)| {term['dv_norm']:.1e} m/s (ratio {s['ratios']['dv']:.0f}), "
              f"min gap {s['min_gap']['value']:.3f} m, runtime {elapsed:.1f} s")


def test_criterion_5_exponential_envelope(nominal_run):
    s = nominal_run.summary
    env = s["envelope"]
    assert s["exact_rho_feed"] is True
    assert env["available"]
    assert env["checked_samples"] == 6001
    assert env["violations"] == 0
    # Re-verify from the raw trace against the certificate formula.
    tr = nominal_run.trace
    t = tr.column("t")
    ef = tr.column("ef_norm")
    bound = env["coeff"] * env["e0_norm"] * np.exp(-env["decay_rate"] * t)
    assert np.all(ef <= bound * (1.0 + 1e-9))
    report(5, f"0 violations in {env['checked_samples']} samples, "
              f"coeff {env['coeff']:.1f}, decay {env['decay_rate']:.2e} 1/s")


def test_criterion_6_estimator_dichotomy():
    # (a) persistent circular relative motion: the error dies.
    k1, omega, radius, dt = 1.0, 0.5, 2.0, 1e-3
    rho_hat = 1.0
    for k in range(int(20.0 / dt)):
        t = k * dt
        phi = vec2(math.cos(omega * t), math.sin(omega * t))
        v = radius * omega * perp(phi)
        o = EdgeObservation(phi=phi, phi_dot=bearing_rate(phi, v, radius), v_ij=v)
        rho_hat += dt * estimator_rhs(rho_hat, o, k1)
    err_a = abs(rho_hat - radius)
    assert err_a <= 1e-3
    # (b) static pair: estimate and bearing frozen.
    p_i, p_j = vec2(0.0, 0.0), vec2(1.0, 2.0)
    from entrapsim.geometry import bearing

    phi0 = bearing(p_i, p_j)
    o = EdgeObservation(phi=phi0, phi_dot=vec2(0, 0), v_ij=vec2(0, 0))
    rho_hat = 5.0
    drift = 0.0
    for _ in range(int(10.0 / dt)):
        rho_hat += dt * estimator_rhs(rho_hat, o, k1)
        drift = max(drift, abs(rho_hat - 5.0))
    bearing_drift = float(np.abs(bearing(p_i, p_j) - phi0).max())
    assert drift <= 1e-9
    assert bearing_drift <= 1e-9
    report(6, f"circular |err(20 s)| {err_a:.1e} <= 1e-3; "
              f"static drift {drift:.1e}, bearing drift {bearing_drift:.1e}")


def test_criterion_7_excitation_monitors(bundled, bundled_static):
    assert bundled.sigma_v == 5.0 and bundled.eps_v == 0.5
    rep = engine.leader_excitation_report(bundled, dt=1e-3)
    margins = {e: r["min_integral"] - 0.5 for e, r in rep.items()}
    assert all(r["verdict"] == "satisfied" for r in rep.values())
    rep_static = engine.leader_excitation_report(bundled_static, dt=1e-3)
    assert all(r["verdict"] == "not_satisfied" for r in rep_static.values())
    report(7, f"all 12 edges satisfied, worst margin {min(margins.values()):.3f}; "
              f"static scenario fails on all edges")


def test_criterion_8_determinism(tmp_path):
    scenario = str(bundled_scenario_path())
    outs = []
    for name in ("d1", "d2"):
        out = tmp_path / name
        code = cli.main(["run", "--scenario", scenario, "--out", str(out)])
        assert code == 0
        outs.append(out)
    b1 = (outs[0] / "trace.csv").read_bytes()
    b2 = (outs[1] / "trace.csv").read_bytes()
    assert b1 == b2
    assert (outs[0] / "summary.json").read_bytes() == (outs[1] / "summary.json").read_bytes()
    report(8, f"two runs, {len(b1)} byte traces identical")
