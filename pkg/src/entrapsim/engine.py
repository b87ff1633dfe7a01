"""World state, leader trajectory generators, uncertainty injection,
fixed-step integration of the coupled closed loop, and trace recording.

The closed loop couples four pieces: a constant-velocity target, leaders
driven analytically along designed trajectories (no integration drift),
double-integrator followers under the robust stress-matrix controller, and
one scalar distance estimator per directed follower edge.  Integration is
explicit fixed-step Euler by default: the controller right-hand side is
discontinuous, so small fixed steps approximate the differential-inclusion
solution honestly where adaptive steppers would thrash; a fixed-step RK4
variant exists for the smooth subsystems.

The hot loop is compiled with numba; the surrounding Python assembles
observations, certificates, traces and summaries.  Iteration order over
agents and edges is fixed, so identical scenarios produce bit-identical
traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import control as ctl
from . import formation as fm
from .geometry import bearing, bearing_rate, vec2
from .scenario import Scenario
from .sensing import EdgeObservation, EstimatorState, PEStatus

BLOWUP_LIMIT = 1e9


class EngineError(RuntimeError):
    pass


class CollisionDetected(EngineError):
    def __init__(self, t, pair, distance):
        super().__init__(
            f"agents {pair[0]} and {pair[1]} collided at t={t:.6f} s "
            f"(distance {distance:.3e} m)"
        )
        self.t = t
        self.pair = pair
        self.distance = distance


class NumericalBlowup(EngineError):
    def __init__(self, t):
        super().__init__(f"state magnitude exceeded {BLOWUP_LIMIT:.0e} at t={t:.6f} s")
        self.t = t


class ZeroOffset(ValueError):
    """A leader starts on top of the target; its rotation is undefined."""


@dataclass(frozen=True)
class CircularLeaderGenerator:
    """Leaders whose target-relative offsets rotate at constant rates.

    The first leader rotates at ``base_rate``; the others rotate so that
    all leaders share the same relative speed (rate scaled by the inverse
    of their offset radius).  Because each offset only rotates, radii stay
    constant and velocities/accelerations are available in closed form.
    """

    target_p0: np.ndarray
    target_v0: np.ndarray
    offsets0: np.ndarray          # (n_l, 2) initial target-relative offsets
    rates: np.ndarray             # (n_l,) angular rates

    @classmethod
    def from_initial(cls, target_p0, target_v0, initial_positions, base_rate):
        p0 = np.asarray(target_p0, dtype=float)
        v0 = np.asarray(target_v0, dtype=float)
        pos = np.asarray(initial_positions, dtype=float)
        off = pos - p0
        radii = np.hypot(off[:, 0], off[:, 1])
        if np.any(radii < 1e-12):
            raise ZeroOffset("every leader must start away from the target")
        rates = base_rate * radii[0] / radii
        return cls(target_p0=p0, target_v0=v0, offsets0=off, rates=rates)

    def _rotated(self, t: float) -> np.ndarray:
        th = self.rates * t
        c, s = np.cos(th), np.sin(th)
        return np.stack(
            [c * self.offsets0[:, 0] - s * self.offsets0[:, 1],
             s * self.offsets0[:, 0] + c * self.offsets0[:, 1]], axis=1
        )

    def target_position(self, t: float) -> np.ndarray:
        return self.target_p0 + self.target_v0 * t

    def positions(self, t: float) -> np.ndarray:
        return self.target_position(t) + self._rotated(t)

    def velocities(self, t: float) -> np.ndarray:
        off = self._rotated(t)
        spin = np.stack([-off[:, 1], off[:, 0]], axis=1)
        return self.target_v0 + self.rates[:, None] * spin

    def accelerations(self, t: float) -> np.ndarray:
        return -(self.rates**2)[:, None] * self._rotated(t)

    def accel_bound(self) -> float:
        """Stacked norm of the (constant-magnitude) leader accelerations."""
        radii = np.hypot(self.offsets0[:, 0], self.offsets0[:, 1])
        return float(np.linalg.norm(self.rates**2 * radii))


@dataclass(frozen=True)
class StaticLeaderGenerator:
    """Leaders pinned at their initial positions (zero velocity)."""

    target_p0: np.ndarray
    target_v0: np.ndarray
    positions0: np.ndarray

    @classmethod
    def from_initial(cls, target_p0, target_v0, initial_positions):
        return cls(
            target_p0=np.asarray(target_p0, dtype=float),
            target_v0=np.asarray(target_v0, dtype=float),
            positions0=np.asarray(initial_positions, dtype=float),
        )

    def target_position(self, t: float) -> np.ndarray:
        return self.target_p0 + self.target_v0 * t

    def positions(self, t: float) -> np.ndarray:
        return self.positions0.copy()

    def velocities(self, t: float) -> np.ndarray:
        return np.zeros_like(self.positions0)

    def accelerations(self, t: float) -> np.ndarray:
        return np.zeros_like(self.positions0)

    def accel_bound(self) -> float:
        return 0.0


def leader_generator_circular(target_p0, target_v0, initial_positions, base_rate):
    return CircularLeaderGenerator.from_initial(
        target_p0, target_v0, initial_positions, base_rate
    )


@dataclass(frozen=True)
class UncertaintyModel:
    """Bounded acceleration disturbance applied to every follower."""

    kind: str
    amplitude: float = 0.0
    omega: float = 0.0
    direction: np.ndarray = None
    value: np.ndarray = None
    times: np.ndarray = None
    values: np.ndarray = None

    @classmethod
    def from_spec(cls, spec: dict) -> "UncertaintyModel":
        kind = spec["kind"]
        if kind == "zero":
            return cls(kind="zero")
        if kind == "sinusoid":
            d = np.asarray(spec["direction"], dtype=float)
            d = d / np.hypot(d[0], d[1])
            return cls(
                kind="sinusoid",
                amplitude=float(spec["amplitude"]),
                omega=float(spec["omega"]),
                direction=d,
            )
        if kind == "constant":
            return cls(kind="constant", value=np.asarray(spec["value"], dtype=float))
        pieces = spec["pieces"]
        return cls(
            kind="piecewise",
            times=np.array([p["t_start"] for p in pieces], dtype=float),
            values=np.array([p["value"] for p in pieces], dtype=float).reshape(-1, 2),
        )

    @property
    def bound(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "sinusoid":
            return abs(self.amplitude)
        if self.kind == "constant":
            return float(np.hypot(self.value[0], self.value[1]))
        if len(self.values) == 0:
            return 0.0
        return float(np.hypot(self.values[:, 0], self.values[:, 1]).max())

    def sample(self, t: float) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(2)
        if self.kind == "sinusoid":
            return self.amplitude * math.sin(self.omega * t) * self.direction
        if self.kind == "constant":
            return self.value.copy()
        out = np.zeros(2)
        for k in range(len(self.times)):
            if t >= self.times[k]:
                out = self.values[k]
        return out.copy()


@dataclass
class WorldState:
    """Complete simulation state at one instant."""

    t: float
    target_p: np.ndarray
    target_v: np.ndarray
    positions: np.ndarray         # (n, 2), leaders first
    velocities: np.ndarray        # (n, 2)
    estimator: EstimatorState


@dataclass(frozen=True)
class CompiledScenario:
    """Scenario unpacked into arrays the kernel and recorders consume."""

    scenario: Scenario
    config: fm.Configuration
    stress: fm.StressMatrix
    gains: ctl.ControlGains
    generator: object
    uncertainty: UncertaintyModel
    edges: list                   # directed (follower, neighbor), 1-based
    ei: np.ndarray                # (ne,) 0-based observer index
    ej: np.ndarray                # (ne,) 0-based neighbor index
    wght: np.ndarray              # (ne,) stress weight per directed edge

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def n_l(self) -> int:
        return self.config.n_l

    @property
    def n_f(self) -> int:
        return self.config.n_f

    @property
    def ne(self) -> int:
        return len(self.edges)


def compile_scenario(scenario: Scenario) -> CompiledScenario:
    config = scenario.config()
    stress = scenario.stress()
    edges = scenario.directed_edges()
    ei = np.array([i - 1 for i, _ in edges], dtype=np.int64)
    ej = np.array([j - 1 for _, j in edges], dtype=np.int64)
    wght = np.array([stress.weight(i, j) for i, j in edges], dtype=float)
    if scenario.leader_kind == "circular":
        generator = CircularLeaderGenerator.from_initial(
            scenario.target_p0,
            scenario.target_v0,
            scenario.leader_initial_positions,
            scenario.leader_base_rate,
        )
    else:
        generator = StaticLeaderGenerator.from_initial(
            scenario.target_p0, scenario.target_v0, scenario.leader_initial_positions
        )
    return CompiledScenario(
        scenario=scenario,
        config=config,
        stress=stress,
        gains=scenario.gains,
        generator=generator,
        uncertainty=UncertaintyModel.from_spec(scenario.uncertainty),
        edges=edges,
        ei=ei,
        ej=ej,
        wght=wght,
    )


def initial_world(cs: CompiledScenario) -> WorldState:
    sc = cs.scenario
    positions = np.vstack(
        [cs.generator.positions(0.0), np.array(sc.follower_positions, dtype=float)]
    )
    velocities = np.vstack(
        [cs.generator.velocities(0.0), np.array(sc.follower_velocities, dtype=float)]
    )
    return WorldState(
        t=0.0,
        target_p=np.asarray(sc.target_p0, dtype=float),
        target_v=np.asarray(sc.target_v0, dtype=float),
        positions=positions,
        velocities=velocities,
        estimator=EstimatorState(rho_hat=sc.rho_hat0_map(), k_1=sc.k_1),
    )


def collision_monitor(positions: np.ndarray):
    """Minimum pairwise separation and its pair; (inf, None) for one agent."""
    pts = np.asarray(positions, dtype=float)
    n = len(pts)
    if n < 2:
        return math.inf, None
    best = math.inf
    pair = None
    for i in range(n - 1):
        d = pts[i + 1:] - pts[i]
        dist = np.hypot(d[:, 0], d[:, 1])
        k = int(np.argmin(dist))
        if dist[k] < best:
            best = float(dist[k])
            pair = (i + 1, i + 2 + k)   # report 1-based agent ids
    return best, pair


def observations(world: WorldState, cs: CompiledScenario) -> dict:
    """Exact-sensing observations for every directed follower edge."""
    out = {}
    for (i, j) in cs.edges:
        p_i, p_j = world.positions[i - 1], world.positions[j - 1]
        phi = bearing(p_i, p_j, cs.scenario.delta_min)
        v_ij = world.velocities[j - 1] - world.velocities[i - 1]
        rho = float(np.hypot(*(p_j - p_i)))
        out[(i, j)] = EdgeObservation(
            phi=phi, phi_dot=bearing_rate(phi, v_ij, rho), v_ij=v_ij
        )
    return out


def follower_controls(world: WorldState, cs: CompiledScenario) -> np.ndarray:
    """Controller outputs for all followers at the current state, (n_f, 2)."""
    sc = cs.scenario
    obs = observations(world, cs)
    u = np.zeros((cs.n_f, 2))
    for f in range(cs.n_f):
        fid = cs.n_l + 1 + f
        triples = []
        for (i, j) in cs.edges:
            if i != fid:
                continue
            if sc.exact_rho_feed:
                rho_hat = float(np.hypot(*(world.positions[j - 1] - world.positions[i - 1])))
            else:
                rho_hat = world.estimator.rho_hat[(i, j)]
            triples.append((cs.stress.weight(i, j), rho_hat, obs[(i, j)]))
        u[f] = ctl.control_input(triples, cs.gains, sc.smooth_sgn_eps)
    return u


# --------------------------------------------------------------------------
# Compiled inner loop
# --------------------------------------------------------------------------

# stats slots
_MIN_GAP, _GAP_I, _GAP_J, _GAP_STEP, _MIN_TGT, _NEG_RHO, _FAIL_I, _FAIL_J, _FAIL_STEP, _FAIL_D = range(10)

_OK, _COLLIDED, _BLEW_UP = 0, 1, 2


@njit(cache=True)
def _leader_state(t, leader_kind, off0, rates, lp_static, p00, v00, lp, lv):
    nl = off0.shape[0]
    if leader_kind == 0:
        for k in range(nl):
            c = math.cos(rates[k] * t)
            s = math.sin(rates[k] * t)
            ox = c * off0[k, 0] - s * off0[k, 1]
            oy = s * off0[k, 0] + c * off0[k, 1]
            lp[k, 0] = p00[0] + v00[0] * t + ox
            lp[k, 1] = p00[1] + v00[1] * t + oy
            lv[k, 0] = v00[0] - rates[k] * oy
            lv[k, 1] = v00[1] + rates[k] * ox
    else:
        for k in range(nl):
            lp[k, 0] = lp_static[k, 0]
            lp[k, 1] = lp_static[k, 1]
            lv[k, 0] = 0.0
            lv[k, 1] = 0.0


@njit(cache=True)
def _uncertainty(t, ukind, uamp, uomega, udir, uconst, utimes, uvals, out):
    if ukind == 0:
        out[0] = 0.0
        out[1] = 0.0
    elif ukind == 1:
        a = uamp * math.sin(uomega * t)
        out[0] = a * udir[0]
        out[1] = a * udir[1]
    elif ukind == 2:
        out[0] = uconst[0]
        out[1] = uconst[1]
    else:
        out[0] = 0.0
        out[1] = 0.0
        for k in range(utimes.shape[0]):
            if t >= utimes[k]:
                out[0] = uvals[k, 0]
                out[1] = uvals[k, 1]


@njit(cache=True)
def _deriv(t, Pf, Vf, rho_hat, X, V, lp, lv,
           ei, ej, wght, nl, leader_kind, off0, rates, lp_static, p00, v00,
           ukind, uamp, uomega, udir, uconst, utimes, uvals,
           kp, kv, kD, k1, smooth_eps, exact_rho,
           dPf, dVf, drho, lin, sarg, delta):
    """Closed-loop right-hand side at (t, Pf, Vf, rho_hat) with exact sensing."""
    nf = Pf.shape[0]
    ne = ei.shape[0]
    _leader_state(t, leader_kind, off0, rates, lp_static, p00, v00, lp, lv)
    for k in range(nl):
        X[k, 0] = lp[k, 0]
        X[k, 1] = lp[k, 1]
        V[k, 0] = lv[k, 0]
        V[k, 1] = lv[k, 1]
    for k in range(nf):
        X[nl + k, 0] = Pf[k, 0]
        X[nl + k, 1] = Pf[k, 1]
        V[nl + k, 0] = Vf[k, 0]
        V[nl + k, 1] = Vf[k, 1]
    for f in range(nf):
        lin[f, 0] = 0.0
        lin[f, 1] = 0.0
        sarg[f, 0] = 0.0
        sarg[f, 1] = 0.0
    for e in range(ne):
        i = ei[e]
        j = ej[e]
        dx = X[j, 0] - X[i, 0]
        dy = X[j, 1] - X[i, 1]
        rho = math.hypot(dx, dy)
        px = dx / rho
        py = dy / rho
        vx = V[j, 0] - V[i, 0]
        vy = V[j, 1] - V[i, 1]
        radial = px * vx + py * vy
        pdx = (vx - radial * px) / rho
        pdy = (vy - radial * py) / rho
        turn = abs(-py * pdx + px * pdy)
        tang = abs(-py * vx + px * vy)
        drho[e] = radial - k1 * (rho_hat[e] * turn - tang)
        rr = rho if exact_rho else rho_hat[e]
        f = i - nl
        w = wght[e]
        lin[f, 0] += w * (kp * rr * px + kv * vx)
        lin[f, 1] += w * (kp * rr * py + kv * vy)
        sarg[f, 0] += w * (rr * px + vx)
        sarg[f, 1] += w * (rr * py + vy)
    _uncertainty(t, ukind, uamp, uomega, udir, uconst, utimes, uvals, delta)
    for f in range(nf):
        for c in range(2):
            a = sarg[f, c]
            if smooth_eps > 0.0:
                sg = a / (abs(a) + smooth_eps)
            else:
                sg = 0.0 if a == 0.0 else (1.0 if a > 0.0 else -1.0)
            dVf[f, c] = lin[f, c] + kD * sg + delta[c]
            dPf[f, c] = Vf[f, c]


@njit(cache=True)
def _advance(step0, n_steps, dt,
             Pf, Vf, rho_hat, prev_phi, prev_turn,
             ring, ring_sum, pe_min, meta, stats,
             ei, ej, wght, n, nl,
             leader_kind, off0, rates, lp_static, p00, v00,
             ukind, uamp, uomega, udir, uconst, utimes, uvals,
             kp, kv, kD, k1, smooth_eps,
             exact_rho, fd_mode, use_rk4,
             coll_thresh, blowup_limit, W):
    """Advance the closed loop ``n_steps`` steps in place.

    Returns 0 on success, 1 on collision, 2 on numerical blowup; failure
    details land in ``stats``.
    """
    nf = n - nl
    ne = ei.shape[0]
    lp = np.empty((nl, 2))
    lv = np.empty((nl, 2))
    X = np.empty((n, 2))
    V = np.empty((n, 2))
    lin = np.empty((nf, 2))
    sarg = np.empty((nf, 2))
    delta = np.empty(2)
    dPf = np.empty((nf, 2))
    dVf = np.empty((nf, 2))
    drho = np.empty(ne)
    # RK4 scratch
    k2p = np.empty((nf, 2)); k2v = np.empty((nf, 2)); k2r = np.empty(ne)
    k3p = np.empty((nf, 2)); k3v = np.empty((nf, 2)); k3r = np.empty(ne)
    k4p = np.empty((nf, 2)); k4v = np.empty((nf, 2)); k4r = np.empty(ne)
    tmpP = np.empty((nf, 2)); tmpV = np.empty((nf, 2)); tmpR = np.empty(ne)

    for step in range(n_steps):
        t = (step0 + step) * dt
        _leader_state(t, leader_kind, off0, rates, lp_static, p00, v00, lp, lv)
        for k in range(nl):
            X[k, 0] = lp[k, 0]; X[k, 1] = lp[k, 1]
            V[k, 0] = lv[k, 0]; V[k, 1] = lv[k, 1]
        for k in range(nf):
            X[nl + k, 0] = Pf[k, 0]; X[nl + k, 1] = Pf[k, 1]
            V[nl + k, 0] = Vf[k, 0]; V[nl + k, 1] = Vf[k, 1]

        # Observations at t, controller terms, estimator rhs, excitation.
        # The excitation window only gains area once a previous integrand
        # exists, which happens on every step after the global first.
        pushing = not math.isnan(prev_turn[0])
        for f in range(nf):
            lin[f, 0] = 0.0; lin[f, 1] = 0.0
            sarg[f, 0] = 0.0; sarg[f, 1] = 0.0
        for e in range(ne):
            i = ei[e]; j = ej[e]
            dx = X[j, 0] - X[i, 0]
            dy = X[j, 1] - X[i, 1]
            rho = math.hypot(dx, dy)
            px = dx / rho
            py = dy / rho
            vx = V[j, 0] - V[i, 0]
            vy = V[j, 1] - V[i, 1]
            radial = px * vx + py * vy
            if fd_mode and not math.isnan(prev_phi[e, 0]):
                pdx = (px - prev_phi[e, 0]) / dt
                pdy = (py - prev_phi[e, 1]) / dt
            else:
                pdx = (vx - radial * px) / rho
                pdy = (vy - radial * py) / rho
            if fd_mode:
                prev_phi[e, 0] = px
                prev_phi[e, 1] = py
            turn = abs(-py * pdx + px * pdy)
            tang = abs(-py * vx + px * vy)
            drho[e] = radial - k1 * (rho_hat[e] * turn - tang)
            rr = rho if exact_rho else rho_hat[e]
            f = i - nl
            w = wght[e]
            lin[f, 0] += w * (kp * rr * px + kv * vx)
            lin[f, 1] += w * (kp * rr * py + kv * vy)
            sarg[f, 0] += w * (rr * px + vx)
            sarg[f, 1] += w * (rr * py + vy)
            # Sliding-window excitation integral (trapezoid over steps).
            if pushing:
                inc = 0.5 * (prev_turn[e] + turn) * dt
                slot = meta[0] % W
                if meta[0] >= W:
                    ring_sum[e] -= ring[e, slot]
                ring[e, slot] = inc
                ring_sum[e] += inc
                if meta[0] + 1 >= W and ring_sum[e] < pe_min[e]:
                    pe_min[e] = ring_sum[e]
            prev_turn[e] = turn

        if pushing:
            meta[0] += 1   # one increment slot consumed per pushing step

        if use_rk4:
            _deriv(t, Pf, Vf, rho_hat, X, V, lp, lv, ei, ej, wght, nl,
                   leader_kind, off0, rates, lp_static, p00, v00,
                   ukind, uamp, uomega, udir, uconst, utimes, uvals,
                   kp, kv, kD, k1, smooth_eps, exact_rho,
                   dPf, dVf, drho, lin, sarg, delta)
            for f in range(nf):
                for c in range(2):
                    tmpP[f, c] = Pf[f, c] + 0.5 * dt * dPf[f, c]
                    tmpV[f, c] = Vf[f, c] + 0.5 * dt * dVf[f, c]
            for e in range(ne):
                tmpR[e] = rho_hat[e] + 0.5 * dt * drho[e]
            _deriv(t + 0.5 * dt, tmpP, tmpV, tmpR, X, V, lp, lv, ei, ej, wght, nl,
                   leader_kind, off0, rates, lp_static, p00, v00,
                   ukind, uamp, uomega, udir, uconst, utimes, uvals,
                   kp, kv, kD, k1, smooth_eps, exact_rho,
                   k2p, k2v, k2r, lin, sarg, delta)
            for f in range(nf):
                for c in range(2):
                    tmpP[f, c] = Pf[f, c] + 0.5 * dt * k2p[f, c]
                    tmpV[f, c] = Vf[f, c] + 0.5 * dt * k2v[f, c]
            for e in range(ne):
                tmpR[e] = rho_hat[e] + 0.5 * dt * k2r[e]
            _deriv(t + 0.5 * dt, tmpP, tmpV, tmpR, X, V, lp, lv, ei, ej, wght, nl,
                   leader_kind, off0, rates, lp_static, p00, v00,
                   ukind, uamp, uomega, udir, uconst, utimes, uvals,
                   kp, kv, kD, k1, smooth_eps, exact_rho,
                   k3p, k3v, k3r, lin, sarg, delta)
            for f in range(nf):
                for c in range(2):
                    tmpP[f, c] = Pf[f, c] + dt * k3p[f, c]
                    tmpV[f, c] = Vf[f, c] + dt * k3v[f, c]
            for e in range(ne):
                tmpR[e] = rho_hat[e] + dt * k3r[e]
            _deriv(t + dt, tmpP, tmpV, tmpR, X, V, lp, lv, ei, ej, wght, nl,
                   leader_kind, off0, rates, lp_static, p00, v00,
                   ukind, uamp, uomega, udir, uconst, utimes, uvals,
                   kp, kv, kD, k1, smooth_eps, exact_rho,
                   k4p, k4v, k4r, lin, sarg, delta)
            for f in range(nf):
                for c in range(2):
                    Pf[f, c] += dt / 6.0 * (dPf[f, c] + 2.0 * k2p[f, c] + 2.0 * k3p[f, c] + k4p[f, c])
                    Vf[f, c] += dt / 6.0 * (dVf[f, c] + 2.0 * k2v[f, c] + 2.0 * k3v[f, c] + k4v[f, c])
            for e in range(ne):
                rho_hat[e] += dt / 6.0 * (drho[e] + 2.0 * k2r[e] + 2.0 * k3r[e] + k4r[e])
        else:
            _uncertainty(t, ukind, uamp, uomega, udir, uconst, utimes, uvals, delta)
            for f in range(nf):
                for c in range(2):
                    a = sarg[f, c]
                    if smooth_eps > 0.0:
                        sg = a / (abs(a) + smooth_eps)
                    else:
                        sg = 0.0 if a == 0.0 else (1.0 if a > 0.0 else -1.0)
                    u = lin[f, c] + kD * sg + delta[c]
                    Pf[f, c] += dt * Vf[f, c]
                    Vf[f, c] += dt * u
            for e in range(ne):
                rho_hat[e] += dt * drho[e]

        # New state checks at t + dt.
        tn = t + dt
        _leader_state(tn, leader_kind, off0, rates, lp_static, p00, v00, lp, lv)
        for k in range(nl):
            X[k, 0] = lp[k, 0]; X[k, 1] = lp[k, 1]
        for k in range(nf):
            X[nl + k, 0] = Pf[k, 0]; X[nl + k, 1] = Pf[k, 1]
        for i in range(n - 1):
            for j in range(i + 1, n):
                d = math.hypot(X[j, 0] - X[i, 0], X[j, 1] - X[i, 1])
                if d < stats[_MIN_GAP]:
                    stats[_MIN_GAP] = d
                    stats[_GAP_I] = i + 1
                    stats[_GAP_J] = j + 1
                    stats[_GAP_STEP] = step0 + step + 1
                if d < coll_thresh:
                    stats[_FAIL_I] = i + 1
                    stats[_FAIL_J] = j + 1
                    stats[_FAIL_STEP] = step0 + step + 1
                    stats[_FAIL_D] = d
                    return _COLLIDED
        tx = p00[0] + v00[0] * tn
        ty = p00[1] + v00[1] * tn
        for i in range(n):
            d = math.hypot(X[i, 0] - tx, X[i, 1] - ty)
            if d < stats[_MIN_TGT]:
                stats[_MIN_TGT] = d
        for k in range(nf):
            if (abs(Pf[k, 0]) > blowup_limit or abs(Pf[k, 1]) > blowup_limit
                    or abs(Vf[k, 0]) > blowup_limit or abs(Vf[k, 1]) > blowup_limit):
                stats[_FAIL_STEP] = step0 + step + 1
                return _BLEW_UP
        for e in range(ne):
            if abs(rho_hat[e]) > blowup_limit:
                stats[_FAIL_STEP] = step0 + step + 1
                return _BLEW_UP
            if rho_hat[e] < 0.0:
                stats[_NEG_RHO] = 1.0
    return _OK


# --------------------------------------------------------------------------
# Kernel state wrapper
# --------------------------------------------------------------------------


@dataclass
class _KernelState:
    cs: CompiledScenario
    dt: float
    Pf: np.ndarray
    Vf: np.ndarray
    rho_hat: np.ndarray
    prev_phi: np.ndarray
    prev_turn: np.ndarray
    ring: np.ndarray
    ring_sum: np.ndarray
    pe_min: np.ndarray
    meta: np.ndarray
    stats: np.ndarray
    step_index: int = 0
    kernel_args: tuple = field(default=None, repr=False)

    @classmethod
    def create(cls, cs: CompiledScenario, dt: float, window_steps: int):
        sc = cs.scenario
        Pf = np.array(sc.follower_positions, dtype=float)
        Vf = np.array(sc.follower_velocities, dtype=float)
        rho_map = sc.rho_hat0_map()
        rho_hat = np.array([rho_map[e] for e in cs.edges], dtype=float)
        ne = cs.ne
        stats = np.zeros(10)
        stats[_MIN_GAP] = math.inf
        stats[_MIN_TGT] = math.inf
        state = cls(
            cs=cs,
            dt=dt,
            Pf=Pf,
            Vf=Vf,
            rho_hat=rho_hat,
            prev_phi=np.full((ne, 2), math.nan),
            prev_turn=np.full(ne, math.nan),
            ring=np.zeros((ne, max(window_steps, 1))),
            ring_sum=np.zeros(ne),
            pe_min=np.full(ne, math.inf),
            meta=np.zeros(1, dtype=np.int64),
            stats=stats,
        )
        gen = cs.generator
        unc = cs.uncertainty
        if isinstance(gen, CircularLeaderGenerator):
            leader_kind, off0, rates = 0, gen.offsets0, gen.rates
            lp_static = np.zeros_like(off0)
        else:
            leader_kind = 1
            off0 = np.zeros_like(gen.positions0)
            rates = np.zeros(len(gen.positions0))
            lp_static = gen.positions0
        ukind = {"zero": 0, "sinusoid": 1, "constant": 2, "piecewise": 3}[unc.kind]
        udir = unc.direction if unc.direction is not None else np.zeros(2)
        uconst = unc.value if unc.value is not None else np.zeros(2)
        utimes = unc.times if unc.times is not None else np.zeros(0)
        uvals = unc.values if unc.values is not None else np.zeros((0, 2))
        g = cs.gains
        state.kernel_args = (
            cs.ei, cs.ej, cs.wght, cs.n, cs.n_l,
            leader_kind, np.ascontiguousarray(off0, dtype=float), np.asarray(rates, dtype=float),
            np.ascontiguousarray(lp_static, dtype=float),
            np.asarray(gen.target_p0, dtype=float), np.asarray(gen.target_v0, dtype=float),
            ukind, float(unc.amplitude), float(unc.omega),
            np.asarray(udir, dtype=float), np.asarray(uconst, dtype=float),
            np.asarray(utimes, dtype=float), np.ascontiguousarray(uvals, dtype=float),
            g.k_p, g.k_v, g.k_delta, sc.k_1, sc.smooth_sgn_eps,
            sc.exact_rho_feed, sc.phi_dot_mode == "finite_difference",
            sc.method == "rk4",
            sc.collision_threshold, BLOWUP_LIMIT, max(window_steps, 1),
        )
        return state

    def advance(self, n_steps: int) -> None:
        status = _advance(
            self.step_index, n_steps, self.dt,
            self.Pf, self.Vf, self.rho_hat, self.prev_phi, self.prev_turn,
            self.ring, self.ring_sum, self.pe_min, self.meta, self.stats,
            *self.kernel_args,
        )
        if status == _COLLIDED:
            raise CollisionDetected(
                t=self.stats[_FAIL_STEP] * self.dt,
                pair=(int(self.stats[_FAIL_I]), int(self.stats[_FAIL_J])),
                distance=float(self.stats[_FAIL_D]),
            )
        if status == _BLEW_UP:
            raise NumericalBlowup(t=self.stats[_FAIL_STEP] * self.dt)
        self.step_index += n_steps

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    def world(self) -> WorldState:
        cs = self.cs
        t = self.t
        positions = np.vstack([cs.generator.positions(t), self.Pf.copy()])
        velocities = np.vstack([cs.generator.velocities(t), self.Vf.copy()])
        return WorldState(
            t=t,
            target_p=cs.generator.target_position(t),
            target_v=np.asarray(cs.generator.target_v0, dtype=float),
            positions=positions,
            velocities=velocities,
            estimator=EstimatorState(
                rho_hat={e: float(self.rho_hat[k]) for k, e in enumerate(cs.edges)},
                k_1=cs.scenario.k_1,
            ),
        )


def step(world: WorldState, cs: CompiledScenario, dt: float = None) -> WorldState:
    """Advance the world by one integration step.

    The entry state must be collision free.  Exact-sensing bearing rates
    are used for the single step regardless of history (finite-difference
    sensing needs the history that :func:`run` maintains).
    """
    sc = cs.scenario
    if dt is None:
        dt = sc.dt
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    gap, pair = collision_monitor(world.positions)
    if gap < sc.collision_threshold:
        raise CollisionDetected(t=world.t, pair=pair, distance=gap)

    window_steps = max(int(round(sc.sigma_omega / dt)), 1)
    ks = _KernelState.create(cs, dt, window_steps)
    # Seed from the supplied world instead of the scenario initials.
    ks.Pf[:] = world.positions[cs.n_l:]
    ks.Vf[:] = world.velocities[cs.n_l:]
    ks.rho_hat[:] = [world.estimator.rho_hat[e] for e in cs.edges]
    ks.step_index = int(round(world.t / dt))
    ks.advance(1)
    return ks.world()


# --------------------------------------------------------------------------
# Full runs: trace + summary
# --------------------------------------------------------------------------


@dataclass
class Trace:
    """Sampled time series with a fixed, versioned column order."""

    columns: list
    data: np.ndarray              # (n_samples, n_columns)
    version: str = "entrapsim-trace-v1"

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.version}\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.data:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


@dataclass
class RunResult:
    trace: Trace
    summary: dict
    world: WorldState


def trace_columns(cs: CompiledScenario) -> list:
    cols = ["t", "p0x", "p0y", "v0x", "v0y"]
    for a in range(1, cs.n + 1):
        cols += [f"px_{a}", f"py_{a}", f"vx_{a}", f"vy_{a}"]
    for f in range(cs.n_l + 1, cs.n + 1):
        cols += [f"ux_{f}", f"uy_{f}"]
    for (i, j) in cs.edges:
        cols += [f"rho_hat_{i}_{j}", f"rho_{i}_{j}", f"rho_tilde_{i}_{j}"]
    for (i, j) in cs.edges:
        cols += [f"pe_int_{i}_{j}"]
    for f in range(cs.n_l + 1, cs.n + 1):
        cols += [f"dp_{f}", f"dv_{f}"]
    cols += ["ef_norm", "v_c", "min_gap", "min_target_dist"]
    return cols


def desired_follower_states(cs: CompiledScenario, t: float):
    """Desired follower positions, velocities, accelerations at time t."""
    gen = cs.generator
    pose = fm.affine_fit(gen.positions(t), cs.config)
    rate = fm.affine_fit(gen.velocities(t), cs.config)
    accel = fm.affine_fit(gen.accelerations(t), cs.config)
    return (
        fm.desired_followers_affine(pose, cs.config),
        fm.desired_followers_affine(rate, cs.config),
        fm.desired_followers_affine(accel, cs.config),
    )


def resolve_accel_bound(cs: CompiledScenario):
    """Bound on the stacked desired follower acceleration used in gain checks.

    Preference order: the scenario's stated bound, else the operator-norm
    bound propagated from the leader generator.  Returns (value, source,
    operator_bound, leader_bound).
    """
    sc = cs.scenario
    leader_bound = sc.sup_vdot_l if sc.sup_vdot_l is not None else cs.generator.accel_bound()
    operator_bound = ctl.sup_follower_accel(cs.stress, leader_bound)
    if sc.sup_vdot_f is not None:
        return float(sc.sup_vdot_f), "stated", operator_bound, leader_bound
    return operator_bound, "operator_norm", operator_bound, leader_bound


def run(scenario: Scenario) -> RunResult:
    """Simulate the full closed loop and record the trace.

    Deterministic: identical scenarios produce bit-identical traces.
    Raises :class:`CollisionDetected` / :class:`NumericalBlowup` with the
    failure time on abort.
    """
    cs = compile_scenario(scenario)
    sc = scenario
    n_steps = int(round(sc.horizon / sc.dt))
    window_steps = max(int(round(sc.sigma_omega / sc.dt)), 1)
    ks = _KernelState.create(cs, sc.dt, window_steps)

    world0 = ks.world()
    gap0, pair0 = collision_monitor(world0.positions)
    if gap0 < sc.collision_threshold:
        raise CollisionDetected(t=0.0, pair=pair0, distance=gap0)
    ks.stats[_MIN_GAP] = gap0
    if pair0 is not None:
        ks.stats[_GAP_I], ks.stats[_GAP_J] = pair0
    ks.stats[_MIN_TGT] = float(
        np.hypot(*(world0.positions - world0.target_p).T).min()
    )

    # Certificate is opportunistic: runs proceed without one, with NaN
    # Lyapunov values and no envelope accounting.
    accel_bound, accel_source, operator_bound, leader_bound = resolve_accel_bound(cs)
    gain_report = ctl.validate_gains(cs.gains, cs.stress, accel_bound)
    cert = None
    if gain_report.passes:
        try:
            cert = ctl.stability_certificate(cs.gains, cs.stress)
        except ctl.GainConditionViolated:
            cert = None

    columns = trace_columns(cs)
    rows = []
    sup_vdot_f_emp = 0.0
    env_viol = 0
    env_checked = 0
    e0_norm = None
    initial = None

    def sample_row():
        nonlocal sup_vdot_f_emp, env_viol, env_checked, e0_norm, initial
        w = ks.world()
        t = w.t
        pf_star, vf_star, af_star = desired_follower_states(cs, t)
        dp = w.positions[cs.n_l:] - pf_star
        dv = w.velocities[cs.n_l:] - vf_star
        dp_norms = np.hypot(dp[:, 0], dp[:, 1])
        dv_norms = np.hypot(dv[:, 0], dv[:, 1])
        e_f = np.concatenate([dp.ravel(), dv.ravel()])
        ef_norm = float(np.linalg.norm(e_f))
        sup_vdot_f_emp = max(sup_vdot_f_emp, float(np.linalg.norm(af_star)))
        if e0_norm is None:
            e0_norm = ef_norm
        v_c = cert.lyapunov_value(e_f) if cert is not None else math.nan
        if cert is not None:
            env_checked += 1
            if ef_norm > cert.envelope(e0_norm, t) * (1.0 + 1e-9):
                env_viol += 1
        u = follower_controls(w, cs)
        rho_true = np.array(
            [np.hypot(*(w.positions[j - 1] - w.positions[i - 1])) for (i, j) in cs.edges]
        )
        gap, _ = collision_monitor(w.positions)
        tgt = float(np.hypot(*(w.positions - w.target_p).T).min())
        pe_vals = np.where(ks.meta[0] >= window_steps, ks.ring_sum, math.nan)
        row = [t, *w.target_p, *w.target_v]
        for a in range(cs.n):
            row += [w.positions[a, 0], w.positions[a, 1],
                    w.velocities[a, 0], w.velocities[a, 1]]
        for f in range(cs.n_f):
            row += [u[f, 0], u[f, 1]]
        for k in range(cs.ne):
            row += [ks.rho_hat[k], rho_true[k], ks.rho_hat[k] - rho_true[k]]
        row += list(pe_vals)
        for f in range(cs.n_f):
            row += [dp_norms[f], dv_norms[f]]
        row += [ef_norm, v_c, gap, tgt]
        rows.append(row)
        metrics = {
            "dp_norm": float(np.linalg.norm(dp)),
            "dv_norm": float(np.linalg.norm(dv)),
            "ef_norm": ef_norm,
            "max_abs_rho_tilde": float(np.abs(ks.rho_hat - rho_true).max()),
            "min_gap": gap,
        }
        if initial is None:
            initial = metrics
        return metrics

    terminal = None
    if n_steps > 0:
        terminal = sample_row()
        full_chunks, remainder = divmod(n_steps, sc.sample_every)
        for _ in range(full_chunks):
            ks.advance(sc.sample_every)
            terminal = sample_row()
        if remainder:
            ks.advance(remainder)
            terminal = sample_row()
    else:
        # Zero horizon: empty trace body, summary of the initial state only.
        w = ks.world()
        pf_star, vf_star, _ = desired_follower_states(cs, 0.0)
        dp = w.positions[cs.n_l:] - pf_star
        dv = w.velocities[cs.n_l:] - vf_star
        rho_true = np.array(
            [np.hypot(*(w.positions[j - 1] - w.positions[i - 1])) for (i, j) in cs.edges]
        )
        initial = terminal = {
            "dp_norm": float(np.linalg.norm(dp)),
            "dv_norm": float(np.linalg.norm(dv)),
            "ef_norm": float(np.hypot(np.linalg.norm(dp), np.linalg.norm(dv))),
            "max_abs_rho_tilde": float(np.abs(ks.rho_hat - rho_true).max()),
            "min_gap": gap0,
        }

    pe_report = {}
    for k, (i, j) in enumerate(cs.edges):
        if ks.meta[0] >= window_steps:
            min_int = float(ks.pe_min[k])
            verdict = (
                PEStatus.SATISFIED if min_int > sc.eps_omega else PEStatus.NOT_SATISFIED
            )
        else:
            min_int = None
            verdict = PEStatus.INDETERMINATE
        pe_report[f"{i}-{j}"] = {
            "min_integral": min_int,
            "threshold": sc.eps_omega,
            "verdict": verdict.value,
        }

    warnings = []
    if ks.stats[_NEG_RHO] > 0.0:
        warnings.append(
            "a distance estimate went negative during the run; "
            "its displacement estimate pointed away from the neighbor"
        )

    summary = {
        "scenario": sc.name,
        "n": cs.n,
        "n_l": cs.n_l,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "sample_every": sc.sample_every,
        "method": sc.method,
        "phi_dot_mode": sc.phi_dot_mode,
        "exact_rho_feed": sc.exact_rho_feed,
        "initial": initial,
        "terminal": terminal,
        "ratios": {
            "dp": (initial["dp_norm"] / terminal["dp_norm"]
                   if terminal["dp_norm"] > 0 else math.inf),
            "dv": (initial["dv_norm"] / terminal["dv_norm"]
                   if terminal["dv_norm"] > 0 else math.inf),
        },
        "min_gap": {
            "value": float(ks.stats[_MIN_GAP]),
            "pair": [int(ks.stats[_GAP_I]), int(ks.stats[_GAP_J])],
            "t": float(ks.stats[_GAP_STEP]) * sc.dt,
        },
        "min_target_distance": float(ks.stats[_MIN_TGT]),
        "pe_estimator": pe_report,
        "gain_check": {
            "passes": gain_report.passes,
            "k_delta_margin": gain_report.k_delta_margin,
            "k_v_margin": gain_report.k_v_margin,
            "accel_bound_used": accel_bound,
            "accel_bound_source": accel_source,
            "accel_operator_bound": operator_bound,
            "leader_accel_bound": leader_bound,
            "accel_empirical_sup": sup_vdot_f_emp,
        },
        "envelope": {
            "available": cert is not None,
            "coeff": cert.envelope_coeff if cert else None,
            "decay_rate": cert.decay_rate if cert else None,
            "e0_norm": e0_norm,
            "violations": env_viol if cert else None,
            "checked_samples": env_checked if cert else None,
        },
        "warnings": warnings,
    }
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(columns)))
    return RunResult(trace=Trace(columns=columns, data=data), summary=summary, world=ks.world())


# --------------------------------------------------------------------------
# Desired-trajectory analyses (no follower dynamics)
# --------------------------------------------------------------------------


def min_desired_gap(cs: CompiledScenario, horizon: float, sample_dt: float = 0.01) -> float:
    """Minimum desired inter-agent separation over a sampled horizon."""
    best = math.inf
    n_samples = max(int(round(horizon / sample_dt)), 1)
    for k in range(n_samples + 1):
        t = k * sample_dt
        leaders = cs.generator.positions(t)
        pose = fm.affine_fit(leaders, cs.config)
        pts = np.vstack([leaders, fm.desired_followers_affine(pose, cs.config)])
        gap, _ = collision_monitor(pts)
        best = min(best, gap)
    return best


def leader_excitation_report(scenario: Scenario, dt: float = None) -> dict:
    """Windowed-integral check of the designed trajectories, per graph edge.

    Simulates desired states only: fits the pose rate from the leader
    velocities, forms each edge's desired relative-velocity direction, and
    integrates the norm of its finite-difference rate over sliding windows
    of length ``sigma_v``.  The direction rate is zeroed whenever the
    relative speed vanishes at either end of a difference step.
    """
    if dt is None:
        dt = max(scenario.dt, 1e-3)
    cs = compile_scenario(scenario)
    sc = scenario
    n_steps = int(round(sc.horizon / dt))
    W = int(round(sc.sigma_v / dt))
    edges = cs.stress.edges
    r = cs.config.points
    gammas = np.zeros((n_steps + 1, len(edges), 2))
    speeds = np.zeros((n_steps + 1, len(edges)))
    for k in range(n_steps + 1):
        t = k * dt
        rate_pose = fm.affine_fit(cs.generator.velocities(t), cs.config)
        for e, (i, j) in enumerate(edges):
            z, gamma = fm.desired_relative_velocity(rate_pose.A, r[i - 1], r[j - 1])
            gammas[k, e] = gamma
            speeds[k, e] = z
    gdot = np.zeros((n_steps, len(edges)))
    moving = (speeds[:-1] > 0.0) & (speeds[1:] > 0.0)
    diff = np.linalg.norm(np.diff(gammas, axis=0), axis=2) / dt
    gdot[moving] = diff[moving]
    report = {}
    for e, (i, j) in enumerate(edges):
        series = gdot[:, e]
        if n_steps >= 2:
            incs = 0.5 * (series[:-1] + series[1:]) * dt
            csum = np.concatenate([[0.0], np.cumsum(incs)])
        else:
            incs = np.zeros(0)
            csum = np.zeros(1)
        if len(incs) >= W:
            windows = csum[W:] - csum[:-W]
            min_int = float(windows.min())
            verdict = PEStatus.SATISFIED if min_int > sc.eps_v else PEStatus.NOT_SATISFIED
        else:
            min_int = None
            verdict = PEStatus.INDETERMINATE
        report[f"{i}-{j}"] = {
            "min_integral": min_int,
            "threshold": sc.eps_v,
            "verdict": verdict.value,
        }
    return report
