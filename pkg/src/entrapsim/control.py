"""The robust estimation-based follower controller and its certificates.

The control law per follower is a stress-weighted PD term on estimated
displacements and relative velocities, plus a signum term sized to
dominate the bounded acceleration uncertainty and the desired follower
accelerations.  The certificate functions check the sufficient gain
conditions, assemble the quadratic-form matrices behind the exponential
stability envelope, and evaluate the initial-condition inequality that
guarantees collision-free motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formation import StressMatrix, SingularSystem
from .sensing import EdgeObservation, displacement_estimate


class ControlError(ValueError):
    pass


class NoNeighbors(ControlError):
    """A follower with an empty neighborhood is a scenario error."""


class GainConditionViolated(ControlError):
    """The quadratic-form matrices are not positive definite."""


class InvalidClearance(ControlError):
    """The clearance radius is outside (0, min desired gap)."""


@dataclass(frozen=True)
class ControlGains:
    k_p: float
    k_v: float
    k_delta: float
    delta_bar: float

    def __post_init__(self):
        for name in ("k_p", "k_v", "k_delta", "delta_bar"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ControlError(f"{name} must be a positive finite number, got {v}")


def signum(x: np.ndarray, smooth_eps: float = 0.0) -> np.ndarray:
    """Componentwise signum with sgn(0) = 0.

    With ``smooth_eps > 0`` returns the continuous approximation
    ``x / (|x| + eps)`` for chattering studies; the default is the exact
    discontinuous law.
    """
    x = np.asarray(x, dtype=float)
    if smooth_eps > 0.0:
        return x / (np.abs(x) + smooth_eps)
    return np.sign(x)


def control_input(
    neighbors: list, gains: ControlGains, smooth_eps: float = 0.0
) -> np.ndarray:
    """Acceleration command for one follower.

    ``neighbors`` holds ``(l_ij, rho_hat_ij, EdgeObservation)`` triples for
    every neighbor.  The command is
    ``sum l_ij (k_p p_hat + k_v v) + k_delta sgn[sum l_ij (p_hat + v)]``
    with ``p_hat = rho_hat * phi``.
    """
    if not neighbors:
        raise NoNeighbors("follower has no neighbors")
    lin = np.zeros(2)
    switch_arg = np.zeros(2)
    for l_ij, rho_hat, obs in neighbors:
        if not isinstance(obs, EdgeObservation):
            raise ControlError("neighbor observations must be EdgeObservation")
        p_hat = displacement_estimate(rho_hat, obs.phi)
        lin += l_ij * (gains.k_p * p_hat + gains.k_v * obs.v_ij)
        switch_arg += l_ij * (p_hat + obs.v_ij)
    return lin + gains.k_delta * signum(switch_arg, smooth_eps)


@dataclass(frozen=True)
class GainReport:
    k_p_margin: float
    k_v_margin: float
    k_delta_margin: float
    lambda_min_ff: float
    k_v_required: float
    k_delta_required: float

    @property
    def k_p_ok(self) -> bool:
        return self.k_p_margin > 0.0

    @property
    def k_v_ok(self) -> bool:
        return self.k_v_margin > 0.0

    @property
    def k_delta_ok(self) -> bool:
        return self.k_delta_margin > 0.0

    @property
    def passes(self) -> bool:
        return self.k_p_ok and self.k_v_ok and self.k_delta_ok


def validate_gains(
    gains: ControlGains, stress: StressMatrix, sup_vdot_f: float
) -> GainReport:
    """Check the sufficient gain conditions and report margins.

    Requires ``k_p > 0``, ``k_v`` above the inverse of the smallest
    follower-block eigenvalue, and the signum gain above the uncertainty
    bound plus ``sup_vdot_f``, an upper bound on the stacked desired
    follower acceleration norm (strict inequalities).
    """
    lam_min = float(np.linalg.eigvalsh(stress.follower_block())[0])
    k_v_required = math.inf if lam_min <= 0.0 else 1.0 / lam_min
    k_delta_required = gains.delta_bar + float(sup_vdot_f)
    return GainReport(
        k_p_margin=gains.k_p,
        k_v_margin=gains.k_v - k_v_required,
        k_delta_margin=gains.k_delta - k_delta_required,
        lambda_min_ff=lam_min,
        k_v_required=k_v_required,
        k_delta_required=k_delta_required,
    )


def sup_follower_accel(stress: StressMatrix, sup_vdot_l: float) -> float:
    """Operator-norm bound on the stacked follower desired accelerations.

    The follower desired accelerations are the leader ones mapped through
    ``-L_ff^-1 L_fl``; the spectral norm of that map times a bound on the
    stacked leader acceleration bounds the follower side for all time.
    Can be much looser than the empirical supremum when the follower block
    is ill-conditioned.
    """
    lff = stress.follower_block()
    if np.linalg.eigvalsh(lff)[0] <= 0.0:
        raise SingularSystem("follower block must be positive definite")
    gain = float(np.linalg.norm(np.linalg.solve(lff, stress.coupling_block()), 2))
    return gain * float(sup_vdot_l)


@dataclass(frozen=True)
class StabilityCertificate:
    P: np.ndarray
    Q: np.ndarray
    lambda_min_P: float
    lambda_max_P: float
    lambda_min_Q: float
    decay_rate: float
    envelope_coeff: float

    def envelope(self, e0_norm: float, t: np.ndarray) -> np.ndarray:
        """Exponential bound on the stacked error norm from ``e0_norm``."""
        return self.envelope_coeff * e0_norm * np.exp(-self.decay_rate * np.asarray(t))

    def lyapunov_value(self, e_f: np.ndarray) -> float:
        e_f = np.asarray(e_f, dtype=float)
        return 0.5 * float(e_f @ self.P @ e_f)


def _schur_pd(lff_bar: np.ndarray, gains: ControlGains) -> tuple:
    """Schur-complement definiteness checks for the two quadratic forms."""
    lam = np.linalg.eigvalsh(lff_bar)
    lam_min = lam[0]
    # P > 0 iff L > 0 and (k_p + k_v) L^2 - L > 0 (complement of the L block).
    p_ok = lam_min > 0.0 and (gains.k_p + gains.k_v) * lam_min**2 - lam_min > 0.0
    # Q is block diagonal: both blocks must be positive definite.
    q_ok = lam_min > 0.0 and gains.k_v * lam_min**2 - lam_min > 0.0
    return bool(p_ok), bool(q_ok)


def stability_certificate(gains: ControlGains, stress: StressMatrix) -> StabilityCertificate:
    """Assemble the quadratic forms behind the exponential error envelope.

    ``P`` weights the Lyapunov function, ``Q`` its decrease; positive
    definiteness is verified twice (Schur conditions and eigenvalues) and
    the two checks must agree.  The envelope is
    ``sqrt(lmax(P)/lmin(P)) * ||e(0)|| * exp(-lmin(Q)/lmax(P) t)``.
    """
    lff_bar = np.kron(stress.follower_block(), np.eye(2))
    sq = lff_bar @ lff_bar
    nf2 = lff_bar.shape[0]
    P = np.block([[(gains.k_p + gains.k_v) * sq, lff_bar], [lff_bar, lff_bar]])
    Q = np.block(
        [
            [gains.k_p * sq, np.zeros((nf2, nf2))],
            [np.zeros((nf2, nf2)), gains.k_v * sq - lff_bar],
        ]
    )
    ev_p = np.linalg.eigvalsh(P)
    ev_q = np.linalg.eigvalsh(Q)
    eig_p_ok, eig_q_ok = bool(ev_p[0] > 0.0), bool(ev_q[0] > 0.0)
    schur_p_ok, schur_q_ok = _schur_pd(lff_bar, gains)
    if eig_p_ok != schur_p_ok or eig_q_ok != schur_q_ok:
        raise GainConditionViolated(
            "definiteness checks disagree between Schur and eigenvalue routes"
        )
    if not (eig_p_ok and eig_q_ok):
        raise GainConditionViolated(
            f"quadratic forms are not positive definite "
            f"(lambda_min P = {ev_p[0]:.3e}, lambda_min Q = {ev_q[0]:.3e})"
        )
    return StabilityCertificate(
        P=P,
        Q=Q,
        lambda_min_P=float(ev_p[0]),
        lambda_max_P=float(ev_p[-1]),
        lambda_min_Q=float(ev_q[0]),
        decay_rate=float(ev_q[0] / ev_p[-1]),
        envelope_coeff=float(np.sqrt(ev_p[-1] / ev_p[0])),
    )


@dataclass(frozen=True)
class AvoidanceCertificate:
    c_e: float
    c_c: float
    min_desired_gap: float
    lhs: float
    rhs: float

    @property
    def passes(self) -> bool:
        return self.lhs <= self.rhs


def avoidance_certificate(
    e_f0_norm: float,
    rho_tilde0: dict,
    gains: ControlGains,
    stress: StressMatrix,
    cert: StabilityCertificate,
    min_desired_gap: float,
    c_c: float,
) -> AvoidanceCertificate:
    """Evaluate the sufficient initial-condition bound for collision-free motion.

    ``rho_tilde0`` maps each directed edge (follower, neighbor) to its
    initial distance-estimate error.  The perturbation budget
    ``c_e = sum_i sum_j (k_p l_ij |rho_tilde_ij(0)| + 2 k_delta)`` never
    vanishes because of the 2 k_delta terms, which makes the bound very
    conservative for dense graphs; it is reported unmodified and the engine
    separately reports the empirical minimum distance.
    """
    if not (0.0 < c_c < min_desired_gap):
        raise InvalidClearance(
            f"need 0 < c_c < min desired gap, got c_c={c_c}, gap={min_desired_gap}"
        )
    c_e = 0.0
    for (i, j), rt0 in rho_tilde0.items():
        c_e += gains.k_p * stress.weight(i, j) * abs(float(rt0)) + 2.0 * gains.k_delta
    lhs = max(
        cert.envelope_coeff * float(e_f0_norm),
        cert.lambda_max_P * c_e / (2.0 * cert.lambda_min_Q),
    )
    rhs = min_desired_gap - c_c
    return AvoidanceCertificate(
        c_e=c_e, c_c=c_c, min_desired_gap=min_desired_gap, lhs=lhs, rhs=rhs
    )
