"""Per-edge sensing model, the bearing-based distance estimator, and
persistent-excitation monitors.

Each follower observes, per neighbor: the bearing, the bearing rate, and
the relative velocity.  From those it integrates a scalar distance
estimate whose error contracts whenever the bearing keeps turning; the
windowed-integral monitors quantify exactly that "keeps turning" condition
for both the measured bearings and the designed leader trajectories.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import perp, require_finite


@dataclass(frozen=True)
class EdgeObservation:
    """What one follower senses about one neighbor.

    ``phi`` unit bearing toward the neighbor, ``phi_dot`` its rate
    (orthogonal to ``phi`` by construction), ``v_ij`` relative velocity
    of the neighbor with respect to the observer.
    """

    phi: np.ndarray
    phi_dot: np.ndarray
    v_ij: np.ndarray

    def __post_init__(self):
        phi = require_finite(np.asarray(self.phi, dtype=float), "phi")
        phi_dot = require_finite(np.asarray(self.phi_dot, dtype=float), "phi_dot")
        v_ij = require_finite(np.asarray(self.v_ij, dtype=float), "v_ij")
        if abs(float(np.hypot(phi[0], phi[1])) - 1.0) > 1e-9:
            raise ValueError(f"bearing must be unit length, got {phi}")
        # tolerance scales with the rate magnitude: the projection's
        # cancellation residue is proportional to it
        tol = 1e-9 * max(1.0, float(np.hypot(phi_dot[0], phi_dot[1])))
        if abs(float(phi @ phi_dot)) > tol:
            raise ValueError("bearing rate must be orthogonal to the bearing")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "phi_dot", phi_dot)
        object.__setattr__(self, "v_ij", v_ij)


@dataclass
class EstimatorState:
    """Distance estimates per directed edge (follower, neighbor)."""

    rho_hat: dict
    k_1: float

    def __post_init__(self):
        if not (self.k_1 > 0.0 and math.isfinite(self.k_1)):
            raise ValueError(f"estimator gain must be > 0, got {self.k_1}")
        for e, v in self.rho_hat.items():
            if not math.isfinite(v):
                raise ValueError(f"non-finite distance estimate on edge {e}")


def estimator_rhs(rho_hat_ij: float, obs: EdgeObservation, k_1: float) -> float:
    """Time derivative of one distance estimate.

    Radial speed minus a correction that vanishes exactly when the
    estimate times the bearing turn rate matches the tangential speed,
    i.e. when the estimate equals the true distance.  No clamping: the
    estimate may transiently take any real value.
    """
    if not k_1 > 0.0:
        raise ValueError(f"estimator gain must be > 0, got {k_1}")
    pp = perp(obs.phi)
    turn = abs(float(pp @ obs.phi_dot))
    tangential = abs(float(pp @ obs.v_ij))
    radial = float(obs.phi @ obs.v_ij)
    return radial - k_1 * (rho_hat_ij * turn - tangential)


def displacement_estimate(rho_hat_ij: float, phi: np.ndarray) -> np.ndarray:
    """Estimated displacement toward the neighbor: ``rho_hat * phi``.

    A negative transient estimate passes through (the estimator imposes no
    projection); the result then points away from the neighbor.
    """
    return float(rho_hat_ij) * np.asarray(phi, dtype=float)


class PEStatus(enum.Enum):
    SATISFIED = "satisfied"
    NOT_SATISFIED = "not_satisfied"
    INDETERMINATE = "indeterminate"


@dataclass
class PEWindow:
    """Sliding-window integral with a persistent-excitation threshold.

    Accumulates an integrand by trapezoidal rule and reports whether the
    integral over the most recent full window of length ``sigma`` exceeds
    ``threshold``.  Before one full window has elapsed the verdict is
    indeterminate.  ``min_integral`` tracks the worst full window seen,
    which is what a for-every-window condition actually needs.
    """

    sigma: float
    threshold: float
    _elapsed: float = field(default=0.0, repr=False)
    _prev_value: float = field(default=None, repr=False)
    _chunks: deque = field(default_factory=deque, repr=False)
    _integral: float = field(default=0.0, repr=False)
    _min_integral: float = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.sigma > 0.0 and self.threshold > 0.0):
            raise ValueError("window length and threshold must be positive")

    @property
    def integral(self) -> float:
        """Integral over the trailing window (grows from 0 while filling)."""
        return self._integral

    @property
    def min_integral(self):
        """Smallest full-window integral seen so far, or None."""
        return self._min_integral

    @property
    def full(self) -> bool:
        return self._elapsed >= self.sigma - 1e-12

    def update(self, value: float, dt: float) -> PEStatus:
        if dt <= 0.0:
            raise ValueError(f"dt must be > 0, got {dt}")
        value = float(value)
        if self._prev_value is None:
            # First sample opens the window; no area yet.
            self._prev_value = value
            return self.status()
        inc = 0.5 * (self._prev_value + value) * dt
        self._prev_value = value
        self._chunks.append((dt, inc))
        self._integral += inc
        self._elapsed += dt
        # Evict area older than the window.
        while self._elapsed > self.sigma + 1e-12:
            old_dt, old_inc = self._chunks.popleft()
            self._elapsed -= old_dt
            self._integral -= old_inc
        if self.full:
            if self._min_integral is None or self._integral < self._min_integral:
                self._min_integral = self._integral
        return self.status()

    def status(self) -> PEStatus:
        if not self.full:
            return PEStatus.INDETERMINATE
        if self._integral > self.threshold:
            return PEStatus.SATISFIED
        return PEStatus.NOT_SATISFIED

    def verdict(self) -> PEStatus:
        """For-every-window verdict over the whole run so far."""
        if self._min_integral is None:
            return PEStatus.INDETERMINATE
        if self._min_integral > self.threshold:
            return PEStatus.SATISFIED
        return PEStatus.NOT_SATISFIED


def pe_estimator_update(window: PEWindow, obs: EdgeObservation, dt: float) -> PEStatus:
    """Feed one bearing observation into an estimator-excitation window.

    The integrand is the absolute bearing turn rate; the estimator error
    contracts at exactly this rate.
    """
    turn = abs(float(perp(obs.phi) @ obs.phi_dot))
    return window.update(turn, dt)


def pe_leader_update(window: PEWindow, gamma_dot: np.ndarray, dt: float) -> PEStatus:
    """Feed one desired-direction rate sample into a trajectory window.

    ``gamma_dot`` is the (finite-differenced) rate of the desired relative
    velocity direction for one edge; by convention it is zero whenever the
    desired relative speed vanishes at either end of the difference step.
    """
    g = np.asarray(gamma_dot, dtype=float)
    return window.update(float(np.hypot(g[0], g[1])), dt)
