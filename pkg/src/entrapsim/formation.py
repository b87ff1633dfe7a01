"""Nominal configuration, stress-matrix algebra, and affine maneuvers.

A formation is described by a constant configuration ``r`` (one nominal
point per agent, leaders first) plus a signed-weight stress matrix whose
kernel contains the configuration.  A time-varying affine pose
``p_i(t) = A(t) r_i + b(t)`` then moves the whole formation; the follower
part of that pose is equally determined by the leaders through the stress
matrix, which is what the distributed controller exploits.

Agent ids are 1-based everywhere in this module: leaders are ``1..n_l``,
followers ``n_l+1..n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import require_finite


class FormationError(ValueError):
    pass


class DimensionMismatch(FormationError):
    pass


class DegenerateLeaderConfiguration(FormationError):
    """Leader nominal points do not affinely span the plane."""


class SingularSystem(FormationError):
    """The follower block of the stress matrix is not invertible."""


# Condition number above which the leader moment matrix counts as singular.
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Configuration:
    """Nominal agent coordinates with the leader/follower split.

    ``points`` has one row per agent; the first ``n_l`` rows are leaders.
    """

    points: np.ndarray
    n_l: int

    def __post_init__(self):
        pts = require_finite(np.asarray(self.points, dtype=float), "configuration")
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DimensionMismatch(f"configuration must be (n, 2), got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if not (3 <= self.n_l <= len(pts)):
            raise DimensionMismatch(
                f"need n >= n_l >= 3 in 2D, got n={len(pts)}, n_l={self.n_l}"
            )

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def n_f(self) -> int:
        return self.n - self.n_l

    @property
    def leaders(self) -> np.ndarray:
        return self.points[: self.n_l]

    @property
    def followers(self) -> np.ndarray:
        return self.points[self.n_l:]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def leader_centroid(self) -> np.ndarray:
        return self.leaders.mean(axis=0)

    def leader_offsets(self) -> np.ndarray:
        """Leader nominal points relative to their centroid."""
        return self.leaders - self.leader_centroid

    def leader_moment_matrix(self) -> np.ndarray:
        off = self.leader_offsets()
        return off.T @ off


@dataclass(frozen=True)
class StressMatrix:
    """Symmetric signed edge weights over the formation graph.

    ``weights`` maps undirected edges ``(i, j)`` with ``i < j`` (1-based
    agent ids) to the signed weight; positive weights attract, negative
    repel.  The dense matrix has ``-w`` off-diagonal and neighbor row sums
    on the diagonal, so every row sums to zero.
    """

    weights: dict = field(repr=False)
    n: int
    n_l: int

    def __post_init__(self):
        canon = {}
        for (i, j), w in self.weights.items():
            if i == j or not (1 <= i <= self.n and 1 <= j <= self.n):
                raise DimensionMismatch(f"edge ({i},{j}) out of range for n={self.n}")
            key = (min(i, j), max(i, j))
            if key in canon and canon[key] != float(w):
                raise DimensionMismatch(f"conflicting weights for edge {key}")
            canon[key] = float(w)
        object.__setattr__(self, "weights", canon)
        if not (0 < self.n_l < self.n):
            raise DimensionMismatch(f"bad leader count {self.n_l} for n={self.n}")

    @property
    def edges(self) -> list:
        return sorted(self.weights)

    def weight(self, i: int, j: int) -> float:
        return self.weights.get((min(i, j), max(i, j)), 0.0)

    def neighbors(self, i: int) -> list:
        out = []
        for (a, b) in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def matrix(self) -> np.ndarray:
        L = np.zeros((self.n, self.n))
        for (i, j), w in self.weights.items():
            L[i - 1, j - 1] -= w
            L[j - 1, i - 1] -= w
            L[i - 1, i - 1] += w
            L[j - 1, j - 1] += w
        return L

    def follower_block(self) -> np.ndarray:
        return self.matrix()[self.n_l:, self.n_l:]

    def coupling_block(self) -> np.ndarray:
        """Follower-to-leader block (rows: followers, cols: leaders)."""
        return self.matrix()[self.n_l:, : self.n_l]

    def scaled(self, factor: float) -> "StressMatrix":
        return StressMatrix(
            weights={e: factor * w for e, w in self.weights.items()},
            n=self.n,
            n_l=self.n_l,
        )


@dataclass(frozen=True)
class AffinePose:
    """A 2x2 transformation plus translation applied to the configuration."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = require_finite(np.asarray(self.A, dtype=float), "pose matrix")
        b = require_finite(np.asarray(self.b, dtype=float), "pose offset")
        if A.shape != (2, 2) or b.shape != (2,):
            raise DimensionMismatch(f"pose must be (2,2) and (2,), got {A.shape}, {b.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.A.T + self.b


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the stress/configuration compatibility checks."""

    equilibrium_residual: float
    lambda_min_ff: float
    follower_block_pd: bool
    coupling_nonzero: bool
    moment_condition_number: float
    tol_eq: float

    @property
    def passes(self) -> bool:
        return (
            self.equilibrium_residual <= self.tol_eq
            and self.follower_block_pd
            and self.coupling_nonzero
        )


def equilibrium_residual(stress: StressMatrix, config: Configuration) -> np.ndarray:
    """Per-agent residual of the stress equilibrium, shape (n, 2)."""
    return stress.matrix() @ config.points


def validate_assumption1(
    stress: StressMatrix, config: Configuration, tol_eq: float = 1e-2
) -> ValidationReport:
    """Check that the stress matrix is compatible with the configuration.

    Three conditions: the configuration lies in the kernel of the stress
    matrix (within ``tol_eq``, sized for published weights rounded to four
    digits), the follower block is positive definite, and the
    follower-leader coupling is nonzero.
    """
    if stress.n != config.n or stress.n_l != config.n_l:
        raise DimensionMismatch(
            f"stress is for n={stress.n}/n_l={stress.n_l}, "
            f"configuration has n={config.n}/n_l={config.n_l}"
        )
    res = float(np.abs(equilibrium_residual(stress, config)).max())
    lff = stress.follower_block()
    lam_min = float(np.linalg.eigvalsh(lff)[0]) if len(lff) else float("nan")
    moment = config.leader_moment_matrix()
    cond = float(np.linalg.cond(moment))
    return ValidationReport(
        equilibrium_residual=res,
        lambda_min_ff=lam_min,
        follower_block_pd=bool(lam_min > 0.0),
        coupling_nonzero=bool(np.any(stress.coupling_block() != 0.0)),
        moment_condition_number=cond,
        tol_eq=tol_eq,
    )


def affine_fit(leader_points: np.ndarray, config: Configuration) -> AffinePose:
    """Fit the affine pose that carries the leader configuration onto
    ``leader_points``.

    The fit is the closed form ``A = (sum p_i rt_i^T)(sum rt_i rt_i^T)^-1``
    over leaders, with ``rt_i`` the leader nominal offsets from their
    centroid, and ``b`` the centroid mismatch.  Because the formula is
    linear in the points it also fits velocity and acceleration poses.
    """
    pts = require_finite(np.asarray(leader_points, dtype=float), "leader points")
    if pts.shape != (config.n_l, 2):
        raise DimensionMismatch(
            f"expected {config.n_l} leader points, got shape {pts.shape}"
        )
    moment = config.leader_moment_matrix()
    if np.linalg.cond(moment) > _COND_LIMIT:
        raise DegenerateLeaderConfiguration(
            "leader nominal points do not affinely span the plane"
        )
    off = config.leader_offsets()
    A = pts.T @ off @ np.linalg.inv(moment)
    b = pts.mean(axis=0) - A @ config.leader_centroid
    return AffinePose(A=A, b=b)


def desired_followers_affine(pose: AffinePose, config: Configuration) -> np.ndarray:
    """Follower desired positions under the affine pose, shape (n_f, 2)."""
    return pose.apply(config.followers)


def desired_followers_stress(stress: StressMatrix, leader_points: np.ndarray) -> np.ndarray:
    """Follower positions solved from the stress relation.

    Solves ``L_ff p_f = -L_fl p_l`` (per coordinate).  Must agree with the
    affine route whenever the leaders sit on an exact affine pose of the
    configuration; the two routes are kept as independent implementations
    so they can check each other.
    """
    pts = require_finite(np.asarray(leader_points, dtype=float), "leader points")
    n_f = stress.n - stress.n_l
    if pts.shape != (stress.n_l, 2):
        raise DimensionMismatch(
            f"expected {stress.n_l} leader points, got shape {pts.shape}"
        )
    lff = stress.follower_block()
    lfl = stress.coupling_block()
    if n_f and abs(np.linalg.det(lff)) < 1e-14 * max(1.0, np.abs(lff).max()) ** n_f:
        raise SingularSystem("follower block of the stress matrix is singular")
    return np.linalg.solve(lff, -lfl @ pts)


def formation_center(pose: AffinePose, config: Configuration) -> np.ndarray:
    """Center of the posed formation: ``A r_bar + b``.

    Equals the arithmetic mean of all desired agent positions.
    """
    return pose.A @ config.centroid + pose.b


def desired_relative_velocity(
    A_dot: np.ndarray, r_i: np.ndarray, r_j: np.ndarray
) -> tuple:
    """Desired relative velocity of edge (i, j), split into speed and direction.

    The relative velocity is ``A_dot (r_j - r_i)``, a weighted combination
    of the columns of the pose rate.  Returns ``(z, gamma)`` with
    ``z = ||v||`` and ``gamma`` the unit direction, or ``gamma = 0`` when
    the speed vanishes.
    """
    A_dot = require_finite(np.asarray(A_dot, dtype=float), "pose rate")
    v = A_dot @ (np.asarray(r_j, dtype=float) - np.asarray(r_i, dtype=float))
    z = float(np.hypot(v[0], v[1]))
    if z == 0.0:
        return 0.0, np.zeros(2)
    return z, v / z


def synthesize_stress(
    edges: list, config: Configuration, scale: float = 1.0
) -> StressMatrix:
    """Fit stress weights for a given graph by least squares.

    Finds the weight vector (up to sign and scale) that minimizes the
    equilibrium residual over the given edge list, via the smallest
    singular vector of the constraint matrix.  The sign is chosen so the
    follower block leans positive definite, then the result is scaled so
    its largest |weight| equals ``scale``.  Plumbing for users who want a
    stress for their own configuration instead of a published one.
    """
    edges = [(min(i, j), max(i, j)) for i, j in edges]
    if len(set(edges)) != len(edges):
        raise DimensionMismatch("duplicate edges in stress synthesis")
    m = len(edges)
    C = np.zeros((2 * config.n, m))
    for e, (i, j) in enumerate(edges):
        d = config.points[i - 1] - config.points[j - 1]
        C[2 * (i - 1): 2 * i, e] += d
        C[2 * (j - 1): 2 * j, e] -= d
    _, _, vt = np.linalg.svd(C)
    w = vt[-1]
    candidate = StressMatrix(weights=dict(zip(edges, w)), n=config.n, n_l=config.n_l)
    if float(np.trace(candidate.follower_block())) < 0.0:
        w = -w
    w = w * (scale / np.abs(w).max())
    return StressMatrix(weights=dict(zip(edges, w)), n=config.n, n_l=config.n_l)
