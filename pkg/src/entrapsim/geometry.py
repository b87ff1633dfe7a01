"""2D vector and bearing primitives.

Everything downstream (estimators, controllers, the engine) works with
plain ``numpy`` arrays of shape ``(2,)``.  Bearings are unit vectors; they
are renormalized on construction so the unit-norm invariant survives long
integrations.  Degenerate geometry (coincident agents) is an error, never
a clamp: the simulation must abort rather than silently continue.
"""

from __future__ import annotations

import numpy as np

# Below this separation two agents are considered coincident.
DELTA_MIN = 1e-9


class GeometryError(ValueError):
    pass


class CoincidentAgents(GeometryError):
    """Two agents are closer than the degeneracy threshold."""


class NonpositiveDistance(GeometryError):
    """A distance that must be strictly positive is not."""


def vec2(x: float, y: float) -> np.ndarray:
    return np.array([float(x), float(y)])


def require_finite(v: np.ndarray, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"{name} has non-finite components: {v}")
    return v


def unit(v: np.ndarray) -> np.ndarray:
    """Renormalize ``v`` to unit length (used to absorb rounding drift)."""
    v = require_finite(v, "direction")
    n = float(np.hypot(v[0], v[1]))
    if n <= DELTA_MIN:
        raise CoincidentAgents("cannot normalize a (near-)zero vector")
    return v / n


def bearing(p_i: np.ndarray, p_j: np.ndarray, delta_min: float = DELTA_MIN) -> np.ndarray:
    """Unit vector from agent i toward agent j.

    Raises :class:`CoincidentAgents` when the separation is below
    ``delta_min``.
    """
    p_i = require_finite(p_i, "p_i")
    p_j = require_finite(p_j, "p_j")
    d = p_j - p_i
    rho = float(np.hypot(d[0], d[1]))
    if rho <= delta_min:
        raise CoincidentAgents(
            f"agents are coincident (separation {rho:.3e} <= {delta_min:.3e})"
        )
    return d / rho


def perp(phi: np.ndarray) -> np.ndarray:
    """Rotate a bearing ninety degrees anticlockwise: (x, y) -> (-y, x)."""
    phi = require_finite(phi, "bearing")
    return np.array([-phi[1], phi[0]])


def bearing_rate(phi: np.ndarray, v_ij: np.ndarray, rho: float) -> np.ndarray:
    """Rate of change of the bearing for relative velocity ``v_ij``.

    Projects the relative velocity onto the direction orthogonal to the
    bearing and divides by the separation: ``(I - phi phi^T) v_ij / rho``.
    The result is orthogonal to ``phi``.
    """
    phi = require_finite(phi, "bearing")
    v_ij = require_finite(v_ij, "v_ij")
    if not np.isfinite(rho) or rho <= 0.0:
        raise NonpositiveDistance(f"distance must be > 0, got {rho}")
    radial = float(phi @ v_ij)
    return (v_ij - radial * phi) / rho
