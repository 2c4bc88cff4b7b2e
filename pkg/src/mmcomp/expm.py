"""Dense matrix exponential sized for small inventory state spaces.

Scaling and squaring with a fixed degree-13 diagonal Pade approximant.  The
state dimension here is at most a few dozen, so dense arithmetic is cheap
and no balancing or Krylov machinery is needed.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["expm", "expm_action"]

# Degree-13 diagonal Pade coefficients and the largest scaled norm for which
# the approximant stays at double-precision accuracy.
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def _checked_square(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def expm(m) -> np.ndarray:
    """Matrix exponential ``e**M`` of a square matrix with finite entries."""
    a = _checked_square(m)
    n = a.shape[0]

    norm = np.linalg.norm(a, 1)
    squarings = 0
    if norm > _THETA13:
        squarings = max(0, int(math.ceil(math.log2(norm / _THETA13))))
        a = a / (2.0**squarings)

    b = _PADE13
    ident = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        r = r @ r
    return r


def expm_action(m, v, s: float) -> np.ndarray:
    """Evaluate ``exp(M*s) @ v`` for a time-like scale ``s >= 0``."""
    a = _checked_square(m)
    vec = np.asarray(v, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != a.shape[0]:
        raise ValueError(
            f"vector of length {vec.shape} does not match matrix of order {a.shape[0]}"
        )
    if not np.isfinite(s) or s < 0:
        raise ValueError(f"scale must be finite and >= 0, got {s!r}")
    if s == 0.0:
        return vec.copy()
    return expm(a * s) @ vec
