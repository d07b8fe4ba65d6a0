"""Rotation conversions and the Euler-space evaluation metric.

Conventions, fixed so reported numbers are comparable across runs:

* Axis-angle (exponential map): a 3-vector whose direction is the
  rotation axis and whose norm is the angle in radians. The zero vector
  is the identity rotation.
* Rotation matrices act on column vectors, right-handed frame.
* Euler extraction is intrinsic Z-Y-X: yaw about Z, then pitch about Y,
  then roll about X, i.e. R = Rz(yaw) @ Ry(pitch) @ Rx(roll). Pitch is
  canonicalized to [-pi/2, pi/2]. At |pitch| = pi/2 the extraction is
  degenerate; the documented branch fixes roll = 0 and folds the free
  angle into yaw.

The per-frame metric converts each 3-parameter skeleton group of both
poses to Euler angles, wraps the differences into (-pi, pi], and sums the
squared differences over groups.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "expmap_to_rotmat",
    "rotmat_to_euler",
    "euler_to_rotmat",
    "wrap_angle",
    "euler_mse",
]

# Below this angle the Rodrigues coefficients use their Taylor expansions
# to avoid dividing ~0 by ~0.
SMALL_ANGLE = 1e-8

# |R[2,0]| beyond this is treated as gimbal lock.
_GIMBAL_EDGE = 1.0 - 1e-10


def expmap_to_rotmat(v) -> np.ndarray:
    """Rodrigues map from an axis-angle 3-vector to a 3x3 rotation matrix.

    Uses R = I + a*K + b*K^2 with K the (unnormalized) cross-product
    matrix of v, a = sin(t)/t and b = (1-cos(t))/t^2 for t = |v|, which
    needs no axis normalization and is exact at v = 0.
    """
    v = np.asarray(v, dtype=np.float64).reshape(3)
    t2 = float(v @ v)
    t = math.sqrt(t2)
    if t < SMALL_ANGLE:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        a = math.sin(t) / t
        b = (1.0 - math.cos(t)) / t2
    k = np.array([[0.0, -v[2], v[1]],
                  [v[2], 0.0, -v[0]],
                  [-v[1], v[0], 0.0]])
    return np.eye(3) + a * k + b * (k @ k)


def _check_orthonormal(r: np.ndarray, atol: float) -> None:
    err = np.abs(r.T @ r - np.eye(3)).max()
    det = np.linalg.det(r)
    if err > atol or abs(det - 1.0) > atol:
        raise ValueError(
            f"matrix is not a rotation: |R^T R - I| = {err:.2e}, det = {det:.6f}")


def rotmat_to_euler(r, atol: float = 1e-6) -> np.ndarray:
    """Extract (yaw, pitch, roll) with the intrinsic Z-Y-X convention.

    Raises ValueError if the input fails the orthonormality check at
    ``atol``. At gimbal lock (|pitch| = pi/2) roll is fixed to 0.
    """
    r = np.asarray(r, dtype=np.float64).reshape(3, 3)
    _check_orthonormal(r, atol)
    s = -r[2, 0]
    if abs(s) >= _GIMBAL_EDGE:
        pitch = math.copysign(math.pi / 2.0, s)
        roll = 0.0
        if s > 0:
            yaw = math.atan2(-r[0, 1], r[0, 2])
        else:
            yaw = math.atan2(-r[0, 1], -r[0, 2])
    else:
        pitch = math.asin(max(-1.0, min(1.0, s)))
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
    return np.array([yaw, pitch, roll])


def euler_to_rotmat(e) -> np.ndarray:
    """Rebuild the rotation matrix from (yaw, pitch, roll)."""
    yaw, pitch, roll = np.asarray(e, dtype=np.float64).reshape(3)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def wrap_angle(x):
    """Wrap angles into (-pi, pi]. 2*pi-equivalent angles wrap to equal values."""
    x = np.asarray(x, dtype=np.float64)
    return -(np.mod(-x + math.pi, 2.0 * math.pi) - math.pi)


def euler_mse(target, pred, exclude=(), translation=()) -> np.ndarray:
    """Per-frame sum of squared Euler-angle differences over joint groups.

    ``target`` and ``pred`` are F x P matrices (P divisible by 3) of
    axis-angle parameters. Each 3-parameter group is converted to Euler
    angles; differences are wrapped to (-pi, pi] before squaring and
    summed over groups, giving one value per frame.

    ``exclude`` and ``translation`` both list parameter indices; naming
    any index of a group covers the whole group. Excluded groups are
    skipped; translation groups are scored as raw squared differences
    with no angle conversion. The default scores every group, the
    leading global-rotation one included.
    """
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"euler_mse shape mismatch: {t.shape} vs {p.shape}")
    if t.ndim != 2 or t.shape[1] % 3 != 0:
        raise ValueError(f"euler_mse needs F x P frames with P divisible by 3, got {t.shape}")
    n_groups = t.shape[1] // 3
    excl = set(int(i) for i in exclude)
    if excl and (min(excl) < 0 or max(excl) >= t.shape[1]):
        raise ValueError(f"exclude indices out of range for P={t.shape[1]}")
    trans = set(int(i) for i in translation)
    if trans and (min(trans) < 0 or max(trans) >= t.shape[1]):
        raise ValueError(f"translation indices out of range for P={t.shape[1]}")

    scored = []
    for g in range(n_groups):
        cols = (3 * g, 3 * g + 1, 3 * g + 2)
        if any(c in excl for c in cols):
            continue
        scored.append(g)

    errors = np.zeros(t.shape[0])
    for f in range(t.shape[0]):
        acc = 0.0
        for g in scored:
            sl = slice(3 * g, 3 * g + 3)
            if any(c in trans for c in (3 * g, 3 * g + 1, 3 * g + 2)):
                d = t[f, sl] - p[f, sl]
            else:
                et = rotmat_to_euler(expmap_to_rotmat(t[f, sl]))
                ep = rotmat_to_euler(expmap_to_rotmat(p[f, sl]))
                d = wrap_angle(et - ep)
            acc += float(d @ d)
        errors[f] = acc
    return errors
