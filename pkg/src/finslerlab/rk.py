"""Adaptive Dormand-Prince 5(4) integration with stored accepted steps.

The embedded 4th-order solution drives step control; the 5th-order solution
propagates. Accepted states and their derivatives feed cubic Hermite
interpolation between steps (used for transport along stored curves).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# classic Dormand-Prince tableau; last stage is FSAL
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class IntegrationError(RuntimeError):
    pass


@dataclass
class ODEResult:
    t: np.ndarray  # accepted times, strictly increasing
    y: np.ndarray  # states at accepted times, shape (len(t), dim)
    f: np.ndarray  # derivatives at accepted times (for Hermite interpolation)
    steps: int
    rejected: int
    max_error_estimate: float
    reached_end: bool


def integrate(fun, t0: float, y0, t1: float, *, rtol=1e-10, atol=1e-12,
              max_steps=1_000_000, stop=None) -> ODEResult:
    """Integrate y' = fun(t, y) from t0 to t1 (t1 > t0).

    ``stop(y)`` may veto a proposed state (e.g. outside the chart box): the
    step is not accepted and integration ends with ``reached_end=False``.
    """
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    y = np.asarray(y0, float).copy()
    t = t0
    k1 = np.asarray(fun(t, y), float)
    ts = [t]
    ys = [y.copy()]
    fs = [k1.copy()]
    span = t1 - t0
    scale0 = atol + rtol * np.abs(y).max()
    d1 = np.abs(k1).max()
    h = min(span, 0.01 * scale0 / d1) if d1 > 0 else 0.01 * span
    h = max(h, 1e-10 * span)
    steps = rejected = 0
    max_err = 0.0
    reached = False
    K = np.empty((7, y.size))
    while steps + rejected < max_steps:
        if t + h >= t1:
            h = t1 - t
        K[0] = k1
        for s in range(1, 7):
            K[s] = fun(t + _C[s] * h, y + h * (_A[s] @ K[:s]))
        ynew = y + h * (_B5 @ K)
        err_vec = h * (_E @ K)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = float(np.sqrt(np.mean((err_vec / sc) ** 2)))
        if err <= 1.0:
            tnew = t + h
            if stop is not None and stop(ynew):
                # bisect toward the crossing so the curve ends at the
                # boundary instead of at the last coarse step
                if h <= 1e-12 * span:
                    return ODEResult(np.array(ts), np.array(ys), np.array(fs),
                                     steps, rejected, max_err, False)
                h *= 0.5
                rejected += 1
                continue
            steps += 1
            max_err = max(max_err, float(np.abs(err_vec).max()))
            k1 = K[6]  # FSAL
            t, y = tnew, ynew
            ts.append(t)
            ys.append(y.copy())
            fs.append(k1.copy())
            if t >= t1:
                reached = True
                break
        else:
            rejected += 1
        factor = 0.9 * err ** -0.2 if err > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
        if h < 1e-14 * span:
            raise IntegrationError(f"step size underflow at t={t:.6g}")
    else:
        raise IntegrationError(f"step budget exhausted at t={t:.6g}")
    return ODEResult(np.array(ts), np.array(ys), np.array(fs),
                     steps, rejected, max_err, reached)


def hermite_eval(t, t0, y0, f0, t1, y1, f1):
    """Cubic Hermite value and derivative at t in [t0, t1]."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    y = h00 * y0 + h * h10 * f0 + h01 * y1 + h * h11 * f1
    d00 = 6 * s * (s - 1)
    d10 = 3 * s * s - 4 * s + 1
    d01 = -d00
    d11 = 3 * s * s - 2 * s
    dy = (d00 * y0 + d01 * y1) / h + d10 * f0 + d11 * f1
    return y, dy


class HermitePath:
    """Dense evaluation over stored (t, y, y') samples."""

    def __init__(self, t, y, f):
        self.t = np.asarray(t, float)
        self.y = np.asarray(y, float)
        self.f = np.asarray(f, float)
        if len(self.t) < 2:
            raise ValueError("need at least two samples")

    @property
    def t0(self):
        return float(self.t[0])

    @property
    def t1(self):
        return float(self.t[-1])

    def __call__(self, t):
        tt = self.t
        i = int(np.searchsorted(tt, t, side="right")) - 1
        i = min(max(i, 0), len(tt) - 2)
        return hermite_eval(t, tt[i], self.y[i], self.f[i], tt[i + 1], self.y[i + 1], self.f[i + 1])
