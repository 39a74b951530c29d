"""
Admissible feedback controls: affine diagonal laws

    phi(t, u) = sum_k [gamma_k(t) <u, e_k> + f_k(t)] e_k

with piecewise-linear time profiles on shared knots and a V-norm cap.
"""
import logging
from enum import Enum
from functools import cached_property
from typing import NamedTuple

import numpy as np

from spectral_core import SpectralField, TruncationMismatch, check_mode, wavenumbers

logger = logging.getLogger(__name__)


class HorizonError(ValueError):
    """Time outside [0, T] or controls on different horizons."""


class SequenceScheme(str, Enum):
    GAIN_SCALE = "gain-scale"
    MODE_TRUNCATE = "mode-truncate"
    TIME_MOLLIFY = "time-mollify"


class ControlValue(NamedTuple):
    field: SpectralField
    capped: bool


class OperatorDistance(NamedTuple):
    operator: float
    base: float


class LipschitzConstants(NamedTuple):
    c1: float
    c2: float


def _interp_knots(knots, values, t):
    # values has the knot axis first; linear between knots, constant outside
    if len(knots) == 1:
        return values[0]
    i = int(np.clip(np.searchsorted(knots, t, side="right") - 1, 0, len(knots) - 2))
    w = (t - knots[i]) / (knots[i + 1] - knots[i])
    w = min(max(w, 0.0), 1.0)
    return (1.0 - w) * values[i] + w * values[i + 1]


def _resample(knots, values, new_knots):
    return np.stack([_interp_knots(knots, values, t) for t in new_knots])


class FeedbackControl:
    """Gains and base amplitudes on shared knots, shape (knots, 2N+1, 2N+1)."""

    def __init__(self, trunc, horizon, knots, gains, base, cap_k, state_radius=3.0):
        size = 2 * trunc + 1
        knots = np.asarray(knots, dtype=float).ravel()
        gains = np.asarray(gains, dtype=float).reshape(len(knots), size, size).copy()
        base = np.asarray(base, dtype=complex).reshape(len(knots), size, size).copy()
        if not horizon > 0:
            raise HorizonError(f"horizon must be > 0, got {horizon}")
        if len(knots) == 0 or np.any(np.diff(knots) <= 0):
            raise HorizonError("knot times must be nonempty and strictly increasing")
        if knots[0] < 0 or knots[-1] > horizon * (1 + 1e-12):
            raise HorizonError(f"knots must lie in [0, {horizon}]")
        if not cap_k > 0:
            raise ValueError(f"cap_K must be > 0, got {cap_k}")
        gains[:, trunc, trunc] = 0.0
        base[:, trunc, trunc] = 0.0
        for arr in (knots, gains, base):
            arr.setflags(write=False)
        self.trunc = trunc
        self.horizon = horizon
        self.knots = knots
        self.gains = gains
        self.base = base
        self.cap_k = cap_k
        self.state_radius = state_radius

    @classmethod
    def null(cls, trunc, horizon, cap_k=1.0, state_radius=3.0):
        size = 2 * trunc + 1
        return cls(trunc, horizon, np.array([0.0]), np.zeros((1, size, size)),
                   np.zeros((1, size, size), dtype=complex), cap_k, state_radius)

    @classmethod
    def build(cls, trunc, horizon, gains=None, base=None, cap_k=1.0, state_radius=3.0, real=True):
        """
        Assemble a control from per-mode profiles.

        A profile is a constant or a list of (time, value) breakpoints. With
        real=True each mode also sets its partner -k (gain copied, base
        amplitude -conj) so real states map to real forces.
        """
        gains = dict(gains or {})
        base = dict(base or {})

        def points(profile):
            if isinstance(profile, (int, float, complex, np.number)):
                return [(0.0, profile)]
            pts = sorted((float(t), v) for t, v in profile)
            if not pts:
                raise ValueError("empty time profile")
            return pts

        gains = {m: points(p) for m, p in gains.items()}
        base = {m: points(p) for m, p in base.items()}
        times = {0.0}
        for pts in list(gains.values()) + list(base.values()):
            for t, _ in pts:
                if t < 0 or t > horizon:
                    raise HorizonError(f"breakpoint t={t} outside [0, {horizon}]")
                times.add(t)
        if any(len(p) > 1 for p in list(gains.values()) + list(base.values())):
            times.add(float(horizon))
        knots = np.array(sorted(times))
        size = 2 * trunc + 1
        g = np.zeros((len(knots), size, size))
        f = np.zeros((len(knots), size, size), dtype=complex)

        def fill(target, mode, pts, partner):
            i, j = check_mode(mode, trunc)
            t_pts = np.array([t for t, _ in pts])
            v_pts = np.array([v for _, v in pts])
            col = np.array([_interp_knots(t_pts, v_pts, t) for t in knots]) if len(pts) > 1 \
                else np.full(len(knots), v_pts[0])
            target[:, i, j] = col
            if real:
                target[:, 2 * trunc - i, 2 * trunc - j] = partner(col)

        for mode, pts in gains.items():
            fill(g, mode, pts, lambda c: c)
        for mode, pts in base.items():
            fill(f, mode, pts, lambda c: -np.conj(c))
        return cls(trunc, float(horizon), knots, g, f, cap_k, state_radius)

    def replace_arrays(self, knots=None, gains=None, base=None):
        return FeedbackControl(
            self.trunc, self.horizon,
            self.knots if knots is None else knots,
            self.gains if gains is None else gains,
            self.base if base is None else base,
            self.cap_k, self.state_radius,
        )

    def gains_at(self, t):
        return _interp_knots(self.knots, self.gains, t)

    def base_at(self, t):
        return _interp_knots(self.knots, self.base, t)

    @property
    def support_radius(self):
        """Largest |k|_inf carrying a nonzero gain or base amplitude (M_c)."""
        kx, ky, _, _, _ = wavenumbers(self.trunc)
        active = np.any(self.gains != 0, axis=0) | np.any(self.base != 0, axis=0)
        if not active.any():
            return 0
        return int(np.max(np.maximum(np.abs(kx), np.abs(ky))[active]))

    def apply_array(self, t, amps):
        """Evaluate on a raw amplitude array; returns (amps, capped)."""
        if t < -1e-12 * self.horizon or t > self.horizon * (1 + 1e-12):
            raise HorizonError(f"t={t} outside the control horizon [0, {self.horizon}]")
        out = self.gains_at(t) * amps + self.base_at(t)
        lam = wavenumbers(self.trunc)[2]
        vnorm = float(np.sqrt(np.sum(lam * np.abs(out) ** 2)))
        if vnorm > self.cap_k:
            return out * (self.cap_k / vnorm), True
        return out, False

    @cached_property
    def lipschitz(self):
        return lipschitz_constants(self)


def eval_control(phi, t, u):
    """phi(t, u), rescaled to V-norm cap_K when it would exceed it."""
    if u.trunc != phi.trunc:
        raise TruncationMismatch(f"control N={phi.trunc} vs field N={u.trunc}")
    out, capped = phi.apply_array(t, u.amps)
    if capped:
        logger.debug("control cap active at t=%.6g (cap_K=%g)", t, phi.cap_k)
    return ControlValue(SpectralField(phi.trunc, out), capped)


def _knot_union(a, b):
    if a.trunc != b.trunc:
        raise TruncationMismatch(f"N={a.trunc} vs N={b.trunc}")
    if not np.isclose(a.horizon, b.horizon, rtol=1e-12, atol=0.0):
        raise HorizonError(f"horizon mismatch: {a.horizon} vs {b.horizon}")
    return np.union1d(a.knots, b.knots)


def lv_operator_distance(a, b):
    """
    sup_t ||phi_a - phi_b||_{L(V)} of the linear parts, plus the base term
    sup_t ||f_a - f_b||_V reported separately. Both differences are
    piecewise linear, so the sup sits on a knot.
    """
    knots = _knot_union(a, b)
    lam = wavenumbers(a.trunc)[2]
    dg = np.abs(_resample(a.knots, a.gains, knots) - _resample(b.knots, b.gains, knots))
    df = _resample(a.knots, a.base, knots) - _resample(b.knots, b.base, knots)
    base = np.sqrt(np.sum(lam * np.abs(df) ** 2, axis=(1, 2)))
    return OperatorDistance(operator=float(np.max(dg)), base=float(np.max(base)))


def integrated_lh_distance(a, b, subdivisions=64):
    """int_0^T ||phi_a - phi_b||^2_{L(H)} dt by the midpoint rule on refined knots."""
    knots = np.union1d(_knot_union(a, b), [0.0, a.horizon])
    total = 0.0
    for t0, t1 in zip(knots[:-1], knots[1:]):
        h = (t1 - t0) / subdivisions
        for s in range(subdivisions):
            t = t0 + (s + 0.5) * h
            diff = np.max(np.abs(a.gains_at(t) - b.gains_at(t)))
            total += diff * diff * h
    return total


def lipschitz_constants(phi):
    """
    (C1, C2) of the time/state Lipschitz bound, certified on the ball
    ||x||_V <= state_radius for both the V and H lines.
    """
    lam = wavenumbers(phi.trunc)[2]
    g_max = float(np.max(np.abs(phi.gains))) if phi.gains.size else 0.0
    if len(phi.knots) == 1:
        return LipschitzConstants(0.0, g_max ** 2)
    dt = np.diff(phi.knots)
    s_gain = float(np.max(np.max(np.abs(np.diff(phi.gains, axis=0)), axis=(1, 2)) / dt))
    df = np.diff(phi.base, axis=0)
    s_base = float(np.max(np.sqrt(np.sum(lam * np.abs(df) ** 2, axis=(1, 2))) / dt))
    slope = s_gain * phi.state_radius + s_base
    if slope == 0.0:
        return LipschitzConstants(0.0, g_max ** 2)
    return LipschitzConstants(2.0 * slope ** 2, 2.0 * g_max ** 2)


def _segment_averages(knots, values, horizon, n):
    edges = np.linspace(0.0, horizon, n + 1)
    grid = np.union1d(knots, edges)
    vals = _resample(knots, values, grid)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (grid >= lo) & (grid <= hi)
        t, v = grid[sel], vals[sel]
        h = np.diff(t).reshape((-1,) + (1,) * (v.ndim - 1))
        out.append(np.sum(0.5 * (v[1:] + v[:-1]) * h, axis=0) / (hi - lo))
    return 0.5 * (edges[:-1] + edges[1:]), np.stack(out)


def control_sequence(phi, n, scheme):
    """
    phi_n converging to phi in sup_t ||.||_{L(V)}.

    gain-scale multiplies gains and base by (1 + 1/n); mode-truncate zeros
    modes with |k|_inf > n; time-mollify replaces each profile by its n
    segment averages joined linearly through the segment midpoints.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"sequence index n must be a positive integer, got {n}")
    scheme = SequenceScheme(scheme)
    if scheme is SequenceScheme.GAIN_SCALE:
        factor = 1.0 + 1.0 / n
        return phi.replace_arrays(gains=phi.gains * factor, base=phi.base * factor)
    if scheme is SequenceScheme.MODE_TRUNCATE:
        kx, ky, _, _, _ = wavenumbers(phi.trunc)
        keep = np.maximum(np.abs(kx), np.abs(ky)) <= n
        return phi.replace_arrays(gains=phi.gains * keep, base=phi.base * keep)
    mids, gains = _segment_averages(phi.knots, phi.gains, phi.horizon, n)
    _, base = _segment_averages(phi.knots, phi.base, phi.horizon, n)
    return phi.replace_arrays(knots=mids, gains=gains, base=base)


def set_mode_value(phi, role, mode, value, real=True):
    """Copy of phi with a constant gain (role='gain') or base amplitude on one mode."""
    i, j = check_mode(mode, phi.trunc)
    n = 2 * phi.trunc
    if role == "gain":
        gains = phi.gains.copy()
        gains[:, i, j] = value
        if real:
            gains[:, n - i, n - j] = value
        return phi.replace_arrays(gains=gains)
    if role == "base":
        base = phi.base.copy()
        base[:, i, j] = value
        if real:
            base[:, n - i, n - j] = -np.conj(value)
        return phi.replace_arrays(base=base)
    raise ValueError(f"unknown control role '{role}' (expected 'gain' or 'base')")
