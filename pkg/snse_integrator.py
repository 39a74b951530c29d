"""
Semi-implicit Euler-Maruyama for the Galerkin-truncated controlled SNSE

    du = (-nu A u - B(u, u) + phi(t, u)) dt + g(u) dW

Stokes term implicit (exact mode-diagonal solve), everything else explicit.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from spectral_core import SpectralField, TruncationMismatch, convolve_amps, wavenumbers
from stochastic_forcing import NoiseKind, sample_increments

logger = logging.getLogger(__name__)


class BlowUpError(ArithmeticError):
    """Non-finite amplitude after a step."""


class SimConfig:
    """Discretisation and stopping parameters; immutable once built, use with_() for variants."""

    FIELDS = ("trunc_n", "nu", "dt", "t_final", "stop_m", "stop_mtilde", "u0", "nonlinear",
              "blowup_vnorm2", "stability_limit")

    def __init__(self, trunc_n, nu, dt, t_final, stop_m=2.0, stop_mtilde=1.0, u0=None,
                 nonlinear=True, blowup_vnorm2=1e10, stability_limit=1.0):
        if trunc_n < 1:
            raise ValueError(f"truncation level must be >= 1, got {trunc_n}")
        if not nu > 0:
            raise ValueError(f"viscosity nu must be > 0, got {nu}")
        if not dt > 0:
            raise ValueError(f"time step dt must be > 0, got {dt}")
        if not t_final > 0:
            raise ValueError(f"horizon t_final must be > 0, got {t_final}")
        if dt > t_final:
            raise ValueError(f"dt={dt} exceeds t_final={t_final}")
        if not stop_m > 1:
            raise ValueError(f"stop_m must be > 1, got {stop_m}")
        if not stop_mtilde > 0:
            raise ValueError(f"stop_mtilde must be > 0, got {stop_mtilde}")
        if u0 is None:
            u0 = SpectralField.zeros(trunc_n)
        elif u0.trunc != trunc_n:
            raise TruncationMismatch(f"u0 has N={u0.trunc}, config N={trunc_n}")
        self.trunc_n = trunc_n
        self.nu = nu
        self.dt = dt
        self.t_final = t_final
        self.stop_m = stop_m
        self.stop_mtilde = stop_mtilde
        self.u0 = u0
        self.nonlinear = nonlinear
        self.blowup_vnorm2 = blowup_vnorm2
        self.stability_limit = stability_limit

    @property
    def n_steps(self):
        return int(math.ceil(self.t_final / self.dt - 1e-9))

    def time_grid(self):
        """Uniform grid with the last step shortened to land on t_final."""
        times = np.minimum(np.arange(self.n_steps + 1) * self.dt, self.t_final)
        times[-1] = self.t_final
        return times

    def with_(self, **changes):
        values = {name: getattr(self, name) for name in self.FIELDS}
        values.update(changes)
        return SimConfig(**values)


class Trajectory:
    """
    One simulated path on its time grid. The diff_* arrays are only set on
    the first two members of a coupled run.
    """

    def __init__(self, times, vnorm2, anorm2_int, cost_raw, exit_index=None, cap_events=0,
                 blew_up=False, stability_warnings=0, final=None):
        self.times = times
        self.vnorm2 = vnorm2
        self.anorm2_int = anorm2_int
        self.cost_raw = cost_raw
        self.exit_index = exit_index
        self.cap_events = cap_events
        self.blew_up = blew_up
        self.stability_warnings = stability_warnings
        self.final = final
        self.diff_vnorm2 = None
        self.diff_anorm2_int = None

    def __len__(self):
        return len(self.times)

    @property
    def vnorm2_runmax(self):
        return np.maximum.accumulate(self.vnorm2)

    @property
    def exit_time(self):
        return None if self.exit_index is None else float(self.times[self.exit_index])


class _Stepper:
    """Precomputed mode-diagonal tables for one (config, noise) pair."""

    def __init__(self, cfg, g):
        if g.trunc != cfg.trunc_n:
            raise TruncationMismatch(f"noise N={g.trunc}, config N={cfg.trunc_n}")
        self.cfg = cfg
        self.g = g
        self.lam = wavenumbers(cfg.trunc_n)[2]
        self.noisy = g.kind is not NoiseKind.OFF and g.k_w > 0

    def advance(self, amps, t, h, forcing, dW):
        cfg = self.cfg
        rhs = amps + h * forcing
        if cfg.nonlinear:
            rhs = rhs - h * convolve_amps(cfg.trunc_n, amps, amps)
        if self.noisy:
            rhs = rhs + self.g.apply_array(amps, dW)
        new = rhs / (1.0 + cfg.nu * self.lam * h)
        if not np.all(np.isfinite(new)):
            raise BlowUpError(f"non-finite amplitude at t={t + h:.6g}")
        return new


def step(u, t, cfg, phi, g, dW, h=None):
    """
    One step: (1 + nu lambda h) a' = a + h[-B(u,u) + phi(t,u)] + (g(u) dW).

    h defaults to cfg.dt.
    """
    if u.trunc != cfg.trunc_n or phi.trunc != cfg.trunc_n:
        raise TruncationMismatch("field, control and config must share N")
    forcing, _ = phi.apply_array(t, u.amps)
    h = cfg.dt if h is None else h
    new = _Stepper(cfg, g).advance(u.amps, t, h, forcing, np.asarray(dW, dtype=float))
    return SpectralField(cfg.trunc_n, new)


def brownian_path(seed, path_index, steps, k_w):
    """Increment array (n_steps, k_w) keyed step by step."""
    if k_w == 0:
        return np.zeros((len(steps), 0))
    return np.stack([sample_increments(seed, path_index, i, h, k_w) for i, h in enumerate(steps)])


def coarsen_increments(increments, factor):
    """Sum consecutive blocks of `factor` fine increments."""
    n, k_w = increments.shape
    if factor < 1 or n % factor:
        raise ValueError(f"cannot coarsen {n} steps by a factor of {factor}")
    return increments.reshape(n // factor, factor, k_w).sum(axis=1)


class _PathRecorder:
    """State and diagnostics of one control along one noise path."""

    def __init__(self, stepper, phi, n, path_index, cost):
        cfg = stepper.cfg
        if phi.trunc != cfg.trunc_n:
            raise TruncationMismatch(f"control N={phi.trunc}, config N={cfg.trunc_n}")
        self.stepper = stepper
        self.phi = phi
        self.path_index = path_index
        self.cost = cost
        self.amps = cfg.u0.amps.copy()
        self.alive = True
        self.length = n
        self.vnorm2 = np.zeros(n)
        self.anorm2_int = np.zeros(n)
        self.cost_raw = np.zeros(n)
        self.cap_events = 0
        self.blew_up = False
        self.warnings = 0
        self._a2 = 0.0
        self._forcing = None

    def record(self, i, t, h_prev):
        lam = self.stepper.lam
        p = np.abs(self.amps) ** 2
        self.vnorm2[i] = float(np.sum(lam * p))
        if i > 0:
            # left endpoint, non-anticipating
            self.anorm2_int[i] = self.anorm2_int[i - 1] + self._a2 * h_prev
        self._a2 = float(np.sum(lam * lam * p))
        forcing, capped = self.phi.apply_array(t, self.amps)
        if capped:
            if self.cap_events == 0:
                logger.warning("path %d: control cap K=%g active at t=%.4g",
                               self.path_index, self.phi.cap_k, t)
            self.cap_events += 1
        self._forcing = forcing
        trunc = self.stepper.cfg.trunc_n
        if self.cost is None:
            self.cost_raw[i] = math.sqrt(self.vnorm2[i])
        else:
            self.cost_raw[i] = self.cost(t, SpectralField(trunc, self.amps), SpectralField(trunc, forcing))

    def _stop(self, i):
        self.alive = False
        self.blew_up = True
        self.length = i + 1

    def advance(self, i, t, h, dW):
        cfg = self.stepper.cfg
        if self.vnorm2[i] > cfg.blowup_vnorm2:
            logger.warning("path %d: ||u||_V^2=%.3g above blow-up level at t=%.4g; truncating",
                           self.path_index, self.vnorm2[i], t)
            self._stop(i)
            return
        if cfg.nonlinear:
            ratio = h * cfg.trunc_n ** 2 * math.sqrt(float(np.sum(np.abs(self.amps) ** 2)))
            if ratio > cfg.stability_limit:
                if self.warnings == 0:
                    logger.warning("path %d: explicit advection above stability limit "
                                   "(dt*N^2*||u||_H=%.3g) at t=%.4g", self.path_index, ratio, t)
                self.warnings += 1
        try:
            self.amps = self.stepper.advance(self.amps, t, h, self._forcing, dW)
        except BlowUpError as exc:
            logger.warning("path %d: %s; truncating", self.path_index, exc)
            self._stop(i)

    def trajectory(self, times, cfg):
        n = self.length
        traj = Trajectory(
            times=times[:n].copy(),
            vnorm2=self.vnorm2[:n].copy(),
            anorm2_int=self.anorm2_int[:n].copy(),
            cost_raw=self.cost_raw[:n].copy(),
            cap_events=self.cap_events,
            blew_up=self.blew_up,
            stability_warnings=self.warnings,
            final=SpectralField(cfg.trunc_n, self.amps),
        )
        traj.exit_index = exit_index(traj, cfg.stop_m, cfg.stop_mtilde)
        if traj.exit_index is None and self.blew_up:
            traj.exit_index = n - 1
        return traj


def _integrate(cfg, phis, g, seed, path_index, cost=None, increments=None):
    stepper = _Stepper(cfg, g)
    times = cfg.time_grid()
    steps = np.diff(times)
    n = len(times)
    if increments is None:
        if stepper.noisy:
            increments = brownian_path(seed, path_index, steps, g.k_w)
        else:
            increments = np.zeros((len(steps), g.k_w))
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (len(steps), g.k_w):
            raise ValueError(f"increments shape {increments.shape} != {(len(steps), g.k_w)}")

    recs = [_PathRecorder(stepper, phi, n, path_index, cost) for phi in phis]
    pair = len(recs) > 1
    diff_v = np.zeros(n)
    diff_a = np.zeros(n)
    pair_len = 0
    diff_a2 = 0.0
    lam = stepper.lam

    for i in range(n):
        t = times[i]
        h_prev = steps[i - 1] if i > 0 else 0.0
        for rec in recs:
            if rec.alive:
                rec.record(i, t, h_prev)
        if pair and recs[0].alive and recs[1].alive:
            p = np.abs(recs[0].amps - recs[1].amps) ** 2
            diff_v[i] = float(np.sum(lam * p))
            if i > 0:
                diff_a[i] = diff_a[i - 1] + diff_a2 * h_prev
            diff_a2 = float(np.sum(lam * lam * p))
            pair_len = i + 1
        if i == n - 1:
            break
        for rec in recs:
            if rec.alive:
                rec.advance(i, t, steps[i], increments[i])

    trajs = [rec.trajectory(times, cfg) for rec in recs]
    if pair:
        for traj in trajs[:2]:
            traj.diff_vnorm2 = diff_v[:pair_len].copy()
            traj.diff_anorm2_int = diff_a[:pair_len].copy()
    logger.debug("path %d done: %d controls, blow-ups=%s", path_index, len(recs),
                 [r.blew_up for r in recs])
    return trajs


def simulate_path(cfg, phi, g, seed, path_index, cost=None, increments=None):
    """
    One trajectory driven by the increment stream keyed by (seed, path_index).

    Args:
        cost: running cost L(t, u, phi(t, u)); defaults to ||u||_V
        increments: optional (n_steps, K_W) array replacing the keyed stream

    Returns:
        Trajectory, truncated with blew_up set if the path diverged.
    """
    return _integrate(cfg, [phi], g, seed, path_index, cost, increments)[0]


def simulate_coupled(cfg, phis, g, seed, path_index, cost=None, increments=None):
    """All controls consume one increment stream; the first pair carries difference diagnostics."""
    if not phis:
        raise ValueError("simulate_coupled needs at least one control")
    return _integrate(cfg, list(phis), g, seed, path_index, cost, increments)


def exit_index(traj, m, mtilde):
    radius = np.sqrt(np.maximum.accumulate(traj.vnorm2) + traj.anorm2_int)
    hits = np.nonzero(radius > m + mtilde)[0]
    return int(hits[0]) if len(hits) else None


def exit_time(traj, m, mtilde):
    """First grid time where (sup ||u||_V^2 + int ||Au||^2)^(1/2) exceeds m + mtilde."""
    idx = exit_index(traj, m, mtilde)
    return None if idx is None else float(traj.times[idx])


def blowup_level_index(traj, level, nu):
    """First index where sup ||u||_V^2 + nu int ||Au||^2 reaches `level`."""
    norm = np.maximum.accumulate(traj.vnorm2) + nu * traj.anorm2_int
    hits = np.nonzero(norm >= level)[0]
    return int(hits[0]) if len(hits) else None


def map_paths(fn, path_indices, threads=1):
    """Apply fn over path indices; results come back in index order."""
    path_indices = list(path_indices)
    if threads <= 1 or len(path_indices) < 2:
        return [fn(p) for p in path_indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, path_indices))


def trajectory_table(traj):
    """(columns, rows) for CSV export."""
    columns = ["time", "vnorm2", "anorm2_int", "cost_raw"]
    cols = [traj.times, traj.vnorm2, traj.anorm2_int, traj.cost_raw]
    if traj.diff_vnorm2 is not None:
        columns.append("diff_vnorm2")
        diff = np.full(len(traj), np.nan)
        diff[: len(traj.diff_vnorm2)] = traj.diff_vnorm2[: len(traj)]
        cols.append(diff)
    return columns, [tuple(float(c[i]) for c in cols) for i in range(len(traj))]
