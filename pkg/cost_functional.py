"""
Pathwise-supremum cost: J(phi) = E[ sup_t psi(L(t, u(t), phi(t, u(t)))) ]
with the concave transform psi(x) = (log(1 + x))^(1 - eps).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import NamedTuple, Optional

import numpy as np

from snse_integrator import map_paths, simulate_path
from spectral_core import SpectralField, TruncationMismatch, sobolev_norms, vorticity_norm

logger = logging.getLogger(__name__)

Z_95 = 1.96


class CostKind(str, Enum):
    VORTICITY = "vorticity"
    V_TRACKING = "v-tracking"


@dataclass(frozen=True)
class CostSpec:
    kind: CostKind = CostKind.VORTICITY
    eps: float = 0.5
    lip_l: Optional[float] = None
    target: Optional[SpectralField] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"cost.eps must be in (0,1), got {self.eps}")
        if self.lip_l is None:
            # |a+b - a'-b'|^2 <= 2(|a-a'|^2 + |b-b'|^2)
            default = 1.0 if self.kind is CostKind.VORTICITY else 2.0
            object.__setattr__(self, "lip_l", default)
        elif self.lip_l <= 0:
            raise ValueError(f"lip_l must be > 0, got {self.lip_l}")


class CostEstimate(NamedTuple):
    mean: float
    ci_half: float
    blowups: int
    samples: np.ndarray


def concave_transform(x, eps):
    """(log(1 + x))^(1 - eps); accepts scalars or arrays."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0,1), got {eps}")
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("concave_transform needs x >= 0")
    out = np.power(np.log1p(arr), 1.0 - eps)
    return float(out) if out.ndim == 0 else out


def running_cost(spec, t, u, phi_val):
    """
    L(t, u, phi(t, u)).

    vorticity: ||curl u||_H, independent of t and phi_val.
    v-tracking: ||u - target||_V + ||phi_val||_H.
    """
    if u.trunc != phi_val.trunc:
        raise TruncationMismatch(f"state N={u.trunc} vs control N={phi_val.trunc}")
    if spec.kind is CostKind.VORTICITY:
        return vorticity_norm(u)
    if spec.target is None:
        raise ValueError("v-tracking cost needs a target field")
    return sobolev_norms(u - spec.target).v + sobolev_norms(phi_val).h


def path_cost(traj, spec):
    """max over the grid of psi(cost_raw); equals psi(max cost_raw)."""
    if len(traj.cost_raw) == 0:
        raise ValueError("path_cost of an empty trajectory")
    value = float(np.max(concave_transform(traj.cost_raw, spec.eps)))
    outside = concave_transform(float(np.max(traj.cost_raw)), spec.eps)
    assert math.isclose(value, outside, rel_tol=1e-12, abs_tol=1e-15), (value, outside)
    return value


def mean_ci(samples):
    """(mean, 1.96 * sample std / sqrt(n))."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    mean = float(np.mean(samples))
    if n < 2:
        return mean, 0.0
    return mean, float(Z_95 * np.std(samples, ddof=1) / math.sqrt(n))


def estimate_j(cfg, phi, g, spec, n_paths, seed, threads=1) -> CostEstimate:
    """
    Monte Carlo estimate of J(phi) over path indices 0..n_paths-1.

    Args:
        cfg: SimConfig
        phi: FeedbackControl
        g: NoiseModel
        spec: CostSpec
        n_paths: number of paths, >= 2
        seed: global seed; the same seed gives the same estimate
        threads: worker threads for the path fan-out

    Returns:
        CostEstimate(mean, ci_half, blowups, samples)
    """
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2, got {n_paths}")
    cost = partial(running_cost, spec)

    def one(path_index):
        traj = simulate_path(cfg, phi, g, seed, path_index, cost=cost)
        return path_cost(traj, spec), traj.blew_up

    results = map_paths(one, range(n_paths), threads)
    samples = np.array([value for value, _ in results])
    blowups = sum(1 for _, blew in results if blew)
    mean, ci_half = mean_ci(samples)
    if blowups:
        logger.warning("%d of %d paths blew up; counted with their truncated sup", blowups, n_paths)
    logger.debug("J estimate %.6g +- %.3g over %d paths", mean, ci_half, n_paths)
    return CostEstimate(mean, ci_half, blowups, samples)
