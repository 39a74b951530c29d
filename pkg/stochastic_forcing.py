"""
Finite cylindrical noise g(u) dW on the truncated basis.

Each forced mode carries one Brownian direction and drives the real unit
field attached to that mode (see spectral_core.real_basis_field), with weight
q_k = lambda(k)^(-alpha/2).
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Tuple

import numpy as np

from spectral_core import (
    Mode,
    SpectralField,
    TruncationMismatch,
    check_mode,
    eigenvalue,
    real_basis_field,
)

logger = logging.getLogger(__name__)


class IncrementError(ValueError):
    """Bad time step or increment vector length."""


class NoiseKind(str, Enum):
    OFF = "off"
    ADDITIVE = "additive"
    MULTIPLICATIVE = "diagonal-multiplicative"


class HSNorms(NamedTuple):
    in_h: float
    in_v: float


@dataclass(frozen=True, eq=False)
class NoiseModel:
    trunc: int
    kind: NoiseKind = NoiseKind.OFF
    sigma: float = 0.0
    alpha: float = 2.0
    forced_modes: Tuple[Mode, ...] = ()
    weights: np.ndarray = field(init=False, repr=False)
    lams: np.ndarray = field(init=False, repr=False)
    directions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma < 0:
            raise ValueError(f"noise intensity sigma must be >= 0, got {self.sigma}")
        if self.alpha <= 1:
            raise ValueError(f"mode-decay exponent alpha must be > 1, got {self.alpha}")
        modes = tuple((int(m[0]), int(m[1])) for m in self.forced_modes)
        if len(set(modes)) != len(modes):
            raise ValueError("forced_modes contains duplicates")
        for mode in modes:
            check_mode(mode, self.trunc)
        object.__setattr__(self, "forced_modes", modes)

        lams = np.array([eigenvalue(m) for m in modes], dtype=float)
        size = 2 * self.trunc + 1
        dirs = np.zeros((len(modes), size, size), dtype=complex)
        for n, mode in enumerate(modes):
            dirs[n] = real_basis_field(self.trunc, mode).amps
        for name, arr in (("lams", lams), ("weights", lams ** (-self.alpha / 2.0)), ("directions", dirs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def off(cls, trunc):
        return cls(trunc)

    @property
    def k_w(self):
        return len(self.forced_modes)

    @property
    def k1(self):
        """H-level sublinearity/Lipschitz constant sigma * sqrt(sum q^2)."""
        if self.kind is NoiseKind.OFF:
            return 0.0
        return float(self.sigma * np.sqrt(np.sum(self.weights ** 2)))

    @property
    def k2(self):
        """V-level Lipschitz constant sigma * max q (differences vanish for additive noise)."""
        if self.kind is NoiseKind.OFF or self.k_w == 0:
            return 0.0
        return float(self.sigma * np.max(self.weights))

    def direction(self, index):
        return SpectralField(self.trunc, self.directions[index])

    def coefficients(self, amps):
        """Per-direction factors c_j with g_j(u) = c_j * ehat_j."""
        if self.kind is NoiseKind.ADDITIVE:
            return self.sigma * self.weights.astype(complex)
        if self.kind is NoiseKind.MULTIPLICATIVE:
            proj = np.tensordot(np.conj(self.directions), amps, axes=([1, 2], [0, 1]))
            return self.sigma * self.weights * proj
        return np.zeros(self.k_w, dtype=complex)

    def apply_array(self, amps, dW):
        coef = self.coefficients(amps) * dW
        return np.tensordot(coef, self.directions, axes=(0, 0))


def stream(seed, path_index, step):
    """Counter-based generator keyed by (seed, path, step)."""
    key = np.array([int(seed), int(path_index)], dtype=np.uint64)
    counter = np.array([0, 0, int(step), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_increments(seed, path_index, step, dt, k_w):
    """
    Brownian increments for one step.

    Args:
        seed: global seed (u64)
        path_index: Monte Carlo path index
        step: time-step index
        dt: step length, must be > 0
        k_w: number of Brownian directions

    Returns:
        np.ndarray: k_w iid N(0, dt) draws; entry j is direction j.
    """
    if not dt > 0:
        raise IncrementError(f"time step must be > 0, got {dt}")
    return stream(seed, path_index, step).standard_normal(k_w) * np.sqrt(dt)


def diffusion_apply(g, t, u, dW):
    """sum_k g_k(t, u) dW_k; g is time-independent."""
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (g.k_w,):
        raise IncrementError(f"expected {g.k_w} increments, got shape {dW.shape}")
    if u.trunc != g.trunc:
        raise TruncationMismatch(f"noise N={g.trunc} vs field N={u.trunc}")
    if g.kind is NoiseKind.OFF:
        return SpectralField.zeros(u.trunc)
    return SpectralField(u.trunc, g.apply_array(u.amps, dW))


def hs_norms(g, t, u):
    """Hilbert-Schmidt norms of g(t, u) into H and V."""
    if u.trunc != g.trunc:
        raise TruncationMismatch(f"noise N={g.trunc} vs field N={u.trunc}")
    c2 = np.abs(g.coefficients(u.amps)) ** 2
    return HSNorms(in_h=float(np.sqrt(np.sum(c2))), in_v=float(np.sqrt(np.sum(g.lams * c2))))
