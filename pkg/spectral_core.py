"""
Function-space skeleton for the 2D periodic Navier-Stokes problem.
Fields live on the Galerkin-truncated divergence-free Fourier basis of the
2*pi torus with mean-zero velocity.

Basis convention:
    e_k(x) = d(k) exp(i k.x),   d(k) = k_perp / |k|,   k_perp = (-ky, kx)
The H inner product is the torus average, so {e_k} is orthonormal and the
Stokes eigenvalues are lambda(k) = kx^2 + ky^2 >= 1.

A field is real-valued when a(-k) = -conj(a(k)) for every stored mode
(the minus sign comes from d(-k) = -d(k)).
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, Mapping, NamedTuple, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Mode = Tuple[int, int]


class ModeError(ValueError):
    """Raised for the zero mode or a mode outside the truncation."""


class TruncationMismatch(ValueError):
    """Raised when two fields (or a field and an operator) disagree on N."""


class Norms(NamedTuple):
    h: float
    v: float
    a: float


@lru_cache(maxsize=None)
def wavenumbers(trunc):
    """
    Cached grid tables for truncation level N.

    Returns:
        tuple: (kx, ky, lam, dx, dy) arrays of shape (2N+1, 2N+1), indexed
        [kx + N, ky + N]. The zero mode has lam = 0 and d = 0.
    """
    if trunc < 1:
        raise ModeError(f"truncation level must be >= 1, got {trunc}")
    k = np.arange(-trunc, trunc + 1)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    lam = (kx * kx + ky * ky).astype(float)
    norm = np.sqrt(lam)
    norm[trunc, trunc] = 1.0
    dx = -ky / norm
    dy = kx / norm
    for arr in (kx, ky, lam, dx, dy):
        arr.setflags(write=False)
    return kx, ky, lam, dx, dy


def check_mode(mode, trunc):
    kx, ky = int(mode[0]), int(mode[1])
    if kx == 0 and ky == 0:
        raise ModeError("the zero mode (0, 0) is excluded from mean-zero fields")
    if abs(kx) > trunc or abs(ky) > trunc:
        raise ModeError(f"mode ({kx}, {ky}) lies outside truncation N={trunc}")
    return kx + trunc, ky + trunc


def is_canonical(mode):
    """True for the half-plane representative of the pair {k, -k}."""
    kx, ky = mode
    return ky > 0 or (ky == 0 and kx > 0)


def eigenvalue(mode):
    return float(mode[0] ** 2 + mode[1] ** 2)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable divergence-free field: amplitude a_k along e_k for |k|_inf <= N."""

    trunc: int
    amps: np.ndarray

    def __post_init__(self):
        size = 2 * self.trunc + 1
        amps = np.array(self.amps, dtype=complex)
        if amps.shape != (size, size):
            raise TruncationMismatch(
                f"amplitude array shape {amps.shape} does not match N={self.trunc}"
            )
        if amps[self.trunc, self.trunc] != 0:
            raise ModeError("the zero mode (0, 0) carries a nonzero amplitude")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    @classmethod
    def zeros(cls, trunc):
        size = 2 * trunc + 1
        return cls(trunc, np.zeros((size, size), dtype=complex))

    @classmethod
    def from_modes(cls, trunc, modes: Mapping[Mode, complex]):
        """Field with the given amplitudes exactly (no reality pairing)."""
        size = 2 * trunc + 1
        amps = np.zeros((size, size), dtype=complex)
        for mode, amp in modes.items():
            i, j = check_mode(mode, trunc)
            amps[i, j] = amp
        return cls(trunc, amps)

    @classmethod
    def real_from_modes(cls, trunc, modes: Mapping[Mode, complex]):
        """
        Real field: each listed a_k is set together with a_{-k} = -conj(a_k).
        Listing both k and -k is allowed only when the two values agree.
        """
        size = 2 * trunc + 1
        amps = np.zeros((size, size), dtype=complex)
        for mode, amp in modes.items():
            i, j = check_mode(mode, trunc)
            partner = (-mode[0], -mode[1])
            if partner in modes and not np.isclose(modes[partner], -np.conj(amp), rtol=1e-12, atol=0.0):
                raise ValueError(f"modes {mode} and {partner} give conflicting amplitudes "
                                 f"{amp} and {modes[partner]}; a real field needs a(-k) = -conj(a(k))")
            amps[i, j] = amp
            amps[2 * trunc - i, 2 * trunc - j] = -np.conj(amp)
        return cls(trunc, amps)

    def amp(self, mode):
        i, j = check_mode(mode, self.trunc)
        return complex(self.amps[i, j])

    def modes(self) -> Iterator[Mode]:
        """Stored modes with nonzero amplitude."""
        for i, j in zip(*np.nonzero(self.amps)):
            yield int(i) - self.trunc, int(j) - self.trunc

    def as_dict(self) -> Dict[Mode, complex]:
        return {m: self.amp(m) for m in self.modes()}

    def is_real(self, tol=1e-12):
        partner = -np.conj(self.amps[::-1, ::-1])
        scale = max(float(np.max(np.abs(self.amps))), 1.0)
        return bool(np.max(np.abs(self.amps - partner)) <= tol * scale)

    def real_part(self):
        """Orthogonal projection onto real fields."""
        return SpectralField(self.trunc, 0.5 * (self.amps - np.conj(self.amps[::-1, ::-1])))

    def _same(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.trunc != self.trunc:
            raise TruncationMismatch(f"N={self.trunc} vs N={other.trunc}")
        return other

    def __add__(self, other):
        other = self._same(other)
        if other is NotImplemented:
            return other
        return SpectralField(self.trunc, self.amps + other.amps)

    def __sub__(self, other):
        other = self._same(other)
        if other is NotImplemented:
            return other
        return SpectralField(self.trunc, self.amps - other.amps)

    def __mul__(self, scalar):
        return SpectralField(self.trunc, self.amps * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.trunc, -self.amps)

    def __repr__(self):
        return f"SpectralField(N={self.trunc}, modes={len(list(self.modes()))})"


def real_basis_field(trunc, mode):
    """
    Real unit field attached to a mode: sqrt(2) d(k) cos(k.x) for the
    canonical member of {k, -k}, and the matching sine field for the other.
    """
    i, j = check_mode(mode, trunc)
    size = 2 * trunc + 1
    amps = np.zeros((size, size), dtype=complex)
    c = 1.0 / np.sqrt(2.0)
    if is_canonical(mode):
        amps[i, j] = c
        amps[2 * trunc - i, 2 * trunc - j] = -c
    else:
        amps[i, j] = 1j * c
        amps[2 * trunc - i, 2 * trunc - j] = 1j * c
    return SpectralField(trunc, amps)


def random_real_field(trunc, rng, decay=1.0, scale=1.0):
    """Random real field with amplitudes ~ lambda^(-decay/2)."""
    _, _, lam, _, _ = wavenumbers(trunc)
    size = 2 * trunc + 1
    raw = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    weight = np.where(lam > 0, np.power(np.where(lam > 0, lam, 1.0), -decay / 2.0), 0.0)
    return SpectralField(trunc, scale * weight * raw).real_part()


def _check_pair(u, v):
    if u.trunc != v.trunc:
        raise TruncationMismatch(f"N={u.trunc} vs N={v.trunc}")


def inner_h(u, v):
    _check_pair(u, v)
    return complex(np.sum(u.amps * np.conj(v.amps)))


def inner_v(u, v):
    _check_pair(u, v)
    lam = wavenumbers(u.trunc)[2]
    return complex(np.sum(lam * u.amps * np.conj(v.amps)))


def velocity_coefficients(u):
    """Vector Fourier coefficients (vx, vy) = a_k d(k)."""
    _, _, _, dx, dy = wavenumbers(u.trunc)
    return u.amps * dx, u.amps * dy


def _leray_arrays(trunc, vx, vy):
    # amplitude along d(k) of the projected vector; the k-component drops out
    _, _, _, dx, dy = wavenumbers(trunc)
    amps = dx * vx + dy * vy
    amps[trunc, trunc] = 0.0
    return amps


def project_leray(raw: Mapping[Mode, Tuple[complex, complex]], trunc=None):
    """
    Leray-Hopf projection of vector Fourier coefficients onto H.

    Args:
        raw: mode -> (vx, vy) complex coefficients
        trunc: truncation level; inferred from the largest |k|_inf when None

    Returns:
        SpectralField with a_k = d(k) . (v(k) - (k.v(k)) k / |k|^2)
    """
    if trunc is None:
        trunc = max([max(abs(m[0]), abs(m[1])) for m in raw] + [1])
    size = 2 * trunc + 1
    vx = np.zeros((size, size), dtype=complex)
    vy = np.zeros((size, size), dtype=complex)
    for mode, (cx, cy) in raw.items():
        i, j = check_mode(mode, trunc)
        vx[i, j] = cx
        vy[i, j] = cy
    return SpectralField(trunc, _leray_arrays(trunc, vx, vy))


def apply_stokes(u):
    lam = wavenumbers(u.trunc)[2]
    return SpectralField(u.trunc, lam * u.amps)


def sobolev_norms(u):
    """H, V and A norms by Parseval; h <= v <= a since lambda >= 1."""
    lam = wavenumbers(u.trunc)[2]
    p = np.abs(u.amps) ** 2
    return Norms(
        h=float(np.sqrt(np.sum(p))),
        v=float(np.sqrt(np.sum(lam * p))),
        a=float(np.sqrt(np.sum(lam * lam * p))),
    )


def vorticity_norm(u):
    """||curl u||_H summed from the scalar curl coefficients i(kx vy - ky vx)."""
    kx, ky, _, _, _ = wavenumbers(u.trunc)
    vx, vy = velocity_coefficients(u)
    curl = 1j * (kx * vy - ky * vx)
    return float(np.sqrt(np.sum(np.abs(curl) ** 2)))


@lru_cache(maxsize=None)
def triad_table(trunc):
    """
    All (p, q) with p + q = k inside the truncation, flattened.

    Returns:
        tuple: (p_idx, q_idx, k_idx, weight) where weight = i (d(p).q)(d(q).d(k))
    """
    kx, ky, lam, dx, dy = wavenumbers(trunc)
    size = 2 * trunc + 1
    fkx, fky = kx.ravel(), ky.ravel()
    fdx, fdy = dx.ravel(), dy.ravel()
    valid = lam.ravel() > 0

    p = np.nonzero(valid)[0]
    pp, qq = np.meshgrid(p, p, indexing="ij")
    pp, qq = pp.ravel(), qq.ravel()
    sx = fkx[pp] + fkx[qq]
    sy = fky[pp] + fky[qq]
    keep = (np.abs(sx) <= trunc) & (np.abs(sy) <= trunc) & ((sx != 0) | (sy != 0))
    pp, qq, sx, sy = pp[keep], qq[keep], sx[keep], sy[keep]
    kk = (sx + trunc) * size + (sy + trunc)

    advect = fdx[pp] * fkx[qq] + fdy[pp] * fky[qq]
    align = fdx[qq] * fdx[kk] + fdy[qq] * fdy[kk]
    weight = 1j * advect * align
    nz = weight != 0
    tables = (pp[nz], qq[nz], kk[nz], weight[nz])
    for arr in tables:
        arr.setflags(write=False)
    logger.debug("triad table N=%d: %d interacting pairs", trunc, len(tables[0]))
    return tables


def convolve_amps(trunc, a, b):
    """Galerkin B on raw amplitude arrays (the exact double-sum reference)."""
    p_idx, q_idx, k_idx, weight = triad_table(trunc)
    size = 2 * trunc + 1
    terms = weight * a.ravel()[p_idx] * b.ravel()[q_idx]
    out = np.bincount(k_idx, weights=terms.real, minlength=size * size) + 1j * np.bincount(
        k_idx, weights=terms.imag, minlength=size * size
    )
    return out.reshape(size, size)


def nonlinear_b(u, v):
    """Galerkin projection of B(u, v) = P_H(u . grad v) by exact convolution."""
    _check_pair(u, v)
    return SpectralField(u.trunc, convolve_amps(u.trunc, u.amps, v.amps))


def _to_grid(trunc, coeffs, n_grid):
    grid = np.zeros((n_grid, n_grid), dtype=complex)
    k = np.arange(-trunc, trunc + 1) % n_grid
    grid[np.ix_(k, k)] = coeffs
    return grid


def _from_grid(trunc, grid):
    n_grid = grid.shape[0]
    k = np.arange(-trunc, trunc + 1) % n_grid
    return grid[np.ix_(k, k)]


def nonlinear_b_fft(u, v):
    """
    Transform-based B(u, v). The grid is padded to M > 3N so the product of
    two degree-N fields aliases nothing back into |k|_inf <= N.
    """
    _check_pair(u, v)
    trunc = u.trunc
    n_grid = 3 * trunc + 2
    kx, ky, _, _, _ = wavenumbers(trunc)
    scale = n_grid * n_grid

    def phys(coeffs):
        return np.fft.ifft2(_to_grid(trunc, coeffs, n_grid)) * scale

    ux, uy = (phys(c) for c in velocity_coefficients(u))
    out = []
    for comp in velocity_coefficients(v):
        gx = phys(1j * kx * comp)
        gy = phys(1j * ky * comp)
        out.append(_from_grid(trunc, np.fft.fft2(ux * gx + uy * gy) / scale))
    return SpectralField(trunc, _leray_arrays(trunc, out[0], out[1]))


def to_physical(u, n_grid=32):
    """Velocity components on an n_grid x n_grid grid of [0, 2pi)^2 (complex dtype)."""
    if n_grid <= 2 * u.trunc:
        raise ValueError(f"grid {n_grid} too coarse for N={u.trunc}")
    vx, vy = velocity_coefficients(u)
    scale = n_grid * n_grid
    return (
        np.fft.ifft2(_to_grid(u.trunc, vx, n_grid)) * scale,
        np.fft.ifft2(_to_grid(u.trunc, vy, n_grid)) * scale,
    )


def enstrophy_defect(u):
    """<B(u,u), Au>; vanishes for real fields on the periodic torus."""
    return inner_h(nonlinear_b(u, u), apply_stokes(u))
