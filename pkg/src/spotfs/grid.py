"""Delay-Doppler frame geometry and the OTFS transform chain.

Vectors over the delay-Doppler grid always use the ``l + M*k`` ordering,
i.e. column-major flattening of an ``M x N`` frame (delay index on rows,
Doppler index on columns).  Every function accepts optional leading batch
dimensions so Monte-Carlo code can push many frames through at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class DdGrid:
    """Geometry of an ``M x N`` delay-Doppler frame.

    The symbol duration is always ``1 / delta_f`` so the time-frequency
    lattice is critically sampled.
    """

    M: int
    N: int
    delta_f: float = 15e3
    fc: float = 4e9

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 1 or self.N < 1:
            raise ValueError(f"grid dimensions must be positive integers, got M={self.M}, N={self.N}")
        if not self.delta_f > 0:
            raise ValueError(f"delta_f must be positive, got {self.delta_f}")

    @property
    def T(self) -> float:
        return 1.0 / self.delta_f

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def delay_resolution(self) -> float:
        """Delay bin width in seconds (``T / M``)."""
        return self.T / self.M

    @property
    def doppler_resolution(self) -> float:
        """Doppler bin width in Hz (``1 / (N T)``)."""
        return 1.0 / (self.N * self.T)


@dataclass(frozen=True, eq=False)
class DdFrame:
    """An ``M x N`` complex symbol grid tied to its geometry."""

    grid: DdGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.grid.M, self.grid.N):
            raise ValueError(f"expected frame of shape ({self.grid.M}, {self.grid.N}), got {vals.shape}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_vector(cls, v, grid: DdGrid) -> "DdFrame":
        return cls(grid, unvec(v, grid))

    def vector(self) -> np.ndarray:
        return vec(self.values)


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries ``exp(-2j*pi*p*q/n) / sqrt(n)``."""
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


@dataclass(frozen=True)
class OtfsOperators:
    """Transform factors for one grid.

    Only rectangular pulses are supported, so the transmit and receive pulse
    matrices are identities and ``pulse`` is fixed to ``"rectangular"``.
    The FFT paths below are what the transforms use; the explicit DFT
    matrices are kept for oracles and for the Kronecker forms
    ``B_tx = F_N^H (x) I_M`` and ``B_rx = F_N (x) I_M``.
    """

    grid: DdGrid
    pulse: str = field(default="rectangular")

    def __post_init__(self):
        if self.pulse != "rectangular":
            raise ValueError(f"only rectangular pulses are supported, got {self.pulse!r}")

    @cached_property
    def dft_M(self) -> np.ndarray:
        return dft_matrix(self.grid.M)

    @cached_property
    def dft_N(self) -> np.ndarray:
        return dft_matrix(self.grid.N)

    @property
    def z(self) -> complex:
        return np.exp(2j * np.pi / self.grid.MN)

    def B_tx(self) -> np.ndarray:
        return np.kron(self.dft_N.conj().T, np.eye(self.grid.M))

    def B_rx(self) -> np.ndarray:
        return np.kron(self.dft_N, np.eye(self.grid.M))

    def isfft(self, frame):
        return isfft(frame, self.grid)

    def sfft(self, tf):
        return sfft(tf, self.grid)

    def heisenberg_tx(self, frame):
        return heisenberg_tx(frame, self.grid)

    def wigner_rx(self, r):
        return wigner_rx(r, self.grid)


def _check_frame(frame: np.ndarray, grid: DdGrid) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.shape[-2:] != (grid.M, grid.N):
        raise ValueError(f"expected frame of shape (..., {grid.M}, {grid.N}), got {frame.shape}")
    return frame


def _check_vector(v: np.ndarray, grid: DdGrid) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim == 0 or v.shape[-1] != grid.MN:
        raise ValueError(f"expected vector of length {grid.MN}, got shape {v.shape}")
    return v


def vec(frame: np.ndarray) -> np.ndarray:
    """Flatten ``(..., M, N)`` frames to ``(..., M*N)`` vectors, index ``l + M*k``."""
    frame = np.asarray(frame)
    return np.swapaxes(frame, -1, -2).reshape(*frame.shape[:-2], -1)


def unvec(v: np.ndarray, grid: DdGrid) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = _check_vector(v, grid)
    return np.swapaxes(v.reshape(*v.shape[:-1], grid.N, grid.M), -1, -2)


def isfft(frame: np.ndarray, grid: DdGrid) -> np.ndarray:
    """Delay-Doppler to time-frequency: ``F_M X F_N^H``."""
    frame = _check_frame(frame, grid)
    return np.fft.ifft(np.fft.fft(frame, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def sfft(tf: np.ndarray, grid: DdGrid) -> np.ndarray:
    """Time-frequency to delay-Doppler: ``F_M^H Y F_N``."""
    tf = _check_frame(tf, grid)
    return np.fft.fft(np.fft.ifft(tf, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def heisenberg_tx(frame: np.ndarray, grid: DdGrid) -> np.ndarray:
    """Time-domain samples ``s = (F_N^H kron I_M) vec(X)``."""
    frame = _check_frame(frame, grid)
    return vec(np.fft.ifft(frame, axis=-1, norm="ortho"))


def wigner_rx(r: np.ndarray, grid: DdGrid) -> np.ndarray:
    """Delay-Doppler frame ``Y`` with ``vec(Y) = (F_N kron I_M) r``."""
    r = _check_vector(r, grid)
    return np.fft.fft(unvec(r, grid), axis=-1, norm="ortho")


def add_cp(s: np.ndarray, l_max: int) -> np.ndarray:
    s = np.asarray(s)
    n = s.shape[-1]
    if not 0 <= l_max < n:
        raise ValueError(f"cyclic prefix length must be in [0, {n}), got {l_max}")
    return np.concatenate([s[..., n - l_max:], s], axis=-1)


def remove_cp(s: np.ndarray, l_max: int) -> np.ndarray:
    s = np.asarray(s)
    if not 0 <= l_max < s.shape[-1]:
        raise ValueError(f"cyclic prefix length must be in [0, {s.shape[-1]}), got {l_max}")
    return s[..., l_max:]


def permutation_power(l: int, v: np.ndarray) -> np.ndarray:
    """Apply ``Pi^l``: cyclic shift down by ``l``, ``out[j] = v[(j - l) mod len]``."""
    v = np.asarray(v)
    n = v.shape[-1]
    if not 0 <= l < n:
        raise ValueError(f"shift must be in [0, {n}), got {l}")
    return np.roll(v, l, axis=-1)


def doppler_power(k: int, n: int) -> np.ndarray:
    """Diagonal of ``Delta^k``: entry ``j`` is ``z^(k*j)`` with ``z = exp(2j*pi/n)``."""
    j = np.arange(n)
    return np.exp(2j * np.pi * ((k * j) % n) / n)
