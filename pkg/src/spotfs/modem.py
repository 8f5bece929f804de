"""Superimposed-pilot frames, constellations and the transmit chain.

Symbol containers are plain vectors in ``l + M*k`` order with optional
leading batch axes; :class:`~spotfs.grid.DdFrame` wraps a single frame when
the matrix view is wanted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .channel import (
    ChannelRealization,
    SparseEffectiveChannel,
    TapStructure,
    awgn,
    build_effective_channel,
)
from .grid import DdGrid, add_cp, heisenberg_tx, remove_cp, unvec, vec, wigner_rx

POWER_TOL = 1e-12


@dataclass(frozen=True)
class PowerSplit:
    """Per-bin data and pilot powers with ``sigma2_d + sigma2_p = 1``."""

    sigma2_d: float
    sigma2_p: float

    def __post_init__(self):
        if self.sigma2_d < 0 or self.sigma2_p < 0:
            raise ValueError(f"powers must be nonnegative, got {self}")
        if abs(self.sigma2_d + self.sigma2_p - 1.0) > POWER_TOL:
            raise ValueError(f"sigma2_d + sigma2_p must equal 1, got {self.sigma2_d + self.sigma2_p}")

    @classmethod
    def from_pilot(cls, sigma2_p: float) -> "PowerSplit":
        return cls(1.0 - float(sigma2_p), float(sigma2_p))


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-energy symbol alphabet with a bit labelling per point.

    ``labels[j]`` holds the bits of ``points[j]``, most significant first.
    """

    points: np.ndarray
    bits_per_symbol: int
    name: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        object.__setattr__(self, "points", pts)
        if pts.size != 2**self.bits_per_symbol:
            raise ValueError("constellation size must be 2**bits_per_symbol")
        if abs(np.mean(np.abs(pts) ** 2) - 1.0) > 1e-12:
            raise ValueError("constellation must have unit average energy")

    @property
    def S(self) -> int:
        return self.points.size

    @cached_property
    def labels(self) -> np.ndarray:
        j = np.arange(self.S)[:, None]
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)[None, :]
        return (j >> shifts) & 1

    def bits_to_index(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        if bits.shape[-1] % self.bits_per_symbol:
            raise ValueError(f"bit count {bits.shape[-1]} not a multiple of {self.bits_per_symbol}")
        groups = bits.reshape(*bits.shape[:-1], -1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return groups @ weights

    def index_to_bits(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        return self.labels[idx].reshape(*idx.shape[:-1], -1)

    def nearest(self, symbols: np.ndarray) -> np.ndarray:
        """Index of the closest point, ties toward the lowest index."""
        d = np.abs(np.asarray(symbols)[..., None] - self.points) ** 2
        return np.argmin(d, axis=-1)


def bpsk() -> Constellation:
    """Bit 0 maps to +1, bit 1 to -1."""
    return Constellation(np.array([1.0, -1.0]), 1, "bpsk")


def qpsk() -> Constellation:
    """Gray-labelled QPSK: first bit on the real part, second on the imaginary part."""
    labels = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    pts = ((1 - 2 * labels[:, 0]) + 1j * (1 - 2 * labels[:, 1])) / np.sqrt(2)
    return Constellation(pts, 2, "qpsk")


CONSTELLATIONS = {"bpsk": bpsk, "qpsk": qpsk}


def get_constellation(name: str) -> Constellation:
    try:
        return CONSTELLATIONS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}; choose from {sorted(CONSTELLATIONS)}") from None


def map_bits(bits: np.ndarray, constellation: Constellation, sigma2_d: float, n_symbols: int | None = None) -> np.ndarray:
    """Map bits to data symbols ``sqrt(sigma2_d) * points[index]``.

    Parameters
    ----------
    bits : array_like of {0, 1}, shape (..., n_symbols * bits_per_symbol)
    constellation : Constellation
    sigma2_d : float
        Per-symbol data power.
    n_symbols : int, optional
        Expected symbol count; checked when given.
    """
    bits = np.asarray(bits)
    if n_symbols is not None and bits.shape[-1] != n_symbols * constellation.bits_per_symbol:
        raise ValueError(f"expected {n_symbols * constellation.bits_per_symbol} bits, got {bits.shape[-1]}")
    return np.sqrt(sigma2_d) * constellation.points[constellation.bits_to_index(bits)]


def demap(symbols: np.ndarray, constellation: Constellation, sigma2_d: float = 1.0) -> np.ndarray:
    """Hard-decision demapping back to bits."""
    scale = np.sqrt(sigma2_d) if sigma2_d > 0 else 1.0
    return constellation.index_to_bits(constellation.nearest(np.asarray(symbols) / scale))


@dataclass(frozen=True, eq=False)
class PilotSequence:
    """Known pilot symbols ``x_p`` (vector, ``l + M*k`` order) with power ``sigma2_p`` each."""

    grid: DdGrid
    values: np.ndarray
    sigma2_p: float
    seed: int | None = None

    @property
    def frame(self) -> np.ndarray:
        return unvec(self.values, self.grid)


def gen_pilots(grid: DdGrid, sigma2_p: float, seed=None, rng: np.random.Generator | None = None) -> PilotSequence:
    """QPSK pilots scaled to exact per-symbol power ``sigma2_p``.

    Either a ``seed`` or an explicit generator may be supplied; a generator
    takes precedence.  Pilots can also be redrawn in batches via
    :func:`draw_pilot_values`.
    """
    if sigma2_p < 0:
        raise ValueError(f"pilot power must be nonnegative, got {sigma2_p}")
    if rng is None:
        rng = np.random.default_rng(seed)
    return PilotSequence(grid, draw_pilot_values(grid.MN, sigma2_p, rng), float(sigma2_p), seed)


def draw_pilot_values(n: int, sigma2_p: float, rng: np.random.Generator, size=()) -> np.ndarray:
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    idx = rng.integers(0, 4, size=shape + (n,))
    return np.sqrt(sigma2_p) * qpsk().points[idx]


def superimpose(x_d: np.ndarray, x_p: np.ndarray) -> np.ndarray:
    """``x = x_d + x_p``; accepts vectors or :class:`PilotSequence` for the pilot."""
    if isinstance(x_p, PilotSequence):
        x_p = x_p.values
    x_d, x_p = np.asarray(x_d), np.asarray(x_p)
    if x_d.shape[-1] != x_p.shape[-1]:
        raise ValueError(f"grid mismatch: data length {x_d.shape[-1]}, pilot length {x_p.shape[-1]}")
    return x_d + x_p


def time_domain_channel(s_cp: np.ndarray, real: ChannelRealization, MN: int, cp_len: int) -> np.ndarray:
    """Linear doubly-dispersive channel applied to a CP-extended signal.

    Sample ``t`` of the output is ``sum_i h_i z^(k_i (t - cp_len - l_i)) s_cp[t - l_i]``
    with ``z = exp(2j pi / MN)``, so after CP removal it equals the circular
    model ``sum_i h_i Pi^l_i Delta^k_i s``.
    """
    out = np.zeros_like(s_cp, dtype=complex)
    t = np.arange(s_cp.shape[-1])
    for hi, li, ki in zip(real.h, real.taps.l, real.taps.k):
        li, ki = int(li), int(ki)
        ph = np.exp(2j * np.pi * ((ki * (t[li:] - cp_len - li)) % MN) / MN)
        out[..., li:] += hi * ph * s_cp[..., : s_cp.shape[-1] - li]
    return out


def transmit_pipeline(x: np.ndarray, real: ChannelRealization, grid: DdGrid) -> np.ndarray:
    """Noiseless received vector via Heisenberg, CP, time-domain channel and Wigner."""
    cp = real.taps.l_max
    s = add_cp(heisenberg_tx(unvec(x, grid), grid), cp)
    r = remove_cp(time_domain_channel(s, real, grid.MN, cp), cp)
    return vec(wigner_rx(r, grid))


def transmit_through(
    x: np.ndarray,
    real: ChannelRealization,
    grid: DdGrid,
    sigma2_w: float,
    rng: np.random.Generator | None = None,
    path: str = "sparse",
    structure: TapStructure | None = None,
) -> np.ndarray:
    """Received delay-Doppler vector ``y = H_eff x + w``.

    ``path="sparse"`` multiplies by the Q-sparse effective channel (production);
    ``path="pipeline"`` runs the full time-domain chain (oracle).
    """
    if path == "sparse":
        y = build_effective_channel(grid, real.taps, real.h, structure).matvec(x)
    elif path == "pipeline":
        y = transmit_pipeline(x, real, grid)
    else:
        raise ValueError(f"unknown path {path!r}")
    if sigma2_w > 0:
        if rng is None:
            raise ValueError("a generator is required for nonzero noise")
        y = y + awgn(grid.MN, sigma2_w, rng, size=y.shape[:-1])
    return y


# -- embedded-pilot baseline frame ----------------------------------------------


class LayoutError(ValueError):
    """Guard region of an embedded-pilot frame does not fit."""


@dataclass(frozen=True, eq=False)
class EpLayout:
    """Single pilot at ``(l_p, k_p)`` with guard zeros covering
    ``|l - l_p| <= l_max`` and ``|k - k_p| <= 2 k_max`` (cyclically).
    """

    grid: DdGrid
    l_max: int
    k_max: int
    l_p: int | None = None
    k_p: int | None = None

    def __post_init__(self):
        M, N = self.grid.M, self.grid.N
        if self.l_p is None:
            object.__setattr__(self, "l_p", M // 2)
        if self.k_p is None:
            object.__setattr__(self, "k_p", N // 2)
        if 2 * self.l_max + 1 > M or 4 * self.k_max + 1 > N:
            raise LayoutError(
                f"guard {2 * self.l_max + 1} x {4 * self.k_max + 1} does not fit in a {M} x {N} frame"
            )

    @property
    def guard_size(self) -> int:
        return (2 * self.l_max + 1) * (4 * self.k_max + 1)

    @property
    def pilot_power(self) -> float:
        """Pilot energy equal to the number of bins it displaces."""
        return float(self.guard_size)

    @property
    def pilot_index(self) -> int:
        return self.l_p + self.grid.M * self.k_p

    @cached_property
    def data_mask(self) -> np.ndarray:
        M, N = self.grid.M, self.grid.N
        l = np.arange(M)[:, None]
        k = np.arange(N)[None, :]
        dl = np.minimum((l - self.l_p) % M, (self.l_p - l) % M)
        dk = np.minimum((k - self.k_p) % N, (self.k_p - k) % N)
        guard = (dl <= self.l_max) & (dk <= 2 * self.k_max)
        mask = vec(~guard)
        mask.setflags(write=False)
        return mask

    @property
    def n_data(self) -> int:
        return int(self.data_mask.sum())

    def frame(self, data_symbols: np.ndarray) -> np.ndarray:
        """Place ``data_symbols`` (shape ``(..., n_data)``) around the pilot."""
        data_symbols = np.asarray(data_symbols)
        x = np.zeros(data_symbols.shape[:-1] + (self.grid.MN,), dtype=complex)
        x[..., self.data_mask] = data_symbols
        x[..., self.pilot_index] = np.sqrt(self.pilot_power)
        return x

    def pilot_vector(self) -> np.ndarray:
        x = np.zeros(self.grid.MN, dtype=complex)
        x[self.pilot_index] = np.sqrt(self.pilot_power)
        return x
