"""Delay-Doppler channel profiles, realizations and effective-channel structure.

The effective channel ``H_eff = B_rx (sum_i h_i Pi^l_i Delta^k_i) B_tx`` has
exactly one unit-modulus entry per row and column for every tap, so it is
stored as two ``(MN, Q)`` index tables plus an ``(MN, Q)`` phase table:

* ``cols[a, i]``  column hit by tap ``i`` in row ``a``  (the set I(a))
* ``rows[b, i]``  row hit by tap ``i`` in column ``b``  (the set J(b))
* ``phase[a, i]`` the phase factor at ``(a, cols[a, i])``

Dense constructions exist only as oracles and refuse large grids.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import DdGrid, OtfsOperators, doppler_power, permutation_power

DENSE_ORACLE_CAP = 4096


class TapCollisionError(ValueError):
    """Two paths landed on the same integer ``(l, k)`` tap."""

    def __init__(self, collisions):
        self.collisions = collisions
        desc = ", ".join(f"paths {i} and {j} -> (l={l}, k={k})" for i, j, l, k in collisions)
        super().__init__(f"tap collision: {desc}")


@dataclass(frozen=True)
class Path_:
    delay_s: float
    doppler_hz: float
    power_db: float


@dataclass(frozen=True)
class ChannelProfile:
    """Physical path list: delays in seconds, Doppler in Hz, powers in dB."""

    paths: tuple
    normalize_total_power: bool = True

    def __post_init__(self):
        if len(self.paths) < 1:
            raise ValueError("channel profile needs at least one path")
        for p in self.paths:
            if p.delay_s < 0:
                raise ValueError(f"negative path delay {p.delay_s}")

    @classmethod
    def from_lists(cls, delays_s, dopplers_hz, powers_db, normalize_total_power=True):
        paths = tuple(Path_(float(d), float(v), float(p)) for d, v, p in zip(delays_s, dopplers_hz, powers_db))
        return cls(paths, normalize_total_power)

    @property
    def Q(self) -> int:
        return len(self.paths)

    def linear_powers(self) -> np.ndarray:
        lin = 10.0 ** (np.array([p.power_db for p in self.paths]) / 10.0)
        if self.normalize_total_power:
            lin = lin / lin.sum()
        return lin


def load_profile(path, normalize_total_power: bool = True) -> ChannelProfile:
    """Read a profile file with one ``delay_us, doppler_hz, power_db`` line per path.

    Blank lines and ``#`` comments are ignored; a header line naming the
    columns is allowed.
    """
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    for rec in csv.reader(lines, skipinitialspace=True):
        if rec and rec[0].strip() == "delay_us":
            continue
        if len(rec) != 3:
            raise ValueError(f"{path}: expected 3 fields per line, got {rec!r}")
        d_us, nu, p_db = (float(x) for x in rec)
        rows.append((d_us * 1e-6, nu, p_db))
    if not rows:
        raise ValueError(f"{path}: no paths found")
    d, v, p = zip(*rows)
    return ChannelProfile.from_lists(d, v, p, normalize_total_power)


def load_taps(path, normalize_total_power: bool = True) -> "ChannelTaps":
    """Read a pre-quantized tap file with one ``l, k, power_db`` line per tap."""
    taps = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    for rec in csv.reader(lines, skipinitialspace=True):
        if rec and rec[0].strip() == "l":
            continue
        l, k, p_db = int(rec[0]), int(rec[1]), float(rec[2])
        taps.append((l, k, 10.0 ** (p_db / 10.0)))
    ls, ks, var = (np.array(x) for x in zip(*taps))
    if normalize_total_power:
        var = var / var.sum()
    return ChannelTaps(ls, ks, var)


@dataclass(frozen=True, eq=False)
class ChannelTaps:
    """Integer delay/Doppler taps with their prior variances."""

    l: np.ndarray
    k: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "l", np.asarray(self.l, dtype=int))
        object.__setattr__(self, "k", np.asarray(self.k, dtype=int))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=float))
        if not (self.l.shape == self.k.shape == self.var.shape) or self.l.ndim != 1 or self.l.size < 1:
            raise ValueError("tap arrays must be equal-length, non-empty 1-D arrays")
        if np.any(self.l < 0):
            raise ValueError("delay taps must be nonnegative")
        if np.any(self.var < 0):
            raise ValueError("tap variances must be nonnegative")
        seen = {}
        collisions = []
        for i, key in enumerate(zip(self.l.tolist(), self.k.tolist())):
            if key in seen:
                collisions.append((seen[key], i, *key))
            seen.setdefault(key, i)
        if collisions:
            raise TapCollisionError(collisions)

    @property
    def Q(self) -> int:
        return self.l.size

    @property
    def l_max(self) -> int:
        return int(self.l.max())

    @property
    def k_max(self) -> int:
        return int(np.abs(self.k).max())

    @property
    def C_h(self) -> np.ndarray:
        return np.diag(self.var)

    @property
    def sigma2_h(self) -> float:
        return float(self.var.sum())

    @property
    def sigma2_h_inv_sum(self) -> float:
        """Sum of reciprocal tap variances (infinite if any tap has zero power)."""
        with np.errstate(divide="ignore"):
            return float(np.sum(1.0 / self.var))

    def check_grid(self, grid: DdGrid):
        if self.l_max >= grid.M:
            raise ValueError(f"delay tap {self.l_max} does not fit in M={grid.M}")
        keys = set(zip(self.l.tolist(), (self.k % grid.N).tolist()))
        if len(keys) != self.Q:
            raise TapCollisionError([(-1, -1, l, k) for l, k in zip(self.l, self.k)])


def quantize_profile(profile: ChannelProfile, grid: DdGrid) -> ChannelTaps:
    """Round delays and Dopplers to the nearest integer taps of ``grid``."""
    l = np.array([round(p.delay_s * grid.M * grid.delta_f) for p in profile.paths], dtype=int)
    k = np.array([round(p.doppler_hz * grid.N * grid.T) for p in profile.paths], dtype=int)
    return ChannelTaps(l, k, profile.linear_powers())


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    taps: ChannelTaps
    h: np.ndarray


def sample_gains(var: np.ndarray, rng: np.random.Generator, size=()) -> np.ndarray:
    """Draw ``CN(0, var_i)`` gains; ``size`` is prepended as batch shape."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    z = rng.standard_normal(shape + (var.size, 2))
    return np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])


def sample_channel(taps: ChannelTaps, rng: np.random.Generator) -> ChannelRealization:
    return ChannelRealization(taps, sample_gains(taps.var, rng))


def awgn(n: int, var: float, rng: np.random.Generator, size=()) -> np.ndarray:
    """Circularly-symmetric complex Gaussian noise of total variance ``var``."""
    if var < 0:
        raise ValueError(f"noise variance must be nonnegative, got {var}")
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    z = rng.standard_normal(shape + (n, 2))
    return np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])


@dataclass(frozen=True, eq=False)
class TapStructure:
    """Index and phase tables of ``Gamma_i = B_rx Pi^l_i Delta^k_i B_tx`` for all taps."""

    grid: DdGrid
    taps: ChannelTaps
    cols: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, grid: DdGrid, taps: ChannelTaps) -> "TapStructure":
        taps.check_grid(grid)
        M, N, MN = grid.M, grid.N, grid.MN
        a = np.arange(MN)
        l_out, k_out = a % M, a // M
        li, ki = taps.l[None, :], taps.k[None, :]
        lc = (l_out[:, None] - li) % M
        kc = (k_out[:, None] - ki) % N
        cols = lc + M * kc
        # z^(k_i [l - l_i]_M), times exp(-2j pi k / N) where the delay shift wraps
        ph_idx = (ki * lc) % MN
        phase = np.exp(2j * np.pi * ph_idx / MN)
        wrap = l_out[:, None] < li
        phase = np.where(wrap, phase * np.exp(-2j * np.pi * k_out[:, None] / N), phase)
        rows = np.empty_like(cols)
        tap_idx = np.broadcast_to(np.arange(taps.Q), cols.shape)
        rows[cols, tap_idx] = a[:, None]
        for arr in (cols, rows, phase):
            arr.setflags(write=False)
        return cls(grid, taps, cols, rows, phase)

    def apply_gamma(self, x: np.ndarray) -> np.ndarray:
        """``Omega`` matrix ``[Gamma_1 x, ..., Gamma_Q x]`` of shape ``(..., MN, Q)``."""
        x = np.asarray(x)
        return self.phase * x[..., self.cols]


@dataclass(frozen=True, eq=False)
class SparseEffectiveChannel:
    """Q-sparse ``H_eff`` for given tap gains (true or estimated)."""

    structure: TapStructure
    gains: np.ndarray

    @property
    def grid(self) -> DdGrid:
        return self.structure.grid

    @property
    def taps(self) -> ChannelTaps:
        return self.structure.taps

    @property
    def row_index(self) -> np.ndarray:
        """``row_index[a]`` lists the nonzero columns of row ``a``."""
        return self.structure.cols

    @property
    def col_index(self) -> np.ndarray:
        """``col_index[b]`` lists the nonzero rows of column ``b``."""
        return self.structure.rows

    @cached_property
    def values(self) -> np.ndarray:
        """``values[..., a, i] = H_eff(a, cols[a, i])``."""
        return np.asarray(self.gains)[..., None, :] * self.structure.phase

    def entry(self, a: int, b: int) -> complex:
        hit = np.nonzero(self.structure.cols[a] == b)[0]
        if hit.size == 0:
            return 0j
        return complex(self.values[..., a, hit[0]])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return np.sum(self.values * np.asarray(x)[..., self.structure.cols], axis=-1)

    def to_dense(self) -> np.ndarray:
        MN = self.grid.MN
        _dense_guard(MN)
        out = np.zeros((MN, MN), dtype=complex)
        for i in range(self.taps.Q):
            out[np.arange(MN), self.structure.cols[:, i]] += self.values[:, i]
        return out


def build_effective_channel(grid: DdGrid, taps: ChannelTaps, gains, structure: TapStructure | None = None) -> SparseEffectiveChannel:
    if structure is None:
        structure = TapStructure.build(grid, taps)
    return SparseEffectiveChannel(structure, np.asarray(gains, dtype=complex))


def build_omega(symbol_vec: np.ndarray, structure: TapStructure) -> np.ndarray:
    """Concatenated matrix ``[Gamma_1 x, ..., Gamma_Q x]`` (``MN x Q``)."""
    return structure.apply_gamma(symbol_vec)


def _dense_guard(MN: int, cap: int = DENSE_ORACLE_CAP):
    if MN > cap:
        raise MemoryError(f"dense oracle refused: MN={MN} exceeds cap {cap}")


def build_dense_H(real: ChannelRealization, grid: DdGrid, cap: int = DENSE_ORACLE_CAP) -> np.ndarray:
    """Time-domain ``H = sum_i h_i Pi^l_i Delta^k_i`` as a dense matrix (oracle only)."""
    MN = grid.MN
    _dense_guard(MN, cap)
    H = np.zeros((MN, MN), dtype=complex)
    eye = np.eye(MN)
    for hi, li, ki in zip(real.h, real.taps.l, real.taps.k):
        # column j of Pi^l is e_{j+l}; Delta^k scales column j by z^(k j)
        H += hi * permutation_power(int(li), eye.T).T * doppler_power(int(ki), MN)[None, :]
    return H


def build_dense_heff(real: ChannelRealization, grid: DdGrid, cap: int = DENSE_ORACLE_CAP) -> np.ndarray:
    """``B_rx H B_tx`` by explicit Kronecker products (oracle only)."""
    ops = OtfsOperators(grid)
    return ops.B_rx() @ build_dense_H(real, grid, cap) @ ops.B_tx()


def default_profile(normalize_total_power: bool = True) -> ChannelProfile:
    """The five-path profile shipped as ``data/five_path_profile.csv``."""
    return load_profile(data_path("five_path_profile.csv"), normalize_total_power)


def data_path(name: str) -> Path:
    return Path(__file__).with_name("data") / name


def taps_from_arrays(l: Sequence[int], k: Sequence[int], var: Sequence[float]) -> ChannelTaps:
    return ChannelTaps(np.asarray(l), np.asarray(k), np.asarray(var, dtype=float))
