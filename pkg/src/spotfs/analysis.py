"""Closed-form link metrics: SINR bound, optimal pilot power, spectral
efficiency of the four schemes and operation counts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import ChannelTaps
from .grid import DdGrid
from .modem import LayoutError, PowerSplit

SCHEMES = ("SP-NI", "SP-I", "EP", "CPA")


@dataclass(frozen=True)
class LinkParams:
    """Average-channel quantities that the SINR bound depends on.

    ``sigma2_h`` is the total tap power and ``sigma2_h_tilde`` the sum of
    reciprocal tap powers.
    """

    grid: DdGrid
    Q: int
    sigma2_h: float
    sigma2_h_tilde: float
    sigma2_w: float
    split: PowerSplit = PowerSplit(0.7, 0.3)

    def __post_init__(self):
        if self.Q < 1 or not self.sigma2_h > 0 or not self.sigma2_h_tilde > 0:
            raise ValueError(f"invalid link parameters {self}")
        if not self.sigma2_w > 0:
            raise ValueError("noise variance must be positive")

    @classmethod
    def from_taps(cls, grid: DdGrid, taps: ChannelTaps, sigma2_w: float, split: PowerSplit = PowerSplit(0.7, 0.3)):
        return cls(grid, taps.Q, taps.sigma2_h, taps.sigma2_h_inv_sum, sigma2_w, split)

    @classmethod
    def from_snr(cls, grid: DdGrid, taps: ChannelTaps, snr_db: float, split: PowerSplit = PowerSplit(0.7, 0.3)):
        return cls.from_taps(grid, taps, snr_to_noise(snr_db), split)

    def with_split(self, split: PowerSplit) -> "LinkParams":
        return LinkParams(self.grid, self.Q, self.sigma2_h, self.sigma2_h_tilde, self.sigma2_w, split)


def snr_to_noise(snr_db: float) -> float:
    """Noise variance for an SNR of ``1 / sigma2_w`` in dB."""
    return 10.0 ** (-np.asarray(snr_db, dtype=float) / 10.0)


def sinr_lower_bound(params: LinkParams, mse) -> np.ndarray:
    """``sigma2_d (sigma2_h - B) / (sigma2_d B + Q sigma2_p B + sigma2_w)``."""
    mse = np.asarray(mse, dtype=float)
    if np.any(mse < 0) or np.any(mse > params.sigma2_h * (1 + 1e-12)):
        raise ValueError("mse must lie in [0, sigma2_h]")
    d, p = params.split.sigma2_d, params.split.sigma2_p
    return d * (params.sigma2_h - mse) / (d * mse + params.Q * p * mse + params.sigma2_w)


def pilot_mse_bound(params: LinkParams, sigma2_p) -> np.ndarray:
    """Lower bound on the SP-NI MSE as a function of pilot power (data power ``1 - sigma2_p``)."""
    p = np.asarray(sigma2_p, dtype=float)
    Q, MN = params.Q, params.grid.MN
    c = params.sigma2_h * (1.0 - p) + params.sigma2_w
    return Q**2 / (Q * MN * p / c + params.sigma2_h_tilde)


def composed_sinr(params: LinkParams, sigma2_p) -> np.ndarray:
    """SINR bound with the MSE bound substituted, evaluated directly."""
    p = np.asarray(sigma2_p, dtype=float)
    B = pilot_mse_bound(params, p)
    d = 1.0 - p
    return d * (params.sigma2_h - B) / (d * B + params.Q * p * B + params.sigma2_w)


@dataclass(frozen=True)
class SinrPolynomial:
    """``(N1 p^2 + N2 p + N3) / (D1 p^2 + D2 p + D3)`` in the pilot power ``p``.

    ``a, b, c`` are the coefficients of the quadratic whose root is the
    stationary point of the ratio.
    """

    N1: float
    N2: float
    N3: float
    D1: float
    D2: float
    D3: float
    form: str = "derived"

    @property
    def a(self) -> float:
        return self.D2 * self.N1 - self.D1 * self.N2

    @property
    def b(self) -> float:
        return 2.0 * (self.D3 * self.N1 - self.D1 * self.N3)

    @property
    def c(self) -> float:
        return self.D3 * self.N2 - self.D2 * self.N3

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        return (self.N1 * p**2 + self.N2 * p + self.N3) / (self.D1 * p**2 + self.D2 * p + self.D3)


def build_sinr_polynomial(params: LinkParams, form: str = "derived") -> SinrPolynomial:
    """Coefficients of the SINR bound as a rational function of pilot power.

    ``form="derived"`` gives coefficients that reproduce :func:`composed_sinr`
    exactly.  ``form="printed"`` keeps an alternative numerator set, with the
    same denominator, for comparison.
    """
    sh, st, sw = params.sigma2_h, params.sigma2_h_tilde, params.sigma2_w
    Q, MN = params.Q, params.grid.MN
    D1 = sh * Q**2 - sh * Q**3
    D2 = sh * Q**3 + sw * Q**3 - 2 * sh * Q**2 - sw * Q**2 + sw * Q * MN - sh * st * sw
    D3 = Q**2 * sh + Q**2 * sw + sh * st * sw + st * sw**2
    if form == "derived":
        A = sh * Q * MN - sh**2 * st + sh * Q**2
        C = (sh * st - Q**2) * (sh + sw)
        N1, N2, N3 = -A, A - C, C
    elif form == "printed":
        N1 = sh * Q * MN - sh * st + sh * Q**2
        N2 = sh * Q * MN - 2 * sh * st + sh * Q**2 - st * sw + Q * sh + Q**2 * sw
        N3 = sh * st + st * sw - Q**2 * sh - Q**2 * sw
    else:
        raise ValueError(f"unknown coefficient form {form!r}")
    return SinrPolynomial(N1, N2, N3, D1, D2, D3, form)


@dataclass(frozen=True)
class OptimalPower:
    sigma2_p_opt: float
    sigma2_d_opt: float
    grid_opt: float
    method: str
    metadata: dict = field(default_factory=dict)

    @property
    def split(self) -> PowerSplit:
        return PowerSplit(self.sigma2_d_opt, self.sigma2_p_opt)


def grid_maximizer(poly: SinrPolynomial, lo: float = 1e-3, hi: float = 0.999) -> float:
    """Maximize ``poly`` on ``[lo, hi]`` by a dense scan refined with Brent's method."""
    xs = np.linspace(lo, hi, 9981)
    vals = poly(xs)
    j = int(np.argmax(vals))
    a, b = xs[max(j - 1, 0)], xs[min(j + 1, xs.size - 1)]
    if j in (0, xs.size - 1):
        return float(xs[j])
    res = minimize_scalar(lambda p: -float(poly(p)), bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def optimal_pilot_power(params: LinkParams, form: str = "derived", check_tol: float = 1e-3) -> OptimalPower:
    """Pilot power maximizing the SINR bound.

    Both roots of the stationarity quadratic ``a p^2 + b p + c = 0`` are
    formed; the one inside ``(0, 1)`` with the larger SINR is returned.
    ``metadata["branch"]`` records whether that is the ``+sqrt`` root
    ``|(-b + sqrt(b^2 - 4ac)) / (2a)|`` or the other one.  A degenerate ``a``
    falls back to the linear root; a complex discriminant or no admissible
    root falls back to the grid maximizer, flagged in ``method``.  The result
    is always cross-checked against :func:`grid_maximizer`.
    """
    poly = build_sinr_polynomial(params, form)
    a, b, c = poly.a, poly.b, poly.c
    g = grid_maximizer(poly)
    meta = {"a": a, "b": b, "c": c, "form": form}
    scale = max(abs(a), abs(b), abs(c))
    candidates = []
    if abs(a) <= 1e-14 * scale:
        method = "linear"
        if b != 0:
            candidates.append((-c / b, "linear"))
    else:
        method = "closed-form"
        disc = b * b - 4 * a * c
        meta["discriminant"] = disc
        if disc >= 0:
            sq = math.sqrt(disc)
            plus = abs((-b + sq) / (2 * a))
            candidates += [(plus, "plus"), ((-b - sq) / (2 * a), "minus")]
            meta["plus_root"] = plus
    admissible = [(r, tag) for r, tag in candidates if 0.0 < r < 1.0]
    if admissible:
        root, tag = max(admissible, key=lambda rt: float(poly(rt[0])))
        meta["branch"] = tag
    else:
        meta["rejected_roots"] = [r for r, _ in candidates]
        root, method = g, "grid-fallback"
        meta["branch"] = "grid"
    meta["grid_mismatch"] = abs(root - g)
    if abs(root - g) > check_tol:
        warnings.warn(f"closed-form pilot power {root:.6f} differs from grid maximizer {g:.6f}", RuntimeWarning)
    return OptimalPower(float(root), 1.0 - float(root), g, method, meta)


# -- spectral efficiency ---------------------------------------------------------


def ep_overhead(l_max: int, k_max: int, grid: DdGrid) -> float:
    """Fraction of the frame taken by the embedded pilot and its guard."""
    guard = (2 * l_max + 1) * (4 * k_max + 1)
    if guard > grid.MN:
        raise LayoutError(f"guard of {guard} bins exceeds the {grid.MN}-bin frame")
    return guard / grid.MN


def reference_sinr(sigma2_h: float, mse, sigma2_w: float, sigma2_d: float = 1.0):
    """SINR of a scheme whose data does not overlap its pilots."""
    mse = np.asarray(mse, dtype=float)
    return (sigma2_h - mse) * sigma2_d / (sigma2_w + sigma2_d * mse)


def spectral_efficiency(scheme: str, params: LinkParams, mse, eta: float = 0.0):
    """Bits/s/Hz of ``scheme`` given its channel-estimate MSE.

    ``eta`` is the pilot overhead and only enters the EP rate.
    """
    if scheme in ("SP-NI", "SP-I"):
        return np.log2(1.0 + sinr_lower_bound(params, mse))
    if scheme == "EP":
        return (1.0 - eta) * np.log2(1.0 + reference_sinr(params.sigma2_h, mse, params.sigma2_w))
    if scheme == "CPA":
        return 0.5 * np.log2(1.0 + reference_sinr(params.sigma2_h, mse, params.sigma2_w))
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def diag_mse(var: np.ndarray, energy: float, noise_var: float) -> float:
    """MMSE trace with ``Omega^H Omega = energy * I``: ``sum noise var_i / (energy var_i + noise)``."""
    var = np.asarray(var, dtype=float)
    return float(np.sum(noise_var * var / (energy * var + noise_var)))


def analytic_mse(scheme: str, grid: DdGrid, taps: ChannelTaps, sigma2_w: float, split: PowerSplit | None = None,
                 l_max: int | None = None, k_max: int | None = None) -> float:
    """Average-channel MSE used by the analytic SE curves.

    SP-NI uses the pilot energy ``MN sigma2_p`` against data-plus-noise
    interference; SP-I and CPA use the full frame energy ``MN`` against noise
    (known data, resp. an all-pilot frame); EP uses one pilot of energy
    ``(2 l_max + 1)(4 k_max + 1)``.
    """
    MN = grid.MN
    if scheme == "SP-NI":
        return diag_mse(taps.var, MN * split.sigma2_p, taps.sigma2_h * split.sigma2_d + sigma2_w)
    if scheme in ("SP-I", "CPA"):
        return diag_mse(taps.var, MN, sigma2_w)
    if scheme == "EP":
        l_max = taps.l_max if l_max is None else l_max
        k_max = taps.k_max if k_max is None else k_max
        return diag_mse(taps.var, (2 * l_max + 1) * (4 * k_max + 1), sigma2_w)
    raise ValueError(f"unknown scheme {scheme!r}")


def analytic_se(scheme: str, grid: DdGrid, taps: ChannelTaps, snr_db: float, split: PowerSplit | None = None,
                l_max: int | None = None, k_max: int | None = None) -> float:
    """SE of ``scheme`` at ``snr_db`` with average-channel MSEs.

    The SP schemes use the optimal power split unless ``split`` is given.
    """
    sw = float(snr_to_noise(snr_db))
    params = LinkParams.from_taps(grid, taps, sw)
    if scheme in ("SP-NI", "SP-I"):
        if split is None:
            split = optimal_pilot_power(params).split
        params = params.with_split(split)
        return float(spectral_efficiency(scheme, params, analytic_mse(scheme, grid, taps, sw, split)))
    if scheme == "EP":
        l_max = taps.l_max if l_max is None else l_max
        k_max = taps.k_max if k_max is None else k_max
        eta = ep_overhead(l_max, k_max, grid)
        return float(spectral_efficiency("EP", params, analytic_mse("EP", grid, taps, sw, l_max=l_max, k_max=k_max), eta))
    if scheme == "CPA":
        return float(spectral_efficiency("CPA", params, analytic_mse("CPA", grid, taps, sw)))
    raise ValueError(f"unknown scheme {scheme!r}")


def snr_for_se(scheme: str, target: float, grid: DdGrid, taps: ChannelTaps, lo: float = -10.0, hi: float = 60.0, **kw) -> float:
    """Smallest SNR (dB) at which :func:`analytic_se` reaches ``target`` (bisection)."""
    f = lambda s: analytic_se(scheme, grid, taps, s, **kw) - target
    if f(hi) < 0:
        return math.inf
    if f(lo) >= 0:
        return lo
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


# -- operation counts --------------------------------------------------------------


def complexity_counts(scheme: str, M: int, N: int, Q: int, S: int, N_I: int, N_SPI: int = 1,
                      l_max: int = 0, k_max: int = 0) -> int:
    """Operation totals with every order-level term taken at constant 1.

    SP-NI: ``(2Q^2 + 2Q) MN + 3Q^2 + Q^3 + N_I MN Q S``.
    SP-I:  ``N_SPI [(2Q^2 + 2Q + 1) MN + 3Q^2 + Q^3 + N_I MN Q S]``.
    EP:    ``(2k_max + 1)(l_max + 1) + 6Q + N_I Q S max(0, MN - (2l_max + 1)(4k_max + 1))``.
    """
    for name, v in (("M", M), ("N", N), ("Q", Q), ("S", S), ("N_I", N_I), ("N_SPI", N_SPI)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    MN = M * N
    mp = N_I * MN * Q * S
    if scheme == "SP-NI":
        return (2 * Q * Q + 2 * Q) * MN + 3 * Q * Q + Q**3 + mp
    if scheme == "SP-I":
        return N_SPI * ((2 * Q * Q + 2 * Q + 1) * MN + 3 * Q * Q + Q**3 + mp)
    if scheme == "EP":
        data_bins = max(0, MN - (2 * l_max + 1) * (4 * k_max + 1))
        return (2 * k_max + 1) * (l_max + 1) + 6 * Q + N_I * Q * S * data_bins
    raise ValueError(f"unknown scheme {scheme!r}")
