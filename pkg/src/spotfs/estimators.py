"""Channel-gain estimators for superimposed and reference pilot schemes.

Every MMSE solve here has the form

    Sigma = (Omega^H Omega / c + C_h^-1)^-1,    h_hat = Sigma Omega^H y / c

with a scalar noise-plus-interference variance ``c``.  It is evaluated in
the equivalent whitened form ``Sigma = D (D G D / c + I)^-1 D`` with
``D = C_h^(1/2)`` and ``G = Omega^H Omega``, which stays a well-conditioned
``Q x Q`` Hermitian solve even when a tap has zero prior variance or the
pilot power is zero.  All functions accept leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import ChannelTaps, TapStructure, build_effective_channel
from .grid import DdGrid
from .modem import EpLayout, PowerSplit

METHODS = ("SP-NI", "SP-I", "CPA", "EP", "perfect")


@dataclass(frozen=True, eq=False)
class EstimationResult:
    """Estimate ``h_hat`` with error covariance ``err_cov`` and ``mse = Tr(err_cov)``.

    Arrays carry any leading batch axes of the inputs.
    """

    h_hat: np.ndarray
    err_cov: np.ndarray
    mse: np.ndarray
    method: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown estimation method {self.method!r}")


def spni_noise_var(taps: ChannelTaps, split: PowerSplit, sigma2_w: float) -> float:
    """Per-sample variance of data interference plus noise, ``sigma2_h sigma2_d + sigma2_w``."""
    return taps.sigma2_h * split.sigma2_d + sigma2_w


def spi_noise_var(taps: ChannelTaps, split: PowerSplit, sigma2_w: float) -> float:
    """Fixed residual-data variance used by the iterative estimator, ``2 sigma2_h sigma2_d + sigma2_w``."""
    return 2.0 * taps.sigma2_h * split.sigma2_d + sigma2_w


def mmse_solve(y: np.ndarray, omega: np.ndarray, var: np.ndarray, c: float):
    """Batched ``Q x Q`` MMSE solve; returns ``(h_hat, Sigma, jitter)``.

    Parameters
    ----------
    y : (..., MN) complex
    omega : (..., MN, Q) complex
    var : (Q,) prior tap variances
    c : float
        Scalar noise-plus-interference variance (must be positive).
    """
    if not c > 0:
        raise ValueError(f"noise variance must be positive, got {c}")
    d = np.sqrt(np.asarray(var, dtype=float))
    G = np.swapaxes(omega.conj(), -1, -2) @ omega
    Q = d.size
    A = d[:, None] * G * d[None, :] / c + np.eye(Q)
    jitter = 0.0
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.max(np.trace(A, axis1=-2, axis2=-1).real))
        L = np.linalg.cholesky(A + jitter * np.eye(Q))
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(Q), L.shape))
    Ainv = np.swapaxes(Linv.conj(), -1, -2) @ Linv
    Sigma = d[:, None] * Ainv * d[None, :]
    rhs = np.einsum("...mq,...m->...q", omega.conj(), y) / c
    h_hat = np.einsum("...pq,...q->...p", Sigma, rhs)
    return h_hat, Sigma, jitter


def _result(h_hat, Sigma, method, jitter, **meta) -> EstimationResult:
    mse = np.trace(Sigma, axis1=-2, axis2=-1).real
    return EstimationResult(h_hat, Sigma, mse, method, {"jitter": jitter, **meta})


def spni_estimate(y, omega_p, taps: ChannelTaps, split: PowerSplit, sigma2_w: float) -> EstimationResult:
    """MMSE estimate treating the superimposed data as white interference."""
    c = spni_noise_var(taps, split, sigma2_w)
    h, S, jit = mmse_solve(np.asarray(y), np.asarray(omega_p), taps.var, c)
    return _result(h, S, "SP-NI", jit, noise_var=c)


def spni_error_stats(result: EstimationResult | float, split: PowerSplit, sigma2_w: float):
    """Detector noise floor ``sigma2_p * B_h + sigma2_w`` after pilot cancellation."""
    mse = result.mse if isinstance(result, EstimationResult) else result
    return split.sigma2_p * np.asarray(mse) + sigma2_w


def spi_step(y, x_p, x_hat_d, structure: TapStructure, split: PowerSplit, sigma2_w: float) -> EstimationResult:
    """One data-aided MMSE update using detected data ``x_hat_d`` (already power-scaled)."""
    omega = structure.apply_gamma(np.asarray(x_p) + np.asarray(x_hat_d))
    c = spi_noise_var(structure.taps, split, sigma2_w)
    h, S, jit = mmse_solve(np.asarray(y), omega, structure.taps.var, c)
    return _result(h, S, "SP-I", jit, noise_var=c)


def perfect_data_mse(x_p, x_d_true, structure: TapStructure, sigma2_w: float) -> np.ndarray:
    """MSE of the MMSE estimate when the data is known exactly (noise ``sigma2_w`` only)."""
    omega = structure.apply_gamma(np.asarray(x_p) + np.asarray(x_d_true))
    y0 = np.zeros(omega.shape[:-1], dtype=complex)
    _, S, _ = mmse_solve(y0, omega, structure.taps.var, sigma2_w)
    return np.trace(S, axis1=-2, axis2=-1).real


def cpa_estimate(y_pilot_frame, omega_full, taps: ChannelTaps, sigma2_w: float) -> EstimationResult:
    """MMSE estimate from a frame that carries only unit-power pilots."""
    h, S, jit = mmse_solve(np.asarray(y_pilot_frame), np.asarray(omega_full), taps.var, sigma2_w)
    return _result(h, S, "CPA", jit, noise_var=sigma2_w)


def ep_observation_index(layout: EpLayout, taps: ChannelTaps) -> np.ndarray:
    """Received bins ``(l_p + l_i, k_p + k_i)`` that carry tap ``i`` of the pilot."""
    M, N = layout.grid.M, layout.grid.N
    return (layout.l_p + taps.l) % M + M * ((layout.k_p + taps.k) % N)


def ep_mse(taps: ChannelTaps, pilot_power: float, sigma2_w: float) -> float:
    """Sum over taps of the scalar MMSE ``sigma2_w var_i / (P var_i + sigma2_w)``."""
    v = taps.var
    return float(np.sum(sigma2_w * v / (pilot_power * v + sigma2_w)))


def ep_estimate(y, layout: EpLayout, structure: TapStructure, sigma2_w: float) -> EstimationResult:
    """Per-tap scalar MMSE from the guard-protected pilot echoes."""
    taps = structure.taps
    obs = ep_observation_index(layout, taps)
    qi = np.arange(taps.Q)
    if np.any(structure.cols[obs, qi] != layout.pilot_index):
        raise ValueError("observation bins do not map back onto the pilot")
    alpha = structure.phase[obs, qi]
    P = layout.pilot_power
    v = taps.var
    gain = v * np.sqrt(P) * alpha.conj() / (P * v + sigma2_w)
    h_hat = gain * np.asarray(y)[..., obs]
    per_tap = sigma2_w * v / (P * v + sigma2_w)
    Sigma = np.broadcast_to(np.diag(per_tap), h_hat.shape[:-1] + (taps.Q, taps.Q))
    return _result(h_hat, Sigma, "EP", 0.0, pilot_power=P)


def mse_lower_bound(taps: ChannelTaps, split: PowerSplit, sigma2_w: float, grid: DdGrid) -> float:
    """``Q^2 / (Q MN sigma2_p / (sigma2_h sigma2_d + sigma2_w) + sum_i 1/var_i)``."""
    if np.any(taps.var <= 0):
        raise ValueError("lower bound needs strictly positive tap variances")
    Q = taps.Q
    c = spni_noise_var(taps, split, sigma2_w)
    return Q**2 / (Q * grid.MN * split.sigma2_p / c + taps.sigma2_h_inv_sum)


def analytic_mse_diag(taps: ChannelTaps, energy: float, noise_var: float) -> float:
    """MMSE trace when ``Omega^H Omega`` is replaced by its mean ``energy * I``."""
    v = taps.var
    return float(np.sum(noise_var * v / (energy * v + noise_var)))


# -- iterative receiver --------------------------------------------------------

Detector = Callable[..., tuple]


@dataclass(frozen=True)
class SpiStop:
    tol: float = 1e-6
    max_iter: int = 10

    def __post_init__(self):
        if self.max_iter < 1 or not self.tol > 0:
            raise ValueError(f"invalid stopping rule {self}")


@dataclass(frozen=True, eq=False)
class SpiOutcome:
    estimate: EstimationResult
    x_hat: np.ndarray
    iterations: np.ndarray
    initial: EstimationResult
    x_hat_initial: np.ndarray
    mp_iters: np.ndarray


def spi_run(
    y,
    x_p,
    structure: TapStructure,
    split: PowerSplit,
    sigma2_w: float,
    detector: Detector,
    stop: SpiStop = SpiStop(),
    initial: EstimationResult | None = None,
) -> SpiOutcome:
    """Alternate data-aided estimation and detection from the SP-NI starting point.

    ``detector(y_d, h_eff_hat, noise_floor)`` must return a sequence whose
    first two items are the power-scaled symbol decisions and the number of
    message-passing iterations used.
    Frames in a batch stop independently once the squared change of the
    estimate falls below ``stop.tol``.
    """
    y = np.asarray(y)
    x_p = np.broadcast_to(np.asarray(x_p), y.shape)
    taps = structure.taps
    grid = structure.grid
    if initial is None:
        initial = spni_estimate(y, structure.apply_gamma(x_p), taps, split, sigma2_w)

    def detect(h, mse, sel):
        heff = build_effective_channel(grid, taps, h, structure)
        y_d = y[sel] - heff.matvec(x_p[sel])
        res = detector(y_d, heff, spni_error_stats(mse, split, sigma2_w))
        return res[0], np.asarray(res[1])

    batch = y.shape[:-1]
    all_sel = (slice(None),) * len(batch) if batch else ()
    x0, it0 = detect(initial.h_hat, initial.mse, all_sel)
    h = np.array(initial.h_hat, copy=True)
    S = np.array(initial.err_cov, copy=True)
    mse = np.array(initial.mse, copy=True)
    x_hat = np.array(x0, copy=True)
    mp_iters = np.array(np.broadcast_to(it0, batch), dtype=float, copy=True)
    iters = np.zeros(batch, dtype=int)
    active = np.ones(batch, dtype=bool)
    jit = 0.0
    for n in range(1, stop.max_iter + 1):
        if not active.any():
            break
        sel = np.nonzero(active) if batch else ()
        est = spi_step(y[sel], x_p[sel], x_hat[sel], structure, split, sigma2_w)
        jit = max(jit, est.metadata["jitter"])
        delta = np.sum(np.abs(est.h_hat - h[sel]) ** 2, axis=-1)
        xh, it = detect(est.h_hat, est.mse, sel)
        if batch:
            h[sel], S[sel], mse[sel], x_hat[sel] = est.h_hat, est.err_cov, est.mse, xh
            mp_iters[sel] += it
            iters[sel] = n
            active[sel] = delta >= stop.tol
        else:
            h, S, mse, x_hat = est.h_hat, est.err_cov, est.mse, xh
            mp_iters = mp_iters + it
            iters = np.asarray(n)
            active = np.asarray(delta >= stop.tol)
    final = EstimationResult(h, S, mse, "SP-I", {"jitter": jit, "noise_var": spi_noise_var(taps, split, sigma2_w)})
    return SpiOutcome(final, x_hat, iters, initial, x0, mp_iters)
