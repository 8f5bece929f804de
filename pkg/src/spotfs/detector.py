"""Message-passing detection over the Q-sparse effective channel.

Edges of the factor graph are addressed as ``(a, i)``: observation ``a`` and
tap ``i``, which connects to variable ``cols[a, i]``.  Seen from variable
``b``, tap ``i`` leads to observation ``rows[b, i]``.  Messages are held in
arrays of shape ``(batch, MN, Q, S)`` and every round computes all new
messages from the previous state before swapping, so results do not depend
on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, softmax

from .channel import SparseEffectiveChannel
from .modem import Constellation, bpsk

VARIANCE_FORMS = ("per-term", "running-mean")


@dataclass(frozen=True)
class MpConfig:
    """Message-passing settings.

    Attributes
    ----------
    damping : float
        Weight of the fresh pmf in the damped update, ``0 < damping <= 1``.
    epsilon : float
        A variable counts as converged when its largest probability is at
        least ``1 - epsilon``.
    max_iters : int
        Iteration cap ``N_I``.
    gaussian_exponent : bool
        Square the residual magnitude in the symbol likelihood.  Off by
        default, giving ``exp(-|r| / var)``.
    variance_form : str
        ``"per-term"`` subtracts each neighbour's own squared mean;
        ``"running-mean"`` subtracts the squared aggregate mean once per
        neighbour and clamps at the noise floor.
    """

    damping: float = 0.6
    epsilon: float = 0.1
    max_iters: int = 20
    constellation: Constellation = field(default_factory=bpsk)
    gaussian_exponent: bool = False
    variance_form: str = "per-term"

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.variance_form not in VARIANCE_FORMS:
            raise ValueError(f"variance_form must be one of {VARIANCE_FORMS}")


@dataclass(eq=False)
class MpState:
    """Working state for a batch of frames.

    ``p_var[..., b, i, :]`` is the pmf sent by variable ``b`` to observation
    ``rows[b, i]``; ``mean``/``var`` are indexed by edge ``(a, i)``.
    """

    p_var: np.ndarray
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    log_lik: np.ndarray | None = None
    p_b: np.ndarray | None = None
    zeta_history: list = field(default_factory=list)
    clamped: int = 0


class MpResult(NamedTuple):
    x_hat: np.ndarray
    iterations: np.ndarray
    zeta: np.ndarray
    indices: np.ndarray
    clamped: int


def cancel_pilots(y, h_eff_hat: SparseEffectiveChannel, x_p) -> np.ndarray:
    """Residual ``y - H_hat x_p`` left for data detection."""
    return np.asarray(y) - h_eff_hat.matvec(x_p)


def init_state(shape_batch, MN: int, Q: int, S: int) -> MpState:
    return MpState(np.full(tuple(shape_batch) + (MN, Q, S), 1.0 / S))


def obs_to_var_messages(state: MpState, y_d, gains, cols, points, noise_floor, variance_form="per-term") -> MpState:
    """Gaussian interference mean and variance for every edge ``(a, i)``.

    Parameters
    ----------
    gains : (..., MN, Q) complex
        ``H_hat(a, cols[a, i])``, zeroed for inactive variables.
    points : (S,) complex
        Scaled constellation.
    noise_floor : (...,) float
        ``sigma2_p * B_h + sigma2_w`` per frame.
    """
    Q = cols.shape[1]
    p_edge = state.p_var[..., cols, np.arange(Q), :]
    m_sym = p_edge @ points
    e_sym = p_edge @ (np.abs(points) ** 2)
    m = gains * m_sym
    v2 = np.abs(gains) ** 2 * e_sym
    mu = m.sum(axis=-1, keepdims=True) - m
    floor = np.asarray(noise_floor, dtype=float)[..., None, None]
    if variance_form == "per-term":
        own = v2 - np.abs(m) ** 2
        var = own.sum(axis=-1, keepdims=True) - own + floor
        var = np.maximum(var, floor)
    else:
        var = v2.sum(axis=-1, keepdims=True) - v2 - (Q - 1) * np.abs(mu) ** 2 + floor
        bad = var < floor
        state.clamped += int(bad.sum())
        var = np.where(bad, floor, var)
    state.mean, state.var = mu, var
    return state


def var_to_obs_messages(state: MpState, y_d, gains, rows, points, damping: float, gaussian_exponent=False) -> MpState:
    """Damped pmf update from the per-edge symbol likelihoods (log domain)."""
    Q = rows.shape[1]
    resid = np.abs(np.asarray(y_d)[..., :, None, None] - state.mean[..., None] - gains[..., None] * points)
    if gaussian_exponent:
        resid = resid**2
    lb = -resid / state.var[..., None]
    ln = lb - logsumexp(lb, axis=-1, keepdims=True)
    L = ln[..., rows, np.arange(Q), :]
    T = L.sum(axis=-2, keepdims=True)
    p_tilde = softmax(T - L, axis=-1)
    p_new = damping * p_tilde + (1.0 - damping) * state.p_var
    state.p_var = p_new / p_new.sum(axis=-1, keepdims=True)
    state.log_lik = L
    state.p_b = softmax(T[..., 0, :], axis=-1)
    return state


def convergence_indicator(p_b: np.ndarray, epsilon: float, active=None) -> np.ndarray:
    """Fraction of (active) variables whose largest probability is ``>= 1 - epsilon``."""
    ok = p_b.max(axis=-1) >= 1.0 - epsilon
    if active is None:
        return ok.mean(axis=-1)
    return ok[..., active].mean(axis=-1)


def detect(y_d, h_eff_hat: SparseEffectiveChannel, noise_floor, cfg: MpConfig = MpConfig(), scale: float = 1.0, active=None) -> MpResult:
    """Run message passing and return hard decisions.

    Parameters
    ----------
    y_d : (..., MN) complex
        Pilot-cancelled observations.
    h_eff_hat : SparseEffectiveChannel
        Estimated effective channel; its gains may carry the same batch axes.
    noise_floor : float or (...,) array
        Per-frame additive variance ``sigma2_p * B_h + sigma2_w``.
    cfg : MpConfig
    scale : float
        Amplitude of the data symbols, ``sqrt(sigma2_d)``.
    active : (MN,) bool, optional
        Positions carrying unknown data; others are treated as known zeros.

    Returns
    -------
    MpResult
        ``x_hat`` (scaled symbols, zero at inactive positions), iterations
        used, final convergence indicator and the symbol indices.
    """
    y_d = np.asarray(y_d)
    batch = y_d.shape[:-1]
    flat_y = y_d.reshape(-1, y_d.shape[-1])
    B, MN = flat_y.shape
    st = h_eff_hat.structure
    cols, rows = st.cols, st.rows
    Q = cols.shape[1]
    points = scale * cfg.constellation.points
    S = points.size
    gains = np.broadcast_to(h_eff_hat.values, batch + (MN, Q)).reshape(B, MN, Q)
    if active is not None:
        active = np.asarray(active, dtype=bool)
        gains = gains * active[cols]
    floor = np.broadcast_to(np.asarray(noise_floor, dtype=float), batch).reshape(B)

    state = init_state((B,), MN, Q, S)
    decisions = np.zeros((B, MN), dtype=int)
    zeta_prev = np.full(B, -1.0)
    iters = np.zeros(B, dtype=int)
    running = np.arange(B)
    clamped = 0
    for it in range(1, cfg.max_iters + 1):
        sub = MpState(state.p_var[running])
        g = gains[running]
        obs_to_var_messages(sub, flat_y[running], g, cols, points, floor[running], cfg.variance_form)
        var_to_obs_messages(sub, flat_y[running], g, rows, points, cfg.damping, cfg.gaussian_exponent)
        clamped += sub.clamped
        state.p_var[running] = sub.p_var
        zeta = convergence_indicator(sub.p_b, cfg.epsilon, active)
        improved = zeta > zeta_prev[running]
        upd = running[improved]
        decisions[upd] = np.argmax(sub.p_b[improved], axis=-1)
        zeta_prev[running] = zeta
        iters[running] = it
        running = running[zeta < 1.0]
        if running.size == 0:
            break
    x_hat = points[decisions]
    if active is not None:
        x_hat = np.where(active, x_hat, 0)
    return MpResult(
        x_hat.reshape(batch + (MN,)),
        iters.reshape(batch),
        zeta_prev.reshape(batch),
        decisions.reshape(batch + (MN,)),
        clamped,
    )
