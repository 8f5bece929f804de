"""Seeded Monte-Carlo runner producing one :class:`MetricRecord` per cell.

A cell is one (frame size, scheme, pilot power, damping, SNR) combination.
Trial ``t`` draws everything from its own generator seeded by
``SeedSequence(seed, spawn_key=(g, s, t))`` where ``g`` and ``s`` index the
frame size and SNR.  Cells that differ only in scheme, pilot power or
damping therefore see the same channels, bits and noise (common random
numbers), which sharpens paired comparisons.  Trials are processed in
fixed-size rounds so the stopping point and every aggregate depend only on
the seed, never on how many worker threads ran the rounds.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from functools import partial
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .analysis import (
    LinkParams,
    analytic_mse,
    ep_overhead,
    optimal_pilot_power,
    reference_sinr,
    sinr_lower_bound,
    snr_to_noise,
)
from .channel import (
    ChannelTaps,
    TapStructure,
    build_effective_channel,
    data_path,
    load_profile,
    load_taps,
    quantize_profile,
    sample_gains,
)
from .config import RunConfig
from .detector import MpConfig, detect
from .estimators import (
    SpiStop,
    cpa_estimate,
    ep_estimate,
    mse_lower_bound,
    perfect_data_mse,
    spi_run,
    spni_error_stats,
    spni_estimate,
)
from .grid import DdGrid
from .modem import EpLayout, PowerSplit, draw_pilot_values, get_constellation


@dataclass(frozen=True)
class MetricRecord:
    scheme: str
    snr_db: float
    sigma2_p: float
    M: int
    N: int
    damping: float
    trials: int
    bits: int
    bit_errors: int
    ber: float
    ber_lo: float
    ber_hi: float
    mse_sim: float
    mse_analytic: float
    mse_bound: float
    mse_perfect_data: float
    se_bits_per_hz: float
    avg_spi_iters: float
    avg_mp_iters: float
    faults: int
    seed: int
    wall_time: float


CSV_COLUMNS = tuple(f.name for f in fields(MetricRecord))


@dataclass(frozen=True)
class Cell:
    cell_id: int
    stream: tuple
    grid: DdGrid
    scheme: str
    sigma2_p: float
    damping: float
    snr_db: float


@dataclass
class TrialStats:
    """Per-trial outcomes of one round, in trial order."""

    bit_errors: np.ndarray
    bits: np.ndarray
    sq_err: np.ndarray
    mse: np.ndarray
    mse_pd: np.ndarray
    spi_iters: np.ndarray
    mp_iters: np.ndarray
    fault: np.ndarray

    @classmethod
    def concat(cls, parts):
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts]) for f in fields(cls)))


def trial_rng(seed: int, stream: tuple, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(*stream, trial)))


def resolve_taps(cfg: RunConfig, grid: DdGrid) -> ChannelTaps:
    if cfg.taps:
        return load_taps(cfg.taps, cfg.normalize_power)
    profile = load_profile(cfg.profile or data_path("five_path_profile.csv"), cfg.normalize_power)
    return quantize_profile(profile, grid)


class Scenario:
    """Everything fixed for one frame size: taps, tap tables, detector settings."""

    def __init__(self, cfg: RunConfig, grid: DdGrid):
        self.cfg = cfg
        self.grid = grid
        self.taps = resolve_taps(cfg, grid)
        self.structure = TapStructure.build(grid, self.taps)
        self.constellation = get_constellation(cfg.constellation)
        self.stop = SpiStop(cfg.spi_tol, cfg.spi_max_iter)
        self._layout = None

    @property
    def layout(self) -> EpLayout:
        if self._layout is None:
            l_max = self.cfg.ep_l_max if self.cfg.ep_l_max >= 0 else self.taps.l_max
            k_max = self.cfg.ep_k_max if self.cfg.ep_k_max >= 0 else self.taps.k_max
            self._layout = EpLayout(self.grid, l_max, k_max)
        return self._layout

    def mp_config(self, damping: float) -> MpConfig:
        c = self.cfg
        return MpConfig(damping, c.epsilon, c.mp_iters, self.constellation, c.gaussian_exponent, c.variance_form)

    def split_for(self, cell: Cell) -> PowerSplit:
        if math.isnan(cell.sigma2_p):
            params = LinkParams.from_snr(self.grid, self.taps, cell.snr_db)
            return optimal_pilot_power(params).split
        return PowerSplit.from_pilot(cell.sigma2_p)

    # -- per-scheme rounds ---------------------------------------------------

    def run_round(self, cell: Cell, trials: range) -> TrialStats:
        rngs = [trial_rng(self.cfg.seed, cell.stream, t) for t in trials]
        fn = {
            "SP-NI": self._round_sp,
            "SP-I": self._round_sp,
            "perfect-CSI": self._round_perfect,
            "EP": self._round_ep,
            "CPA": self._round_cpa,
        }[cell.scheme]
        with np.errstate(all="ignore"):
            return fn(cell, rngs)

    def _draw(self, rngs, n_sym, x_p_power=None):
        """Gains, bits and (optionally) pilots per trial, stacked in trial order."""
        MN, bps = self.grid.MN, self.constellation.bits_per_symbol
        h, bits, pil = [], [], []
        for r in rngs:
            h.append(sample_gains(self.taps.var, r))
            bits.append(r.integers(0, 2, n_sym * bps))
            if x_p_power is not None:
                pil.append(draw_pilot_values(MN, x_p_power, r))
        return np.array(h), np.array(bits), (np.array(pil) if pil else None)

    def _noise(self, rngs, var):
        MN = self.grid.MN
        out = []
        for r in rngs:
            z = r.standard_normal((MN, 2))
            out.append(np.sqrt(var / 2.0) * (z[:, 0] + 1j * z[:, 1]))
        return np.array(out)

    def _symbols(self, bits, power):
        c = self.constellation
        return np.sqrt(power) * c.points[c.bits_to_index(bits)]

    def _errors(self, idx, bits):
        return np.sum(self.constellation.index_to_bits(idx) != bits, axis=-1)

    def _round_sp(self, cell: Cell, rngs) -> TrialStats:
        sw = float(snr_to_noise(cell.snr_db))
        split = self.split_for(cell)
        st, grid = self.structure, self.grid
        h, bits, x_p = self._draw(rngs, grid.MN, split.sigma2_p)
        w = self._noise(rngs, sw)
        x_d = self._symbols(bits, split.sigma2_d)
        y = build_effective_channel(grid, self.taps, h, st).matvec(x_d + x_p) + w
        cfg = self.mp_config(cell.damping)
        scale = math.sqrt(split.sigma2_d)
        det = partial(detect, cfg=cfg, scale=scale)
        ni = spni_estimate(y, st.apply_gamma(x_p), self.taps, split, sw)
        pd = perfect_data_mse(x_p, x_d, st, sw)
        n = len(rngs)
        if cell.scheme == "SP-NI":
            heff = build_effective_channel(grid, self.taps, ni.h_hat, st)
            res = det(y - heff.matvec(x_p), heff, spni_error_stats(ni, split, sw))
            est, idx, spi_it, mp_it = ni, res.indices, np.zeros(n), res.iterations
        else:
            out = spi_run(y, x_p, st, split, sw, lambda yd, he, fl: _scaled(det(yd, he, fl)), self.stop, initial=ni)
            est = out.estimate
            idx = self.constellation.nearest(out.x_hat / scale) if scale > 0 else np.zeros_like(bits)
            spi_it, mp_it = out.iterations, out.mp_iters
        errs = self._errors(idx, bits)
        sq = np.sum(np.abs(est.h_hat - h) ** 2, axis=-1)
        return TrialStats(errs, np.full(n, bits.shape[-1]), sq, est.mse, pd, np.asarray(spi_it, float),
                          np.asarray(mp_it, float), ~np.isfinite(sq) | ~np.isfinite(est.mse))

    def _round_perfect(self, cell: Cell, rngs) -> TrialStats:
        sw = float(snr_to_noise(cell.snr_db))
        grid = self.grid
        h, bits, _ = self._draw(rngs, grid.MN)
        w = self._noise(rngs, sw)
        heff = build_effective_channel(grid, self.taps, h, self.structure)
        y = heff.matvec(self._symbols(bits, 1.0)) + w
        res = detect(y, heff, sw, self.mp_config(cell.damping))
        n = len(rngs)
        z = np.zeros(n)
        return TrialStats(self._errors(res.indices, bits), np.full(n, bits.shape[-1]), z, z, z, z,
                          res.iterations.astype(float), np.zeros(n, bool))

    def _round_ep(self, cell: Cell, rngs) -> TrialStats:
        sw = float(snr_to_noise(cell.snr_db))
        lay, grid = self.layout, self.grid
        h, bits, _ = self._draw(rngs, lay.n_data)
        w = self._noise(rngs, sw)
        x = lay.frame(self._symbols(bits, 1.0))
        y = build_effective_channel(grid, self.taps, h, self.structure).matvec(x) + w
        est = ep_estimate(y, lay, self.structure, sw)
        heff = build_effective_channel(grid, self.taps, est.h_hat, self.structure)
        y_d = y - heff.matvec(lay.pilot_vector())
        res = detect(y_d, heff, sw, self.mp_config(cell.damping), active=lay.data_mask)
        idx = res.indices[..., lay.data_mask]
        n = len(rngs)
        sq = np.sum(np.abs(est.h_hat - h) ** 2, axis=-1)
        return TrialStats(self._errors(idx, bits), np.full(n, bits.shape[-1]), sq, est.mse, np.zeros(n),
                          np.zeros(n), res.iterations.astype(float), ~np.isfinite(sq))

    def _round_cpa(self, cell: Cell, rngs) -> TrialStats:
        sw = float(snr_to_noise(cell.snr_db))
        grid, st = self.grid, self.structure
        h, bits, x_pilot = self._draw(rngs, grid.MN, 1.0)
        w1 = self._noise(rngs, sw)
        w2 = self._noise(rngs, sw)
        heff = build_effective_channel(grid, self.taps, h, st)
        y1 = heff.matvec(x_pilot) + w1
        y2 = heff.matvec(self._symbols(bits, 1.0)) + w2
        est = cpa_estimate(y1, st.apply_gamma(x_pilot), self.taps, sw)
        heff_hat = build_effective_channel(grid, self.taps, est.h_hat, st)
        res = detect(y2, heff_hat, sw, self.mp_config(cell.damping))
        n = len(rngs)
        sq = np.sum(np.abs(est.h_hat - h) ** 2, axis=-1)
        return TrialStats(self._errors(res.indices, bits), np.full(n, bits.shape[-1]), sq, est.mse, np.zeros(n),
                          np.zeros(n), res.iterations.astype(float), ~np.isfinite(sq))

    # -- analytic columns ----------------------------------------------------

    def analytic_columns(self, cell: Cell, split: PowerSplit | None, mse_mean: float):
        """``(mse_bound, se)`` for a cell given its average estimate MSE."""
        sw = float(snr_to_noise(cell.snr_db))
        params = LinkParams.from_taps(self.grid, self.taps, sw)
        if cell.scheme in ("SP-NI", "SP-I"):
            params = params.with_split(split)
            bound = mse_lower_bound(self.taps, split, sw, self.grid)
            mse = min(max(mse_mean, 0.0), self.taps.sigma2_h)
            return bound, float(np.log2(1 + sinr_lower_bound(params, mse)))
        if cell.scheme == "EP":
            lay = self.layout
            eta = ep_overhead(lay.l_max, lay.k_max, self.grid)
            return mse_mean, float((1 - eta) * np.log2(1 + reference_sinr(self.taps.sigma2_h, mse_mean, sw)))
        if cell.scheme == "CPA":
            bound = analytic_mse("CPA", self.grid, self.taps, sw)
            return bound, float(0.5 * np.log2(1 + reference_sinr(self.taps.sigma2_h, mse_mean, sw)))
        return 0.0, float(np.log2(1 + self.taps.sigma2_h / sw))


def _scaled(res):
    return res.x_hat, res.iterations


def enumerate_cells(cfg: RunConfig):
    cells = []
    cid = 0
    pilots = cfg.sigma2_p if cfg.split_mode == "fixed" else (math.nan,)
    for gi, grid in enumerate(cfg.grids()):
        for scheme in cfg.schemes:
            sp_values = pilots if scheme in ("SP-NI", "SP-I") else (math.nan,)
            for p in sp_values:
                for d in cfg.damping:
                    for si, snr in enumerate(cfg.snr_db):
                        cells.append(Cell(cid, (gi, si), grid, scheme, float(p), float(d), float(snr)))
                        cid += 1
    return cells


def wilson_interval(errors: int, n: int):
    if n == 0:
        return math.nan, math.nan
    ci = binomtest(int(errors), int(n)).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


def run_cell(scn: Scenario, cell: Cell, threads: int = 1, pool=None) -> MetricRecord:
    cfg = scn.cfg
    t0 = time.perf_counter()
    parts, done, errors = [], 0, 0
    wave = max(1, threads)
    next_start = 0
    stop = False
    while not stop:
        ranges = []
        for _ in range(wave):
            if next_start >= cfg.max_trials:
                break
            end = min(next_start + cfg.batch, cfg.max_trials)
            ranges.append(range(next_start, end))
            next_start = end
        if not ranges:
            break
        if pool is not None and len(ranges) > 1:
            results = list(pool.map(lambda r: scn.run_round(cell, r), ranges))
        else:
            results = [scn.run_round(cell, r) for r in ranges]
        for res in results:
            parts.append(res)
            done += res.bits.size
            errors += int(res.bit_errors[~res.fault].sum())
            if done >= cfg.max_trials or (done >= cfg.trials and errors >= cfg.min_errors):
                stop = True
                break
    stats = TrialStats.concat(parts)
    ok = ~stats.fault
    n_ok = int(ok.sum())
    bits = int(stats.bits[ok].sum())
    bit_errors = int(stats.bit_errors[ok].sum())
    assert bits == n_ok * (stats.bits[0] if stats.bits.size else 0), "bit accounting mismatch"
    ber = bit_errors / bits if bits else math.nan
    lo, hi = wilson_interval(bit_errors, bits)
    mean = lambda a: float(np.mean(a[ok])) if n_ok else math.nan
    split = scn.split_for(cell) if cell.scheme in ("SP-NI", "SP-I") else None
    mse_an = mean(stats.mse)
    bound, se = scn.analytic_columns(cell, split, mse_an)
    return MetricRecord(
        scheme=cell.scheme,
        snr_db=cell.snr_db,
        sigma2_p=split.sigma2_p if split else (scn.layout.pilot_power if cell.scheme == "EP" else (1.0 if cell.scheme == "CPA" else 0.0)),
        M=cell.grid.M,
        N=cell.grid.N,
        damping=cell.damping,
        trials=n_ok,
        bits=bits,
        bit_errors=bit_errors,
        ber=ber,
        ber_lo=lo,
        ber_hi=hi,
        mse_sim=mean(stats.sq_err),
        mse_analytic=mse_an,
        mse_bound=bound,
        mse_perfect_data=mean(stats.mse_pd),
        se_bits_per_hz=se,
        avg_spi_iters=mean(stats.spi_iters),
        avg_mp_iters=mean(stats.mp_iters),
        faults=int((~ok).sum()),
        seed=cfg.seed,
        wall_time=time.perf_counter() - t0,
    )


def run_scenario(cfg: RunConfig, threads: int = 1, progress=None) -> list[MetricRecord]:
    """Run every cell of ``cfg`` and return its records in cell order."""
    cells = enumerate_cells(cfg)
    scenarios = {g: Scenario(cfg, g) for g in cfg.grids()}
    records = []
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for cell in cells:
            rec = run_cell(scenarios[cell.grid], cell, threads, pool)
            records.append(rec)
            if progress is not None:
                progress(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v) if not math.isfinite(v) else f"{v:.17e}"
    return str(v)


def emit_csv(records, path) -> Path:
    """Write records with a fixed header (:data:`CSV_COLUMNS`), UTF-8 and LF endings."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(CSV_COLUMNS)
            for r in records:
                d = asdict(r)
                wr.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict]:
    """Parse a file written by :func:`emit_csv` back into typed dicts."""
    types = {f.name: f.type for f in fields(MetricRecord)}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append({k: (int(v) if types[k] == "int" else float(v) if types[k] == "float" else v) for k, v in row.items()})
    return out
