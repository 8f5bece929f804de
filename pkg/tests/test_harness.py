import math

import numpy as np
import pytest

from pathlib import Path

from spotfs.config import RunConfig
from spotfs.harness import (
    CSV_COLUMNS,
    MetricRecord,
    Scenario,
    emit_csv,
    enumerate_cells,
    read_csv,
    run_scenario,
    trial_rng,
    wilson_interval,
)

TAPS8 = str(Path(__file__).with_name("data") / "taps8.csv")
SMALL = dict(M=8, N=8, taps=TAPS8, trials=8, min_errors=0, max_trials=8, batch=4, mp_iters=5, spi_max_iter=2)


def test_trial_rng_independent_of_order():
    a = trial_rng(3, (0, 1), 5).standard_normal(3)
    trial_rng(3, (0, 1), 4).standard_normal(3)
    b = trial_rng(3, (0, 1), 5).standard_normal(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, trial_rng(3, (0, 2), 5).standard_normal(3))


def test_cell_enumeration():
    cfg = RunConfig(schemes=("SP-NI", "EP"), split_mode="fixed", sigma2_p=(0.2, 0.3), snr_db=(0, 5), damping=(0.5,))
    cells = enumerate_cells(cfg)
    assert len(cells) == 2 * 2 + 2
    assert [c.cell_id for c in cells] == list(range(6))
    assert all(math.isnan(c.sigma2_p) for c in cells if c.scheme == "EP")


def test_wilson_interval_brackets():
    lo, hi = wilson_interval(5, 1000)
    assert lo < 0.005 < hi
    assert wilson_interval(0, 100)[0] == 0.0
    assert all(math.isnan(v) for v in wilson_interval(0, 0))


@pytest.mark.parametrize("scheme", ["SP-NI", "SP-I", "EP", "CPA", "perfect-CSI"])
def test_each_scheme_runs(scheme):
    cfg = RunConfig(schemes=(scheme,), snr_db=(10.0,), ep_l_max=1, ep_k_max=1, **SMALL)
    (rec,) = run_scenario(cfg)
    assert rec.scheme == scheme
    assert rec.trials == 8 and rec.faults == 0
    assert 0 <= rec.ber <= 1 and rec.ber_lo <= rec.ber <= rec.ber_hi
    assert rec.mse_sim >= 0 and rec.se_bits_per_hz >= 0
    bps = 1
    n_sym = 64 if scheme != "EP" else 64 - 3 * 5
    assert rec.bits == rec.trials * n_sym * bps


def test_bit_error_stopping_rule():
    cfg = RunConfig(schemes=("SP-NI",), snr_db=(0.0,), M=8, N=8, taps=TAPS8, trials=4, min_errors=200, max_trials=64, batch=4, mp_iters=5)
    (rec,) = run_scenario(cfg)
    assert rec.bit_errors >= 200 or rec.trials == 64
    assert rec.trials % 4 == 0


def test_determinism_across_threads():
    cfg = RunConfig(schemes=("SP-NI", "SP-I"), snr_db=(5.0,), **{**SMALL, "trials": 12, "max_trials": 40, "min_errors": 30})
    a = run_scenario(cfg, threads=1)
    b = run_scenario(cfg, threads=3)
    for ra, rb in zip(a, b):
        for col in CSV_COLUMNS:
            if col != "wall_time":
                assert getattr(ra, col) == getattr(rb, col), col


def test_csv_roundtrip_and_bytes(tmp_path):
    cfg = RunConfig(schemes=("SP-NI",), snr_db=(5.0, 10.0), **SMALL)
    recs = run_scenario(cfg)
    p = emit_csv(recs, tmp_path / "out" / "r.csv")
    raw = p.read_bytes()
    assert b"\r\n" not in raw
    assert raw.decode("utf-8").splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = read_csv(p)
    for rec, row in zip(recs, rows):
        for col in CSV_COLUMNS:
            assert row[col] == getattr(rec, col) or (isinstance(row[col], float) and math.isnan(row[col]))
    # replay: identical bytes apart from wall_time
    p2 = emit_csv(run_scenario(cfg), tmp_path / "r2.csv")
    strip = lambda path: [r.rsplit(",", 1)[0] for r in path.read_text().splitlines()]
    assert strip(p) == strip(p2)


def test_empty_csv(tmp_path):
    p = emit_csv([], tmp_path / "e.csv")
    assert p.read_text() == ",".join(CSV_COLUMNS) + "\n"
    assert read_csv(p) == []


def test_csv_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_csv([], blocker / "sub" / "r.csv")


def test_column_order_fixed():
    assert CSV_COLUMNS[:4] == ("scheme", "snr_db", "sigma2_p", "M")
    assert CSV_COLUMNS[-1] == "wall_time"
    assert len(CSV_COLUMNS) == len(MetricRecord.__dataclass_fields__)


def test_perfect_csi_easy_regime():
    cfg = RunConfig(schemes=("perfect-CSI",), snr_db=(40.0,), M=8, N=8, taps=TAPS8, trials=1600, max_trials=1600, min_errors=0, batch=400)
    (rec,) = run_scenario(cfg)
    assert rec.bits >= 100_000
    assert rec.ber < 1e-4


def test_scenario_optimal_split():
    cfg = RunConfig(M=16, N=16)
    scn = Scenario(cfg, cfg.grids()[0])
    cell = enumerate_cells(cfg)[0]
    assert 0 < scn.split_for(cell).sigma2_p < 1


def test_common_random_numbers_across_schemes():
    cfg = RunConfig(schemes=("SP-NI", "SP-I"), split_mode="fixed", sigma2_p=(0.2, 0.4), snr_db=(0.0, 5.0), damping=(0.5, 0.9))
    cells = enumerate_cells(cfg)
    by_snr = {}
    for c in cells:
        by_snr.setdefault(c.snr_db, set()).add(c.stream)
    assert all(len(s) == 1 for s in by_snr.values())
    assert by_snr[0.0] != by_snr[5.0]
