import math
import warnings

import numpy as np
import pytest

from spotfs.analysis import (
    LinkParams,
    analytic_mse,
    analytic_se,
    build_sinr_polynomial,
    complexity_counts,
    composed_sinr,
    ep_overhead,
    grid_maximizer,
    pilot_mse_bound,
    optimal_pilot_power,
    reference_sinr,
    sinr_lower_bound,
    snr_for_se,
    snr_to_noise,
    spectral_efficiency,
)
from spotfs.estimators import mse_lower_bound
from spotfs.grid import DdGrid
from spotfs.modem import LayoutError, PowerSplit

SNRS = (0.0, 5.0, 10.0, 15.0, 20.0)


def params_for(grid, taps, snr):
    return LinkParams.from_snr(grid, taps, snr)


def test_snr_to_noise():
    assert snr_to_noise(10) == pytest.approx(0.1)
    assert snr_to_noise(0) == pytest.approx(1.0)


def test_link_params_validation(grid16):
    with pytest.raises(ValueError):
        LinkParams(grid16, 0, 1.0, 5.0, 0.1)
    with pytest.raises(ValueError):
        LinkParams(grid16, 5, 1.0, 5.0, 0.0)


def test_sinr_bound_edges(grid16, taps16):
    p = params_for(grid16, taps16, 10)
    assert sinr_lower_bound(p, taps16.sigma2_h) == pytest.approx(0.0)
    # perfect estimate reduces to sigma2_d sigma2_h / sigma2_w
    assert sinr_lower_bound(p, 0.0) == pytest.approx(0.7 * 1.0 / 0.1)
    with pytest.raises(ValueError):
        sinr_lower_bound(p, -0.1)


def test_pilot_bound_matches_estimator_module(grid16, taps16):
    p = params_for(grid16, taps16, 10)
    for sp in (0.1, 0.3, 0.7):
        a = pilot_mse_bound(p, sp)
        b = mse_lower_bound(taps16, PowerSplit.from_pilot(sp), 0.1, grid16)
        assert a == pytest.approx(b, rel=1e-13)


@pytest.mark.parametrize("snr", SNRS)
@pytest.mark.parametrize("fixture", ["taps16", "taps16_raw"])
def test_coefficient_identity(request, grid16, snr, fixture):
    taps = request.getfixturevalue(fixture)
    p = params_for(grid16, taps, snr)
    poly = build_sinr_polynomial(p)
    xs = np.linspace(1e-3, 0.999, 2001)
    np.testing.assert_allclose(poly(xs), composed_sinr(p, xs), rtol=1e-9)


def test_printed_numerator_differs(grid16, taps16):
    p = params_for(grid16, taps16, 10)
    pr = build_sinr_polynomial(p, "printed")
    xs = np.linspace(0.05, 0.95, 50)
    assert np.max(np.abs(pr(xs) / composed_sinr(p, xs) - 1)) > 1e-3
    with pytest.raises(ValueError):
        build_sinr_polynomial(p, "other")


@pytest.mark.parametrize("snr", SNRS)
def test_root_is_stationary_maximum(grid16, taps16, snr):
    p = params_for(grid16, taps16, snr)
    opt = optimal_pilot_power(p)
    poly = build_sinr_polynomial(p)
    x = opt.sigma2_p_opt
    h = 1e-6
    deriv = (poly(x + h) - poly(x - h)) / (2 * h)
    assert abs(deriv) < 1e-6 * max(1.0, abs(float(poly(x))))
    assert poly(x + 0.05) < poly(x) and poly(x - 0.05) < poly(x)
    assert opt.sigma2_d_opt == pytest.approx(1 - x)
    assert opt.metadata["grid_mismatch"] < 1e-3


def test_plus_branch_is_not_the_maximizer(grid16, taps16_raw):
    # [DERIVED] at 0 dB with raw tap powers the "+sqrt" root sits away from the maximum
    p = params_for(grid16, taps16_raw, 0.0)
    opt = optimal_pilot_power(p)
    assert opt.metadata["branch"] == "minus"
    assert opt.metadata["plus_root"] == pytest.approx(0.4446, abs=5e-4)
    assert opt.sigma2_p_opt == pytest.approx(0.2115, abs=5e-4)


def test_independent_oracle_for_optimum(grid16, taps16):
    # dense scan of the direct composition, no polynomial involved
    xs = np.linspace(1e-4, 0.9999, 200_001)
    for snr in SNRS:
        p = params_for(grid16, taps16, snr)
        ref = xs[np.argmax(composed_sinr(p, xs))]
        assert optimal_pilot_power(p).sigma2_p_opt == pytest.approx(ref, abs=1e-4)


def test_frozen_optimal_powers(grid16, taps16, taps16_raw):
    # [DERIVED] frozen from the oracle above
    norm = [0.1807, 0.2179, 0.3004, 0.4217, 0.5618]
    raw = [0.2115, 0.2889, 0.4067, 0.5460, 0.6809]
    for snr, a, b in zip(SNRS, norm, raw):
        assert optimal_pilot_power(params_for(grid16, taps16, snr)).sigma2_p_opt == pytest.approx(a, abs=1e-4)
        assert optimal_pilot_power(params_for(grid16, taps16_raw, snr)).sigma2_p_opt == pytest.approx(b, abs=1e-4)


def test_mismatch_warns(grid16, taps16):
    p = params_for(grid16, taps16, 10)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        optimal_pilot_power(p, check_tol=1e-15)
    assert any(issubclass(x.category, RuntimeWarning) for x in w)


def test_grid_maximizer_boundary(grid16, taps16):
    p = params_for(grid16, taps16, 10)
    printed = build_sinr_polynomial(p, "printed")
    assert grid_maximizer(printed) == pytest.approx(0.999)


def test_ep_overhead_examples():
    assert ep_overhead(0, 0, DdGrid(16, 16)) == pytest.approx(1 / 256)
    assert ep_overhead(3, 2, DdGrid(16, 16)) == pytest.approx(63 / 256)
    assert ep_overhead(4, 2, DdGrid(32, 32)) == pytest.approx(81 / 1024)
    with pytest.raises(LayoutError):
        ep_overhead(4, 12, DdGrid(16, 16))


def test_eta_decreases_with_frame_size():
    etas = [ep_overhead(4, 2, DdGrid(m, m)) for m in (16, 24, 32, 64)]
    assert all(a > b for a, b in zip(etas, etas[1:]))


def test_se_trivial_cases(grid16, taps16):
    p = params_for(grid16, taps16, 10)
    for scheme in ("SP-NI", "SP-I", "EP", "CPA"):
        assert spectral_efficiency(scheme, p, taps16.sigma2_h, eta=0.5) == pytest.approx(0.0)
    full = math.log2(1 + 1.0 * taps16.sigma2_h / 0.1)
    assert spectral_efficiency("EP", p, 0.0, eta=0.0) == pytest.approx(full)
    assert spectral_efficiency("CPA", p, 0.0) == pytest.approx(full / 2)
    assert reference_sinr(1.0, 0.0, 0.1) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        spectral_efficiency("OFDM", p, 0.1)


def test_se_monotone_in_snr(grid16, taps16):
    snrs = np.arange(-5, 31, 2.5)
    for scheme in ("SP-NI", "SP-I", "EP", "CPA"):
        se = [analytic_se(scheme, grid16, taps16, s) for s in snrs]
        assert all(v >= 0 for v in se)
        assert all(b >= a - 1e-12 for a, b in zip(se, se[1:])), scheme


def test_analytic_mse_and_errors(grid16, taps16):
    v = taps16.var
    assert analytic_mse("CPA", grid16, taps16, 0.1) == pytest.approx(np.sum(0.1 * v / (256 * v + 0.1)))
    assert analytic_mse("EP", grid16, taps16, 0.1, l_max=0, k_max=0) == pytest.approx(np.sum(0.1 * v / (v + 0.1)))
    with pytest.raises(ValueError):
        analytic_mse("X", grid16, taps16, 0.1)
    with pytest.raises(ValueError):
        analytic_se("X", grid16, taps16, 10)


def test_snr_for_se(grid16, taps16):
    s = snr_for_se("CPA", 1.0, grid16, taps16)
    assert analytic_se("CPA", grid16, taps16, s) == pytest.approx(1.0, abs=1e-9)
    assert snr_for_se("CPA", 100.0, grid16, taps16) == math.inf


def test_complexity_examples():
    M = N = 16
    MN = M * N
    assert complexity_counts("SP-NI", M, N, 1, 2, 1) == 4 * MN + 3 + 1 + MN * 2
    # [DERIVED] frozen values at Q=5, S=2, N_I=20, N_SPI=2, l_max=4, k_max=12
    kw = dict(Q=5, S=2, N_I=20, N_SPI=2, l_max=4, k_max=12)
    assert complexity_counts("EP", 16, 16, **kw) == 155
    assert complexity_counts("SP-NI", 16, 16, **kw) == 66760
    assert complexity_counts("SP-I", 16, 16, **kw) == 134032
    assert complexity_counts("EP", 64, 64, **kw) == 731155
    with pytest.raises(ValueError):
        complexity_counts("SP-NI", 0, 16, 5, 2, 20)
    with pytest.raises(ValueError):
        complexity_counts("OFDM", 16, 16, 5, 2, 20)


def test_spi_dominates_spni():
    for Q in (1, 3, 5):
        for S in (2, 4):
            for NI in (1, 10):
                for m in (8, 16, 32):
                    assert complexity_counts("SP-I", m, m, Q, S, NI, 1) >= complexity_counts("SP-NI", m, m, Q, S, NI)
