import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_taps
from spotfs.analysis import LinkParams, build_sinr_polynomial, complexity_counts, composed_sinr, optimal_pilot_power
from spotfs.channel import TapStructure, build_dense_heff, build_effective_channel, sample_channel
from spotfs.grid import DdGrid, heisenberg_tx, isfft, sfft, unvec, vec, wigner_rx

dims = st.integers(1, 9)
seeds = st.integers(0, 2**32 - 1)


@given(dims, dims, seeds)
def test_transform_roundtrips(M, N, seed):
    rng = np.random.default_rng(seed)
    g = DdGrid(M, N)
    X = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    np.testing.assert_allclose(sfft(isfft(X, g), g), X, atol=1e-12)
    np.testing.assert_allclose(wigner_rx(heisenberg_tx(X, g), g), X, atol=1e-12)
    np.testing.assert_array_equal(unvec(vec(X), g), X)
    # unitary transforms keep energy
    assert np.isclose(np.linalg.norm(isfft(X, g)), np.linalg.norm(X))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(1, 4), seeds)
def test_sparse_equals_dense(M, N, Q, seed):
    rng = np.random.default_rng(seed)
    g = DdGrid(M, N)
    Q = min(Q, M * N)
    taps = random_taps(rng, g, Q)
    real = sample_channel(taps, rng)
    heff = build_effective_channel(g, taps, real.h)
    np.testing.assert_allclose(heff.to_dense(), build_dense_heff(real, g), atol=1e-10)
    v = rng.standard_normal(M * N) + 0j
    omega = TapStructure.build(g, taps).apply_gamma(v)
    np.testing.assert_allclose(np.linalg.norm(omega, axis=0), np.linalg.norm(v), rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 8),
    st.sampled_from([4, 8, 16, 32]),
    st.floats(0.2, 5.0),
    st.floats(1.0, 400.0),
    st.floats(-10.0, 30.0),
)
def test_polynomial_matches_composition(Q, m, sh, st_tilde, snr):
    # sum 1/var_i >= Q^2 / sum var_i by Cauchy-Schwarz
    st_tilde = max(st_tilde, Q * Q / sh)
    p = LinkParams(DdGrid(m, m), Q, sh, st_tilde, 10 ** (-snr / 10))
    poly = build_sinr_polynomial(p)
    xs = np.linspace(0.01, 0.99, 99)
    np.testing.assert_allclose(poly(xs), composed_sinr(p, xs), rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.sampled_from([8, 16, 32]), st.floats(0.5, 3.0), st.floats(-5.0, 25.0))
def test_optimum_beats_grid(Q, m, sh, snr):
    p = LinkParams(DdGrid(m, m), Q, sh, Q * Q / sh * 1.5, 10 ** (-snr / 10))
    opt = optimal_pilot_power(p)
    xs = np.linspace(1e-3, 0.999, 4001)
    assert composed_sinr(p, opt.sigma2_p_opt) >= composed_sinr(p, xs).max() - 1e-9


@given(st.integers(1, 8), st.integers(2, 16), st.integers(1, 30), st.integers(1, 64), st.integers(1, 64))
def test_spi_count_dominates(Q, S, NI, M, N):
    assert complexity_counts("SP-I", M, N, Q, S, NI, 1) >= complexity_counts("SP-NI", M, N, Q, S, NI)
