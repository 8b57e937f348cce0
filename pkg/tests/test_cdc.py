import json

import numpy as np
import pytest

from paldbp.cdc import (
    FIR_LENGTHS,
    CdcFilter,
    FdeConfig,
    apply_fir,
    apply_fir_fde,
    cdc_exact,
    cdc_response,
    design_fir_ls,
)
from paldbp.channel import LaunchConfig, LinkParams, receiver_frontend, ssfm_propagate, transmit_link
from paldbp.model import rx_symbol_gain
from paldbp.signal import ComplexSignal, PulseShape, make_rng, qam64_demap, random_frame

LINK = LinkParams()


def rand_signal(n, seed=0, rate=64e9):
    rng = make_rng(seed)
    return ComplexSignal(rng.standard_normal(n) + 1j * rng.standard_normal(n), rate)


def rand_filter(n_taps, seed=1):
    rng = make_rng(seed)
    V = n_taps // 2
    return CdcFilter(rng.standard_normal(V + 1) + 1j * rng.standard_normal(V + 1))


def dense_circulant(full_taps, n):
    V = len(full_taps) // 2
    W = np.zeros((n, n), complex)
    for r in range(n):
        for v in range(-V, V + 1):
            W[r, (r - v) % n] += full_taps[v + V]
    return W


def test_filter_invariants_and_json():
    f = rand_filter(9)
    assert f.length == 9 and np.array_equal(f.taps, f.taps[::-1])
    g = CdcFilter.from_json(f.to_json())
    assert np.array_equal(g.half_taps, f.half_taps)
    assert set(json.loads(f.to_json())) == {"design_mu_km", "rate_hz", "half_taps"}
    with pytest.raises(ValueError):
        f.truncated(4)


def test_fde_config_validation():
    assert FdeConfig(256, 77).block_advance == 180
    with pytest.raises(ValueError):
        FdeConfig(300, 77)
    with pytest.raises(ValueError):
        FdeConfig(64, 77)


def test_cdc_exact_identity_and_inverse():
    x = rand_signal(512)
    assert np.max(np.abs(cdc_exact(x, 0.0, LINK).samples - x.samples)) < 1e-12
    fwd = ssfm_propagate(x, LINK.replace(gamma=0.0), 80.0, 1)
    assert np.max(np.abs(cdc_exact(fwd, 80.0, LINK).samples - x.samples)) < 1e-10


def test_cdc_exact_dense_matrix():
    n = 128
    x = rand_signal(n)
    F = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    H = cdc_response(n, x.sample_rate, 160.0, LINK.beta2, LINK.alpha)
    dense = np.linalg.inv(F) @ np.diag(H) @ F
    assert np.max(np.abs(dense @ x.samples - cdc_exact(x, 160.0, LINK).samples)) < 1e-10


def test_cdc_norm_preserving_without_loss():
    x = rand_signal(1000)
    y = cdc_exact(x, 800.0, LINK, include_loss=False)
    assert abs(y.power / x.power - 1) < 1e-12


def test_ls_design_zero_length_step():
    f = design_fir_ls(0.0, LINK, 9, 64e9)
    assert np.allclose(f.half_taps, [1, 0, 0, 0, 0], atol=1e-10)
    assert f.residual < 1e-20


def test_ls_residual_decreases_with_length():
    res = [design_fir_ls(80.0, LINK, n, 64e9).residual for n in (17, 33, 65)]
    assert res[0] > res[1] > res[2]


def test_ls_design_records_conditioning():
    f = design_fir_ls(80.0, LINK, 77, 64e9)
    assert f.notes and "ridge" in f.notes[0]


@pytest.mark.parametrize("S", [1, 2, 4, 10])
def test_designed_filter_matches_exact_on_inband_tone(S):
    f = design_fir_ls(S * 80.0, LINK, FIR_LENGTHS[S], 64e9)
    n = 4096
    k = 700  # 10.9 GHz, inside the occupied band
    t = np.arange(n)
    tone = ComplexSignal(np.exp(2j * np.pi * k * t / n), 64e9)
    a = apply_fir(tone, f).samples
    b = cdc_exact(tone, S * 80.0, LINK, include_loss=False).samples
    assert np.max(np.abs(a - b)) < max(10 * np.sqrt(f.residual), 1e-6)


def test_table_length_filter_equalizes_one_span():
    L = LinkParams(n_spans=1, gamma=0.0)
    pulse = PulseShape()
    fr = random_frame(1024, 3)
    rx = transmit_link(fr, L, LaunchConfig(0.0), pulse, 0, noise=False)
    x, _ = receiver_frontend(rx, pulse)
    y = apply_fir(x, design_fir_ls(80.0, L, 77, 64e9)).samples[::2] * rx_symbol_gain(0.1)
    y *= np.sqrt(np.mean(np.abs(fr.symbols) ** 2))  # undo the per-frame power normalization
    assert np.array_equal(qam64_demap(y), fr.bits)


def test_apply_fir_identity_dense_and_commutes():
    x = rand_signal(256)
    assert np.max(np.abs(apply_fir(x, CdcFilter.identity()).samples - x.samples)) < 1e-14
    f = rand_filter(17)
    dense = dense_circulant(f.taps, 256) @ x.samples
    assert np.max(np.abs(apply_fir(x, f).samples - dense)) < 1e-12
    g = rand_filter(31, seed=5)
    ab = apply_fir(apply_fir(x, f), g).samples
    ba = apply_fir(apply_fir(x, g), f).samples
    assert np.max(np.abs(ab - ba)) < 1e-12
    with pytest.raises(ValueError):
        apply_fir(rand_signal(8), f)


def test_fde_matches_tde():
    x = rand_signal(2048)
    f = rand_filter(77)
    tde = apply_fir(x, f).samples
    fde = apply_fir_fde(x, f, FdeConfig(256, 77)).samples
    assert np.max(np.abs(fde - tde)) < 1e-9


def test_fde_block_size_invariance_and_impulse():
    x = rand_signal(1000, seed=3)
    f = rand_filter(33, seed=4)
    a = apply_fir_fde(x, f, FdeConfig(128, 33)).samples  # ~ 4 x N_CD
    b = apply_fir_fde(x, f, FdeConfig(512, 33)).samples  # ~ 16 x N_CD
    c = apply_fir_fde(x, f, FdeConfig(64, 33)).samples   # ~ 2 x N_CD
    assert np.max(np.abs(a - b)) < 1e-9 and np.max(np.abs(a - c)) < 1e-9
    imp = np.zeros(100, complex)
    imp[0] = 1
    out = apply_fir_fde(ComplexSignal(imp, 1.0), f, FdeConfig(64, 33)).samples
    expect = np.zeros(100, complex)
    expect[np.arange(-16, 17) % 100] = f.taps
    assert np.max(np.abs(out - expect)) < 1e-12


def test_symmetry_survives_half_tap_updates():
    f = rand_filter(11)
    f.half_taps = f.half_taps + 0.1
    assert np.array_equal(f.taps, f.taps[::-1])
