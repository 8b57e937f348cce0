"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line.

The reduced-scale experiments (6-8) share one simulated train/test pair on
the full 20 x 80 km link, cached under the pytest cache directory and keyed
by its configuration digest.
"""
import time

import numpy as np
import pytest

from paldbp import dataset as D
from paldbp.cdc import CdcFilter, FdeConfig, apply_fir, apply_fir_fde, cdc_exact
from paldbp.channel import LaunchConfig, LinkParams, ssfm_propagate, transmit_link
from paldbp.experiments import (
    evaluate_cdc,
    evaluate_model,
    fit_scheme,
    initial_model,
    split_train,
)
from paldbp.metrics import analytic_complexity, ber_from_q2, instrumented_count, optimal_fft_size, q2_from_ber
from paldbp.model import EqualizerModel, StepParams, dbp_baseline, pa_activation
from paldbp.perturbation import PerturbationVector, c0_vector, compute_field, matched_gaussian
from paldbp.signal import ComplexSignal, PulseShape, fft, make_rng, random_frame, rrc_shape
from paldbp.training import TrainConfig, finite_difference, loss_and_grad, prune

POWERS = [-4.0, -2.0, 0.0, 2.0, 4.0]
N_TRAIN = 64
N_TEST = 64
EPOCHS = 50
LINK = LinkParams(steps_per_span=50)


def record(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    return ok


def max_err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


# ------------------------------------------------------------ 1. oracles


def test_c1_oracle_suite(acceptance_log):
    t0 = time.perf_counter()
    rng = make_rng(11)
    errs = {}

    u = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    n = np.arange(64)
    dft = np.exp(-2j * np.pi * np.outer(n, n) / 64) @ u
    errs["fft"] = (max_err(fft(ComplexSignal(u, 1.0)).samples, dft), 1e-10)

    spm = LinkParams(alpha_db_km=0.0, dispersion_ps_nm_km=0.0)
    v = 0.03 * (rng.standard_normal(256) + 1j * rng.standard_normal(256))
    out = ssfm_propagate(ComplexSignal(v, 1e11), spm, 80.0, 10).samples
    errs["spm"] = (max_err(out, v * np.exp(1j * spm.gamma * np.abs(v) ** 2 * 80.0)), 1e-10)

    lin = LinkParams(alpha_db_km=0.0, gamma=0.0)
    fs, w0 = 1e12, 20e-12
    t = (np.arange(4096) - 2048) / fs
    g = ComplexSignal(np.exp(-(t**2) / (2 * w0**2)).astype(complex), fs)
    q = w0**2 - 1j * lin.beta2 * 80.0
    errs["gaussian"] = (max_err(ssfm_propagate(g, lin, 80.0, 5).samples,
                                w0 / np.sqrt(q) * np.exp(-(t**2) / (2 * q))), 1e-8)

    x = ComplexSignal(rng.standard_normal(512) + 1j * rng.standard_normal(512), 64e9)
    fwd = ssfm_propagate(x, LinkParams(gamma=0.0), 80.0, 1)
    errs["cdc_exact"] = (max_err(cdc_exact(fwd, 80.0, LinkParams()).samples, x.samples), 1e-10)

    h = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    f = CdcFilter(h)
    taps = f.taps
    y = x.samples[:256]
    dense = np.zeros((256, 256), complex)
    for r in range(256):
        for k, c in enumerate(taps):
            dense[r, (r - (k - 8)) % 256] += c
    errs["apply_fir"] = (max_err(apply_fir(ComplexSignal(y, 64e9), f).samples, dense @ y), 1e-12)

    long = CdcFilter(rng.standard_normal(39) + 1j * rng.standard_normal(39))
    x2 = ComplexSignal(rng.standard_normal(2048) + 1j * rng.standard_normal(2048), 64e9)
    errs["fde"] = (max_err(apply_fir_fde(x2, long, FdeConfig(256, 77)).samples, apply_fir(x2, long).samples), 1e-9)

    z = (rng.standard_normal(64) + 1j * rng.standard_normal(64)) / np.sqrt(2)
    c = np.array([0.3, 0.12, -0.05, 0.02])
    phi = np.array([c[0] * abs(z[i]) ** 2 + sum(c[abs(k)] * abs(z[(i + k) % 64]) ** 2
                                                for k in range(-3, 4) if k) for i in range(64)])
    errs["pa_activation"] = (max_err(pa_activation(z, PerturbationVector(c)), z * np.exp(-1j * phi)), 1e-10)

    errs["q2"] = (max(abs(q2_from_ber(ber_from_q2(v)) - v) for v in (8.0, 12.0, 16.0)), 1e-9)

    elapsed = time.perf_counter() - t0
    ok = all(e <= tol for e, tol in errs.values()) and elapsed < 60
    worst = ", ".join(f"{k} {e:.1e}" for k, (e, _) in errs.items())
    assert record(acceptance_log, 1, ok, f"max errors: {worst}; {elapsed:.2f} s")


# ---------------------------------------------------------- 2. gradients


def test_c2_gradient_acceptance(acceptance_log):
    t0 = time.perf_counter()
    rng = make_rng(21)
    steps = []
    for _ in range(2):
        h = 0.15 * (rng.standard_normal(5) + 1j * rng.standard_normal(5))
        h[0] += 1
        steps.append(StepParams(CdcFilter(h), None, PerturbationVector(0.2 * rng.standard_normal(2), power_folded=True),
                                1.3, 80, 21.17, 0.02))
    m = EqualizerModel("pa", steps, 1, 2, frame_len=128, output_gain=0.98)
    s = np.stack([random_frame(64, 5, f).symbols for f in range(3)])
    x = np.repeat(s, 2, axis=1) * np.exp(0.3j) + 0.05 * (rng.standard_normal((3, 128)) + 1j * rng.standard_normal((3, 128)))
    _, grad = loss_and_grad(m, x, s)
    fd = finite_difference(m, x, s)
    cls = m.parameter_classes()
    rel = {name: float(np.max(np.abs(grad[cls == k] - fd[cls == k])) / np.max(np.abs(fd[cls == k])))
           for k, name in enumerate(("Re h", "Im h", "c0"))}
    elapsed = time.perf_counter() - t0
    ok = max(rel.values()) < 1e-5 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in rel.items())
    assert record(acceptance_log, 2, ok, f"relative errors: {detail}; {elapsed:.2f} s")


# --------------------------------------------------- 3. exact-inverse DBP


def test_c3_exact_inverse_dbp(acceptance_log):
    t0 = time.perf_counter()
    link = LinkParams(n_spans=4, steps_per_span=20)
    fr = random_frame(256, 0)
    launch = LaunchConfig(4.0)
    tx = rrc_shape(fr, PulseShape(), 32e9)
    rx = transmit_link(fr, link, launch, PulseShape(), 0, noise=False)
    back = dbp_baseline(rx, link, 20, 1.0)
    err = max_err(back.samples, tx.samples * np.sqrt(launch.P))
    elapsed = time.perf_counter() - t0
    assert record(acceptance_log, 3, err <= 1e-6 and elapsed < 60, f"max sample error {err:.2e}; {elapsed:.2f} s")


# ------------------------------------------- 4. perturbation coefficients


def test_c4_perturbation_coefficients(acceptance_log):
    link = LinkParams()
    pulse = matched_gaussian()
    fq = compute_field(link, 1, pulse, 6, "quadrature")
    C = fq.coeffs
    c00 = abs(fq.C(0, 0))
    sym = float(np.max(np.abs(C - C.T))) / c00
    real = float(np.max(np.abs(fq.row0().imag))) / c00
    fine = compute_field(link, 1, pulse, 6, "quadrature", samples_per_symbol=32, rows=[0])
    half = abs(fine.C(0, 0) - fq.C(0, 0)) / c00
    n1 = c0_vector(link, 1, -20.0, pulse).length
    ok = sym <= 1e-8 and real <= 1e-8 and half <= 1e-6 and abs(n1 - 11) <= 2
    assert record(acceptance_log, 4, ok, f"symmetry {sym:.1e}, row-0 imag {real:.1e}, h vs h/2 {half:.1e}, "
                                         f"1-span c0 length {n1} (target 11 +/- 2)")


# --------------------------------------------------------- 5. complexity


def test_c5_complexity(acceptance_log):
    sizes = [optimal_fft_size(n) for n in (37, 77, 157, 300)]
    rng = make_rng(3)
    mismatches = 0
    for mode, n_cd, n_pb in [("ldbp", 77, None), ("pa", 77, 11), ("pa", 149, 25), ("pa", 37, 31), ("pa", 725, 41)]:
        steps = [StepParams(CdcFilter(rng.standard_normal(n_cd // 2 + 1) + 0j), 0.5 if mode == "ldbp" else None,
                            PerturbationVector(1e-3 * rng.standard_normal(n_pb // 2 + 1), power_folded=True)
                            if mode == "pa" else None, 1.3, 80, 21, 1e-3) for _ in range(2)]
        m = EqualizerModel(mode, steps, 1, 2, frame_len=2048)
        if instrumented_count(m).per_step != analytic_complexity(m).per_step:
            mismatches += 1
    ok = sizes == [256, 512, 1024, 2048] and mismatches == 0
    assert record(acceptance_log, 5, ok, f"optimal N_FFT {sizes}; counted vs analytic mismatches {mismatches}")


# ------------------------------------------- reduced-scale experiments


def _dataset(cache_dir, split, n_frames):
    path = cache_dir / f"{split}-{D.config_digest(D.dataset_config(LINK, POWERS, n_frames, split=split))}.bin"
    if path.exists():
        return D.load(path)
    ds = D.simulate(LINK, POWERS, n_frames, seed=0, split=split)
    D.save(ds, path)
    return ds


@pytest.fixture(scope="session")
def data(request):
    cache = request.config.cache.mkdir("paldbp-acceptance")
    return _dataset(cache, "train", N_TRAIN), _dataset(cache, "test", N_TEST)


@pytest.fixture(scope="session")
def sweep(data):
    train_ds, test_ds = data
    cfg = TrainConfig(epochs=EPOCHS)
    q2 = {}
    for p in POWERS:
        q2[("cdc", None, p)] = evaluate_cdc(LINK, test_ds, p).q2_db
        for S in (1, 2, 4, 10):
            for mode in ("ldbp", "pa"):
                m, _, _ = fit_scheme(mode, LINK, S, train_ds, p, cfg)
                q2[(mode, S, p)] = evaluate_model(m, test_ds, p).q2_db
    return q2


def test_c6_reduced_scale_comparison(acceptance_log, sweep):
    peak = {}
    for (mode, S, p), q in sweep.items():
        key = (mode, S)
        if key not in peak or q > peak[key][0]:
            peak[key] = (q, p)
    cdc = peak[("cdc", None)][0]
    print("\nscheme  S  peak_q2_db  at_dbm  gain_db")
    for (mode, S), (q, p) in sorted(peak.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
        print(f"{mode:5s} {S or '-':>3}  {q:10.2f}  {p:6.1f}  {q - cdc:7.2f}")
    gain = {k: v[0] - cdc for k, v in peak.items()}
    a = gain[("pa", 1)] >= 2.0
    b = all(gain[("pa", S)] >= gain[("ldbp", S)] + 0.3 for S in (1, 2, 4))
    pa = [gain[("pa", S)] for S in (1, 2, 4, 10)]
    ld = [gain[("ldbp", S)] for S in (1, 2, 4, 10)]
    c = all(np.diff(pa) < 0) and all(np.diff(ld) < 0)
    detail = (f"(a) PA-1 gain {pa[0]:.2f} dB; (b) PA-LDBP margins "
              + "/".join(f"{gain[('pa', S)] - gain[('ldbp', S)]:.2f}" for S in (1, 2, 4))
              + f" dB; (c) PA gains {np.round(pa, 2).tolist()}, LDBP gains {np.round(ld, 2).tolist()}")
    assert record(acceptance_log, 6, a and b and c, detail)


def test_c7_pruning_trend(acceptance_log, data):
    train_ds, test_ds = data
    p = -2.0
    m = initial_model("pa", LINK, 10, p, c0_len=41)
    m41, _, _ = fit_scheme("pa", LINK, 10, train_ds, p, TrainConfig(epochs=EPOCHS), model=m)
    (x, s), val = split_train(train_ds, p)
    ft = TrainConfig(epochs=5, keep_best=True)
    m31, st31 = prune(m41, x, s, c0_length=31, finetune=ft, val=val)
    m11, st11 = prune(m31, x, s, c0_length=11, finetune=ft, val=val)
    q41, q31, q11 = (evaluate_model(mm, test_ds, p).q2_db for mm in (m41, m31, m11))
    kept = [g.kept_epoch for g in st31[1:] + st11[1:]]
    ok = abs(q31 - q41) < 0.2 and q31 - q11 <= 0.5
    assert record(acceptance_log, 7, ok, f"Q2 41/31/11 taps = {q41:.2f}/{q31:.2f}/{q11:.2f} dB; "
                                         f"41->31 {q31 - q41:+.2f} dB, 31->11 {q11 - q31:+.2f} dB; "
                                         f"fine-tune improved validation in {sum(k > 0 for k in kept)}"
                                         f"/{len(kept)} stages")


def test_c8_initialization_study(acceptance_log, data):
    train_ds, _ = data
    p = 0.0
    parts, ok = [], True
    for S in (2, 4):
        runs = {}
        for seed, mode in [(0, "analytic")] + [(k, "random-gaussian") for k in range(1, 6)]:
            _, rec, _ = fit_scheme("pa", LINK, S, train_ds, p, TrainConfig(epochs=EPOCHS, init_mode=mode, seed=seed))
            runs.setdefault(mode, []).append(rec.epochs_to_fraction(0.95, "val_snr_db"))
        a = runs["analytic"][0]
        r = float(np.mean(runs["random-gaussian"]))
        ok &= a < r
        parts.append(f"S={S}: analytic {a} vs random mean {r:.1f} epochs {runs['random-gaussian']}")
    assert record(acceptance_log, 8, ok, "; ".join(parts))


if __name__ == "__main__":
    raise SystemExit(pytest.main(["-v", __file__]))
