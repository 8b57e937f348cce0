"""Complex waveform primitives shared by the channel and the equalizers.

FFT convention (used project-wide): numpy's, i.e. the forward transform is
unscaled and the inverse carries 1/N, so ``sum|x|^2 == sum|X|^2 / N``.
Frames are periodic; every convolution in the package is circular.

Randomness: all generators are ``numpy.random.Generator(Philox(...))``
seeded through ``SeedSequence`` entropy tuples, see :func:`make_rng`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QAM64_SCALE = 1.0 / np.sqrt(42.0)
_LEVELS = np.array([-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0])
# Gray code for the level index (index 0 <-> -7): bits b2 b1 b0 of gray(i).
_GRAY = np.array([i ^ (i >> 1) for i in range(8)])
_GRAY_INV = np.argsort(_GRAY)


@dataclass(frozen=True)
class ComplexSignal:
    """Uniformly sampled complex baseband waveform.

    ``samples`` may carry leading batch axes; time runs along the last axis.
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples)
        if not np.iscomplexobj(s):
            s = s.astype(np.complex128)
        if s.ndim == 0 or s.shape[-1] == 0:
            raise ValueError("signal must contain at least one sample")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.shape[-1]

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples) -> "ComplexSignal":
        return ComplexSignal(samples, self.sample_rate)


@dataclass(frozen=True)
class SymbolFrame:
    symbols: np.ndarray
    bits: np.ndarray
    seed: int | None = None

    def __len__(self):
        return self.symbols.shape[-1]


@dataclass(frozen=True)
class PulseShape:
    """Root-raised-cosine pulse.

    ``span_symbols=None`` selects the periodic RRC that spans the whole frame
    (exactly Nyquist on a circular frame). An integer selects a truncated
    closed-form RRC of ``2*span_symbols*samples_per_symbol + 1`` taps.
    """

    roll_off: float = 0.1
    span_symbols: int | None = None
    samples_per_symbol: int = 8

    def __post_init__(self):
        if not 0.0 <= self.roll_off <= 1.0:
            raise ValueError("roll_off must lie in [0, 1]")
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if self.span_symbols is not None and self.span_symbols < 1:
            raise ValueError("span_symbols must be >= 1")


# ---------------------------------------------------------------- transforms


def fft(signal: ComplexSignal) -> ComplexSignal:
    """Forward DFT along the time axis (no scaling, no padding).

    The returned object reuses ``ComplexSignal`` to hold the spectrum; its
    ``sample_rate`` is kept so :func:`ifft` can restore the time signal.
    """
    if len(signal) == 0:
        raise ValueError("zero-length input")
    return signal.with_samples(np.fft.fft(signal.samples, axis=-1))


def ifft(spectrum: ComplexSignal) -> ComplexSignal:
    return spectrum.with_samples(np.fft.ifft(spectrum.samples, axis=-1))


def angular_frequencies(n: int, sample_rate: float) -> np.ndarray:
    """DFT angular frequency grid in rad/s.

    Bin ``i`` (0-based) sits at ``fs*i/n`` for ``i < n/2`` and at
    ``fs*(i-n)/n`` otherwise, which is numpy's ``fftfreq`` ordering.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    i = np.arange(n)
    f = np.where(i < n / 2, i, i - n) * (sample_rate / n)
    return 2.0 * np.pi * f


# ------------------------------------------------------------------ random


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, *stream)``.

    Philox-4x64 keyed through ``SeedSequence`` is platform independent, so
    equal entropy tuples give bit-identical draws everywhere. Test vector:
    ``make_rng(0).integers(0, 2**32, 3) == [582496169, 60417458, 4027530181]``
    (checked in the test-suite).
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence([int(seed), *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def random_bits(n_bits: int, seed: int, *stream: int) -> np.ndarray:
    return make_rng(seed, *stream).integers(0, 2, size=n_bits, dtype=np.uint8)


# --------------------------------------------------------------------- QAM


def qam64_map(bits, seed: int | None = None) -> SymbolFrame:
    """Gray-map bits onto unit-power 64-QAM.

    Each group of 6 bits is ``(i2 i1 i0 q2 q1 q0)``; the 3-bit groups are
    Gray codes of the level index on the ascending grid ``-7 .. 7``.
    """
    b = np.asarray(bits, dtype=np.uint8)
    if b.shape[-1] % 6:
        raise ValueError(f"bit count {b.shape[-1]} is not divisible by 6")
    groups = b.reshape(*b.shape[:-1], -1, 6).astype(np.int64)
    w = np.array([4, 2, 1])
    gi = groups[..., :3] @ w
    gq = groups[..., 3:] @ w
    sym = (_LEVELS[_GRAY_INV[gi]] + 1j * _LEVELS[_GRAY_INV[gq]]) * QAM64_SCALE
    return SymbolFrame(sym, b, seed)


def _axis_bits(x):
    idx = np.clip(np.rint((x / QAM64_SCALE + 7.0) / 2.0), 0, 7).astype(np.int64)
    g = _GRAY[idx]
    return np.stack([(g >> 2) & 1, (g >> 1) & 1, g & 1], axis=-1)


def qam64_demap(symbols) -> np.ndarray:
    """Nearest-neighbour hard decision back to bits."""
    s = np.asarray(symbols)
    bits = np.concatenate([_axis_bits(s.real), _axis_bits(s.imag)], axis=-1)
    return bits.reshape(*s.shape[:-1], -1).astype(np.uint8)


def qam64_decide(symbols) -> np.ndarray:
    s = np.asarray(symbols)
    return qam64_map(qam64_demap(s)).symbols


def qam64_constellation() -> np.ndarray:
    bits = ((np.arange(64)[:, None] >> np.arange(5, -1, -1)) & 1).astype(np.uint8)
    return qam64_map(bits.ravel()).symbols


def random_frame(n_symbols: int, seed: int, *stream: int) -> SymbolFrame:
    """Uniform 64-QAM frame regenerable from ``(seed, *stream, n_symbols)``."""
    return qam64_map(random_bits(6 * n_symbols, seed, *stream), seed)


# ------------------------------------------------------------ pulse shaping


def raised_cosine_response(f, symbol_rate: float, roll_off: float) -> np.ndarray:
    """Raised-cosine spectrum with unit passband gain."""
    af = np.abs(np.asarray(f, dtype=float)) / symbol_rate
    f1 = (1.0 - roll_off) / 2.0
    f2 = (1.0 + roll_off) / 2.0
    out = np.zeros_like(af)
    out[af <= f1] = 1.0
    band = (af > f1) & (af <= f2)
    if roll_off > 0:
        out[band] = 0.5 * (1.0 + np.cos(np.pi / roll_off * (af[band] - f1)))
    return out


def rrc_taps(pulse: PulseShape) -> np.ndarray:
    """Truncated closed-form RRC taps, exactly symmetric, unit energy."""
    if pulse.span_symbols is None:
        raise ValueError("periodic pulses have no finite tap vector; set span_symbols")
    sps, b = pulse.samples_per_symbol, pulse.roll_off
    t = np.arange(-pulse.span_symbols * sps, pulse.span_symbols * sps + 1) / sps
    h = np.empty_like(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))
        den = np.pi * t * (1 - (4 * b * t) ** 2)
        h[:] = num / den
    h[t == 0] = 1.0 - b + 4 * b / np.pi
    if b > 0:
        sing = np.isclose(np.abs(t), 1.0 / (4 * b))
        h[sing] = (b / np.sqrt(2)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                      + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    h = 0.5 * (h + h[::-1])
    return h / np.sqrt(np.sum(h**2))


def rrc_spectrum(n: int, sample_rate: float, symbol_rate: float, roll_off: float) -> np.ndarray:
    """sqrt of the raised cosine on the DFT grid of an ``n``-sample frame."""
    f = angular_frequencies(n, sample_rate) / (2 * np.pi)
    return np.sqrt(raised_cosine_response(f, symbol_rate, roll_off))


def _wrap_taps(taps: np.ndarray, n: int) -> np.ndarray:
    """Place centered odd-length taps on a length-n circular kernel."""
    half = len(taps) // 2
    kernel = np.zeros(n, dtype=np.result_type(taps, np.complex128))
    idx = np.arange(-half, half + 1) % n
    np.add.at(kernel, idx, taps)
    return kernel


def rrc_shape(frame: SymbolFrame, pulse: PulseShape, symbol_rate: float) -> ComplexSignal:
    """Circularly pulse-shape a symbol frame into a unit-power waveform.

    Symbol ``n`` sits on sample ``n * samples_per_symbol``.
    """
    sym = np.asarray(frame.symbols)
    if sym.shape[-1] == 0:
        raise ValueError("empty frame")
    sps = pulse.samples_per_symbol
    n = sym.shape[-1] * sps
    up = np.zeros(sym.shape[:-1] + (n,), dtype=np.complex128)
    up[..., ::sps] = sym
    fs = symbol_rate * sps
    if pulse.span_symbols is None:
        h = sps * rrc_spectrum(n, fs, symbol_rate, pulse.roll_off)
    else:
        taps = rrc_taps(pulse)
        if len(taps) > n:
            raise ValueError("pulse longer than frame")
        h = np.sqrt(sps) * np.fft.fft(_wrap_taps(taps, n))
    return ComplexSignal(np.fft.ifft(np.fft.fft(up, axis=-1) * h, axis=-1), fs)


def matched_filter(signal: ComplexSignal, pulse: PulseShape, symbol_rate: float) -> ComplexSignal:
    """Receiver RRC (unit passband gain); composite with :func:`rrc_shape` is Nyquist."""
    n = len(signal)
    if pulse.span_symbols is None:
        h = rrc_spectrum(n, signal.sample_rate, symbol_rate, pulse.roll_off)
    else:
        sps = round(signal.sample_rate / symbol_rate)
        taps = rrc_taps(PulseShape(pulse.roll_off, pulse.span_symbols, sps))
        h = np.fft.fft(_wrap_taps(taps, n)) / np.sqrt(sps)
    return signal.with_samples(np.fft.ifft(np.fft.fft(signal.samples, axis=-1) * h, axis=-1))


# -------------------------------------------------------------- resampling


def resample(signal: ComplexSignal, new_rate: float, bandwidth_hz: float | None = None) -> ComplexSignal:
    """Ideal (FFT-domain) resampling of a periodic frame.

    ``bandwidth_hz`` is the two-sided occupied bandwidth; if given, a target
    rate that cannot hold it raises. Otherwise content beyond the new Nyquist
    frequency is discarded (ideal low-pass). The Nyquist bin of even-length
    spectra is split/merged symmetrically so up-then-down is lossless.
    """
    fs = signal.sample_rate
    if new_rate == fs:
        return signal
    n = len(signal)
    m_float = n * new_rate / fs
    m = int(round(m_float))
    if abs(m - m_float) > 1e-9 * m_float or m < 1:
        raise ValueError(f"rate ratio {new_rate / fs} does not map {n} samples onto an integer grid")
    if bandwidth_hz is not None and bandwidth_hz > new_rate * (1 + 1e-12):
        raise ValueError(
            f"aliasing: occupied bandwidth {bandwidth_hz:.4g} Hz exceeds target rate {new_rate:.4g} Hz")
    x = np.fft.fft(signal.samples, axis=-1)
    y = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    k = min(n, m)
    half = k // 2
    if k % 2:
        y[..., : half + 1] = x[..., : half + 1]
        y[..., m - half:] = x[..., n - half:]
    else:
        y[..., :half] = x[..., :half]
        y[..., m - half + 1:] = x[..., n - half + 1:]
        if m > n:
            # split the old Nyquist bin between +fs/2 and -fs/2
            y[..., half] = 0.5 * x[..., half]
            y[..., m - half] += 0.5 * x[..., half]
        else:
            # merge +/- new Nyquist components
            y[..., half] = x[..., half] + x[..., n - half]
    y *= m / n
    return ComplexSignal(np.fft.ifft(y, axis=-1), new_rate)
