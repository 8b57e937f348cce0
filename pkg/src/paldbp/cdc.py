"""Chromatic-dispersion compensation: exact operator, LS FIR design, TDE and FDE."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkParams
from .signal import ComplexSignal, angular_frequencies

# Initial FIR lengths per spans-per-step (LS design) and after pruning.
FIR_LENGTHS = {1: 77, 2: 149, 4: 293, 10: 725}
PRUNED_FIR_LENGTHS = {1: 37, 2: 51, 4: 95, 10: 251}
FFT_SIZES = {1: 256, 2: 512, 4: 1024, 10: 2048}


@dataclass
class CdcFilter:
    """Symmetric FIR stored as half taps ``h_0 .. h_V``."""

    half_taps: np.ndarray
    design_mu_km: float = 0.0
    rate_hz: float = 64e9
    residual: float = 0.0
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.half_taps = np.asarray(self.half_taps, dtype=np.complex128).ravel()
        if self.half_taps.size == 0:
            raise ValueError("filter needs at least one tap")

    @property
    def V(self) -> int:
        return self.half_taps.size - 1

    @property
    def length(self) -> int:
        return 2 * self.V + 1

    @property
    def taps(self) -> np.ndarray:
        """Full tap vector ``h_-V .. h_V``."""
        h = self.half_taps
        return np.concatenate([h[:0:-1], h])

    @classmethod
    def identity(cls, rate_hz: float = 64e9) -> "CdcFilter":
        return cls(np.array([1.0 + 0j]), 0.0, rate_hz)

    def kernel(self, n: int) -> np.ndarray:
        """Length-n circular kernel ``k[v mod n] = h_v``."""
        if self.length > n:
            raise ValueError(f"filter length {self.length} exceeds frame length {n}")
        return half_taps_kernel(self.half_taps, n)

    def truncated(self, length: int) -> "CdcFilter":
        if length % 2 == 0 or length < 1:
            raise ValueError("length must be odd and >= 1")
        if length > self.length:
            raise ValueError("cannot grow a filter by truncation")
        return CdcFilter(self.half_taps[: (length + 1) // 2].copy(), self.design_mu_km, self.rate_hz)

    def to_json(self) -> str:
        return json.dumps({
            "design_mu_km": self.design_mu_km,
            "rate_hz": self.rate_hz,
            "half_taps": [[float(t.real), float(t.imag)] for t in self.half_taps],
        })

    @classmethod
    def from_json(cls, text: str) -> "CdcFilter":
        d = json.loads(text)
        h = np.array([complex(re, im) for re, im in d["half_taps"]])
        return cls(h, d["design_mu_km"], d["rate_hz"])


def half_taps_kernel(half_taps: np.ndarray, n: int) -> np.ndarray:
    k = np.zeros(np.shape(half_taps)[:-1] + (n,), dtype=np.complex128)
    V = np.shape(half_taps)[-1] - 1
    k[..., : V + 1] = half_taps
    if V:
        k[..., n - V:] += half_taps[..., :0:-1]
    return k


@dataclass(frozen=True)
class FdeConfig:
    fft_size: int
    filter_length: int

    def __post_init__(self):
        n = self.fft_size
        if n < 2 or n & (n - 1):
            raise ValueError("fft_size must be a power of two")
        if n <= self.filter_length:
            raise ValueError("fft_size must exceed the filter length")

    @property
    def block_advance(self) -> int:
        return self.fft_size - self.filter_length + 1


def cdc_response(n: int, sample_rate: float, mu_km: float, beta2: float,
                 alpha: float = 0.0) -> np.ndarray:
    w = angular_frequencies(n, sample_rate)
    return np.exp(0.5 * alpha * mu_km - 0.5j * beta2 * w**2 * mu_km)


def cdc_exact(signal: ComplexSignal, mu_km: float, link: LinkParams,
              include_loss: bool = True) -> ComplexSignal:
    """Frequency-domain linear back-propagation step over ``mu_km``."""
    h = cdc_response(len(signal), signal.sample_rate, mu_km, link.beta2,
                     link.alpha if include_loss else 0.0)
    return signal.with_samples(np.fft.ifft(np.fft.fft(signal.samples, axis=-1) * h, axis=-1))


def design_fir_ls(mu_km: float, link: LinkParams, target_len: int, rate: float,
                  symbol_rate: float = 32e9, roll_off: float = 0.1,
                  grid_points: int | None = None, rcond: float = 1e-12) -> CdcFilter:
    """Least-squares symmetric FIR for ``exp(-1j*beta2/2*w^2*mu)``.

    The squared response error is averaged over a uniform frequency grid
    restricted to the occupied band ``|f| <= (1+roll_off)/2 * symbol_rate``.
    The unit-magnitude target leaves the span loss to the amplifiers.
    """
    if target_len < 1 or target_len % 2 == 0:
        raise ValueError("target_len must be odd")
    V = target_len // 2
    f_edge = min(0.5 * (1 + roll_off) * symbol_rate, rate / 2)
    n_grid = grid_points or max(2048, 16 * target_len)
    f = np.linspace(-f_edge, f_edge, n_grid)
    w = 2 * np.pi * f
    target = np.exp(-0.5j * link.beta2 * w**2 * mu_km)
    v = np.arange(V + 1)
    # symmetric taps: H(w) = h0 + sum_v 2 h_v cos(w v / fs)
    A = np.cos(np.outer(w / rate, v))
    A[:, 1:] *= 2.0
    notes = []
    cond = np.linalg.cond(A)
    if cond > 1.0 / rcond:
        # in-band-only fits are rank deficient at long lengths; a tiny ridge
        # picks the minimum-energy solution and keeps out-of-band gain ~1
        notes.append(f"ill-conditioned design matrix (cond={cond:.3g}); ridge-regularized solve")
        lam = rcond * np.linalg.norm(A, 2) ** 2
        h = np.linalg.solve(A.T @ A + lam * np.eye(V + 1), A.T @ target)
    else:
        h = np.linalg.lstsq(A, target, rcond=None)[0]
    residual = float(np.mean(np.abs(A @ h - target) ** 2))
    return CdcFilter(h, mu_km, rate, residual, notes)


def apply_fir(signal: ComplexSignal, filt: CdcFilter) -> ComplexSignal:
    """Circular convolution ``y[n] = sum_v h_v x[n - v]`` (circulant multiply)."""
    n = len(signal)
    if filt.length > n:
        raise ValueError(f"filter length {filt.length} exceeds frame length {n}")
    H = np.fft.fft(filt.kernel(n))
    return signal.with_samples(np.fft.ifft(np.fft.fft(signal.samples, axis=-1) * H, axis=-1))


def apply_fir_fde(signal: ComplexSignal, filt: CdcFilter, cfg: FdeConfig) -> ComplexSignal:
    """Overlap-and-add block convolution equal to :func:`apply_fir` on a circular frame."""
    if cfg.filter_length != filt.length:
        raise ValueError("FdeConfig.filter_length does not match the filter")
    x = signal.samples
    n = x.shape[-1]
    nfft, B, V = cfg.fft_size, cfg.block_advance, filt.V
    if filt.length > n:
        raise ValueError("filter longer than frame")
    H = np.fft.fft(filt.taps, nfft)
    n_blocks = -(-n // B)
    padded = np.zeros(x.shape[:-1] + (n_blocks * B,), dtype=np.complex128)
    padded[..., :n] = x
    blocks = padded.reshape(x.shape[:-1] + (n_blocks, B))
    conv = np.fft.ifft(np.fft.fft(blocks, nfft, axis=-1) * H, axis=-1)
    out = np.zeros((int(np.prod(x.shape[:-1])), n), dtype=np.complex128)
    conv = conv.reshape(out.shape[0], n_blocks, nfft)
    # output j of block b lands on sample b*B + j - V (circular)
    for b in range(n_blocks):
        idx = (b * B + np.arange(nfft) - V) % n
        np.add.at(out, (slice(None), idx), conv[:, b, :])
    return signal.with_samples(out.reshape(x.shape))
