"""Multi-span fiber link: split-step NLSE propagation, EDFAs, coherent front-end.

Units: distance km, time s, power W, ``beta2`` in s^2/km, ``gamma`` in 1/W/km.
The linear operator for a step of length ``mu`` is, with numpy's FFT sign,
``exp(-alpha/2*mu + 1j*beta2/2*w**2*mu)`` so that the receiver-side
compensation ``exp(+alpha/2*mu - 1j*beta2/2*w**2*mu)`` inverts it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .signal import (
    ComplexSignal,
    PulseShape,
    SymbolFrame,
    angular_frequencies,
    make_rng,
    matched_filter,
    resample,
    rrc_shape,
)

DB_PER_NEPER = 10.0 * math.log10(math.e)


class NumericOverflowError(FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite samples"):
        super().__init__(f"{message} at SSFM step {step}")
        self.step = step


def effective_length(alpha: float, mu) -> np.ndarray | float:
    """(1 - exp(-alpha*mu)) / alpha, falling back to mu as alpha -> 0."""
    if alpha == 0.0:
        return mu
    return -np.expm1(-alpha * np.asarray(mu)) / alpha


def photon_energy(wavelength_nm: float) -> float:
    return constants.h * constants.c / (wavelength_nm * 1e-9)


@dataclass(frozen=True)
class LinkParams:
    """Fiber and amplifier parameters; defaults are the 20 x 80 km SSMF link."""

    alpha_db_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma: float = 1.3
    span_km: float = 80.0
    n_spans: int = 20
    steps_per_span: int = 100
    edfa_gain_db: float | None = None
    edfa_nf_db: float = 5.0
    wavelength_nm: float = 1550.12

    def __post_init__(self):
        if self.alpha_db_km < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be non-negative")
        if self.span_km <= 0 or self.steps_per_span < 1:
            raise ValueError("span_km and steps_per_span must be positive")
        if self.n_spans < 0:
            raise ValueError("n_spans must be >= 0")
        if self.edfa_gain_db is None:
            object.__setattr__(self, "edfa_gain_db", self.alpha_db_km * self.span_km)
        if self.edfa_gain_db < 0:
            raise ValueError("EDFA gain must be >= 0 dB")

    @property
    def alpha(self) -> float:
        """Power attenuation in 1/km."""
        return self.alpha_db_km / DB_PER_NEPER

    @property
    def beta2(self) -> float:
        """Group velocity dispersion in s^2/km."""
        lam = self.wavelength_nm * 1e-9
        d = self.dispersion_ps_nm_km * 1e-12 / 1e-9  # s/m per km
        return -d * lam**2 / (2 * np.pi * constants.c)

    @property
    def beta2_ps2_km(self) -> float:
        return self.beta2 * 1e24

    @property
    def gain(self) -> float:
        return 10.0 ** (self.edfa_gain_db / 10.0)

    @property
    def length_km(self) -> float:
        return self.span_km * self.n_spans

    def span_effective_length(self) -> float:
        return float(effective_length(self.alpha, self.span_km))

    def replace(self, **kw) -> "LinkParams":
        from dataclasses import asdict

        d = asdict(self)
        if "alpha_db_km" in kw or "span_km" in kw:
            d["edfa_gain_db"] = None
        d.update(kw)
        return LinkParams(**d)


@dataclass(frozen=True)
class LaunchConfig:
    power_dbm: float

    @property
    def P(self) -> float:
        return 10.0 ** (self.power_dbm / 10.0) * 1e-3


def ssfm_steps(samples: np.ndarray, sample_rate: float, *, alpha: float, beta2: float,
               gamma: float, step_km: float, n_steps: int,
               nonlinear_first: bool = True, check_finite: bool = True) -> np.ndarray:
    """Raw first-order split-step loop on ``(..., N)`` arrays.

    One step is ``N`` (phase ``gamma*L_eff(step)*|u|^2`` from the power at the
    step start) followed by ``D`` (dispersion plus loss). ``nonlinear_first``
    False swaps the order.
    """
    if n_steps < 1:
        raise ValueError("steps must be >= 1")
    w = angular_frequencies(samples.shape[-1], sample_rate)
    lin = np.exp(-0.5 * alpha * step_km + 0.5j * beta2 * w**2 * step_km)
    nl = gamma * effective_length(alpha, step_km)
    u = np.array(samples, dtype=np.complex128, copy=True)

    def nonlinear(u):
        return u * np.exp(1j * nl * (u.real**2 + u.imag**2)) if nl != 0 else u

    for step in range(n_steps):
        if check_finite and not np.all(np.isfinite(u)):
            raise NumericOverflowError(step)
        if nonlinear_first:
            u = np.fft.ifft(np.fft.fft(nonlinear(u), axis=-1) * lin, axis=-1)
        else:
            u = nonlinear(np.fft.ifft(np.fft.fft(u, axis=-1) * lin, axis=-1))
    if check_finite and not np.all(np.isfinite(u)):
        raise NumericOverflowError(n_steps)
    return u


def ssfm_propagate(signal: ComplexSignal, link: LinkParams, distance_km: float,
                   steps: int) -> ComplexSignal:
    """Noiseless propagation over ``distance_km`` of fiber in ``steps`` equal steps."""
    out = ssfm_steps(signal.samples, signal.sample_rate, alpha=link.alpha, beta2=link.beta2,
                     gamma=link.gamma, step_km=distance_km / steps, n_steps=steps)
    return signal.with_samples(out)


def ase_variance(link: LinkParams, sample_rate: float) -> float:
    """Per-sample complex noise variance added by one EDFA (single polarization)."""
    g = link.gain
    if g <= 1.0:
        return 0.0
    n_sp = 10.0 ** (link.edfa_nf_db / 10.0) / 2.0 * g / (g - 1.0)
    return n_sp * photon_energy(link.wavelength_nm) * (g - 1.0) * sample_rate


def edfa_amplify(signal: ComplexSignal, link: LinkParams, seed: int, *stream: int,
                 noise: bool = True) -> ComplexSignal:
    """Lumped amplification with circular white Gaussian ASE."""
    out = signal.samples * 10.0 ** (link.edfa_gain_db / 20.0)
    if noise:
        var = ase_variance(link, signal.sample_rate)
        rng = make_rng(seed, *stream)
        shape = out.shape
        n = rng.standard_normal(shape + (2,))
        out = out + np.sqrt(var / 2.0) * (n[..., 0] + 1j * n[..., 1])
    return signal.with_samples(out)


def transmit_link(frame: SymbolFrame, link: LinkParams, launch: LaunchConfig,
                  pulse: PulseShape, seed: int, *, symbol_rate: float = 32e9,
                  noise: bool = True) -> ComplexSignal:
    """Shape, launch at power P and propagate through every span + EDFA."""
    sig = rrc_shape(frame, pulse, symbol_rate)
    sig = sig.with_samples(np.sqrt(launch.P) * sig.samples)
    for span in range(link.n_spans):
        sig = ssfm_propagate(sig, link, link.span_km, link.steps_per_span)
        sig = edfa_amplify(sig, link, seed, 0xA5E, span, noise=noise)
    return sig


def receiver_frontend(signal: ComplexSignal, pulse: PulseShape, symbol_rate: float = 32e9,
                      rx_sps: int = 2) -> tuple[ComplexSignal, np.ndarray]:
    """Matched RRC, ideal low-pass resampling to ``rx_sps``, unit-power normalization.

    Returns the normalized signal and the per-frame factor ``f`` such that
    ``f * output`` is the pre-normalization waveform.
    """
    mf = matched_filter(signal, pulse, symbol_rate)
    rs = resample(mf, rx_sps * symbol_rate)
    factor = np.sqrt(np.mean(np.abs(rs.samples) ** 2, axis=-1, keepdims=True))
    factor = np.where(factor > 0, factor, 1.0)
    return rs.with_samples(rs.samples / factor), factor[..., 0]
