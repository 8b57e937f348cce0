"""Equalizer computation graphs: conventional DBP, LDBP and PA-LDBP.

All forward passes work on ``(..., N)`` arrays of unit-power receiver samples
(2 samples/symbol) and treat frames as periodic. A step is

    y   = h (*) x                      circular FIR, symmetric taps
    phi = a * |y|^2                    LDBP, a = eta*gamma*L_eff*P
    phi = c0 (*) |y|^2                 PA-LDBP, real taps with P folded in
    x'  = y * exp(-1j * phi)
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cdc import FIR_LENGTHS, CdcFilter, cdc_exact, cdc_response, design_fir_ls, half_taps_kernel
from .channel import LinkParams, effective_length
from .perturbation import PerturbationVector, c0_vector, matched_gaussian
from .signal import ComplexSignal

MODES = ("ldbp", "pa")


def _samples(x):
    return x.samples if isinstance(x, ComplexSignal) else np.asarray(x)


def _rewrap(x, out):
    return x.with_samples(out) if isinstance(x, ComplexSignal) else out


def circular_fir(x: np.ndarray, half_taps: np.ndarray) -> np.ndarray:
    H = np.fft.fft(half_taps_kernel(half_taps, x.shape[-1]))
    return np.fft.ifft(np.fft.fft(x, axis=-1) * H, axis=-1)


def symmetric_correlate(p: np.ndarray, half_taps: np.ndarray) -> np.ndarray:
    """``phi_n = sum_j c_j p_{n+j}`` for real symmetric taps, circular."""
    K = half_taps.size - 1
    if K <= 8:
        out = half_taps[0] * p
        for j in range(1, K + 1):
            out = out + half_taps[j] * (np.roll(p, -j, axis=-1) + np.roll(p, j, axis=-1))
        return out
    kern = half_taps_kernel(half_taps.astype(np.complex128), p.shape[-1]).real
    return np.fft.irfft(np.fft.rfft(p, axis=-1) * np.fft.rfft(kern), n=p.shape[-1], axis=-1)


# ----------------------------------------------------------------- model


@dataclass
class StepParams:
    filter: CdcFilter
    eta: float | None = None
    pvec: PerturbationVector | None = None
    gamma: float = 1.3
    mu_km: float = 80.0
    leff_km: float = 21.17
    power_w: float = 1e-3

    @property
    def nl_scale(self) -> float:
        """LDBP phase per unit |y|^2."""
        return self.eta * self.gamma * self.leff_km * self.power_w


@dataclass
class EqualizerModel:
    mode: str
    steps: list
    spans_per_step: int
    n_spans: int
    sample_rate: float = 64e9
    frame_len: int = 2048
    power_w: float = 1e-3
    output_gain: float = 1.0
    pruning_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.steps and len(self.steps) * self.spans_per_step != self.n_spans:
            raise ValueError("steps x spans_per_step must equal n_spans")
        for s in self.steps:
            if self.mode == "pa" and s.pvec is None:
                raise ValueError("PA mode needs a perturbation vector in every step")
            if self.mode == "ldbp" and s.eta is None:
                raise ValueError("LDBP mode needs eta in every step")

    @property
    def L(self) -> int:
        return len(self.steps)

    def copy(self) -> "EqualizerModel":
        return EqualizerModel.from_json(self.to_json())

    # trainable parameters: per step [Re h, Im h] then (PA) c0 half taps
    def parameter_vector(self) -> np.ndarray:
        parts = []
        for s in self.steps:
            parts += [s.filter.half_taps.real, s.filter.half_taps.imag]
            if self.mode == "pa":
                parts.append(s.pvec.half_taps)
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_parameter_vector(self, theta: np.ndarray) -> None:
        i = 0
        for s in self.steps:
            n = s.filter.half_taps.size
            s.filter.half_taps = theta[i:i + n] + 1j * theta[i + n:i + 2 * n]
            i += 2 * n
            if self.mode == "pa":
                k = s.pvec.half_taps.size
                s.pvec.half_taps = np.array(theta[i:i + k], dtype=float)
                i += k
        if i != theta.size:
            raise ValueError("parameter vector size mismatch")

    def parameter_classes(self) -> np.ndarray:
        """Label per parameter: 0 filter real, 1 filter imag, 2 c0."""
        labels = []
        for s in self.steps:
            n = s.filter.half_taps.size
            labels += [0] * n + [1] * n
            if self.mode == "pa":
                labels += [2] * s.pvec.half_taps.size
        return np.array(labels, dtype=int)

    def to_json(self) -> str:
        steps = []
        for s in self.steps:
            nl = {"eta": s.eta} if self.mode == "ldbp" else {
                "c0_half_taps": s.pvec.half_taps.tolist(), "chi_db": s.pvec.chi_db,
                "span_km": s.pvec.span_km, "power_folded": s.pvec.power_folded}
            steps.append({
                "half_taps": [[float(t.real), float(t.imag)] for t in s.filter.half_taps],
                "design_mu_km": s.filter.design_mu_km,
                "nl": nl, "mu_km": s.mu_km, "leff_km": s.leff_km,
                "gamma": s.gamma, "power_w": s.power_w,
            })
        return json.dumps({
            "mode": self.mode, "spans_per_step": self.spans_per_step, "n_spans": self.n_spans,
            "sample_rate": self.sample_rate, "frame_len": self.frame_len,
            "power_w": self.power_w, "output_gain": self.output_gain,
            "steps": steps, "pruning_masks": self.pruning_log,
        })

    @classmethod
    def from_json(cls, text: str) -> "EqualizerModel":
        d = json.loads(text)
        steps = []
        for s in d["steps"]:
            filt = CdcFilter(np.array([complex(a, b) for a, b in s["half_taps"]]),
                             s.get("design_mu_km", s["mu_km"]), d["sample_rate"])
            nl = s["nl"]
            pvec = None
            if "c0_half_taps" in nl:
                pvec = PerturbationVector(np.array(nl["c0_half_taps"]), nl.get("chi_db", float("nan")),
                                          nl.get("span_km", 0.0), nl.get("power_folded", True))
            steps.append(StepParams(filt, nl.get("eta"), pvec, s["gamma"], s["mu_km"],
                                    s["leff_km"], s["power_w"]))
        return cls(d["mode"], steps, d["spans_per_step"], d["n_spans"], d["sample_rate"],
                   d["frame_len"], d["power_w"], d["output_gain"], list(d.get("pruning_masks", [])))


# --------------------------------------------------------------- forwards


def dbp_baseline(x, link: LinkParams, steps_per_span: int, zeta: float = 1.0,
                 power_w: float | None = None, n_spans: int | None = None):
    """Conventional DBP: per span undo the EDFA gain, then ``steps_per_span`` x
    (exact CD/loss step, nonlinear phase ``-zeta*gamma*L_eff(mu)*|x|^2``).

    ``power_w=None`` treats ``x`` as a physical field in sqrt(W); otherwise
    ``x`` is unit-power and is scaled by ``sqrt(power_w)`` on the way in/out.
    """
    fs = x.sample_rate if isinstance(x, ComplexSignal) else None
    if fs is None:
        raise TypeError("dbp_baseline needs a ComplexSignal (sample rate required)")
    u = _samples(x).astype(np.complex128)
    if power_w is not None:
        u = u * np.sqrt(power_w)
    n_spans = link.n_spans if n_spans is None else n_spans
    mu = link.span_km / steps_per_span
    H = cdc_response(u.shape[-1], fs, mu, link.beta2, link.alpha)
    nl = zeta * link.gamma * effective_length(link.alpha, mu)
    g_field = 10.0 ** (link.edfa_gain_db / 20.0)
    for _ in range(n_spans):
        u = u / g_field
        for _ in range(steps_per_span):
            u = np.fft.ifft(np.fft.fft(u, axis=-1) * H, axis=-1)
            if nl:
                u = u * np.exp(-1j * nl * (u.real**2 + u.imag**2))
    if power_w is not None:
        u = u / np.sqrt(power_w)
    return x.with_samples(u)


def cd_compensate(x, link: LinkParams, n_spans: int | None = None, output_gain: float = 1.0):
    """Linear-only reference: ideal frequency-domain CD compensation of the whole link."""
    n_spans = link.n_spans if n_spans is None else n_spans
    out = cdc_exact(x, link.span_km * n_spans, link, include_loss=False)
    return out.with_samples(out.samples * output_gain)


def ldbp_activation(y: np.ndarray, scale: float) -> np.ndarray:
    return y * np.exp(-1j * scale * (y.real**2 + y.imag**2))


def pa_activation(x_cd, pvec: PerturbationVector):
    """``x_n exp(-1j phi_n)`` with ``phi_n = sum_j c0_j |x_{n+j}|^2`` (circular)."""
    y = _samples(x_cd)
    if pvec.length > y.shape[-1]:
        raise ValueError("perturbation vector longer than frame")
    phi = symmetric_correlate(y.real**2 + y.imag**2, pvec.half_taps)
    return _rewrap(x_cd, y * np.exp(-1j * phi))


def _check_frame(model: EqualizerModel, n: int):
    for s in model.steps:
        if s.filter.length > n:
            raise ValueError(f"filter length {s.filter.length} exceeds frame length {n}")


def ldbp_forward(x, model: EqualizerModel):
    if model.mode != "ldbp":
        raise ValueError("model is not in LDBP mode")
    u = _samples(x)
    _check_frame(model, u.shape[-1])
    for s in model.steps:
        u = ldbp_activation(circular_fir(u, s.filter.half_taps), s.nl_scale)
    return _rewrap(x, u * model.output_gain)


def pa_ldbp_forward(x, model: EqualizerModel):
    if model.mode != "pa":
        raise ValueError("model is not in PA mode")
    u = _samples(x)
    _check_frame(model, u.shape[-1])
    for s in model.steps:
        u = pa_activation(circular_fir(u, s.filter.half_taps), s.pvec)
    return _rewrap(x, u * model.output_gain)


def forward(x, model: EqualizerModel):
    return ldbp_forward(x, model) if model.mode == "ldbp" else pa_ldbp_forward(x, model)


# ------------------------------------------------------------ construction


def rx_symbol_gain(roll_off: float) -> float:
    """Symbol-instant amplitude of a unit-power RC-filtered 2-sps frame is
    ``1/sqrt(1 - roll_off/4)``; this gain restores unit-power symbols."""
    return float(np.sqrt(1.0 - roll_off / 4.0))


def build_model(mode: str, link: LinkParams, spans_per_step: int, power_w: float, *,
                symbol_rate: float = 32e9, rx_sps: int = 2, roll_off: float = 0.1,
                frame_len: int = 2048, fir_len: int | None = None, eta: float = 1.0,
                chi_db: float = -20.0, c0_len: int | None = None,
                c0: PerturbationVector | None = None) -> EqualizerModel:
    """Analytic initialization: LS FIR per step plus ``eta`` (LDBP) or Eq.-derived c0 (PA).

    Every step gets the same filter and nonlinear parameters.
    """
    if link.n_spans % spans_per_step:
        raise ValueError("spans_per_step must divide n_spans")
    L = link.n_spans // spans_per_step
    rate = symbol_rate * rx_sps
    mu = spans_per_step * link.span_km
    fir_len = fir_len or FIR_LENGTHS.get(spans_per_step) or (2 * int(36 * spans_per_step) + 1)
    filt = design_fir_ls(mu, link, fir_len, rate, symbol_rate, roll_off)
    leff = spans_per_step * link.span_effective_length()
    if mode == "pa" and c0 is None:
        pulse = matched_gaussian(roll_off, symbol_rate, rx_sps)
        c0 = c0_vector(link, spans_per_step, chi_db, pulse, length=c0_len)
    if c0 is not None and not c0.power_folded:
        c0 = c0.folded(power_w)
    steps = []
    for _ in range(L):
        f = CdcFilter(filt.half_taps.copy(), mu, rate, filt.residual)
        pv = None
        if mode == "pa":
            pv = PerturbationVector(c0.half_taps.copy(), c0.chi_db, c0.span_km, True)
        steps.append(StepParams(f, eta if mode == "ldbp" else None, pv, link.gamma, mu, leff, power_w))
    return EqualizerModel(mode, steps, spans_per_step, link.n_spans, rate, frame_len, power_w,
                          rx_symbol_gain(roll_off))
