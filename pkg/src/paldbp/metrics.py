"""BER / Q^2 / effective-SNR metrics and real-multiplication complexity counts.

Counting rules: one complex multiplication costs 4 real multiplications;
exponentials and phase rotations come from a lookup table and are free.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .model import EqualizerModel
from .signal import qam64_demap
from .training import derotation_angle, downsample, eff_snr_db, mse_loss


# ------------------------------------------------------------------- Q^2


def q2_from_ber(ber: float) -> float:
    """``20 log10(sqrt(10) * erfcinv(8 ber / 9))`` in dB; ``+inf`` for ber = 0.

    ``scipy.special.erfcinv`` is accurate to a few ulp over (0, 2).
    """
    if ber == 0:
        return math.inf
    arg = 8.0 * ber / 9.0
    if not 0.0 < arg < 2.0:
        raise ValueError(f"ber {ber} outside the domain of the Q^2 mapping")
    return 20.0 * math.log10(math.sqrt(10.0) * float(special.erfcinv(arg)))


def ber_from_q2(q2_db: float) -> float:
    return 9.0 / 8.0 * float(special.erfc(10.0 ** (q2_db / 20.0) / math.sqrt(10.0)))


@dataclass
class MetricsReport:
    ber: float
    q2_db: float
    eff_snr_db: float
    bits_counted: int
    bit_errors: int

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError("ber must lie in [0, 1]")

    @property
    def q2_lower_bound_db(self) -> float:
        """For error-free runs: the Q^2 one error would have given."""
        return q2_from_ber(1.0 / self.bits_counted)

    def q2_text(self) -> str:
        if self.bit_errors == 0:
            return f"> {self.q2_lower_bound_db:.2f}"
        return f"{self.q2_db:.2f}"

    def to_json(self) -> str:
        d = asdict(self)
        if math.isinf(d["q2_db"]):
            d["q2_db"] = None
            d["q2_lower_bound_db"] = self.q2_lower_bound_db
        return json.dumps(d)


def count_bit_errors(decided, reference, eff_snr: float = float("nan")) -> MetricsReport:
    a = np.asarray(decided, dtype=np.uint8).ravel()
    b = np.asarray(reference, dtype=np.uint8).ravel()
    if a.shape != b.shape:
        raise ValueError("bit sequences differ in length")
    if a.size == 0:
        raise ValueError("no bits to count")
    errors = int(np.count_nonzero(a != b))
    ber = errors / a.size
    q2 = q2_from_ber(ber) if ber < 1.0 else -math.inf
    return MetricsReport(ber, q2, eff_snr, int(a.size), errors)


def evaluate_symbols(z: np.ndarray, s: np.ndarray, bits: np.ndarray) -> MetricsReport:
    """De-rotate, apply the data-aided real gain per frame, decide and count."""
    theta = derotation_angle(z, s)
    z = z * np.exp(1j * theta)[..., None]
    corr = np.sum(np.real(np.conj(s) * z), axis=-1, keepdims=True)
    gain = np.where(corr > 0, np.sum(np.abs(s) ** 2, axis=-1, keepdims=True) / np.where(corr > 0, corr, 1.0), 1.0)
    z = z * gain
    return count_bit_errors(qam64_demap(z), bits, eff_snr_db(mse_loss(z, s)))


def evaluate_output(out: np.ndarray, s: np.ndarray, bits: np.ndarray, sps: int = 2) -> MetricsReport:
    return evaluate_symbols(downsample(out, sps), s, bits)


# ------------------------------------------------------------ complexity


def complexity_tde_linear(n_cd: int) -> int:
    if n_cd < 1:
        raise ValueError("n_cd must be >= 1")
    return 4 * math.ceil(n_cd / 2)


def complexity_nonlinear(mode: str, n_pb: int | None = None) -> int:
    """|x|^2 (2) + scaling (1) + rotation (4); PA adds the c0 correlation."""
    base = 2 + 1 + 4
    if mode == "ldbp":
        return base
    if mode == "pa":
        if n_pb is None or n_pb < 1:
            raise ValueError("PA mode needs n_pb >= 1")
        return base + 4 * math.ceil(n_pb / 2)
    raise ValueError(f"unknown mode {mode!r}")


def complexity_fde_linear(n_fft: int, n_cd: int) -> float:
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two")
    if n_fft <= n_cd:
        raise ValueError("n_fft must exceed n_cd")
    return 4.0 * (2 * n_fft * math.log2(n_fft) + n_fft) / (n_fft - n_cd)


def optimal_fft_size(n_cd: int, candidates=None) -> int:
    candidates = candidates or [2**k for k in range(7, 14)]
    valid = [n for n in candidates if n > n_cd]
    if not valid:
        raise ValueError("no candidate FFT size exceeds the filter length")
    return min(valid, key=lambda n: complexity_fde_linear(n, n_cd))


@dataclass
class ComplexityReport:
    mode: str
    linear_kind: str
    per_step: list = field(default_factory=list)  # dicts: linear, nonlinear_base, nonlinear_pa

    @property
    def linear(self) -> float:
        return sum(s["linear"] for s in self.per_step)

    @property
    def nonlinear_base(self) -> float:
        return sum(s["nonlinear_base"] for s in self.per_step)

    @property
    def nonlinear_pa(self) -> float:
        return sum(s["nonlinear_pa"] for s in self.per_step)

    @property
    def total(self) -> float:
        return sum(s["linear"] + s["nonlinear_base"] + s["nonlinear_pa"] for s in self.per_step)

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode, "linear_kind": self.linear_kind, "per_step": self.per_step,
                           "linear": self.linear, "nonlinear_base": self.nonlinear_base,
                           "nonlinear_pa": self.nonlinear_pa, "total": self.total})


def analytic_complexity(model: EqualizerModel, linear: str = "tde", fft_size: int | None = None) -> ComplexityReport:
    if linear not in ("tde", "fde"):
        raise ValueError("linear must be 'tde' or 'fde'")
    rep = ComplexityReport(model.mode, linear)
    for st in model.steps:
        n_cd = st.filter.length
        if linear == "tde":
            lin = complexity_tde_linear(n_cd)
        else:
            lin = complexity_fde_linear(fft_size or optimal_fft_size(n_cd), n_cd)
        pa = 0
        if model.mode == "pa":
            pa = complexity_nonlinear("pa", st.pvec.length) - complexity_nonlinear("ldbp")
        rep.per_step.append({"linear": lin, "nonlinear_base": complexity_nonlinear("ldbp"),
                             "nonlinear_pa": pa})
    return rep


class MultCounter:
    """Tally of real multiplications per category."""

    def __init__(self):
        self.counts = {"linear": 0, "nonlinear_base": 0, "nonlinear_pa": 0}

    def add(self, kind: str, n: int):
        self.counts[kind] += int(n)


def counted_forward(x: np.ndarray, model: EqualizerModel, counter: MultCounter) -> np.ndarray:
    """Direct time-domain forward pass that tallies every real multiplication.

    The symmetric FIR folds ``x[n-v] + x[n+v]`` before multiplying by
    ``h_v`` (4 real mults per tap pair, plus the centre tap). The PA
    correlation folds the power pair the same way and is charged 4 per half
    tap, the rule used for the linear step.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    for st in model.steps:
        h = st.filter.half_taps
        y = h[0] * x
        counter.add("linear", 4 * n)
        for v in range(1, h.size):
            y = y + h[v] * (np.roll(x, v) + np.roll(x, -v))
            counter.add("linear", 4 * n)
        p = y.real * y.real + y.imag * y.imag
        counter.add("nonlinear_base", 2 * n)
        if model.mode == "pa":
            # taps stored without the launch power, which is applied afterwards
            c = st.pvec.half_taps / model.power_w
            acc = c[0] * p
            counter.add("nonlinear_pa", 4 * n)
            for j in range(1, c.size):
                acc = acc + c[j] * (np.roll(p, -j) + np.roll(p, j))
                counter.add("nonlinear_pa", 4 * n)
            phi = model.power_w * acc
        else:
            phi = st.nl_scale * p
        counter.add("nonlinear_base", n)
        rot = np.exp(-1j * phi)  # lookup table
        x = y * rot
        counter.add("nonlinear_base", 4 * n)
    return x * model.output_gain


def instrumented_count(model: EqualizerModel, x: np.ndarray | None = None) -> ComplexityReport:
    """Run :func:`counted_forward` on one frame and report per-sample counts."""
    n = model.frame_len if x is None else x.shape[-1]
    if x is None:
        x = np.exp(2j * np.pi * np.arange(n) / n)
    rep = ComplexityReport(model.mode, "tde-counted")
    for st in model.steps:
        c = MultCounter()
        single = EqualizerModel(model.mode, [st], 1, 1, model.sample_rate, n, model.power_w, 1.0)
        counted_forward(x, single, c)
        rep.per_step.append({k: v // n if v % n == 0 else v / n for k, v in c.counts.items()})
    return rep


def gain_complexity_rows(entries) -> str:
    """CSV rows ``scheme, spans_per_step, mults_per_sample, q2_gain_db, lower_bound``.

    ``lower_bound`` is 1 when the scheme ran error-free, so its gain is a bound.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "spans_per_step", "mults_per_sample", "q2_gain_db", "lower_bound"])
    for e in entries:
        w.writerow([e["scheme"], e["spans_per_step"], repr(float(e["mults_per_sample"])),
                    repr(float(e["q2_gain_db"])), int(bool(e.get("lower_bound", False)))])
    return buf.getvalue()
