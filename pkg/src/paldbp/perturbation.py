"""First-order intra-channel perturbation coefficients and the SPM/IXPM tap vector.

The coefficient of the triplet ``x_k x*_{m+k} x_m`` is

    C[m, k] = gamma/T * int_0^Z f(z) int g*(z,t) g(z,t-mT) g(z,t-kT) g*(z,t-(m+k)T) dt dz

with ``f(z) = exp(-alpha * (z mod span))`` (lumped amplifiers restore the
power at every span start) and ``g`` a Gaussian pulse dispersed over ``z``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .channel import LinkParams
from .signal import PulseShape, rrc_taps


class QuadratureAccuracyError(ArithmeticError):
    def __init__(self, estimate: float, tolerance: float):
        super().__init__(f"quadrature error estimate {estimate:.3g} exceeds tolerance {tolerance:.3g}")
        self.estimate = estimate
        self.tolerance = tolerance


@dataclass(frozen=True)
class GaussianPulse:
    """``g(0,t) = A exp(-t^2 / (2 t0^2))`` with ``(1/T) int |g|^2 dt = 1``.

    ``symbol_period`` is the lattice spacing ``T`` of the triplet shifts. The
    equalizer applies its taps to 2-samples-per-symbol data, so it uses
    ``T/2`` here; the ``1/T`` normalization then scales the coefficients by
    the sample density automatically.
    """

    t0: float
    symbol_period: float

    @property
    def amplitude(self) -> float:
        return np.sqrt(self.symbol_period / (self.t0 * np.sqrt(np.pi)))

    def q(self, beta2: float, z):
        """Complex width parameter ``t0^2 - 1j*beta2*z`` of the dispersed pulse."""
        return self.t0**2 - 1j * beta2 * np.asarray(z)

    def field(self, t, beta2: float, z: float):
        q = self.q(beta2, z)
        return self.amplitude * self.t0 / np.sqrt(q) * np.exp(-np.asarray(t) ** 2 / (2 * q))

    def width(self, beta2: float, z) -> np.ndarray:
        """RMS-like width ``|q|/t0`` of the dispersed intensity profile."""
        return np.abs(self.q(beta2, z)) / self.t0


def rrc_half_power_width(roll_off: float, symbol_period: float) -> float:
    """Full width at half maximum of ``|g_rrc(t)|^2``."""
    taps = rrc_taps(PulseShape(roll_off, 16, 64))
    t = (np.arange(taps.size) - taps.size // 2) / 64
    h = lambda x: np.interp(x, t, taps) ** 2 - 0.5 * taps[taps.size // 2] ** 2
    return 2 * optimize.brentq(h, 0.0, 1.0) * symbol_period


def matched_gaussian(roll_off: float = 0.1, symbol_rate: float = 32e9,
                     samples_per_symbol: int = 2) -> GaussianPulse:
    """Gaussian whose field 1/e full width ``2*sqrt(2)*t0`` equals the RRC half-power width.

    The shift lattice is the equalizer sample grid ``T / samples_per_symbol``.
    """
    T = 1.0 / symbol_rate
    return GaussianPulse(rrc_half_power_width(roll_off, T) / (2 * np.sqrt(2)), T / samples_per_symbol)


@dataclass
class PerturbationField:
    """Coefficients ``coeffs[m + M, k + M] = C[m, k]`` in 1/W."""

    coeffs: np.ndarray
    M: int
    span_km: float
    n_spans: int
    pulse: GaussianPulse
    error_estimate: float = 0.0

    def C(self, m: int, k: int) -> complex:
        return complex(self.coeffs[m + self.M, k + self.M])

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def row0(self) -> np.ndarray:
        """``C[0, k]`` for ``k = 0 .. M``."""
        return self.coeffs[self.M, self.M:]

    def normalized_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20 * np.log10(np.abs(self.coeffs) / abs(self.C(0, 0)))


@dataclass
class PerturbationVector:
    """Real symmetric SPM/IXPM taps ``[2C_{0,K} .. C_{0,0} .. 2C_{0,K}]``.

    ``power_folded`` records whether the launch-power factor has been
    multiplied in (the equalizer works on unit-power samples).
    """

    half_taps: np.ndarray
    chi_db: float = float("nan")
    span_km: float = 0.0
    power_folded: bool = False

    def __post_init__(self):
        self.half_taps = np.asarray(self.half_taps, dtype=np.float64).ravel()
        if self.half_taps.size == 0:
            raise ValueError("empty perturbation vector")

    @property
    def K(self) -> int:
        return self.half_taps.size - 1

    @property
    def length(self) -> int:
        return 2 * self.K + 1

    @property
    def taps(self) -> np.ndarray:
        h = self.half_taps
        return np.concatenate([h[:0:-1], h])

    def folded(self, power_w: float) -> "PerturbationVector":
        if self.power_folded:
            raise ValueError("launch power already folded into the taps")
        return PerturbationVector(self.half_taps * power_w, self.chi_db, self.span_km, True)

    def truncated(self, length: int) -> "PerturbationVector":
        if length % 2 == 0 or length < 1:
            raise ValueError("length must be odd and >= 1")
        if length > self.length:
            raise ValueError("cannot grow taps by truncation")
        return PerturbationVector(self.half_taps[: (length + 1) // 2].copy(), self.chi_db,
                                  self.span_km, self.power_folded)

    def to_json(self) -> str:
        return json.dumps({"span_km": self.span_km, "chi_db": self.chi_db,
                           "taps": [float(t) for t in self.taps],
                           "power_folded": self.power_folded})

    @classmethod
    def from_json(cls, text: str) -> "PerturbationVector":
        d = json.loads(text)
        taps = np.asarray(d["taps"], dtype=float)
        if taps.size % 2 == 0 or not np.array_equal(taps, taps[::-1]):
            raise ValueError("taps must be odd-length and symmetric")
        return cls(taps[taps.size // 2:], d["chi_db"], d["span_km"], d.get("power_folded", False))


# --------------------------------------------------------------- integrands


def _power_profile_nodes(link: LinkParams, n_spans: int):
    return [(s * link.span_km, (s + 1) * link.span_km) for s in range(n_spans)]


def _closed_form_inner(pulse: GaussianPulse, beta2: float, z: float, m, k):
    """Exact time integral of the four dispersed Gaussians (units of s)."""
    T, t0 = pulse.symbol_period, pulse.t0
    q = pulse.q(beta2, z)
    p = 1.0 / (2 * q)
    pc = np.conj(p)
    pref = pulse.amplitude**4 * t0**4 / abs(q) ** 2 * np.sqrt(np.pi * abs(q) ** 2 / (2 * t0**2))
    expo = T**2 * (p * (m * k - 0.5 * (m**2 + k**2)) - pc * 0.5 * (m + k) ** 2)
    return pref * np.exp(expo)


class _QuadratureInner:
    """Trapezoidal time integral on a uniform grid of ``samples_per_symbol`` points per T.

    Shifts by multiples of T are index shifts, so for fixed ``m`` the whole
    ``k`` row is an autocorrelation of ``g*(t) g(t - mT)`` done by FFT.
    """

    def __init__(self, pulse: GaussianPulse, beta2: float, M: int, z_max: float,
                 samples_per_symbol: int = 16, rows=None):
        self.pulse, self.beta2, self.M = pulse, beta2, M
        self.sps = samples_per_symbol
        self.h = pulse.symbol_period / samples_per_symbol
        w_max = float(pulse.width(beta2, z_max))
        half = (M + 4) * pulse.symbol_period + 8 * w_max
        n_half = int(np.ceil(half / self.h))
        self.t = np.arange(-n_half, n_half + 1) * self.h
        self.rows = np.arange(-M, M + 1) if rows is None else np.asarray(rows)
        n = self.t.size + 2 * M * samples_per_symbol
        self.nfft = 1 << int(np.ceil(np.log2(2 * n)))

    def __call__(self, z: float) -> np.ndarray:
        M, sps = self.M, self.sps
        g = self.pulse.field(self.t, self.beta2, z)
        pad = M * sps
        gp = np.concatenate([np.zeros(2 * pad, complex), g, np.zeros(2 * pad, complex)])
        n = self.t.size
        out = np.empty((self.rows.size, 2 * M + 1), dtype=np.complex128)
        for i, m in enumerate(self.rows):
            # p_m(t) = g*(t) g(t - mT), support extended by |m| symbols
            start = 2 * pad - m * sps
            shifted = gp[start: start + n]
            pm = np.zeros(n + 2 * pad, complex)
            pm[pad: pad + n] = np.conj(g) * shifted
            # C[m, k] = h * sum_t p_m(t) conj(p_m(t - kT))
            P = np.fft.fft(pm, self.nfft)
            corr = np.fft.ifft(P * np.conj(P))
            lags = np.arange(-M, M + 1) * sps
            out[i] = self.h * corr[lags % self.nfft]
        return out


def compute_field(link: LinkParams, n_spans: int, pulse: GaussianPulse, M: int,
                  method: str = "quadrature", *, samples_per_symbol: int = 16,
                  epsrel: float = 1e-10, tolerance: float = 1e-7, rows=None) -> PerturbationField:
    """Evaluate ``C[m, k]`` for ``|m|, |k| <= M`` over ``n_spans`` amplified spans.

    ``method="quadrature"`` integrates time on a uniform grid (window grown
    with the dispersed pulse width) and ``z`` adaptively per span;
    ``"closed_form"`` uses the exact Gaussian time integral. ``rows`` limits
    the computation to a subset of ``m`` (other rows are left at zero).
    Raises :class:`QuadratureAccuracyError` if the relative z-quadrature
    error estimate exceeds ``tolerance``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if pulse.t0 <= 0:
        raise ValueError("pulse width must be positive")
    beta2, alpha = link.beta2, link.alpha
    z_max = n_spans * link.span_km
    rows_arr = np.arange(-M, M + 1) if rows is None else np.asarray(rows)
    if method == "quadrature":
        inner = _QuadratureInner(pulse, beta2, M, z_max, samples_per_symbol, rows_arr)
    elif method == "closed_form":
        mm, kk = np.meshgrid(rows_arr, np.arange(-M, M + 1), indexing="ij")
        inner = lambda z: _closed_form_inner(pulse, beta2, z, mm, kk)
    else:
        raise ValueError(f"unknown method {method!r}")

    def integrand(z, z0):
        v = np.exp(-alpha * (z - z0)) * inner(z)
        return np.stack([v.real, v.imag])

    total = np.zeros((2, rows_arr.size, 2 * M + 1))
    err = 0.0
    for z0, z1 in _power_profile_nodes(link, n_spans):
        val, e = integrate.quad_vec(integrand, z0, z1, args=(z0,), epsrel=epsrel, epsabs=0.0)
        total += val
        err += e
    scale = link.gamma / pulse.symbol_period
    rows_c = (total[0] + 1j * total[1]) * scale
    coeffs = np.zeros((2 * M + 1, 2 * M + 1), dtype=np.complex128)
    coeffs[rows_arr + M] = rows_c
    peak = np.max(np.abs(total))
    rel_err = err / peak if peak > 0 else 0.0
    if rel_err > tolerance:
        raise QuadratureAccuracyError(rel_err, tolerance)
    return PerturbationField(coeffs, M, link.span_km, n_spans, pulse, rel_err * abs(scale) * peak)


def truncation_window(row0: np.ndarray, chi_db: float) -> int:
    """Largest ``K`` with ``20 log10 |C_{0,k}/C_{0,0}| >= chi`` for all ``|k| <= K``."""
    ref = abs(row0[0])
    if ref == 0 or chi_db > 0:
        raise ValueError(f"threshold {chi_db} dB leaves an empty window")
    with np.errstate(divide="ignore"):
        level = 20 * np.log10(np.abs(row0) / ref)
    below = np.nonzero(level < chi_db)[0]
    if below.size == 0:
        raise ValueError("window reaches the edge of the computed grid; increase M")
    return int(below[0]) - 1


def truncate(field: PerturbationField, chi_db: float) -> PerturbationVector:
    """Keep the contiguous centre window of the m = 0 row above ``chi_db``."""
    row = field.row0().real
    K = truncation_window(field.row0(), chi_db)
    half = row[: K + 1].copy()
    half[1:] *= 2.0
    return PerturbationVector(half, chi_db, field.span_km * field.n_spans)


def c0_vector(link: LinkParams, n_spans: int, chi_db: float = -20.0,
              pulse: GaussianPulse | None = None, symbol_rate: float = 32e9,
              roll_off: float = 0.1, method: str = "closed_form",
              length: int | None = None) -> PerturbationVector:
    """Tap vector from the m = 0 row, grid grown until the window fits.

    With ``length`` the window is fixed to that many taps instead of being
    set by ``chi_db`` (the threshold is still recorded).
    """
    pulse = pulse or matched_gaussian(roll_off, symbol_rate)
    M = max(8, 8 * n_spans, (length or 0) // 2 + 1)
    while True:
        f = compute_field(link, n_spans, pulse, M, method, rows=[0])
        if length is not None:
            if length % 2 == 0:
                raise ValueError("length must be odd")
            row = f.row0().real
            half = row[: length // 2 + 1].copy()
            half[1:] *= 2.0
            return PerturbationVector(half, chi_db, f.span_km * n_spans)
        try:
            return truncate(f, chi_db)
        except ValueError as exc:
            if "edge" not in str(exc):
                raise
            M *= 2


# ----------------------------------------------------------------- contours


def region_mask(field: PerturbationField, threshold_db: float) -> np.ndarray:
    return field.normalized_db() >= threshold_db


def export_contours(field: PerturbationField, thresholds_db) -> list[tuple[float, int, int]]:
    """Boundary cells ``(threshold_db, m, k)`` of each above-threshold region.

    A cell is on the boundary if it is inside the region and has a 4-neighbour
    outside it or lies on the grid edge.
    """
    th = list(thresholds_db)
    if th != sorted(th):
        raise ValueError("thresholds must be sorted")
    rows = []
    idx = field.indices
    for t in th:
        inside = region_mask(field, t)
        padded = np.pad(inside, 1, constant_values=False)
        interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
        boundary = inside & ~interior
        for i, j in zip(*np.nonzero(boundary)):
            rows.append((float(t), int(idx[i]), int(idx[j])))
    return rows


def contours_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold_db", "m", "k"])
    w.writerows(rows)
    return buf.getvalue()
