"""Loss, reverse-mode gradients, Adam, the training loop and progressive pruning.

Gradient convention: for a real loss ``L`` and a complex quantity ``z`` the
stored gradient is ``dL/dRe(z) + 1j * dL/dIm(z)`` (steepest ascent), so a
first-order change is ``dL = Re(conj(g) * dz)``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .cdc import half_taps_kernel
from .model import EqualizerModel, circular_fir, forward, symmetric_correlate
from .perturbation import PerturbationVector
from .signal import make_rng


class DivergenceError(FloatingPointError):
    pass


class GradientError(FloatingPointError):
    def __init__(self, step: int, index: int):
        super().__init__(f"non-finite gradient at step {step}, parameter {index}")
        self.step, self.index = step, index


# ------------------------------------------------------------------ loss


def downsample(x: np.ndarray, sps: int = 2) -> np.ndarray:
    return x[..., ::sps]


def derotation_angle(s_hat: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Per-frame LS phase ``arg sum s conj(s_hat)``; 0 where the sum vanishes."""
    if s_hat.shape != s.shape:
        raise ValueError("length mismatch")
    r = np.sum(s * np.conj(s_hat), axis=-1)
    return np.where(np.abs(r) > 0, np.angle(r), 0.0)


def phase_derotate(s_hat, s):
    """Rotate each frame of ``s_hat`` by its data-aided LS phase.

    Returns the rotated symbols and a boolean array marking frames where the
    correlation was zero and no rotation was applied.
    """
    s_hat, s = np.asarray(s_hat), np.asarray(s)
    theta = derotation_angle(s_hat, s)
    fallback = np.sum(s * np.conj(s_hat), axis=-1) == 0
    return s_hat * np.exp(1j * theta)[..., None], fallback


def mse_loss(s_hat, s) -> float:
    s_hat, s = np.asarray(s_hat), np.asarray(s)
    if s_hat.shape != s.shape:
        raise ValueError("length mismatch")
    return float(np.mean(np.abs(s - s_hat) ** 2))


def eff_snr_db(mse: float) -> float:
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


# --------------------------------------------------------------- gradients


def _fir_backward(g_y: np.ndarray, x: np.ndarray, half_taps: np.ndarray):
    """Gradients of ``y = h (*) x`` w.r.t. ``x`` and the half taps."""
    n = x.shape[-1]
    H = np.fft.fft(half_taps_kernel(half_taps, n))
    Gy = np.fft.fft(g_y, axis=-1)
    g_x = np.fft.ifft(Gy * np.conj(H), axis=-1)
    X = np.fft.fft(x, axis=-1)
    # g_h[v] = sum_n g_y[n] conj(x[n - v]), summed over the batch
    g_full = np.fft.ifft(np.sum(Gy * np.conj(X), axis=tuple(range(x.ndim - 1))))
    V = half_taps.size - 1
    g_half = g_full[: V + 1].copy()
    if V:
        g_half[1:] += g_full[n - V:][::-1]
    return g_x, g_half


def _corr_taps_backward(g_phi: np.ndarray, p: np.ndarray, K: int) -> np.ndarray:
    """Half-tap gradient of ``phi_n = sum_j c_j p_{n+j}`` (symmetric real c)."""
    axes = tuple(range(p.ndim - 1))
    n = p.shape[-1]
    # r[j] = sum_n g_phi[n] p[n + j]
    r = np.fft.irfft(np.sum(np.conj(np.fft.rfft(g_phi, axis=-1)) * np.fft.rfft(p, axis=-1), axis=axes), n=n)
    g = r[: K + 1].copy()
    if K:
        g[1:] += r[n - K:][::-1]
    return g


def forward_tape(x: np.ndarray, model: EqualizerModel):
    tape = []
    u = x
    for s in model.steps:
        y = circular_fir(u, s.filter.half_taps)
        p = y.real**2 + y.imag**2
        if model.mode == "pa":
            phi = symmetric_correlate(p, s.pvec.half_taps)
        else:
            phi = s.nl_scale * p
        out = y * np.exp(-1j * phi)
        tape.append((u, y, p, phi, out))
        u = out
    return u * model.output_gain, tape


def backward(model: EqualizerModel, tape, g_out: np.ndarray) -> np.ndarray:
    """Gradient vector ordered like :meth:`EqualizerModel.parameter_vector`.

    ``g_out`` is the gradient w.r.t. the model output (after ``output_gain``).
    """
    g = g_out * model.output_gain
    parts = []
    for idx in range(model.L - 1, -1, -1):
        s = model.steps[idx]
        u, y, p, phi, out = tape[idx]
        g_phi = np.imag(np.conj(g) * out)
        g_y = g * np.exp(1j * phi)
        step_parts = []
        if model.mode == "pa":
            step_parts.append(_corr_taps_backward(g_phi, p, s.pvec.K))
            g_p = symmetric_correlate(g_phi, s.pvec.half_taps)
        else:
            g_p = s.nl_scale * g_phi
        g_y = g_y + 2.0 * y * g_p
        g, g_h = _fir_backward(g_y, u, s.filter.half_taps)
        vec = np.concatenate([g_h.real, g_h.imag] + step_parts)
        if not np.all(np.isfinite(vec)):
            raise GradientError(idx, int(np.argmin(np.isfinite(vec))))
        parts.append(vec)
    return np.concatenate(parts[::-1]) if parts else np.zeros(0)


def loss_and_grad(model: EqualizerModel, x: np.ndarray, s: np.ndarray, sps: int = 2):
    """MSE after downsampling and per-frame LS de-rotation, and its gradient.

    The de-rotation angle is the minimizer of the loss over a global phase,
    so holding it fixed in the backward pass gives the exact gradient.
    """
    out, tape = forward_tape(x, model)
    z = downsample(out, sps)
    theta = derotation_angle(z, s)
    rot = np.exp(1j * theta)[..., None]
    err = z * rot - s
    loss = float(np.mean(err.real**2 + err.imag**2))
    g_z = 2.0 * err / err.size * np.conj(rot)
    g_out = np.zeros_like(out)
    g_out[..., ::sps] = g_z
    return loss, backward(model, tape, g_out)


def loss_only(model: EqualizerModel, x: np.ndarray, s: np.ndarray, sps: int = 2) -> float:
    z = downsample(forward(x, model), sps)
    return mse_loss(phase_derotate(z, s)[0], s)


def finite_difference(model: EqualizerModel, x, s, h: float = 1e-6, sps: int = 2,
                      indices=None) -> np.ndarray:
    """Central differences of :func:`loss_only` over the parameter vector."""
    theta0 = model.parameter_vector()
    probe = model.copy()
    idx = range(theta0.size) if indices is None else indices
    out = np.zeros(theta0.size)
    for i in idx:
        t = theta0.copy()
        t[i] += h
        probe.set_parameter_vector(t)
        lp = loss_only(probe, x, s, sps)
        t[i] -= 2 * h
        probe.set_parameter_vector(t)
        lm = loss_only(probe, x, s, sps)
        out[i] = (lp - lm) / (2 * h)
    return out


# -------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def init(self, n: int) -> AdamState:
        return AdamState(np.zeros(n), np.zeros(n))

    def step(self, params: np.ndarray, grads: np.ndarray, state: AdamState):
        if params.shape != grads.shape or state.m.shape != params.shape:
            raise ValueError("parameter, gradient and state shapes differ")
        t = state.t + 1
        m = self.beta1 * state.m + (1 - self.beta1) * grads
        v = self.beta2 * state.v + (1 - self.beta2) * grads**2
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        new = params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return new, AdamState(m, v, t)


def adam_step(params, grads, state: AdamState, lr: float = 1e-3):
    return Adam(lr).step(params, grads, state)


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    init_mode: str = "analytic"
    divergence_factor: float = 10.0
    divergence_patience: int = 3
    train_c0: bool = True
    keep_best: bool = False  # return the best epoch (validation SNR, else training loss), epoch 0 included

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.init_mode not in ("analytic", "random-gaussian"):
            raise ValueError("init_mode must be 'analytic' or 'random-gaussian'")


@dataclass
class TrainRecord:
    """Per-epoch curves. ``loss`` is the mean mini-batch loss seen during the
    epoch (each batch scored before its update); epoch 0 is the full-set loss
    of the initial model. ``val_snr_db`` is measured at the end of each epoch.
    """

    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    eff_snr_db: list = field(default_factory=list)
    val_snr_db: list = field(default_factory=list)
    wall_time_s: float = 0.0
    diverged: bool = False
    best_epoch: int | None = None

    def append(self, epoch, loss, val=None):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("epoch index must increase")
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.eff_snr_db.append(eff_snr_db(loss))
        self.val_snr_db.append(np.nan if val is None else val)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "eff_snr_db", "val_eff_snr_db"])
        for row in zip(self.epochs, self.loss, self.eff_snr_db, self.val_snr_db):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])
        return buf.getvalue()

    def epochs_to_fraction(self, frac: float = 0.95, curve: str = "eff_snr_db") -> int:
        """First epoch whose SNR (dB) reaches ``frac`` of the converged (final) value."""
        y = np.asarray(getattr(self, curve), dtype=float)
        if y.size == 0:
            raise ValueError("empty record")
        target = frac * y[-1]
        hit = np.nonzero(y >= target)[0]
        return int(self.epochs[hit[0]]) if hit.size else int(self.epochs[-1])


def random_init(model: EqualizerModel, seed: int) -> EqualizerModel:
    """Replace every c0 vector with N(0, 1) taps in coefficient units (1/W).

    The stored taps carry the launch-power fold, so the draw is scaled by
    ``model.power_w``. Linear filters keep their least-squares design.
    """
    m = model.copy()
    rng = make_rng(seed, 0x1A17)
    for s in m.steps:
        if m.mode == "pa":
            s.pvec = PerturbationVector(m.power_w * rng.standard_normal(s.pvec.half_taps.size), s.pvec.chi_db,
                                        s.pvec.span_km, True)
    return m


def _trainable_mask(model: EqualizerModel, cfg: TrainConfig) -> np.ndarray:
    cls = model.parameter_classes()
    mask = np.ones(cls.size, dtype=bool)
    if not cfg.train_c0:
        mask[cls == 2] = False
    return mask


def train(model: EqualizerModel, x: np.ndarray, s: np.ndarray, cfg: TrainConfig,
          val: tuple | None = None, sps: int = 2) -> tuple[EqualizerModel, TrainRecord]:
    """Mini-batch Adam on frames ``x`` (F, N) with reference symbols ``s`` (F, N/sps).

    Epoch 0 records the loss of the initial model over the whole training
    set. Returns a trained copy; the input model is left untouched.
    """
    if x.shape[0] != s.shape[0]:
        raise ValueError("frame count mismatch")
    t_start = time.perf_counter()
    m = model.copy()
    rec = TrainRecord()
    opt = Adam(cfg.learning_rate)
    theta = m.parameter_vector()
    state = opt.init(theta.size)
    mask = _trainable_mask(m, cfg)
    rng = make_rng(cfg.seed, 0x7EA1)

    def evaluate(xx, ss):
        return loss_only(m, xx, ss, sps)

    def val_snr():
        return eff_snr_db(evaluate(*val)) if val is not None else None

    def track(epoch, loss, vsnr):
        nonlocal best
        if not cfg.keep_best:
            return
        score = -vsnr if vsnr is not None else (loss if epoch == 0 else evaluate(x, s))
        if best is None or score < best[0]:
            best = (score, epoch, theta.copy())

    best = None
    initial = evaluate(x, s)
    v = val_snr()
    rec.append(0, initial, v)
    track(0, initial, v)
    bad = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(x.shape[0])
        total = 0.0
        for b in range(0, order.size, cfg.batch_size):
            sel = np.sort(order[b:b + cfg.batch_size])
            loss, grad = loss_and_grad(m, x[sel], s[sel], sps)
            total += loss * sel.size
            grad = np.where(mask, grad, 0.0)
            theta, state = opt.step(theta, grad, state)
            m.set_parameter_vector(theta)
        epoch_loss = total / x.shape[0]
        if not np.isfinite(epoch_loss):
            rec.diverged = True
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        v = val_snr()
        rec.append(epoch, epoch_loss, v)
        track(epoch, epoch_loss, v)
        bad = bad + 1 if epoch_loss > cfg.divergence_factor * initial else 0
        if bad >= cfg.divergence_patience:
            rec.diverged = True
            raise DivergenceError(f"loss above {cfg.divergence_factor}x initial for {bad} epochs")
    if best is not None:
        m.set_parameter_vector(best[2])
        rec.best_epoch = best[1]
    rec.wall_time_s = time.perf_counter() - t_start
    return m, rec


def run_manifest(cfg: TrainConfig, rec: TrainRecord, dataset_digest: str, extra: dict | None = None) -> str:
    d = {"config": asdict(cfg), "seed": cfg.seed, "dataset_digest": dataset_digest,
         "wall_time_s": rec.wall_time_s, "diverged": rec.diverged, "epochs": len(rec.epochs) - 1}
    d.update(extra or {})
    return json.dumps(d, indent=2, sort_keys=True)


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


# --------------------------------------------------------------- selection


def eta_grid_search(model: EqualizerModel, x_val: np.ndarray, s_val: np.ndarray,
                    grid=None, score=None) -> tuple[float, dict]:
    """Pick one LDBP ``eta`` (shared by all steps) maximizing a validation score.

    ``score(model) -> float`` defaults to the validation effective SNR.
    """
    if model.mode != "ldbp":
        raise ValueError("eta search applies to LDBP models")
    grid = np.round(np.arange(0.3, 1.2001, 0.1), 10) if grid is None else grid
    if score is None:
        score = lambda mm: -loss_only(mm, x_val, s_val)
    results = {}
    for eta in grid:
        m = model.copy()
        for st in m.steps:
            st.eta = float(eta)
        results[float(eta)] = float(score(m))
    best = max(results, key=results.get)
    for st in model.steps:
        st.eta = best
    return best, results


# ----------------------------------------------------------------- pruning


@dataclass
class PruneStage:
    filter_length: int
    c0_length: int | None
    score: float
    kept_epoch: int | None = None  # fine-tune epoch kept by keep_best (0: truncated weights)


def prune(model: EqualizerModel, x: np.ndarray, s: np.ndarray, *, filter_length: int | None = None,
          c0_length: int | None = None, finetune: TrainConfig | None = None,
          score=None, val: tuple | None = None, sps: int = 2) -> tuple[EqualizerModel, list]:
    """Progressive outside-in truncation with fine-tuning after every stage.

    Each stage drops the outermost tap pair of every filter still above
    ``filter_length`` and of every c0 still above ``c0_length``, then
    fine-tunes. The default fine-tune keeps its best epoch (on ``val`` when
    given), so a stage never ends worse than its truncated starting point.
    ``score(model)`` is recorded per stage (default: training effective SNR).
    """
    for name, t in (("filter_length", filter_length), ("c0_length", c0_length)):
        if t is not None and (t < 1 or t % 2 == 0):
            raise ValueError(f"{name} must be odd and >= 1")
    if c0_length is not None and model.mode != "pa":
        raise ValueError("c0 pruning needs a PA model")
    cur_f = max(st.filter.length for st in model.steps)
    cur_c = max(st.pvec.length for st in model.steps) if model.mode == "pa" else None
    f_target = cur_f if filter_length is None else filter_length
    c_target = cur_c if c0_length is None else c0_length
    if f_target > cur_f or (cur_c is not None and c_target > cur_c):
        raise ValueError("pruning targets exceed current lengths")
    finetune = finetune or TrainConfig(epochs=5, keep_best=True)
    if score is None:
        score = lambda mm: eff_snr_db(loss_only(mm, x, s, sps))
    m = model.copy()
    stages = [PruneStage(cur_f, cur_c, float(score(m)))]
    while cur_f > f_target or (cur_c is not None and cur_c > c_target):
        cur_f = max(cur_f - 2, f_target)
        if cur_c is not None:
            cur_c = max(cur_c - 2, c_target)
        for st in m.steps:
            if st.filter.length > cur_f:
                st.filter = st.filter.truncated(cur_f)
            if cur_c is not None and st.pvec.length > cur_c:
                st.pvec = st.pvec.truncated(cur_c)
        kept = None
        if finetune.epochs:
            m, r = train(m, x, s, finetune, val=val, sps=sps)
            kept = r.best_epoch
        m.pruning_log.append({"filter_length": cur_f, "c0_length": cur_c})
        stages.append(PruneStage(cur_f, cur_c, float(score(m)), kept))
    return m, stages
