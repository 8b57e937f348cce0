"""Fit / evaluate recipes shared by the command line, the demos and the tests."""
from __future__ import annotations

from dataclasses import dataclass

from .channel import LaunchConfig, LinkParams
from .dataset import Dataset
from .metrics import MetricsReport, evaluate_output
from .model import EqualizerModel, build_model, cd_compensate, dbp_baseline, forward, rx_symbol_gain
from .signal import ComplexSignal
from .training import TrainConfig, TrainRecord, eta_grid_search, random_init, train

VALIDATION_FRACTION = 8  # last 1/8 of the training frames


@dataclass
class SchemeResult:
    scheme: str
    spans_per_step: int | None
    power_dbm: float
    report: MetricsReport
    model: EqualizerModel | None = None
    record: TrainRecord | None = None
    eta: float | None = None


def scheme_name(mode: str, spans_per_step: int | None) -> str:
    return mode if spans_per_step is None else f"{mode}-{spans_per_step}"


def split_train(ds: Dataset, power_dbm: float):
    """``(x_fit, s_fit), (x_val, s_val)`` with the last eighth held out."""
    x = ds.at_power(power_dbm)
    n_val = max(1, x.shape[0] // VALIDATION_FRACTION)
    n_fit = x.shape[0] - n_val
    return (x[:n_fit], ds.symbols[:n_fit]), (x[n_fit:], ds.symbols[n_fit:])


def initial_model(mode: str, link: LinkParams, spans_per_step: int, power_dbm: float, *,
                  roll_off: float = 0.1, frame_len: int = 2048, chi_db: float = -20.0,
                  c0_len: int | None = None, fir_len: int | None = None) -> EqualizerModel:
    return build_model(mode, link, spans_per_step, LaunchConfig(power_dbm).P, roll_off=roll_off,
                       frame_len=frame_len, chi_db=chi_db, c0_len=c0_len, fir_len=fir_len)


def fit_scheme(mode: str, link: LinkParams, spans_per_step: int, train_ds: Dataset, power_dbm: float,
               cfg: TrainConfig, *, chi_db: float = -20.0, c0_len: int | None = None,
               fir_len: int | None = None, model: EqualizerModel | None = None):
    """Analytic (or random) init, LDBP eta selection on validation, then Adam."""
    (x, s), val = split_train(train_ds, power_dbm)
    roll_off = train_ds.header["config"]["roll_off"]
    m = model or initial_model(mode, link, spans_per_step, power_dbm, roll_off=roll_off,
                               frame_len=x.shape[-1], chi_db=chi_db, c0_len=c0_len, fir_len=fir_len)
    eta = None
    if m.mode == "ldbp" and model is None:
        eta, _ = eta_grid_search(m, *val)
    if cfg.init_mode == "random-gaussian":
        m = random_init(m, cfg.seed)
    trained, rec = train(m, x, s, cfg, val=val)
    return trained, rec, eta


def evaluate_model(model: EqualizerModel, test_ds: Dataset, power_dbm: float) -> MetricsReport:
    x = test_ds.at_power(power_dbm)
    return evaluate_output(forward(x, model), test_ds.symbols, test_ds.bits)


def evaluate_cdc(link: LinkParams, test_ds: Dataset, power_dbm: float) -> MetricsReport:
    x = test_ds.at_power(power_dbm)
    rate = test_ds.header["sample_rate"]
    g = rx_symbol_gain(test_ds.header["config"]["roll_off"])
    out = cd_compensate(ComplexSignal(x, rate), link, output_gain=g).samples
    return evaluate_output(out, test_ds.symbols, test_ds.bits)


def evaluate_dbp(link: LinkParams, test_ds: Dataset, power_dbm: float, steps_per_span: int = 1,
                 zeta: float = 1.0) -> MetricsReport:
    x = test_ds.at_power(power_dbm)
    rate = test_ds.header["sample_rate"]
    g = rx_symbol_gain(test_ds.header["config"]["roll_off"])
    out = dbp_baseline(ComplexSignal(x, rate), link, steps_per_span, zeta,
                       power_w=LaunchConfig(power_dbm).P).samples * g
    return evaluate_output(out, test_ds.symbols, test_ds.bits)


def run_scheme(scheme: str, spans_per_step: int | None, link: LinkParams, train_ds: Dataset,
               test_ds: Dataset, power_dbm: float, cfg: TrainConfig, **kw) -> SchemeResult:
    if scheme == "cdc":
        return SchemeResult("cdc", None, power_dbm, evaluate_cdc(link, test_ds, power_dbm))
    if scheme == "dbp":
        return SchemeResult("dbp", None, power_dbm, evaluate_dbp(link, test_ds, power_dbm))
    m, rec, eta = fit_scheme(scheme, link, spans_per_step, train_ds, power_dbm, cfg, **kw)
    return SchemeResult(scheme_name(scheme, spans_per_step), spans_per_step, power_dbm,
                        evaluate_model(m, test_ds, power_dbm), m, rec, eta)
