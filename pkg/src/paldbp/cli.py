"""Command-line experiment harness.

    python3 -m paldbp <command> [--config cfg.json] [--set key=value ...]

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import subprocess
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from . import dataset as dsio
from .cdc import FIR_LENGTHS, design_fir_ls
from .channel import LinkParams, NumericOverflowError
from .experiments import evaluate_cdc, evaluate_dbp, evaluate_model, fit_scheme, run_scheme
from .metrics import analytic_complexity, gain_complexity_rows, instrumented_count
from .model import EqualizerModel
from .perturbation import QuadratureAccuracyError, c0_vector, matched_gaussian
from .training import DivergenceError, GradientError, TrainConfig, array_digest, prune, run_manifest

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "link": {f.name: f.default for f in fields(LinkParams)},
    "system": {"symbol_rate": 32e9, "roll_off": 0.1, "n_symbols": 1024, "rx_sps": 2,
               "channel_sps": 8, "n_train_frames": 256, "n_test_frames": 64, "noise": True},
    "launch_dbm": [-2.0, 0.0, 2.0, 4.0],
    "model": {"mode": "pa", "spans_per_step": 1, "fir_len": None, "c0_len": None},
    "train": {f.name: f.default for f in fields(TrainConfig)},
    "chi_db": -20.0,
    "pruning": {"filter_length": None, "c0_length": None, "finetune_epochs": 5, "finetune_keep_best": True},
    "schemes": ["cdc", "ldbp-1", "pa-1"],
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config field '{where}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config field '{where}' must be an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str]) -> dict:
    """Defaults < config file < ``--set`` flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = _merge(cfg, json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node = {}
        cur = node
        for p in parts[:-1]:
            cur[p] = {}
            cur = cur[p]
        cur[parts[-1]] = _parse_value(raw)
        cfg = _merge(cfg, node)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        make_link(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"link: {exc}") from exc
    try:
        make_train(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc
    sysc = cfg["system"]
    for k in ("n_symbols", "n_train_frames", "n_test_frames", "rx_sps", "channel_sps"):
        if not isinstance(sysc[k], int) or sysc[k] < 1:
            raise ConfigError(f"system.{k}: must be a positive integer")
    if cfg["model"]["mode"] not in ("ldbp", "pa"):
        raise ConfigError("model.mode: must be 'ldbp' or 'pa'")
    S = cfg["model"]["spans_per_step"]
    if not isinstance(S, int) or S < 1 or cfg["link"]["n_spans"] % S:
        raise ConfigError("model.spans_per_step: must be a positive divisor of link.n_spans")
    if not isinstance(cfg["launch_dbm"], list) or not cfg["launch_dbm"]:
        raise ConfigError("launch_dbm: must be a non-empty list")
    if cfg["chi_db"] > 0:
        raise ConfigError("chi_db: must be <= 0")
    for s in cfg["schemes"]:
        if parse_scheme(s) is None:
            raise ConfigError(f"schemes: unknown scheme '{s}'")


def parse_scheme(name: str):
    if name in ("cdc", "dbp"):
        return name, None
    mode, _, S = name.partition("-")
    if mode in ("ldbp", "pa") and S.isdigit():
        return mode, int(S)
    return None


def make_link(cfg) -> LinkParams:
    return LinkParams(**cfg["link"])


def make_train(cfg) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def digest(cfg) -> str:
    return dsio.config_digest(cfg)


def provenance(cfg) -> dict:
    return {"config_digest": digest(cfg), "version": version_string()}


# ---------------------------------------------------------------- helpers


def _load_dataset(path, producer="simulate"):
    if not path or not Path(path).exists():
        raise FileNotFoundError(f"dataset '{path}' not found; create it with `{producer}`")
    try:
        return dsio.load(path)
    except ValueError as exc:
        raise OSError(f"{exc}; regenerate it with `{producer}`") from exc


def _load_model(path):
    if not path or not Path(path).exists():
        raise FileNotFoundError(f"model '{path}' not found; create it with `train`")
    return EqualizerModel.from_json(Path(path).read_text(encoding="utf-8"))


def _write(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _csv(header, rows, prov) -> str:
    buf = io.StringIO()
    buf.write(f"# config_digest={prov['config_digest']} version={prov['version']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _power(args, cfg):
    return float(args.power if args.power is not None else cfg["launch_dbm"][0])


# --------------------------------------------------------------- commands


def cmd_simulate(args, cfg):
    sysc = cfg["system"]
    n = sysc["n_train_frames"] if args.split == "train" else sysc["n_test_frames"]
    ds = dsio.simulate(make_link(cfg), cfg["launch_dbm"], n, seed=cfg["seed"], split=args.split,
                       n_symbols=sysc["n_symbols"], symbol_rate=sysc["symbol_rate"],
                       roll_off=sysc["roll_off"], channel_sps=sysc["channel_sps"],
                       rx_sps=sysc["rx_sps"], noise=sysc["noise"], threads=args.threads,
                       provenance={"experiment_digest": digest(cfg), "version": version_string()})
    dsio.save(ds, args.out)
    print(f"wrote {args.out}: {ds.rx.shape[0]} powers x {ds.rx.shape[1]} frames x {ds.rx.shape[2]} samples")


def cmd_design(args, cfg):
    link = make_link(cfg)
    sysc = cfg["system"]
    rate = sysc["symbol_rate"] * sysc["rx_sps"]
    out = Path(args.out_dir)
    prov = provenance(cfg)
    spans = args.spans or [cfg["model"]["spans_per_step"]]
    rows = []
    pulse = matched_gaussian(sysc["roll_off"], sysc["symbol_rate"], sysc["rx_sps"])
    for S in spans:
        fir_len = cfg["model"]["fir_len"] or FIR_LENGTHS.get(S) or 2 * 36 * S + 1
        filt = design_fir_ls(S * link.span_km, link, fir_len, rate, sysc["symbol_rate"], sysc["roll_off"])
        if cfg["chi_db"] == 0:
            c0 = c0_vector(link, S, 0.0, pulse, length=1)
        else:
            c0 = c0_vector(link, S, cfg["chi_db"], pulse, length=cfg["model"]["c0_len"])
        f_doc = json.loads(filt.to_json()) | prov | {"residual": filt.residual, "notes": filt.notes}
        c_doc = json.loads(c0.to_json()) | prov
        _write(out / f"filter_S{S}.json", json.dumps(f_doc))
        _write(out / f"c0_S{S}.json", json.dumps(c_doc))
        rows.append([S, S * link.span_km, filt.length, c0.length, f"{filt.residual:.3e}"])
    text = _csv(["spans_per_step", "step_km", "fir_length", "c0_length", "ls_residual"], rows, prov)
    _write(out / "design_summary.csv", text)
    print(text, end="")


def cmd_train(args, cfg):
    ds = _load_dataset(args.dataset)
    link = make_link(cfg)
    tcfg = make_train(cfg)
    power = _power(args, cfg)
    mc = cfg["model"]
    model, rec, eta = fit_scheme(mc["mode"], link, mc["spans_per_step"], ds, power, tcfg,
                                 chi_db=cfg["chi_db"], c0_len=mc["c0_len"], fir_len=mc["fir_len"])
    out = Path(args.out_dir)
    prov = provenance(cfg)
    doc = json.loads(model.to_json()) | prov | {"power_dbm": power}
    _write(out / "model.json", json.dumps(doc))
    _write(out / "record.csv", f"# config_digest={prov['config_digest']} version={prov['version']}\n"
           + rec.to_csv())
    _write(out / "manifest.json", run_manifest(tcfg, rec, array_digest(ds.rx, ds.bits),
                                               prov | {"power_dbm": power, "eta": eta}))
    print(f"trained {mc['mode']}-{mc['spans_per_step']} at {power} dBm: "
          f"eff SNR {rec.eff_snr_db[0]:.2f} -> {rec.eff_snr_db[-1]:.2f} dB")


def _scheme_report(scheme, model, link, ds, power):
    if scheme == "cdc":
        return evaluate_cdc(link, ds, power)
    if scheme == "dbp":
        return evaluate_dbp(link, ds, power)
    return evaluate_model(model, ds, power)


REPORT_COLUMNS = ["q2_db", "q2_lower_bound_db", "ber", "bits_counted", "eff_snr_db"]


def _report_cells(r) -> list:
    """q2_db is ``inf`` for error-free runs; the bound is what one error would give."""
    bound = repr(r.q2_lower_bound_db) if r.bit_errors == 0 else ""
    return [repr(float(r.q2_db)), bound, repr(float(r.ber)), r.bits_counted, repr(float(r.eff_snr_db))]


def cmd_evaluate(args, cfg):
    ds = _load_dataset(args.dataset)
    link = make_link(cfg)
    prov = provenance(cfg)
    model = _load_model(args.model) if args.model else None
    scheme = args.scheme or (f"{model.mode}-{model.spans_per_step}" if model else "cdc")
    if model is None and scheme not in ("cdc", "dbp"):
        raise FileNotFoundError(f"scheme '{scheme}' needs --model; create one with `train`")
    powers = [args.power] if args.power is not None else ds.powers_dbm
    rows = []
    for p in powers:
        r = _scheme_report(scheme, model, link, ds, p)
        rows.append([p, scheme, *_report_cells(r)])
    text = _csv(["power_dbm", "scheme", *REPORT_COLUMNS], rows, prov)
    if args.out:
        _write(args.out, text)
    print(text, end="")


def cmd_sweep(args, cfg):
    train_ds = _load_dataset(args.train)
    test_ds = _load_dataset(args.test)
    link = make_link(cfg)
    tcfg = make_train(cfg)
    prov = provenance(cfg)
    rows = []
    for p in cfg["launch_dbm"]:
        for name in cfg["schemes"]:
            mode, S = parse_scheme(name)
            r = run_scheme(mode, S, link, train_ds, test_ds, p, tcfg, chi_db=cfg["chi_db"]).report
            rows.append([p, name, *_report_cells(r)])
            print(f"{p:+.1f} dBm {name:>8}: Q2 {r.q2_text()} dB", file=sys.stderr)
    text = _csv(["power_dbm", "scheme", *REPORT_COLUMNS], rows, prov)
    _write(args.out, text)
    print(text, end="")


def cmd_complexity(args, cfg):
    prov = provenance(cfg)
    rows = []
    if args.model:
        model = _load_model(args.model)
        for kind in ("tde", "fde"):
            rep = analytic_complexity(model, kind)
            rows.append([kind, model.mode, model.spans_per_step, repr(float(rep.total))])
        counted = instrumented_count(model)
        rows.append(["tde-counted", model.mode, model.spans_per_step, repr(float(counted.total))])
        text = _csv(["linear", "mode", "spans_per_step", "mults_per_sample"], rows, prov)
    else:
        if not args.gains:
            raise FileNotFoundError("complexity needs --model or --gains (a sweep CSV); create one with `sweep`")
        text = _gain_rows_from_sweep(args.gains, cfg, prov)
    if args.out:
        _write(args.out, text)
    print(text, end="")


def _gain_rows_from_sweep(path, cfg, prov):
    if not Path(path).exists():
        raise FileNotFoundError(f"sweep output '{path}' not found; create it with `sweep`")
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    link = make_link(cfg)
    best = {}
    for r in rows:
        q = float(r["q2_db"])
        bounded = math.isinf(q) and q > 0
        if bounded:
            q = float(r["q2_lower_bound_db"])
        if r["scheme"] not in best or q > best[r["scheme"]][0]:
            best[r["scheme"]] = (q, bounded)
    if "cdc" not in best:
        raise ConfigError("sweep output has no cdc rows to reference gains against")
    from .experiments import initial_model

    entries = []
    for name, q in best.items():
        parsed = parse_scheme(name)
        if parsed is None or parsed[1] is None:
            continue
        mode, S = parsed
        m = initial_model(mode, link, S, 0.0, c0_len=cfg["model"]["c0_len"])
        entries.append({"scheme": mode, "spans_per_step": S, "mults_per_sample": analytic_complexity(m).total,
                        "q2_gain_db": q[0] - best["cdc"][0], "lower_bound": q[1] and not best["cdc"][1]})
    text = gain_complexity_rows(entries)
    return f"# config_digest={prov['config_digest']} version={prov['version']}\n" + text


def cmd_prune(args, cfg):
    ds = _load_dataset(args.dataset)
    model = _load_model(args.model)
    from .experiments import split_train

    power = _power(args, cfg)
    (x, s), val = split_train(ds, power)
    pc = cfg["pruning"]
    ft = TrainConfig(**(cfg["train"] | {"epochs": pc["finetune_epochs"], "keep_best": pc["finetune_keep_best"]}))
    pruned, stages = prune(model, x, s, filter_length=args.filter_length or pc["filter_length"],
                           c0_length=args.c0_length or pc["c0_length"], finetune=ft, val=val)
    prov = provenance(cfg)
    _write(args.out, json.dumps(json.loads(pruned.to_json()) | prov))
    rows = [[g.filter_length, g.c0_length, repr(float(g.score)), g.kept_epoch] for g in stages]
    print(_csv(["filter_length", "c0_length", "eff_snr_db", "kept_epoch"], rows, prov), end="")


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paldbp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=version_string())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON experiment config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set link.n_spans=4")
    common.add_argument("--threads", type=int, default=int(os.environ.get("NLC_THREADS", "1")))
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a dataset file")
    s.add_argument("--split", choices=["train", "test"], default="train")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("design", parents=[common], help="LS filters and c0 vectors")
    s.add_argument("--spans", type=int, nargs="*", help="spans per step to design (default: model's)")
    s.add_argument("--out-dir", default="design")
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("train", parents=[common], help="fit one equalizer")
    s.add_argument("--dataset", required=True)
    s.add_argument("--power", type=float)
    s.add_argument("--out-dir", default="run")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="BER / Q^2 per launch power")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model")
    s.add_argument("--scheme", help="cdc, dbp, or the model's scheme")
    s.add_argument("--power", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="power x scheme grid")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("complexity", parents=[common], help="multiplications per sample")
    s.add_argument("--model")
    s.add_argument("--gains", help="sweep CSV for gain-vs-complexity rows")
    s.add_argument("--out")
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("prune", parents=[common], help="progressive pruning with fine-tuning")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--power", type=float)
    s.add_argument("--filter-length", type=int)
    s.add_argument("--c0-length", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prune)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.set) + ([f"seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericOverflowError, DivergenceError, GradientError, QuadratureAccuracyError,
            FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
