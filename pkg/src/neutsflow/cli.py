"""Command-line entry point: train, forecast, eval, ablate, gradcheck, ingest.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
failure. ``NEUTSFLOW_THREADS`` caps process parallelism in ``ablate``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import flow as fl
from . import numerics as nm
from . import operator as op
from . import report as rp
from .config import RunConfig, load_config, resolved_text
from .data import TaskSpec, decimate, load_csv
from .errors import ConfigError, DataError, NumericalError, UsageError


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config entry (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--out", type=str, default=None, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neutsflow",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model variant, write a checkpoint")
    _common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="predict the future block from a series file")
    p.add_argument("checkpoint", type=str)
    p.add_argument("input_csv", type=str)
    p.add_argument("--n-steps", type=int, default=None, help="ODE step count")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval", help="train and score one (task, dataset, variant)")
    _common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run all five model variants and rank them")
    _common_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the gradients")
    _common_flags(p)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ingest", help="validate a CSV series file")
    p.add_argument("path", type=str)
    p.add_argument("--datetime-column", type=str, default="date")
    p.add_argument("--fill-policy", type=str, default="reject",
                   choices=("reject", "ffill"))
    p.set_defaults(func=cmd_ingest)
    return parser


def _load_run(args) -> RunConfig:
    return load_config(args.config, args.overrides, seed=args.seed,
                       out_dir=args.out)


def _require_dataset(cfg: RunConfig):
    if not cfg.dataset_path:
        raise ConfigError("config: dataset_path is required for this command")
    return load_csv(cfg.dataset_path, cfg.datetime_column, cfg.fill_policy)


def _digest(cfg: RunConfig) -> str:
    return ev.config_digest(asdict(cfg))


def _write_config_echo(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(resolved_text(cfg))


def _checkpoint_meta(cfg: RunConfig, run: ev.TaskRun, table) -> dict:
    return {
        "variant": run.assembly.name,
        "direct": run.assembly.direct,
        "task": asdict(run.task),
        "flow": asdict(cfg.flow_config()),
        "scaler_mean": run.scaler.mean.tolist(),
        "scaler_std": run.scaler.std.tolist(),
        "channel_names": list(table.channel_names),
        "interval_seconds": table.interval_seconds(),
        "datetime_column": cfg.datetime_column,
        "config_digest": _digest(cfg),
        "dataset_name": cfg.resolved_name(),
    }


def _execute(cfg: RunConfig, table, raise_failures: bool,
             verbose: bool = True) -> ev.TaskRun:
    name = cfg.resolved_name()
    log = (lambda msg: print(msg, flush=True)) if verbose else None
    run = ev.execute_task(cfg.task_spec(), table, cfg.variant, cfg.train_config(),
                          cfg.flow_config(), dataset_name=name,
                          split=cfg.split_spec(name), stride=cfg.stride,
                          test_stride=cfg.test_stride, model_kw=cfg.model_kw(),
                          config_digest=_digest(cfg), log=log)
    if run.report.failed and raise_failures:
        raise NumericalError(run.report.note)
    return run


def cmd_train(args) -> int:
    cfg = _load_run(args)
    table = _require_dataset(cfg)
    out = Path(cfg.out_dir)
    _write_config_echo(cfg, out)
    run = _execute(cfg, table, raise_failures=True)
    ck_path = op.save_checkpoint(
        out / "checkpoint.ntf", run.params, run.assembly.hyper, seed=cfg.seed,
        kind=run.assembly.kind, meta=_checkpoint_meta(cfg, run, table))
    fl.save_train_log(run.history, out / "log.csv")
    rp.save_training_curves(run.history, out / "training_curve.png")
    print(f"checkpoint: {ck_path}")
    print(f"epochs: {len(run.history)}  best val MSE: "
          f"{min(h.val_mse for h in run.history):.6f}")
    print(f"test MSE: {run.report.mse:.6f}  test MAE: {run.report.mae:.6f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run(args)
    table = _require_dataset(cfg)
    out = Path(cfg.out_dir)
    _write_config_echo(cfg, out)
    run = _execute(cfg, table, raise_failures=False)
    reports_dir = out / "reports"
    ev.emit_report([run.report], reports_dir)
    if run.history:
        rp.save_training_curves(run.history, out / "training_curve.png")
        preds = fl.predict(run.assembly, run.params, run.test_H, cfg.flow_config())
        rp.save_forecast_panels(run.test_H, run.test_F, preds,
                                reports_dir / f"{run.report.task}_"
                                f"{run.report.dataset}_{run.report.variant}_panels.png")
    r = run.report
    print(f"{r.task} {r.dataset} {r.variant}: mse={r.mse:.6f} mae={r.mae:.6f} "
          f"windows={r.n_windows}" + ("  [FAILED]" if r.failed else ""))
    return 0


def _ablate_one(payload: tuple) -> ev.MetricReport:
    cfg_items, variant = payload
    cfg = RunConfig(**cfg_items)
    cfg.variant = variant
    table = _require_dataset(cfg)
    return _execute(cfg, table, raise_failures=False, verbose=False).report


def cmd_ablate(args) -> int:
    cfg = _load_run(args)
    _require_dataset(cfg)   # fail early on data problems
    out = Path(cfg.out_dir)
    _write_config_echo(cfg, out)
    threads = max(1, int(os.environ.get("NEUTSFLOW_THREADS", "1")))
    jobs = [(asdict(cfg), v) for v in ev.VARIANTS]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            reports = list(pool.map(_ablate_one, jobs))
    else:
        reports = []
        for job in jobs:
            print(f"variant: {job[1]}", flush=True)
            reports.append(_ablate_one(job))
    paths = ev.emit_report(reports, out / "reports")
    for r, rank in zip(reports, ev._ranks(reports)):
        print(f"rank {rank}: {r.variant:26s} mse={r.mse:.6f}"
              + ("  [FAILED]" if r.failed else ""))
    print(f"summary: {paths['summary.csv']}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_run(args)
    channels = 2
    hyper = cfg.operator_hyper(channels)
    params = op.init_params(cfg.seed, hyper)
    rng = np.random.default_rng(cfg.seed)
    B = 2
    H = rng.normal(size=(B, hyper.history_len, channels))
    F = rng.normal(size=(B, hyper.horizon, channels))
    t = rng.uniform(0.0, 1.0, size=B)

    def loss_fn(p):
        h_emb = op.history_embedding(p, hyper, H)
        t3 = t[:, None, None]
        g = t3 * F + (1.0 - t3) * h_emb
        diff = op.forward(p, hyper, H, g, t) - F
        return nm.mean(diff * diff)

    err = nm.grad_check(loss_fn, params, epsilon=1e-5, n_samples=args.samples,
                        rng=np.random.default_rng(cfg.seed + 1))
    print(f"max relative gradient error: {err:.3e} "
          f"({args.samples} sampled parameters, eps=1e-5)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_text(json.dumps(
        {"max_relative_error": err, "n_samples": args.samples,
         "epsilon": 1e-5, "seed": cfg.seed}, indent=2))
    if err >= 1e-4:
        raise NumericalError(f"gradient check failed: {err:.3e} >= 1e-4")
    return 0


def cmd_ingest(args) -> int:
    table = load_csv(args.path, args.datetime_column, args.fill_policy)
    first = str(table.timestamps[0])
    last = str(table.timestamps[-1])
    print(f"rows: {table.length}")
    print(f"channels ({table.n_channels}): {', '.join(table.channel_names)}")
    print(f"interval: {table.interval_seconds()}s")
    print(f"span: {first} .. {last}")
    return 0


def cmd_forecast(args) -> int:
    ck = op.load_checkpoint(args.checkpoint)
    assembly = ev.assembly_from_checkpoint(ck)
    meta = ck.meta
    task = TaskSpec(**meta["task"])
    flow_cfg = fl.FlowConfig(**meta["flow"])
    if args.n_steps is not None:
        flow_cfg = fl.FlowConfig(**{**meta["flow"], "n_steps": args.n_steps})

    in_path = Path(args.input_csv)
    if not in_path.exists():
        raise DataError(f"forecast: no such file: {in_path}")
    if len([ln for ln in in_path.read_text().splitlines() if ln.strip()]) <= 1:
        raise UsageError(f"forecast: empty input: {in_path}")
    table = load_csv(in_path, meta.get("datetime_column", "date"))
    expected_c = len(meta["channel_names"])
    if table.n_channels != expected_c:
        raise UsageError(f"forecast: input has {table.n_channels} channels, "
                         f"checkpoint expects {expected_c} "
                         f"({', '.join(meta['channel_names'])})")
    need = task.hsr_history
    if table.length < need:
        raise UsageError(f"forecast: need at least {need} input rows, "
                         f"got {table.length}")

    mean = np.asarray(meta["scaler_mean"])
    std = np.asarray(meta["scaler_std"])
    tail = (table.values[-need:] - mean) / std
    H = decimate(tail, task.decimation_factor, task.phase)

    pred_std = fl.integrate(H, assembly, flow_cfg)
    one_step = fl.integrate(H, assembly, fl.FlowConfig(**{**meta["flow"], "n_steps": 1}))
    pred = pred_std * std + mean

    interval = np.timedelta64(int(meta["interval_seconds"]), "s")
    if task.kind == "tssr":
        stamps = table.timestamps[-task.L:]
    else:
        stamps = table.timestamps[-1] + interval * np.arange(1, task.L + 1)

    out = Path(args.out) if args.out else Path("runs/forecast")
    out.mkdir(parents=True, exist_ok=True)
    pred_path = out / "prediction.csv"
    with open(pred_path, "w") as fh:
        fh.write(",".join([meta.get("datetime_column", "date")] + meta["channel_names"]) + "\n")
        txt = stamps.astype("datetime64[s]").astype(str)
        for i in range(task.L):
            fh.write(",".join([txt[i].replace("T", " ")]
                              + [f"{v:.10g}" for v in pred[i]]) + "\n")
    diff = float(np.sqrt(np.mean((pred_std - one_step) ** 2)))
    (out / "prediction_meta.json").write_text(json.dumps({
        "n_steps": flow_cfg.n_steps,
        "rms_difference_vs_one_step": diff,
        "checkpoint": str(args.checkpoint),
        "rows": task.L,
    }, indent=2))
    rp.save_forecast_line(table.values[-need:], pred, out / "forecast.png")
    print(f"prediction: {pred_path}  ({task.L} rows x {expected_c} channels)")
    print(f"rms difference vs one-step: {diff:.3e}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
