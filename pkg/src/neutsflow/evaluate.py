"""Metrics, ablation variants, task runners, and result-table emission."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import numerics as nm
from . import operator as op
from .data import (SeriesTable, TaskSpec, apply_scaler, build_task_pairs,
                   chronological_split, fit_scaler, split_for_dataset,
                   stack_pairs)
from .errors import NumericalError, UsageError
from .flow import Assembly, EpochStats, FlowConfig, TrainConfig, predict, train_loop

VARIANTS = ("full", "wo_neural_operator", "wo_flow_matching",
            "wo_normalization", "wo_spectral_decomposition")


@dataclass(frozen=True)
class VariantSpec:
    name: str

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise UsageError(f"VariantSpec: unknown variant {self.name!r}; "
                             f"choose from {VARIANTS}")


@dataclass
class MetricReport:
    task: str
    dataset: str
    variant: str
    mse: float
    mae: float
    n_windows: int
    seed: int
    config_digest: str
    failed: bool = False
    note: str = ""


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise UsageError(f"mse: shapes {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise UsageError(f"mae: shapes {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


# -- DLinear head (the no-neural-operator ablation) ------------------------------

@dataclass(frozen=True)
class DLinearHyper:
    history_len: int
    horizon: int
    channels: int
    topk: int = 5


def init_dlinear(seed: int, hyper: DLinearHyper) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    S, L = hyper.history_len, hyper.horizon
    bound = 1.0 / np.sqrt(S)
    return {
        "dl_w_trend": rng.uniform(-bound, bound, size=(S, L)),
        "dl_b_trend": np.zeros(L),
        "dl_w_season": rng.uniform(-bound, bound, size=(S, L)),
        "dl_b_season": np.zeros(L),
    }


def dlinear_forward(params, hyper: DLinearHyper, H, G=None, t=None):
    """Channel-shared linear maps S -> L on the trend/season components of the
    raw history, summed; the path state and flow time are ignored."""
    single = np.asarray(nm.value_of(H)).ndim == 2
    Hb = np.asarray(nm.value_of(H), dtype=np.float64)
    Hb = Hb[None] if single else Hb
    trend, season = op.spectral_decompose(Hb, hyper.topk)
    out = None
    for comp, w_name, b_name in ((trend, "dl_w_trend", "dl_b_trend"),
                                 (season, "dl_w_season", "dl_b_season")):
        x = nm.moveaxis(comp, 1, 2)                       # (B, C, S)
        y = nm.matmul(x, params[w_name]) + params[b_name]  # (B, C, L)
        y = nm.moveaxis(y, 1, 2)
        out = y if out is None else out + y
    return out[0] if single else out


# -- variant construction ----------------------------------------------------------

def build_variant(spec: VariantSpec | str, hyper: op.OperatorHyper,
                  seed: int) -> Assembly:
    """Assemble one of the five model variants around a base configuration."""
    name = spec.name if isinstance(spec, VariantSpec) else VariantSpec(name=spec).name
    if name == "wo_neural_operator":
        dl = DLinearHyper(history_len=hyper.history_len, horizon=hyper.horizon,
                          channels=hyper.channels, topk=hyper.topk)
        params = init_dlinear(seed, dl)
        return Assembly(
            name=name, kind="dlinear", hyper=dl, params=params, seed=seed,
            forward_fn=lambda p, H, G, t: dlinear_forward(p, dl, H, G, t),
            embed_fn=lambda p, H: dlinear_forward(p, dl, H))
    if name == "wo_normalization":
        hyper = replace(hyper, normalize=False)
    elif name == "wo_spectral_decomposition":
        hyper = replace(hyper, decompose=False)
    assembly = Assembly(
        name=name, kind="operator", hyper=hyper,
        params=op.init_params(seed, hyper), seed=seed,
        forward_fn=lambda p, H, G, t: op.forward(p, hyper, H, G, t),
        embed_fn=lambda p, H: op.history_embedding(p, hyper, H),
        direct=(name == "wo_flow_matching"))
    return assembly


def assembly_from_checkpoint(ck: op.Checkpoint) -> Assembly:
    if ck.kind == "operator":
        hyper = op.OperatorHyper(**ck.hyper)
        direct = bool(ck.meta.get("direct", False))
        return Assembly(name=ck.meta.get("variant", "full"), kind="operator",
                        hyper=hyper, params=ck.params, seed=ck.seed,
                        forward_fn=lambda p, H, G, t: op.forward(p, hyper, H, G, t),
                        embed_fn=lambda p, H: op.history_embedding(p, hyper, H),
                        direct=direct)
    if ck.kind == "dlinear":
        dl = DLinearHyper(**ck.hyper)
        return Assembly(name=ck.meta.get("variant", "wo_neural_operator"),
                        kind="dlinear", hyper=dl, params=ck.params, seed=ck.seed,
                        forward_fn=lambda p, H, G, t: dlinear_forward(p, dl, H, G, t),
                        embed_fn=lambda p, H: dlinear_forward(p, dl, H))
    raise UsageError(f"unknown checkpoint kind {ck.kind!r}")


# -- task execution ----------------------------------------------------------------

DEFAULT_MODEL_KW = dict(k=16, topk=5, m_max=32, hidden=128, eps_norm=1e-5)


@dataclass
class TaskRun:
    report: MetricReport
    assembly: Assembly
    params: dict[str, np.ndarray]
    history: list[EpochStats]
    test_H: np.ndarray
    test_F: np.ndarray
    task: TaskSpec
    scaler: object


def score_predictions(preds: np.ndarray, F: np.ndarray,
                      task: TaskSpec) -> tuple[float, float]:
    """Metric pair for one task; CRTL downsamples predictions before scoring."""
    if task.kind == "crtl":
        f, ph = task.decimation_factor, task.phase
        preds = preds[:, ph::f]
        F = F[:, ph::f]
    return mse(preds, F), mae(preds, F)


def execute_task(task: TaskSpec, dataset: SeriesTable, variant: VariantSpec | str,
                 train_cfg: TrainConfig, flow_cfg: FlowConfig,
                 dataset_name: str = "dataset", split=None, stride: int = 1,
                 test_stride: int = 1, model_kw: dict | None = None,
                 config_digest: str = "", log=None) -> TaskRun:
    """Train on the train split, early-stop on val, score the test split."""
    split = split or split_for_dataset(dataset_name)
    need = {"cft": task.S + task.L, "tssr": task.L,
            "crtl": task.hsr_history + task.L}[task.kind]
    train_t, val_t, test_t = chronological_split(dataset, split, min_segment=need)
    scaler = fit_scaler(train_t)
    parts = [apply_scaler(t, scaler) for t in (train_t, val_t, test_t)]
    train_pairs = build_task_pairs(parts[0], task, stride)
    val_pairs = build_task_pairs(parts[1], task, stride)
    test_pairs = build_task_pairs(parts[2], task, test_stride)

    kw = dict(DEFAULT_MODEL_KW)
    kw.update(model_kw or {})
    hyper = op.OperatorHyper(history_len=task.S, horizon=task.L,
                             channels=dataset.n_channels, **kw)
    assembly = build_variant(variant, hyper, train_cfg.seed)

    H_test, F_test = stack_pairs(test_pairs)
    name = assembly.name
    try:
        params, history = train_loop(train_pairs, val_pairs, assembly,
                                     train_cfg, flow_cfg, log=log)
    except NumericalError as err:
        report = MetricReport(task=task.kind, dataset=dataset_name, variant=name,
                              mse=float("inf"), mae=float("inf"),
                              n_windows=len(test_pairs), seed=train_cfg.seed,
                              config_digest=config_digest, failed=True, note=str(err))
        return TaskRun(report=report, assembly=assembly, params=assembly.params,
                       history=[], test_H=H_test, test_F=F_test, task=task,
                       scaler=scaler)

    preds = predict(assembly, params, H_test, flow_cfg)
    m1, m2 = score_predictions(preds, F_test, task)
    report = MetricReport(task=task.kind, dataset=dataset_name, variant=name,
                          mse=m1, mae=m2, n_windows=len(test_pairs),
                          seed=train_cfg.seed, config_digest=config_digest)
    return TaskRun(report=report, assembly=assembly, params=params,
                   history=history, test_H=H_test, test_F=F_test, task=task,
                   scaler=scaler)


def run_task(task: TaskSpec, dataset: SeriesTable, variant, train_cfg: TrainConfig,
             flow_cfg: FlowConfig, **kwargs) -> MetricReport:
    return execute_task(task, dataset, variant, train_cfg, flow_cfg, **kwargs).report


# -- report emission ---------------------------------------------------------------

REPORT_COLUMNS = ("task", "dataset", "variant", "mse", "mae", "n_windows",
                  "seed", "config_digest", "rank", "failed")


def _ranks(reports: list[MetricReport]) -> list[int]:
    ranks = [0] * len(reports)
    groups: dict[tuple, list[int]] = {}
    for i, r in enumerate(reports):
        groups.setdefault((r.task, r.dataset), []).append(i)
    for idxs in groups.values():
        order = sorted(idxs, key=lambda i: (reports[i].mse, i))
        for pos, i in enumerate(order, start=1):
            ranks[i] = pos
    return ranks


def emit_report(reports: list[MetricReport], out_dir: str | Path,
                figures: bool = True) -> dict[str, Path]:
    """Write per-run JSON, a combined summary.csv, and (by default) a summary
    figure; JSON and CSV carry identical numbers."""
    if not reports:
        raise UsageError("emit_report: empty report list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ranks = _ranks(reports)
    paths: dict[str, Path] = {}
    for r, rank in zip(reports, ranks):
        payload = asdict(r)
        payload["rank"] = rank
        p = out_dir / f"{r.task}_{r.dataset}_{r.variant}.json"
        p.write_text(json.dumps(payload, indent=2, sort_keys=True))
        paths[p.name] = p
    csv_path = out_dir / "summary.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for r, rank in zip(reports, ranks):
            row = [r.task, r.dataset, r.variant, repr(r.mse), repr(r.mae),
                   str(r.n_windows), str(r.seed), r.config_digest, str(rank),
                   str(r.failed)]
            fh.write(",".join(row) + "\n")
    paths["summary.csv"] = csv_path
    if figures:
        from .report import save_variant_bars
        paths["summary.png"] = save_variant_bars(reports, out_dir / "summary.png")
    return paths


def config_digest(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]
