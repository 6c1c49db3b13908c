"""Conditional measure path, flow-matching loss, training loop, and ODE
inference.

The path between a history function sample and a future block is the straight
Gaussian bridge ``g_t = t*f + (1-t)*h + sigma_t * xi`` with
``sigma_t = sigma_path * t * (1 - t)`` (exact endpoints; ``sigma_path = 0`` is
the deterministic limit). The model is trained reparameterized: it predicts
the future block itself, and the integration velocity recovers the straight
transport as (prediction - path source).

Since the raw history lives on an S-grid while the path needs L-grid
endpoints, the path source is the model's own history embedding, trained
jointly through the flow loss.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import numerics as nm
from .data import WindowPair, stack_pairs
from .errors import NumericalError, UsageError
from .numerics import AdamState, adam_step, init_adam


@dataclass(frozen=True)
class FlowConfig:
    sigma_path: float = 0.0
    n_steps: int = 4
    reparameterized: bool = True
    integrator: str = "euler"        # euler | midpoint
    velocity_mode: str = "source"    # source: f_hat - g0 | bridge: (f_hat - g_t)/(1-t)

    def __post_init__(self):
        if self.sigma_path < 0:
            raise UsageError("FlowConfig: sigma_path must be >= 0")
        if self.n_steps < 1:
            raise UsageError("FlowConfig: n_steps must be >= 1")
        if self.integrator not in ("euler", "midpoint"):
            raise UsageError(f"FlowConfig: unknown integrator {self.integrator!r}")
        if self.velocity_mode not in ("source", "bridge"):
            raise UsageError(f"FlowConfig: unknown velocity_mode {self.velocity_mode!r}")


@dataclass
class PathPoint:
    t: float
    g: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise UsageError(f"PathPoint: t={self.t} outside [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    val_n_steps: int = 1     # cheap one-step prediction for early stopping
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.lr <= 0:
            raise UsageError("TrainConfig: lr must be > 0")
        if self.batch_size < 1:
            raise UsageError("TrainConfig: batch_size must be >= 1")
        if self.patience < 1:
            raise UsageError("TrainConfig: patience must be >= 1")


@dataclass
class Assembly:
    """A trainable velocity-field model: parameter dict plus evaluation hooks.

    ``forward_fn(params, H, G, t)`` evaluates the model; ``embed_fn(params, H)``
    produces its L x C history representation (the path source). ``direct``
    marks the no-flow-matching variant, trained and scored as a plain map.
    """

    name: str
    kind: str
    hyper: Any
    params: dict[str, np.ndarray]
    seed: int
    forward_fn: Callable = None
    embed_fn: Callable = None
    direct: bool = False

    def forward(self, params, H, G, t):
        return self.forward_fn(params, H, G, t)

    def embed(self, params, H):
        return self.embed_fn(params, H)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_mse: float
    seconds: float


# -- path and velocity ---------------------------------------------------------

def sample_path_point(h_emb: np.ndarray, f: np.ndarray, t: float,
                      sigma_path: float = 0.0,
                      rng: np.random.Generator | None = None) -> PathPoint:
    """Draw g_t on the conditional path; endpoints are exact when sigma_path=0."""
    if h_emb.shape != f.shape:
        raise UsageError(f"sample_path_point: shapes {h_emb.shape} vs {f.shape}")
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"sample_path_point: t={t} outside [0, 1]")
    if sigma_path == 0.0 and t == 0.0:
        return PathPoint(t, h_emb.copy())
    if sigma_path == 0.0 and t == 1.0:
        return PathPoint(t, f.copy())
    g = t * f + (1.0 - t) * h_emb
    if sigma_path > 0.0:
        if rng is None:
            raise UsageError("sample_path_point: rng required when sigma_path > 0")
        g = g + (sigma_path * t * (1.0 - t)) * rng.standard_normal(f.shape)
    return PathPoint(t, g)


def conditional_velocity(f, h_emb):
    """Straight-path limit velocity: f - h (time-independent)."""
    if f.shape != h_emb.shape:
        raise UsageError(f"conditional_velocity: shapes {f.shape} vs {h_emb.shape}")
    return f - h_emb


# -- training --------------------------------------------------------------------

def _as_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple):
        return batch
    if isinstance(batch, list) and batch and isinstance(batch[0], WindowPair):
        return stack_pairs(batch)
    raise UsageError("training_step: batch must be (H, F) arrays or a WindowPair list")


def training_step(batch, assembly: Assembly, params: dict[str, np.ndarray],
                  flow_cfg: FlowConfig, rng: np.random.Generator,
                  t_override: float | None = None):
    """One flow-matching regression step over a batch.

    Draws t ~ U[0,1] per pair, builds g_t from the model's history embedding,
    evaluates the model at (H, g_t, t), and regresses on the future block
    (reparameterized target). Returns (loss, gradient record).
    """
    H, F = _as_batch(batch)
    if H.shape[0] == 0:
        raise UsageError("training_step: empty batch")
    B = H.shape[0]
    leaves = {k: nm.Tensor(v, requires_grad=True) for k, v in params.items()}
    h_emb = assembly.embed(leaves, H)

    if assembly.direct:
        t = np.zeros(B)
        g = h_emb
    else:
        if t_override is not None:
            t = np.full(B, float(t_override))
        else:
            t = rng.uniform(0.0, 1.0, size=B)
        t3 = t[:, None, None]
        g = t3 * F + (1.0 - t3) * h_emb
        if flow_cfg.sigma_path > 0.0:
            sig = flow_cfg.sigma_path * t3 * (1.0 - t3)
            g = g + sig * rng.standard_normal(F.shape)

    if flow_cfg.reparameterized:
        target = F
    else:
        target = F - nm.value_of(h_emb)   # conditional velocity, condition detached

    out = assembly.forward(leaves, H, g, t)
    diff = out - target
    loss = nm.mean(diff * diff)
    loss_val = float(nm.value_of(loss))
    if not np.isfinite(loss_val):
        raise NumericalError(
            f"training_step: non-finite loss; t in [{t.min():.4f}, {t.max():.4f}], "
            f"|H| max {np.abs(H).max():.3e}, |F| max {np.abs(F).max():.3e}, "
            f"|g| max {np.abs(nm.value_of(g)).max():.3e}")
    grads = nm.backward(loss, leaves)
    return loss_val, grads


def train_loop(train_pairs, val_pairs, assembly: Assembly,
               train_cfg: TrainConfig, flow_cfg: FlowConfig,
               log: Callable[[str], None] | None = None):
    """Adam over shuffled batches with early stopping on validation MSE.

    Returns (best-validation parameters, per-epoch history).
    """
    H_tr, F_tr = _as_batch(train_pairs) if not isinstance(train_pairs, tuple) else train_pairs
    H_val, F_val = _as_batch(val_pairs) if not isinstance(val_pairs, tuple) else val_pairs
    if H_tr.shape[0] == 0 or H_val.shape[0] == 0:
        raise UsageError("train_loop: empty split")

    rng = np.random.default_rng(train_cfg.seed)
    params = dict(assembly.params)
    state: AdamState = init_adam(params)
    val_cfg = replace(flow_cfg, n_steps=train_cfg.val_n_steps)

    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    waited = 0
    history: list[EpochStats] = []
    N = H_tr.shape[0]

    for epoch in range(1, train_cfg.max_epochs + 1):
        tic = time.perf_counter()
        perm = rng.permutation(N)
        losses = []
        for lo in range(0, N, train_cfg.batch_size):
            idx = perm[lo:lo + train_cfg.batch_size]
            loss, grads = training_step((H_tr[idx], F_tr[idx]), assembly, params,
                                        flow_cfg, rng)
            if loss > train_cfg.divergence_limit:
                raise NumericalError(f"train_loop: divergence at epoch {epoch} "
                                     f"(loss {loss:.3e} > {train_cfg.divergence_limit:.1e})")
            params, state = adam_step(params, grads, state, lr=train_cfg.lr,
                                      beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                                      eps=train_cfg.adam_eps)
            losses.append(loss)
        preds = predict(assembly, params, H_val, val_cfg)
        val_mse = float(np.mean((preds - F_val) ** 2))
        stats = EpochStats(epoch=epoch, train_loss=float(np.mean(losses)),
                           val_mse=val_mse, seconds=time.perf_counter() - tic)
        history.append(stats)
        if log:
            log(f"epoch {epoch:3d}  train {stats.train_loss:.6f}  "
                f"val {val_mse:.6f}  {stats.seconds:.1f}s")
        if val_mse < best_val:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in params.items()}
            waited = 0
        else:
            waited += 1
            if waited >= train_cfg.patience:
                break
    return best_params, history


def save_train_log(history: list[EpochStats], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_mse", "wall_time_s"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_mse),
                             f"{row.seconds:.3f}"])
    return path


# -- inference ---------------------------------------------------------------------

def _velocity(assembly, params, H, g, t_scalar, g0, cfg: FlowConfig, B: int):
    t = np.full(B, t_scalar)
    f_hat = assembly.forward(params, H, g, t)
    if not cfg.reparameterized:
        return f_hat
    if cfg.velocity_mode == "source":
        return f_hat - g0
    return (f_hat - g) / (1.0 - t_scalar)


def integrate(H: np.ndarray, assembly: Assembly, flow_cfg: FlowConfig,
              params: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Transport the history embedding to t=1 by solving the flow ODE.

    Starts at g_0 = the model's history embedding, steps with the configured
    integrator at t_j = j/n, and returns g_1. With n_steps=1 (Euler) this is
    exactly one forward evaluation at t=0.
    """
    params = assembly.params if params is None else params
    single = H.ndim == 2
    Hb = H[None] if single else H
    B = Hb.shape[0]
    n = flow_cfg.n_steps
    g0 = assembly.embed(params, Hb)
    if assembly.direct or (n == 1 and flow_cfg.reparameterized
                           and flow_cfg.integrator == "euler"):
        # one Euler step of the reparameterized velocity lands exactly on the
        # predicted endpoint; evaluate it directly so the identity is bit-level
        out = assembly.forward(params, Hb, g0, np.zeros(B))
        return out[0] if single else out
    g = g0
    h = 1.0 / n
    for j in range(n):
        tj = j / n
        v = _velocity(assembly, params, Hb, g, tj, g0, flow_cfg, B)
        if flow_cfg.integrator == "midpoint":
            gm = g + 0.5 * h * v
            v = _velocity(assembly, params, Hb, gm, tj + 0.5 * h, g0, flow_cfg, B)
        g = g + h * v
        if not np.isfinite(g).all():
            raise NumericalError(f"integrate: non-finite state at step {j} (t={tj:.3f})")
    return g[0] if single else g


def predict(assembly: Assembly, params: dict[str, np.ndarray], H: np.ndarray,
            flow_cfg: FlowConfig, batch_size: int = 512) -> np.ndarray:
    """Batched integration over many windows."""
    outs = []
    for lo in range(0, H.shape[0], batch_size):
        outs.append(integrate(H[lo:lo + batch_size], assembly, flow_cfg, params))
    return np.concatenate(outs, axis=0)


def estimate_flow_loss(pairs, assembly: Assembly, params: dict[str, np.ndarray],
                       flow_cfg: FlowConfig, rng: np.random.Generator,
                       n_draws: int = 8) -> tuple[float, float]:
    """Monte-Carlo estimate of the flow-matching loss and its standard error
    across independent t draws."""
    H, F = _as_batch(pairs) if not isinstance(pairs, tuple) else pairs
    B = H.shape[0]
    vals = []
    for _ in range(n_draws):
        t = rng.uniform(0.0, 1.0, size=B)
        t3 = t[:, None, None]
        h_emb = assembly.embed(params, H)
        g = t3 * F + (1.0 - t3) * h_emb
        if flow_cfg.sigma_path > 0.0:
            g = g + (flow_cfg.sigma_path * t3 * (1.0 - t3)) * rng.standard_normal(F.shape)
        out = assembly.forward(params, H, g, t)
        target = F if flow_cfg.reparameterized else F - h_emb
        vals.append(float(np.mean((out - target) ** 2)))
    vals = np.asarray(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_draws))
