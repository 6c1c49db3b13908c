"""The marginal velocity-field model: a spectral neural operator mapping
(history block, path state, flow time) to a future block.

Pipeline per forward call: instance-normalize the history, split it into
trend/season via top-K DFT amplitude filtering, lift each component through a
channel-shared MLP to the horizon grid, concatenate with the (normalized)
path state and a constant time channel, expand features, apply a learnable
complex kernel in the frequency domain, project back to channels per time
step, sum the branches, and invert the normalization.

All operations run on plain arrays for inference and on autodiff Tensors for
training; single windows (S x C) and batches (B x S x C) are both accepted.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .errors import DataError, UsageError

CHECKPOINT_MAGIC = b"NTSF"
CHECKPOINT_VERSION = 1


@dataclass
class NormStats:
    """Per-channel history mean and (floored) std, for inverting Eq.-style
    instance normalization."""

    mu: np.ndarray     # (C,) or batched (B, 1, C)
    sigma: np.ndarray


@dataclass(frozen=True)
class OperatorHyper:
    history_len: int          # S
    horizon: int              # L
    channels: int             # C
    k: int = 16               # feature expansion width
    topk: int = 5             # retained DFT amplitude bins
    m_max: int = 32           # spectral truncation cap
    hidden: int = 128         # history MLP width
    eps_norm: float = 1e-5
    decompose: bool = True    # trend/season split (off for the ablation)
    normalize: bool = True    # instance normalization (off for the ablation)

    def __post_init__(self):
        if min(self.history_len, self.horizon, self.channels, self.k,
               self.hidden, self.m_max) < 1:
            raise UsageError("OperatorHyper: all dimensions must be >= 1")
        if not 1 <= self.topk <= self.history_len // 2 + 1:
            raise UsageError(f"OperatorHyper: topk must be in "
                             f"[1, {self.history_len // 2 + 1}], got {self.topk}")

    @property
    def modes(self) -> int:
        return min(self.m_max, self.horizon // 2 + 1)

    @property
    def branches(self) -> tuple[str, ...]:
        return ("trend", "season") if self.decompose else ("main",)

    @property
    def feat(self) -> int:
        return 2 * self.channels + 1


def init_params(seed: int, hyper: OperatorHyper) -> dict[str, np.ndarray]:
    """Deterministic fan-in-scaled init; complex kernels uniform, scaled 1/k."""
    rng = np.random.default_rng(seed)
    S, L, k, hid = hyper.history_len, hyper.horizon, hyper.k, hyper.hidden
    params: dict[str, np.ndarray] = {}

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params["expand"] = rng.uniform(-1.0, 1.0, size=(1, k))
    for b in hyper.branches:
        params[f"mlp_w1_{b}"] = uniform((S, hid), S)
        params[f"mlp_b1_{b}"] = np.zeros(hid)
        params[f"mlp_w2_{b}"] = uniform((hid, L), hid)
        params[f"mlp_b2_{b}"] = np.zeros(L)
        kern = rng.uniform(-1.0, 1.0, size=(k, k, hyper.modes)) \
            + 1j * rng.uniform(-1.0, 1.0, size=(k, k, hyper.modes))
        params[f"kernel_{b}"] = kern / k
        params[f"proj_w_{b}"] = uniform((hyper.feat * k, hyper.channels), hyper.feat * k)
        params[f"proj_b_{b}"] = np.zeros(hyper.channels)
    return params


def parameter_count(params: dict[str, np.ndarray]) -> int:
    """Real degrees of freedom (complex entries count twice)."""
    return sum(p.size * (2 if p.dtype.kind == "c" else 1) for p in params.values())


# -- stage operations ---------------------------------------------------------

def _normalize_rows(Hb: np.ndarray, eps_norm: float):
    mu = Hb.mean(axis=1, keepdims=True)
    raw = Hb.std(axis=1, keepdims=True)
    sigma = np.maximum(raw, eps_norm)
    Hn = (Hb - mu) / sigma
    dead = raw < eps_norm
    if dead.any():
        # degenerate (constant) channels normalize to exactly zero
        Hn = np.where(dead, 0.0, Hn)
    return Hn, mu, sigma


def instance_normalize(H: np.ndarray, eps_norm: float = 1e-5):
    """Per-channel standardization of a history window (population std,
    floored by eps_norm; constant channels map to zeros)."""
    H = np.asarray(H, dtype=np.float64)
    single = H.ndim == 2
    Hb = H[None] if single else H
    Hn, mu, sigma = _normalize_rows(Hb, eps_norm)
    if single:
        return Hn[0], NormStats(mu=mu[0, 0], sigma=sigma[0, 0])
    return Hn, NormStats(mu=mu, sigma=sigma)


def denormalize(Y_norm, stats: NormStats):
    """Invert instance normalization channel-wise: Y = Y_norm * sigma + mu."""
    shape = Y_norm.shape
    if shape[-1] != np.asarray(stats.mu).shape[-1]:
        raise UsageError(f"denormalize: channel mismatch {shape[-1]} vs "
                         f"{np.asarray(stats.mu).shape[-1]}")
    return Y_norm * stats.sigma + stats.mu


def topk_bins(H_norm: np.ndarray, K: int) -> np.ndarray:
    """Boolean mask over one-sided DFT bins of the K largest amplitudes per
    channel; ties break toward the lower frequency, DC participates."""
    Hb = H_norm[None] if H_norm.ndim == 2 else H_norm
    S = Hb.shape[1]
    if not 1 <= K <= S // 2 + 1:
        raise UsageError(f"topk_bins: K must be in [1, {S // 2 + 1}], got {K}")
    amp = np.abs(np.fft.rfft(Hb, axis=1))
    order = np.argsort(-amp, axis=1, kind="stable")[:, :K, :]
    mask = np.zeros(amp.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask[0] if H_norm.ndim == 2 else mask


def spectral_decompose(H_norm: np.ndarray, K: int):
    """Split into (trend, season): season keeps the K largest-amplitude DFT
    bins per channel; trend is the exact remainder."""
    Hb = H_norm[None] if H_norm.ndim == 2 else np.asarray(H_norm)
    S = Hb.shape[1]
    mask = topk_bins(Hb, K)
    Z = np.fft.rfft(Hb, axis=1)
    season = np.fft.irfft(Z * mask, n=S, axis=1)
    trend = Hb - season
    if H_norm.ndim == 2:
        return trend[0], season[0]
    return trend, season


def embed_history(H_branch, w1, b1, w2, b2):
    """Channel-shared two-layer MLP over the time axis: S -> hidden -> L."""
    single = H_branch.ndim == 2
    h = H_branch[None] if single else H_branch
    x = nm.moveaxis(h, 1, 2)                      # (B, C, S)
    a = nm.gelu(nm.matmul(x, w1) + b1)            # (B, C, hidden)
    y = nm.matmul(a, w2) + b2                     # (B, C, L)
    out = nm.moveaxis(y, 1, 2)                    # (B, L, C)
    return out[0] if single else out


def assemble_input(G_t, H_emb, t):
    """Concatenate [path state; history embedding; constant time channel]."""
    single = G_t.ndim == 2
    g = G_t[None] if single else G_t
    h = H_emb[None] if single else H_emb
    if g.shape != h.shape:
        raise UsageError(f"assemble_input: G_t {g.shape} vs H_emb {h.shape}")
    B, L, _ = g.shape
    tv = np.asarray(t, dtype=np.float64).reshape(-1)
    if tv.size == 1:
        tv = np.full(B, tv[0])
    if np.any(tv < 0.0) or np.any(tv > 1.0):
        raise UsageError(f"assemble_input: t must lie in [0, 1]")
    t_chan = np.broadcast_to(tv[:, None, None], (B, L, 1))
    z0 = nm.concatenate([g, h, t_chan], axis=2)
    return z0[0] if single else z0


def dimension_expand(z0, w_e):
    """Outer-product lift along a new trailing feature axis: z1[..., j] = z0 * W_e[0, j]."""
    if nm.value_of(w_e).shape[0] != 1:
        raise UsageError("dimension_expand: W_e must have shape (1, k)")
    single = z0.ndim == 2
    z = z0[None] if single else z0
    z1 = nm.reshape(z, (*z.shape, 1)) * nm.reshape(w_e, (1, 1, 1, -1))
    return z1[0] if single else z1


def spectral_layer(z1, kernel, m_max: int):
    """Frequency-domain kernel application along the time axis.

    rfft over time, truncate to M = min(m_max, L/2+1) modes, contract with the
    complex kernel per mode, zero-pad, and transform back.
    """
    kv = nm.value_of(kernel)
    single = z1.ndim == 3
    z = z1[None] if single else z1
    B, L, c, k = z.shape
    nbins = L // 2 + 1
    M = min(m_max, nbins)
    if kv.shape != (k, k, M):
        raise UsageError(f"spectral_layer: kernel shape {kv.shape}, "
                         f"expected {(k, k, M)}")
    x = nm.moveaxis(z, 1, 3)                       # (B, c, k, L)
    xf = nm.rfft(x, axis=-1)
    xm = xf[..., :M]
    ym = nm.complex_contract(xm, kernel)           # (B, c, k_out, M)
    if M < nbins:
        pad = np.zeros((B, c, k, nbins - M), dtype=np.complex128)
        ym = nm.concatenate([ym, pad], axis=-1)
    y = nm.irfft(ym, n=L, axis=-1)
    out = nm.moveaxis(y, 3, 1)                     # back to (B, L, c, k)
    return out[0] if single else out


def project(Y_R, w, b):
    """Per-time-step affine map from the flattened (feat * k) features to C."""
    wv = nm.value_of(w)
    single = Y_R.ndim == 3
    y = Y_R[None] if single else Y_R
    B, L, c, k = y.shape
    if wv.shape[0] != c * k:
        raise UsageError(f"project: weight rows {wv.shape[0]} != features {c * k}")
    flat = nm.reshape(y, (B, L, c * k))
    out = nm.matmul(flat, w) + b
    return out[0] if single else out


# -- the full operator ---------------------------------------------------------

def _batch_stats(Hb: np.ndarray, hyper: OperatorHyper):
    if hyper.normalize:
        Hn, mu, sigma = _normalize_rows(Hb, hyper.eps_norm)
        return mu, sigma
    mu = np.zeros((Hb.shape[0], 1, Hb.shape[2]))
    sigma = np.ones((Hb.shape[0], 1, Hb.shape[2]))
    return mu, sigma


def _components(Hn: np.ndarray, hyper: OperatorHyper):
    if hyper.decompose:
        trend, season = spectral_decompose(Hn, hyper.topk)
        return {"trend": trend, "season": season}
    return {"main": Hn}


def _effective_kernel(params, hyper: OperatorHyper, name: str):
    """Fold expansion, spectral kernel, and projection into one per-mode map.

    The feature lift is the outer product z1[l,c,i] = z0[l,c] * W_e[0,i], and
    the final projection is real-linear, so the lift-contract-project chain
    equals a single complex kernel Q[c, out, m] applied to the z0 spectrum:
    Q[c,o,m] = sum_j (sum_i W_e[0,i] W[i,j,m]) * P[c*k+j, o].
    """
    k, c, C, M = hyper.k, hyper.feat, hyper.channels, hyper.modes
    w_e = nm.reshape(params["expand"], (k, 1, 1))
    weff = nm.tsum(w_e * params[f"kernel_{name}"], axis=0)          # (k, M)
    p3 = nm.reshape(params[f"proj_w_{name}"], (c, k, C))
    q = nm.tsum(nm.reshape(weff, (1, k, 1, M)) * nm.reshape(p3, (c, k, C, 1)),
                axis=1)
    return q                                                        # (c, C, M)


def _branch_output(params, hyper: OperatorHyper, name: str, comp, Gn, t):
    """One trend/season branch of the fused forward pass."""
    he = embed_history(comp, params[f"mlp_w1_{name}"], params[f"mlp_b1_{name}"],
                       params[f"mlp_w2_{name}"], params[f"mlp_b2_{name}"])
    z0 = assemble_input(Gn, he, t)                  # (B, L, feat)
    x0 = nm.moveaxis(z0, 1, 2)                      # (B, feat, L)
    xf = nm.rfft(x0, axis=-1)
    L, M = hyper.horizon, hyper.modes
    nbins = L // 2 + 1
    B, c = x0.shape[0], hyper.feat
    xm = xf[..., :M]
    q = _effective_kernel(params, hyper, name)
    yf = nm.complex_contract(nm.reshape(xm, (B, 1, c, M)), q)       # (B, 1, C, M)
    yf = nm.reshape(yf, (B, hyper.channels, M))
    if M < nbins:
        pad = np.zeros((B, hyper.channels, nbins - M), dtype=np.complex128)
        yf = nm.concatenate([yf, pad], axis=-1)
    y = nm.irfft(yf, n=L, axis=-1)                  # (B, C, L)
    return nm.moveaxis(y, 1, 2) + params[f"proj_b_{name}"]


def forward(params, hyper: OperatorHyper, H, G_t, t):
    """Evaluate the velocity-field model; output predicts the future block.

    Equivalent to composing instance_normalize, spectral_decompose,
    embed_history, assemble_input, dimension_expand, spectral_layer, project,
    and denormalize; the spectral stack runs in its folded form (see
    :func:`_effective_kernel`) for speed.
    """
    single = np.asarray(nm.value_of(H)).ndim == 2
    Hb = np.asarray(nm.value_of(H), dtype=np.float64)
    Hb = Hb[None] if single else Hb
    G = G_t[None] if (single and G_t.ndim == 2) else G_t
    if Hb.shape[1] != hyper.history_len or Hb.shape[2] != hyper.channels:
        raise UsageError(f"forward/normalize: H shape {Hb.shape[1:]}, expected "
                         f"{(hyper.history_len, hyper.channels)}")
    if G.shape[-2:] != (hyper.horizon, hyper.channels):
        raise UsageError(f"forward/assemble: G_t shape {G.shape[-2:]}, expected "
                         f"{(hyper.horizon, hyper.channels)}")
    if hyper.normalize:
        Hn, mu, sigma = _normalize_rows(Hb, hyper.eps_norm)
    else:
        mu, sigma = _batch_stats(Hb, hyper)
        Hn = Hb
    Gn = (G - mu) / sigma
    y = None
    for name, comp in _components(Hn, hyper).items():
        yb = _branch_output(params, hyper, name, comp, Gn, t)
        y = yb if y is None else y + yb
    out = y * sigma + mu
    return out[0] if single else out


def history_embedding(params, hyper: OperatorHyper, H):
    """The model's own L x C history representation (path source): summed
    branch embeddings of the normalized history, then denormalized."""
    single = np.asarray(nm.value_of(H)).ndim == 2
    Hb = np.asarray(nm.value_of(H), dtype=np.float64)
    Hb = Hb[None] if single else Hb
    if hyper.normalize:
        Hn, mu, sigma = _normalize_rows(Hb, hyper.eps_norm)
    else:
        mu, sigma = _batch_stats(Hb, hyper)
        Hn = Hb
    he = None
    for name, comp in _components(Hn, hyper).items():
        e = embed_history(comp, params[f"mlp_w1_{name}"], params[f"mlp_b1_{name}"],
                          params[f"mlp_w2_{name}"], params[f"mlp_b2_{name}"])
        he = e if he is None else he + e
    out = he * sigma + mu
    return out[0] if single else out


# -- checkpoint container --------------------------------------------------------

@dataclass
class Checkpoint:
    kind: str                      # "operator" | "dlinear"
    hyper: dict
    params: dict[str, np.ndarray]
    seed: int
    meta: dict

    def operator_hyper(self) -> OperatorHyper:
        if self.kind != "operator":
            raise UsageError(f"checkpoint holds a {self.kind!r} model")
        return OperatorHyper(**self.hyper)


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], hyper,
                    seed: int, kind: str = "operator", meta: dict | None = None) -> Path:
    """Byte-stable versioned container: magic, header JSON, raw tensor bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(params)
    tensors = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name])
        if arr.dtype == np.float64:
            dtype = "float64"
        elif arr.dtype == np.complex128:
            dtype = "complex128"
        else:
            raise UsageError(f"save_checkpoint: unsupported dtype {arr.dtype} for {name!r}")
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(arr.astype("<" + ("c16" if dtype == "complex128" else "f8")).tobytes())
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "hyper": asdict(hyper) if not isinstance(hyper, dict) else hyper,
        "seed": int(seed),
        "meta": meta or {},
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint64(len(head)).tobytes())
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"load_checkpoint: no such file: {path}")
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"load_checkpoint: {path} is not a checkpoint file")
    version = int(np.frombuffer(raw[4:8], dtype=np.uint32)[0])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"load_checkpoint: unsupported version {version}")
    hlen = int(np.frombuffer(raw[8:16], dtype=np.uint64)[0])
    header = json.loads(raw[16:16 + hlen].decode())
    offset = 16 + hlen
    params: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        dt = np.dtype("<c16" if spec["dtype"] == "complex128" else "<f8")
        nbytes = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        buf = raw[offset:offset + nbytes]
        if len(buf) != nbytes:
            raise DataError(f"load_checkpoint: truncated tensor {spec['name']!r}")
        params[spec["name"]] = np.frombuffer(buf, dtype=dt).reshape(shape).astype(
            np.complex128 if spec["dtype"] == "complex128" else np.float64)
        offset += nbytes
    return Checkpoint(kind=header["kind"], hyper=header["hyper"], params=params,
                      seed=header["seed"], meta=header["meta"])
