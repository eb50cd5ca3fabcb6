"""Graph-attention regression with hand-written reverse-mode gradients.

Three attention layers (4 -> 16 -> 16 -> 16), four heads each.  Per head,
a node's neighbors (plus itself) are scored with LeakyReLU attention
logits, softmax-normalized, and the attended sum goes through tanh; head
outputs are averaged.  A mean/max/sum readout concatenates to a 48-vector
fed to a linear head.  Targets are standardized over the training split.

Everything runs batched over padded graphs; gradients are derived by hand
and checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .architectures import FeatureGraph

LEAKY_SLOPE = 0.2
N_HEADS = 4
HIDDEN = 16
N_LAYERS = 3
IN_DIM = 4
READOUT_DIM = 3 * HIDDEN

_NEG_BIG = -1e30


class ModelError(ValueError):
    pass


@dataclass
class GatLayerParams:
    W: np.ndarray   # (K, in_dim, out_dim)
    a: np.ndarray   # (K, 2*out_dim), [source half | target half]


@dataclass
class GatModel:
    layers: list[GatLayerParams]
    head_w: np.ndarray              # (48,)
    head_b: float
    target_mean: float
    target_std: float
    train_scenarios: tuple[int, ...] = ()

    def check_finite(self):
        for name, arr in named_params(self):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"non-finite parameter tensor {name}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    batch_size: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    train_fraction: float = 0.30

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ModelError("train_fraction must lie in (0, 1)")
        if min(self.epochs, self.batch_size) < 1 or self.learning_rate < 0:
            raise ModelError("invalid training configuration")


@dataclass
class TrainHistory:
    """Mean losses per 100-epoch bucket (normalized target units)."""

    bucket_start: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)

    def to_csv(self, path: str):
        with open(path, "w") as fh:
            fh.write("bucket_start_epoch,train_mse,test_mse\n")
            for b, tr, te in zip(self.bucket_start, self.train_mse, self.test_mse):
                fh.write(f"{b},{tr!r},{te!r}\n")


def named_params(model: GatModel):
    for i, layer in enumerate(model.layers):
        yield f"layer{i}.W", layer.W
        yield f"layer{i}.a", layer.a
    yield "head_w", model.head_w


def init_model(seed: int) -> GatModel:
    """Glorot-uniform initialization, seeded."""
    rng = np.random.default_rng(seed)

    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    layers = []
    in_dim = IN_DIM
    for _ in range(N_LAYERS):
        W = glorot((N_HEADS, in_dim, HIDDEN), in_dim, HIDDEN)
        a = glorot((N_HEADS, 2 * HIDDEN), 2 * HIDDEN, 1)
        layers.append(GatLayerParams(W, a))
        in_dim = HIDDEN
    head_w = glorot((READOUT_DIM,), READOUT_DIM, 1)
    return GatModel(layers, head_w, 0.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# graph packing

def pack_graphs(fgs: Sequence[FeatureGraph], n_pad: Optional[int] = None):
    """Pad graphs to a common vertex count.

    Returns (X, A, mask): features (B, N, 4), adjacency without self-loops
    (B, N, N), and a vertex validity mask (B, N).
    """
    if not fgs:
        raise ModelError("empty graph batch")
    sizes = [fg.flat.n_vertices for fg in fgs]
    N = n_pad or max(sizes)
    if max(sizes) > N:
        raise ModelError(f"graph with {max(sizes)} vertices exceeds pad {N}")
    B = len(fgs)
    X = np.zeros((B, N, IN_DIM))
    A = np.zeros((B, N, N))
    mask = np.zeros((B, N))
    for b, fg in enumerate(fgs):
        k = fg.flat.n_vertices
        if fg.features.shape[1] != IN_DIM:
            raise ModelError("feature graphs must have 4 feature columns")
        X[b, :k] = fg.features
        A[b, :k, :k] = fg.flat.adjacency
        mask[b, :k] = 1.0
    return X, A, mask


# ---------------------------------------------------------------------------
# forward / backward

def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _dleaky(x):
    # subgradient at exactly 0 uses the negative-side slope
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


def _layer_forward(X, att_mask, mask, layer: GatLayerParams):
    """One multi-head attention layer; returns output and a backward cache."""
    K = layer.W.shape[0]
    F = layer.W.shape[2]
    B, N, _ = X.shape
    Hs, caches = [], []
    for k in range(K):
        Z = X @ layer.W[k]                      # (B, N, F)
        a_src = layer.a[k, :F]
        a_dst = layer.a[k, F:]
        el = Z @ a_src                          # score of the attending node
        er = Z @ a_dst                          # score of the attended node
        pre = el[:, :, None] + er[:, None, :]   # (B, N, N)
        e = _leaky(pre)
        e_masked = np.where(att_mask > 0, e, _NEG_BIG)
        m = e_masked.max(axis=2, keepdims=True)
        ex = np.exp(e_masked - m) * att_mask
        denom = ex.sum(axis=2, keepdims=True)
        denom = np.where(denom > 0, denom, 1.0)
        alpha = ex / denom                      # rows sum to 1 on valid nodes
        S = alpha @ Z
        Hk = np.tanh(S)
        Hs.append(Hk)
        caches.append((Z, pre, alpha, Hk))
    out = (sum(Hs) / K) * mask[:, :, None]
    return out, (X, caches)


def _layer_backward(dout, att_mask, mask, layer: GatLayerParams, cache):
    X, caches = cache
    K = layer.W.shape[0]
    F = layer.W.shape[2]
    dX = np.zeros_like(X)
    dW = np.zeros_like(layer.W)
    da = np.zeros_like(layer.a)
    dout = dout * mask[:, :, None] / K
    for k in range(K):
        Z, pre, alpha, Hk = caches[k]
        dS = dout * (1.0 - Hk * Hk)
        dalpha = dS @ Z.transpose(0, 2, 1)
        dZ = alpha.transpose(0, 2, 1) @ dS
        inner = (alpha * dalpha).sum(axis=2, keepdims=True)
        dlogits = alpha * (dalpha - inner)
        dpre = dlogits * _dleaky(pre)
        d_el = dpre.sum(axis=2)
        d_er = dpre.sum(axis=1)
        a_src = layer.a[k, :F]
        a_dst = layer.a[k, F:]
        da[k, :F] = np.einsum("bn,bnf->f", d_el, Z)
        da[k, F:] = np.einsum("bn,bnf->f", d_er, Z)
        dZ = dZ + d_el[:, :, None] * a_src + d_er[:, :, None] * a_dst
        dW[k] = np.einsum("bni,bnf->if", X, dZ)
        dX += dZ @ layer.W[k].T
    return dX, dW, da


def _readout_forward(H, mask):
    n_valid = mask.sum(axis=1)                  # (B,)
    mean = (H * mask[:, :, None]).sum(axis=1) / n_valid[:, None]
    H_for_max = np.where(mask[:, :, None] > 0, H, _NEG_BIG)
    argmax = H_for_max.argmax(axis=1)           # (B, F)
    mx = np.take_along_axis(H_for_max, argmax[:, None, :], axis=1)[:, 0, :]
    total = (H * mask[:, :, None]).sum(axis=1)
    R = np.concatenate([mean, mx, total], axis=1)
    return R, (argmax, n_valid)


def _readout_backward(dR, mask, cache, n_nodes):
    argmax, n_valid = cache
    B, F3 = dR.shape
    F = F3 // 3
    dmean, dmax, dsum = dR[:, :F], dR[:, F:2 * F], dR[:, 2 * F:]
    dH = (dmean[:, None, :] / n_valid[:, None, None]) * mask[:, :, None]
    dH += dsum[:, None, :] * mask[:, :, None]
    scatter = np.zeros_like(dH)
    np.put_along_axis(scatter, argmax[:, None, :], dmax[:, None, :], axis=1)
    return dH + scatter


def forward(model: GatModel, X, A, mask, want_cache: bool = False):
    """Normalized predictions for a packed batch; optionally keep the tape."""
    B, N, _ = X.shape
    eye = np.eye(N)[None, :, :]
    att_mask = A + eye * mask[:, :, None] * mask[:, None, :]
    att_mask = att_mask * mask[:, :, None] * mask[:, None, :]
    caches = []
    H = X
    for layer in model.layers:
        H, cache = _layer_forward(H, att_mask, mask, layer)
        caches.append(cache)
    R, rcache = _readout_forward(H, mask)
    pred = R @ model.head_w + model.head_b
    if not want_cache:
        return pred, R
    return pred, R, (att_mask, caches, rcache)


def backward(model: GatModel, dpred, R, tape, mask):
    """Gradients of a scalar loss given d(loss)/d(pred)."""
    att_mask, caches, rcache = tape
    grads = {"head_w": R.T @ dpred, "head_b": float(dpred.sum())}
    dR = dpred[:, None] * model.head_w[None, :]
    dH = _readout_backward(dR, mask, rcache, mask.shape[1])
    for i in reversed(range(len(model.layers))):
        dH, dW, da = _layer_backward(dH, att_mask, mask, model.layers[i], caches[i])
        grads[f"layer{i}.W"] = dW
        grads[f"layer{i}.a"] = da
    return grads


def predict(model: GatModel, fg: FeatureGraph) -> float:
    """Endurance estimate in seconds for one graph."""
    return float(predict_many(model, [fg])[0])


def predict_many(model: GatModel, fgs: Sequence[FeatureGraph]) -> np.ndarray:
    model.check_finite()
    X, A, mask = pack_graphs(fgs)
    pred, _ = forward(model, X, A, mask)
    return pred * model.target_std + model.target_mean


def export_embeddings(model: GatModel, fgs: Sequence[FeatureGraph]) -> np.ndarray:
    """The 48-dim readout vector per graph (rows align with the input)."""
    X, A, mask = pack_graphs(fgs)
    _, R = forward(model, X, A, mask)
    return R


def loss_and_gradients(model: GatModel, batch) -> tuple[float, dict]:
    """Mean squared error (normalized units) and all parameter gradients.

    ``batch`` is a list of labeled instances carrying ``fg`` and
    ``label.J``.
    """
    if not batch:
        raise ModelError("empty batch")
    X, A, mask = pack_graphs([inst.fg for inst in batch])
    y = np.array([inst.label.J for inst in batch])
    y_norm = (y - model.target_mean) / model.target_std
    pred, R, tape = forward(model, X, A, mask, want_cache=True)
    resid = pred - y_norm
    loss = float(np.mean(resid ** 2))
    dpred = 2.0 * resid / len(batch)
    grads = backward(model, dpred, R, tape, mask)
    return loss, grads


# ---------------------------------------------------------------------------
# training

class _Adam:
    def __init__(self, names_shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros(s) for n, s in names_shapes}
        self.v = {n: np.zeros(s) for n, s in names_shapes}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * np.square(g)
            params[name] -= self.lr * (self.m[name] / c1) / (
                np.sqrt(self.v[name] / c2) + self.eps
            )


def _param_dict(model: GatModel) -> dict:
    d = {name: arr for name, arr in named_params(model)}
    d["head_b"] = model.head_b
    return d


def _apply_param_dict(model: GatModel, d: dict):
    for i, layer in enumerate(model.layers):
        layer.W = d[f"layer{i}.W"]
        layer.a = d[f"layer{i}.a"]
    model.head_w = d["head_w"]
    model.head_b = float(d["head_b"])


def split_by_scenario(scenario_ids, cfg: TrainConfig):
    """Seeded scenario-level split: every instance of a scenario lands on
    one side, so test scenarios are entirely unseen."""
    unique = sorted(set(int(s) for s in scenario_ids))
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(unique))
    n_train = max(1, int(round(cfg.train_fraction * len(unique))))
    if n_train >= len(unique):
        n_train = len(unique)
    train_ids = {unique[i] for i in order[:n_train]}
    return train_ids


def train(dataset, cfg: TrainConfig = TrainConfig()) -> tuple[GatModel, TrainHistory]:
    """Train on a scenario-level split of labeled instances.

    Returns the final-epoch model (with normalization statistics and the
    training scenario ids stored) plus the bucketed loss history.
    """
    if len(dataset) < cfg.batch_size:
        raise ModelError(
            f"dataset of {len(dataset)} instances is smaller than "
            f"batch size {cfg.batch_size}"
        )
    scenario_ids = [inst.scenario.scenario_id for inst in dataset]
    train_ids = split_by_scenario(scenario_ids, cfg)
    train_idx = [i for i, s in enumerate(scenario_ids) if s in train_ids]
    test_idx = [i for i, s in enumerate(scenario_ids) if s not in train_ids]

    X, A, mask = pack_graphs([inst.fg for inst in dataset])
    y = np.array([inst.label.J for inst in dataset])

    mean = float(y[train_idx].mean())
    std = float(y[train_idx].std())
    if std <= 0:
        std = 1.0
    y_norm = (y - mean) / std

    model = init_model(cfg.seed)
    model.target_mean = mean
    model.target_std = std
    model.train_scenarios = tuple(sorted(train_ids))

    params = _param_dict(model)
    opt = _Adam([(n, np.shape(p)) for n, p in params.items()], cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 1)

    Xte = X[test_idx] if test_idx else None
    history = TrainHistory()
    bucket_train, bucket_test = [], []

    train_idx = np.asarray(train_idx)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_idx))
        epoch_loss = 0.0
        n_seen = 0
        for start in range(0, len(order), cfg.batch_size):
            sel = train_idx[order[start:start + cfg.batch_size]]
            pred, R, tape = forward(model, X[sel], A[sel], mask[sel], want_cache=True)
            resid = pred - y_norm[sel]
            loss = float(np.mean(resid ** 2))
            grads = backward(model, 2.0 * resid / len(sel), R, tape, mask[sel])
            opt.step(params, grads)
            _apply_param_dict(model, params)
            epoch_loss += loss * len(sel)
            n_seen += len(sel)
        bucket_train.append(epoch_loss / max(n_seen, 1))

        # test loss is sampled every 10th epoch; the bucket averages samples
        if Xte is not None and (epoch % 10 == 9 or epoch + 1 == cfg.epochs):
            pred_te, _ = forward(model, Xte, A[test_idx], mask[test_idx])
            bucket_test.append(float(np.mean((pred_te - y_norm[test_idx]) ** 2)))

        if (epoch + 1) % 100 == 0 or epoch + 1 == cfg.epochs:
            history.bucket_start.append(epoch + 1 - len(bucket_train) + 1)
            history.train_mse.append(float(np.mean(bucket_train)))
            history.test_mse.append(
                float(np.mean(bucket_test)) if bucket_test else float("nan")
            )
            bucket_train, bucket_test = [], []

    return model, history


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(model: GatModel, path: str, train_config: Optional[dict] = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "n_layers": N_LAYERS,
        "n_heads": N_HEADS,
        "hidden": HIDDEN,
        "in_dim": IN_DIM,
        "layers": [
            {"W": layer.W.tolist(), "a": layer.a.tolist()}
            for layer in model.layers
        ],
        "head_w": model.head_w.tolist(),
        "head_b": model.head_b,
        "target_mean": model.target_mean,
        "target_std": model.target_std,
        "train_scenarios": list(model.train_scenarios),
        "train_config": train_config or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str) -> GatModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version in {path}")
    if (payload["n_layers"], payload["n_heads"], payload["hidden"],
            payload["in_dim"]) != (N_LAYERS, N_HEADS, HIDDEN, IN_DIM):
        raise ModelError(f"checkpoint dims in {path} do not match this model")
    layers = []
    in_dim = IN_DIM
    for entry in payload["layers"]:
        W = np.asarray(entry["W"])
        a = np.asarray(entry["a"])
        if W.shape != (N_HEADS, in_dim, HIDDEN) or a.shape != (N_HEADS, 2 * HIDDEN):
            raise ModelError(f"checkpoint weight shapes in {path} are invalid")
        layers.append(GatLayerParams(W, a))
        in_dim = HIDDEN
    model = GatModel(
        layers,
        np.asarray(payload["head_w"]),
        float(payload["head_b"]),
        float(payload["target_mean"]),
        float(payload["target_std"]),
        tuple(payload.get("train_scenarios", [])),
    )
    if model.head_w.shape != (READOUT_DIM,):
        raise ModelError(f"checkpoint head shape in {path} is invalid")
    model.check_finite()
    return model
