"""Sequence annotator: LSTM over a T-hour window, additive attention
pooling, and a two-hidden-layer softmax classifier head.

Everything (forward, backward-through-time, Adam) is implemented here on
numpy. The attention is the additive self-pooling form: scores
e_t = v . tanh(Wa h_t + ba) over the encoder states, softmax-normalized
into weights that compress the sequence to a single context vector. The
head applies dropout (inverted scaling) before each hidden layer, so
inference needs no rescaling and is fully deterministic.

Training minimizes mean categorical cross-entropy plus an L2 penalty on
weight matrices (biases excluded), with minibatch Adam, per-epoch
shuffling, and optional early stopping on validation weighted F1 over a
trailing-time split per device.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import WindowInstance
from .metrics import weighted_f1

N_CLASSES = 5

WEIGHT_KEYS = ("W", "Wa", "v", "W1", "W2", "Wo")  # L2 applies to these only
BIAS_KEYS = ("b", "ba", "b1", "b2", "bo")
PARAM_KEYS = WEIGHT_KEYS + BIAS_KEYS


@dataclass(frozen=True)
class HyperParams:
    hidden: int = 128
    dropout: float = 0.2
    l2: float = 0.001
    learning_rate: float = 0.001
    epochs: int = 1000
    batch_size: int = 256
    window: int = 18
    patience: int = 25
    early_stop: bool = True
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0,1), got {self.dropout}")
        for name in ("hidden", "epochs", "batch_size", "window", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SequenceModel:
    params: dict[str, np.ndarray]
    n_features: int
    hidden: int
    seed: int

    @classmethod
    def init(cls, n_features: int, hidden: int, seed: int) -> "SequenceModel":
        """Xavier-uniform weights, zero biases, forget-gate bias +1."""
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
        d, h = n_features, hidden

        def xavier(shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=shape)

        params = {
            "W": xavier((d + h, 4 * h), d + h, h),
            "b": np.zeros(4 * h),
            "Wa": xavier((h, h), h, h),
            "ba": np.zeros(h),
            "v": xavier((h,), h, 1),
            "W1": xavier((h, h), h, h),
            "b1": np.zeros(h),
            "W2": xavier((h, h), h, h),
            "b2": np.zeros(h),
            "Wo": xavier((h, N_CLASSES), h, N_CLASSES),
            "bo": np.zeros(N_CLASSES),
        }
        params["b"][h : 2 * h] = 1.0
        return cls(params=params, n_features=d, hidden=h, seed=seed)

    @classmethod
    def zeros(cls, n_features: int, hidden: int) -> "SequenceModel":
        zero = cls.init(n_features, hidden, seed=0)
        for k in zero.params:
            zero.params[k] = np.zeros_like(zero.params[k])
        return zero

    def copy(self) -> "SequenceModel":
        return SequenceModel(
            params={k: v.copy() for k, v in self.params.items()},
            n_features=self.n_features,
            hidden=self.hidden,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "hidden": self.hidden,
            "seed": self.seed,
            "params": {
                k: {
                    "shape": list(v.shape),
                    "data": base64.b64encode(np.ascontiguousarray(v, dtype="<f8").tobytes()).decode(),
                }
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SequenceModel":
        params = {}
        for k, blob in data["params"].items():
            arr = np.frombuffer(base64.b64decode(blob["data"]), dtype="<f8")
            params[k] = arr.reshape(blob["shape"]).astype(np.float64)
        return cls(
            params=params,
            n_features=int(data["n_features"]),
            hidden=int(data["hidden"]),
            seed=int(data["seed"]),
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class _ForwardCache:
    X: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tc: np.ndarray
    h: np.ndarray
    m: np.ndarray
    alpha: np.ndarray
    ctx: np.ndarray
    mask0: Optional[np.ndarray]
    a1: np.ndarray
    mask1: Optional[np.ndarray]
    a2: np.ndarray
    probs: np.ndarray


def _forward_batch(
    model: SequenceModel,
    X: np.ndarray,
    dropout: float = 0.0,
    dropout_rng: Optional[np.random.Generator] = None,
) -> _ForwardCache:
    """Run the full network on X of shape (B, T, d).

    Dropout masks are drawn only when dropout > 0 and a generator is
    supplied (training); otherwise dropout is the identity (inference).
    """
    B, T, d = X.shape
    if d != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {d}")
    H = model.hidden
    p = model.params

    i_all = np.zeros((B, T, H))
    f_all = np.zeros((B, T, H))
    g_all = np.zeros((B, T, H))
    o_all = np.zeros((B, T, H))
    c_all = np.zeros((B, T, H))
    tc_all = np.zeros((B, T, H))
    h_all = np.zeros((B, T, H))

    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    for t in range(T):
        z = np.concatenate([X[:, t, :], h_prev], axis=1) @ p["W"] + p["b"]
        i_t = _sigmoid(z[:, :H])
        f_t = _sigmoid(z[:, H : 2 * H])
        g_t = np.tanh(z[:, 2 * H : 3 * H])
        o_t = _sigmoid(z[:, 3 * H :])
        c_t = f_t * c_prev + i_t * g_t
        if not np.all(np.isfinite(c_t)):
            raise FloatingPointError(f"non-finite activation at step {t}")
        tc_t = np.tanh(c_t)
        h_t = o_t * tc_t
        i_all[:, t], f_all[:, t], g_all[:, t], o_all[:, t] = i_t, f_t, g_t, o_t
        c_all[:, t], tc_all[:, t], h_all[:, t] = c_t, tc_t, h_t
        h_prev, c_prev = h_t, c_t

    m = np.tanh(h_all @ p["Wa"] + p["ba"])
    scores = m @ p["v"]
    alpha = _softmax(scores, axis=1)
    ctx = np.einsum("bt,bth->bh", alpha, h_all)

    mask0 = mask1 = None
    u0 = ctx
    if dropout > 0.0 and dropout_rng is not None:
        mask0 = (dropout_rng.random(ctx.shape) >= dropout) / (1.0 - dropout)
        u0 = ctx * mask0
    a1 = np.tanh(u0 @ p["W1"] + p["b1"])
    u1 = a1
    if dropout > 0.0 and dropout_rng is not None:
        mask1 = (dropout_rng.random(a1.shape) >= dropout) / (1.0 - dropout)
        u1 = a1 * mask1
    a2 = np.tanh(u1 @ p["W2"] + p["b2"])
    logits = a2 @ p["Wo"] + p["bo"]
    probs = _softmax(logits, axis=1)

    return _ForwardCache(
        X=X, i=i_all, f=f_all, g=g_all, o=o_all, c=c_all, tc=tc_all, h=h_all,
        m=m, alpha=alpha, ctx=ctx, mask0=mask0, a1=a1, mask1=mask1, a2=a2, probs=probs,
    )


def forward(
    model: SequenceModel,
    window: np.ndarray,
    train_mode: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
    dropout: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities over the 5 classes and attention weights for one T x d
    window. Inference (train_mode False) is deterministic."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError(f"window must be 2-D (T, d), got shape {window.shape}")
    cache = _forward_batch(
        model,
        window[None, :, :],
        dropout=dropout if train_mode else 0.0,
        dropout_rng=dropout_rng if train_mode else None,
    )
    return cache.probs[0], cache.alpha[0]


def predict_proba(model: SequenceModel, X: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Inference probabilities for X of shape (N, T, d)."""
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros((X.shape[0], N_CLASSES))
    for start in range(0, X.shape[0], batch_size):
        out[start : start + batch_size] = _forward_batch(model, X[start : start + batch_size]).probs
    return out


def _cross_entropy(probs: np.ndarray, y0: np.ndarray) -> float:
    return float(-np.mean(np.log(probs[np.arange(y0.shape[0]), y0])))


def l2_penalty(model: SequenceModel, l2: float) -> float:
    return l2 * sum(float((model.params[k] ** 2).sum()) for k in WEIGHT_KEYS)


def loss(model: SequenceModel, X: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    """Mean categorical cross-entropy plus the L2 weight penalty.

    y holds AQI classes in 1..5.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    cache = _forward_batch(model, X)
    return _cross_entropy(cache.probs, y - 1) + l2_penalty(model, l2)


def _backward_batch(
    model: SequenceModel, cache: _ForwardCache, y0: np.ndarray, l2: float
) -> dict[str, np.ndarray]:
    """Gradients of (mean CE + L2) for the cached forward pass."""
    p = model.params
    B, T, d = cache.X.shape
    H = model.hidden

    dlogits = cache.probs.copy()
    dlogits[np.arange(B), y0] -= 1.0
    dlogits /= B

    grads = {k: np.zeros_like(v) for k, v in p.items()}

    u1 = cache.a1 if cache.mask1 is None else cache.a1 * cache.mask1
    u0 = cache.ctx if cache.mask0 is None else cache.ctx * cache.mask0

    grads["Wo"] = cache.a2.T @ dlogits
    grads["bo"] = dlogits.sum(axis=0)
    da2 = dlogits @ p["Wo"].T
    dz2 = da2 * (1.0 - cache.a2**2)
    grads["W2"] = u1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    du1 = dz2 @ p["W2"].T
    da1 = du1 if cache.mask1 is None else du1 * cache.mask1
    dz1 = da1 * (1.0 - cache.a1**2)
    grads["W1"] = u0.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    du0 = dz1 @ p["W1"].T
    dctx = du0 if cache.mask0 is None else du0 * cache.mask0

    # Attention: ctx = sum_t alpha_t h_t with alpha = softmax(v . tanh(Wa h + ba)).
    dalpha = np.einsum("bh,bth->bt", dctx, cache.h)
    dh_all = cache.alpha[:, :, None] * dctx[:, None, :]
    de = cache.alpha * (dalpha - (cache.alpha * dalpha).sum(axis=1, keepdims=True))
    grads["v"] = np.einsum("bt,bth->h", de, cache.m)
    dm = de[:, :, None] * p["v"][None, None, :]
    dpre = dm * (1.0 - cache.m**2)
    grads["Wa"] = np.einsum("bth,btk->hk", cache.h, dpre)
    grads["ba"] = dpre.sum(axis=(0, 1))
    dh_all = dh_all + dpre @ p["Wa"].T

    dW = np.zeros_like(p["W"])
    db = np.zeros_like(p["b"])
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i_t, f_t, g_t, o_t = cache.i[:, t], cache.f[:, t], cache.g[:, t], cache.o[:, t]
        tc_t = cache.tc[:, t]
        c_prev = cache.c[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = cache.h[:, t - 1] if t > 0 else np.zeros((B, H))

        dh = dh_all[:, t] + dh_next
        do = dh * tc_t
        dc = dc_next + dh * o_t * (1.0 - tc_t**2)
        df = dc * c_prev
        di = dc * g_t
        dg = dc * i_t
        dc_next = dc * f_t

        dz = np.concatenate(
            [
                di * i_t * (1.0 - i_t),
                df * f_t * (1.0 - f_t),
                dg * (1.0 - g_t**2),
                do * o_t * (1.0 - o_t),
            ],
            axis=1,
        )
        inp = np.concatenate([cache.X[:, t, :], h_prev], axis=1)
        dW += inp.T @ dz
        db += dz.sum(axis=0)
        dh_next = (dz @ p["W"].T)[:, d:]
    grads["W"] = dW
    grads["b"] = db

    if l2 > 0.0:
        for k in WEIGHT_KEYS:
            grads[k] = grads[k] + 2.0 * l2 * p[k]
    return grads


def loss_and_grads(
    model: SequenceModel,
    X: np.ndarray,
    y: np.ndarray,
    l2: float = 0.0,
    dropout: float = 0.0,
    dropout_rng: Optional[np.random.Generator] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    X = np.asarray(X, dtype=np.float64)
    y0 = np.asarray(y, dtype=np.int64) - 1
    cache = _forward_batch(model, X, dropout=dropout, dropout_rng=dropout_rng)
    total = _cross_entropy(cache.probs, y0) + l2_penalty(model, l2)
    return total, _backward_batch(model, cache, y0, l2)


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k in params:
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grads[k] ** 2
            m_hat = self.m[k] / (1.0 - self.beta1**self.t)
            v_hat = self.v[k] / (1.0 - self.beta2**self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _stack_instances(instances: Sequence[WindowInstance]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([inst.features for inst in instances]).astype(np.float64)
    y = np.asarray([inst.label for inst in instances], dtype=np.int64)
    return X, y


def _validation_split(
    instances: Sequence[WindowInstance], fraction: float
) -> tuple[list[int], list[int]]:
    """Trailing-time split per device: the last `fraction` of each device's
    instances (by end timestamp) go to validation."""
    by_device: dict[str, list[int]] = {}
    for idx, inst in enumerate(instances):
        by_device.setdefault(inst.device_id, []).append(idx)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for device in sorted(by_device):
        idxs = sorted(by_device[device], key=lambda i: instances[i].end_timestamp)
        n_val = int(len(idxs) * fraction)
        train_idx.extend(idxs[: len(idxs) - n_val])
        val_idx.extend(idxs[len(idxs) - n_val :])
    return train_idx, val_idx


def train(
    instances: Sequence[WindowInstance],
    hparams: HyperParams = HyperParams(),
    seed: int = 0,
) -> SequenceModel:
    """Minibatch Adam training; deterministic given the seed.

    With early stopping enabled, a 10% trailing-time validation split per
    device drives patience on validation weighted F1 and the best snapshot
    is returned; otherwise the model after the final epoch is returned.
    """
    if not instances:
        raise ValueError("no training instances")
    X_all, y_all = _stack_instances(instances)
    T = X_all.shape[1]
    if T != hparams.window:
        raise ValueError(f"instances have window {T}, hyperparameters say {hparams.window}")

    ss = np.random.SeedSequence(seed)
    init_seed = seed
    shuffle_rng, dropout_rng = (np.random.default_rng(c) for c in ss.spawn(2))

    train_idx, val_idx = _validation_split(instances, hparams.val_fraction)
    use_early_stop = hparams.early_stop and len(val_idx) > 0
    if not use_early_stop:
        train_idx = list(range(len(instances)))
    X_train, y_train = X_all[train_idx], y_all[train_idx]
    X_val, y_val = X_all[val_idx], y_all[val_idx]

    model = SequenceModel.init(X_all.shape[2], hparams.hidden, init_seed)
    optimizer = _Adam(model.params, lr=hparams.learning_rate)

    best = model.copy()
    best_f1 = -1.0
    stale = 0
    n = X_train.shape[0]
    for _epoch in range(hparams.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, hparams.batch_size):
            batch = order[start : start + hparams.batch_size]
            _, grads = loss_and_grads(
                model,
                X_train[batch],
                y_train[batch],
                l2=hparams.l2,
                dropout=hparams.dropout,
                dropout_rng=dropout_rng,
            )
            optimizer.step(model.params, grads)
        if use_early_stop:
            preds = np.argmax(predict_proba(model, X_val), axis=1) + 1
            f1 = weighted_f1(y_val, preds)
            if f1 > best_f1:
                best_f1 = f1
                best = model.copy()
                stale = 0
            else:
                stale += 1
                if stale >= hparams.patience:
                    break
    return best if use_early_stop else model


def save_sequence_model(model: SequenceModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True, separators=(",", ":"))


def load_sequence_model(path: str | Path) -> SequenceModel:
    with open(path) as fh:
        return SequenceModel.from_dict(json.load(fh))
