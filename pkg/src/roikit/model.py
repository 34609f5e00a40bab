"""Three-class residual CNN over macroblock feature grids, float64 numpy.

Architecture (fixed): input batch-norm over channels, then three residual
blocks (two same-padded 3x3 convolutions with 8 filters each, ReLU between,
ReLU after the skip add), a dropout layer in front of every block, and a
final 1x1 convolution producing three class scores per cell. The first
block's skip connection is a 1x1 convolution mapping the input channels to 8;
blocks two and three use identity skips.

Trainable parameter count is 82*C + 2963 for C input channels: 2C batch-norm
affine, 72C+8 + 584 + 8C+8 in block one, 1168 in each of blocks two and
three, and 27 in the head.

Everything is deterministic given seeds: initialization, dropout masks and
the training loop's sampling/augmentation stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .gridmap import classes_to_importance

HIDDEN = 8
CLASSES = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_WEIGHTS_MAGIC = b"PIMW"
_WEIGHTS_VERSION = 1


def expected_param_count(in_channels: int) -> int:
    """Closed-form trainable parameter count of the fixed architecture."""
    return 82 * in_channels + 2963


def _param_shapes(c: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "bn_gamma": (c,),
        "bn_beta": (c,),
        "b1_conv1_w": (3, 3, c, HIDDEN),
        "b1_conv1_b": (HIDDEN,),
        "b1_conv2_w": (3, 3, HIDDEN, HIDDEN),
        "b1_conv2_b": (HIDDEN,),
        "b1_skip_w": (c, HIDDEN),
        "b1_skip_b": (HIDDEN,),
    }
    for blk in (2, 3):
        shapes[f"b{blk}_conv1_w"] = (3, 3, HIDDEN, HIDDEN)
        shapes[f"b{blk}_conv1_b"] = (HIDDEN,)
        shapes[f"b{blk}_conv2_w"] = (3, 3, HIDDEN, HIDDEN)
        shapes[f"b{blk}_conv2_b"] = (HIDDEN,)
    shapes["head_w"] = (HIDDEN, CLASSES)
    shapes["head_b"] = (CLASSES,)
    return shapes


@dataclass
class ModelWeights:
    in_channels: int
    dropout_rate: float
    params: dict[str, np.ndarray]
    bn_mean: np.ndarray
    bn_var: np.ndarray
    version: int = _WEIGHTS_VERSION

    def trainable_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.in_channels,
            self.dropout_rate,
            {k: v.copy() for k, v in self.params.items()},
            self.bn_mean.copy(),
            self.bn_var.copy(),
            self.version,
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    iterations_per_epoch: int = 499
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    class_weights: tuple[float, float, float] | None = None
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.iterations_per_epoch <= 0:
            raise ValueError("epoch and iteration counts must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init(in_channels: int, seed: int = 0, dropout_rate: float = 0.2) -> ModelWeights:
    """Glorot-uniform weights, zero biases, identity batch-norm; deterministic."""
    if in_channels < 1:
        raise ValueError("need at least one input channel")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(in_channels).items():
        if name.endswith("_b") or name == "bn_beta":
            params[name] = np.zeros(shape)
        elif name == "bn_gamma":
            params[name] = np.ones(shape)
        else:
            if len(shape) == 4:
                fan_in = shape[0] * shape[1] * shape[2]
                fan_out = shape[0] * shape[1] * shape[3]
            else:
                fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return ModelWeights(
        in_channels=in_channels,
        dropout_rate=dropout_rate,
        params=params,
        bn_mean=np.zeros(in_channels),
        bn_var=np.ones(in_channels),
    )


def init_adam(weights: ModelWeights) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in weights.params.items()},
        v={k: np.zeros_like(v) for k, v in weights.params.items()},
    )


def _im2col(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H*W, 9*C) patches of the 3x3 neighborhood, zero padded."""
    h, w, c = x.shape
    padded = np.zeros((h + 2, w + 2, c))
    padded[1:-1, 1:-1] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(0, 1))
    # win: (H, W, C, 3, 3) -> (H*W, 3*3*C) ordered (ky, kx, c)
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, 9 * c)


def _conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, wd, _ = x.shape
    patches = _im2col(x)
    out = patches @ w.reshape(-1, w.shape[3]) + b
    return out.reshape(h, wd, -1), patches

def _conv3_backward(
    dout: np.ndarray, patches: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, wd, co = dout.shape
    dflat = dout.reshape(-1, co)
    dw = (patches.T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0)
    # dx = "full" correlation of dout with the kernel rotated 180 degrees
    w_rot = w[::-1, ::-1].transpose(0, 1, 3, 2)  # (3, 3, Cout, Cin)
    dx = (_im2col(dout) @ w_rot.reshape(-1, w.shape[2])).reshape(h, wd, w.shape[2])
    return dx, dw, db


def forward(
    weights: ModelWeights,
    x: np.ndarray,
    mode: str = "infer",
    seed: int = 0,
) -> np.ndarray | tuple[np.ndarray, dict]:
    """Class logits of shape (rows, cols, 3); train mode also returns the cache.

    Dropout runs only in train mode (inverted, deterministic given `seed`);
    batch norm uses per-call spatial statistics in train mode and the stored
    running statistics at inference.
    """
    data = getattr(x, "data", x)
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != weights.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[2] if x.ndim == 3 else '?'}, "
            f"model expects {weights.in_channels}"
        )
    p = weights.params
    train = mode == "train"
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    cache: dict = {"x": x}

    if train:
        mu = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
    else:
        mu, var = weights.bn_mean, weights.bn_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    act = p["bn_gamma"] * xhat + p["bn_beta"]
    cache.update(bn_xhat=xhat, bn_inv_std=inv_std, bn_mu=mu, bn_var=var)

    rng = np.random.default_rng(seed)
    keep = 1.0 - weights.dropout_rate
    for blk in (1, 2, 3):
        if train and weights.dropout_rate > 0.0:
            mask = (rng.random(act.shape) >= weights.dropout_rate) / keep
        else:
            mask = None
        dropped = act * mask if mask is not None else act
        pre1, patches1 = _conv3(dropped, p[f"b{blk}_conv1_w"], p[f"b{blk}_conv1_b"])
        a1 = np.maximum(pre1, 0.0)
        pre2, patches2 = _conv3(a1, p[f"b{blk}_conv2_w"], p[f"b{blk}_conv2_b"])
        skip = dropped @ p["b1_skip_w"] + p["b1_skip_b"] if blk == 1 else dropped
        summed = pre2 + skip
        out = np.maximum(summed, 0.0)
        cache[f"blk{blk}"] = {
            "mask": mask,
            "dropped": dropped,
            "pre1": pre1,
            "a1": a1,
            "patches1": patches1,
            "patches2": patches2,
            "summed": summed,
        }
        act = out

    cache["head_in"] = act
    logits = act @ p["head_w"] + p["head_b"]
    if train:
        cache["logits"] = logits
        return logits, cache
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_wce(
    logits: np.ndarray, targets: np.ndarray, class_weights=(1.0, 1.0, 1.0)
) -> float:
    """Weighted cross-entropy, normalized by the mean cell weight."""
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    w = np.asarray(class_weights, dtype=np.float64)[np.asarray(targets, np.intp)]
    total_w = w.sum()
    if total_w == 0.0:
        return 0.0
    z = logits - logits.max(axis=-1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(log_p, np.asarray(targets, np.intp)[..., None], axis=-1)[..., 0]
    return float((w * nll).sum() / total_w)


def _loss_grad(logits, targets, class_weights):
    w = np.asarray(class_weights, dtype=np.float64)[np.asarray(targets, np.intp)]
    total_w = w.sum()
    if total_w == 0.0:
        return np.zeros_like(logits)
    p = softmax(logits)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, np.asarray(targets, np.intp)[..., None], 1.0, axis=-1)
    return (w[..., None] / total_w) * (p - onehot)


def backward(
    weights: ModelWeights,
    cache: dict,
    targets: np.ndarray,
    class_weights=(1.0, 1.0, 1.0),
) -> dict[str, np.ndarray]:
    """Exact gradients of loss_wce w.r.t. every trainable parameter."""
    if "head_in" not in cache:
        raise ValueError("stale cache: run a train-mode forward first")
    p = weights.params
    grads: dict[str, np.ndarray] = {}

    dlogits = _loss_grad(cache["logits"], targets, class_weights)
    flat_in = cache["head_in"].reshape(-1, HIDDEN)
    dflat = dlogits.reshape(-1, CLASSES)
    grads["head_w"] = flat_in.T @ dflat
    grads["head_b"] = dflat.sum(axis=0)
    dact = (dflat @ p["head_w"].T).reshape(cache["head_in"].shape)

    for blk in (3, 2, 1):
        c = cache[f"blk{blk}"]
        dsum = dact * (c["summed"] > 0.0)
        dx2, dw2, db2 = _conv3_backward(dsum, c["patches2"], p[f"b{blk}_conv2_w"])
        grads[f"b{blk}_conv2_w"] = dw2
        grads[f"b{blk}_conv2_b"] = db2
        dpre1 = dx2 * (c["pre1"] > 0.0)
        ddropped, dw1, db1 = _conv3_backward(dpre1, c["patches1"], p[f"b{blk}_conv1_w"])
        grads[f"b{blk}_conv1_w"] = dw1
        grads[f"b{blk}_conv1_b"] = db1
        if blk == 1:
            flat_drop = c["dropped"].reshape(-1, weights.in_channels)
            dskip_flat = dsum.reshape(-1, HIDDEN)
            grads["b1_skip_w"] = flat_drop.T @ dskip_flat
            grads["b1_skip_b"] = dskip_flat.sum(axis=0)
            ddropped = ddropped + dsum @ p["b1_skip_w"].T
        else:
            ddropped = ddropped + dsum
        dact = ddropped * c["mask"] if c["mask"] is not None else ddropped

    grads["bn_gamma"] = (dact * cache["bn_xhat"]).sum(axis=(0, 1))
    grads["bn_beta"] = dact.sum(axis=(0, 1))
    return grads


def adam_step(
    weights: ModelWeights,
    state: AdamState,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, in place on weights and state."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        weights.params[name] -= lr * mhat / (np.sqrt(vhat) + eps)


def default_class_weights(targets: list[np.ndarray]) -> tuple[float, float, float]:
    """Inverse class frequencies over a dataset, renormalized to mean one."""
    counts = np.zeros(CLASSES)
    for t in targets:
        counts += np.bincount(np.asarray(t, np.intp).ravel(), minlength=CLASSES)
    counts = np.maximum(counts, 1.0)
    inv = counts.sum() / (CLASSES * counts)
    inv /= inv.mean()
    return tuple(float(v) for v in inv)


def train(
    dataset: list[tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig = TrainConfig(),
    log=None,
) -> ModelWeights:
    """Train on (feature stack, class grid) pairs; deterministic per seed.

    Each iteration draws one item uniformly, applies random horizontal and
    vertical flips, and takes one Adam step. `log`, when given, is called
    with (epoch, iteration, loss) once per iteration.
    """
    if not dataset:
        raise ValueError("empty dataset")
    stacks = [np.asarray(getattr(x, "data", x), np.float64) for x, _ in dataset]
    targets = [np.asarray(t, np.intp) for _, t in dataset]
    c = stacks[0].shape[2]
    weights = init(c, seed=cfg.seed, dropout_rate=cfg.dropout_rate)
    class_weights = (
        cfg.class_weights if cfg.class_weights is not None else default_class_weights(targets)
    )
    state = init_adam(weights)
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        for it in range(cfg.iterations_per_epoch):
            idx = int(rng.integers(len(dataset)))
            x, t = stacks[idx], targets[idx]
            if rng.random() < 0.5:
                x, t = x[:, ::-1], t[:, ::-1]
            if rng.random() < 0.5:
                x, t = x[::-1, :], t[::-1, :]
            drop_seed = int(rng.integers(2**31))
            logits, cache = forward(weights, x, mode="train", seed=drop_seed)
            loss = loss_wce(logits, t, class_weights)
            grads = backward(weights, cache, t, class_weights)
            adam_step(
                weights, state, grads, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps
            )
            weights.bn_mean = (1 - BN_MOMENTUM) * weights.bn_mean + BN_MOMENTUM * cache["bn_mu"]
            weights.bn_var = (1 - BN_MOMENTUM) * weights.bn_var + BN_MOMENTUM * cache["bn_var"]
            if log is not None:
                log(epoch, it, loss)
    return weights


def predict_map(weights: ModelWeights, x: np.ndarray) -> np.ndarray:
    """Per-cell importance {0, 128, 255} via argmax; ties go to the lower class."""
    logits = forward(weights, x, mode="infer")
    classes = np.argmax(softmax(logits), axis=-1)
    return classes_to_importance(classes)


def save_weights(weights: ModelWeights, stream, adam_state: AdamState | None = None) -> None:
    """Serialize to the PIMW container (named arrays, little-endian float32).

    Passing the optimizer state adds its moment arrays and step counter to
    the container, making training resumable from the file.
    """
    arrays = dict(weights.params)
    arrays["bn_mean"] = weights.bn_mean
    arrays["bn_var"] = weights.bn_var
    if adam_state is not None:
        for name, m in adam_state.m.items():
            arrays[f"adam_m.{name}"] = m
        for name, v in adam_state.v.items():
            arrays[f"adam_v.{name}"] = v
        arrays["adam_step"] = np.array([float(adam_state.step)])
    stream.write(_WEIGHTS_MAGIC)
    stream.write(
        struct.pack(
            "<IIIf",
            weights.version,
            weights.in_channels,
            len(arrays),
            weights.dropout_rate,
        )
    )
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], "<f4")
        encoded = name.encode("ascii")
        stream.write(struct.pack("<H", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<B", a.ndim))
        stream.write(struct.pack(f"<{a.ndim}I", *a.shape))
        stream.write(a.tobytes())


def _read_container(source) -> tuple[int, int, float, dict[str, np.ndarray]]:
    import io

    stream = io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else source

    def need(n):
        data = stream.read(n)
        if len(data) != n:
            raise ValueError("truncated weights file")
        return data

    if need(4) != _WEIGHTS_MAGIC:
        raise ValueError("bad magic, not a PIMW weights file")
    version, in_channels, n_arrays, dropout_rate = struct.unpack("<IIIf", need(16))
    if version != _WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights version {version}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<H", need(2))
        name = need(name_len).decode("ascii")
        (ndim,) = struct.unpack("<B", need(1))
        shape = struct.unpack(f"<{ndim}I", need(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = (
            np.frombuffer(need(count * 4), "<f4").reshape(shape).astype(np.float64)
        )
    return version, in_channels, float(dropout_rate), arrays


def load_weights(source) -> ModelWeights:
    """Read a PIMW container; validates magic, version and per-array shapes."""
    version, in_channels, dropout_rate, arrays = _read_container(source)
    expected = _param_shapes(in_channels)
    params = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise ValueError(f"missing array {name}")
        if arrays[name].shape != shape:
            raise ValueError(
                f"shape mismatch for {name}: file has {arrays[name].shape}, "
                f"C={in_channels} requires {shape}"
            )
        params[name] = arrays[name]
    for name in ("bn_mean", "bn_var"):
        if name not in arrays or arrays[name].shape != (in_channels,):
            raise ValueError(f"shape mismatch for {name} against declared C={in_channels}")
    return ModelWeights(
        in_channels=in_channels,
        dropout_rate=float(dropout_rate),
        params=params,
        bn_mean=arrays["bn_mean"],
        bn_var=arrays["bn_var"],
        version=version,
    )


def load_adam_state(source, weights: ModelWeights) -> AdamState | None:
    """Optimizer state saved alongside the weights, or None if absent."""
    _, _, _, arrays = _read_container(source)
    if "adam_step" not in arrays:
        return None
    state = init_adam(weights)
    for name, shape in ((n, p.shape) for n, p in weights.params.items()):
        for prefix, bank in (("adam_m.", state.m), ("adam_v.", state.v)):
            key = prefix + name
            if key not in arrays or arrays[key].shape != shape:
                raise ValueError(f"optimizer state missing or misshapen for {name}")
            bank[name] = arrays[key]
    state.step = int(arrays["adam_step"][0])
    return state
