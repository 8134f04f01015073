"""A small residual-encoder / skip-decoder segmentation network in plain numpy.

Layout (``c_i = base_channels * 2**i``)::

    stem      conv3x3 3 -> c_0, ReLU, residual block        (skip 0)
    enc i     avgpool 2x2, conv3x3 c_{i-1} -> c_i, ReLU,
              residual block                                  (skip i), i = 1..depth
    dec i     nearest upsample x2, concat skip i,
              conv3x3 (c_{i+1} + c_i) -> c_i, ReLU            i = depth-1..0
    head      conv1x1 c_0 -> classes

A residual block is ``relu(x + conv(relu(conv(x))))``. Tensors are NHWC.
Class index 0 is background; index ``c + 1`` is :class:`ClassId` ``c``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ClassId, DimensionMismatch, FramescopeError, MaskSet, as_image
from .metrics import EmptyEvaluation, mean_iou


class ConfigInvalid(FramescopeError, ValueError):
    pass


class NonFiniteLoss(FramescopeError, FloatingPointError):
    pass


class ShapeMismatch(FramescopeError, ValueError):
    pass


NUM_CLASSES = len(ClassId) + 1


@dataclass(frozen=True)
class SegConfig:
    input_side: int = 64
    base_channels: int = 8
    depth: int = 3
    classes: int = NUM_CLASSES
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigInvalid("depth must be >= 1")
        if self.base_channels < 1:
            raise ConfigInvalid("base_channels must be >= 1")
        if self.classes < 2:
            raise ConfigInvalid("need at least 2 classes")
        if self.input_side < 1 or self.input_side % (2 ** self.depth):
            raise ConfigInvalid(f"input_side {self.input_side} is not divisible by 2**{self.depth}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    steps: int = 100
    batch_size: int = 4
    seed: int = 0
    grad_clip: float | None = None  # global L2 norm; None disables

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigInvalid("learning_rate must be > 0")
        if self.steps < 1:
            raise ConfigInvalid("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigInvalid("momentum must lie in [0, 1)")


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    val_miou: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("-inf")
    best_loss: float = float("nan")


def layer_shapes(config: SegConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; kernels are (k, k, c_in, c_out)."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, k, cin, cout):
        shapes[f"{name}.w"] = (k, k, cin, cout)
        shapes[f"{name}.b"] = (cout,)

    c = config.channels
    conv("stem", 3, 3, c(0))
    conv("enc0.res1", 3, c(0), c(0))
    conv("enc0.res2", 3, c(0), c(0))
    for i in range(1, config.depth + 1):
        conv(f"enc{i}.down", 3, c(i - 1), c(i))
        conv(f"enc{i}.res1", 3, c(i), c(i))
        conv(f"enc{i}.res2", 3, c(i), c(i))
    for i in range(config.depth - 1, -1, -1):
        conv(f"dec{i}", 3, c(i + 1) + c(i), c(i))
    conv("head", 1, c(0), config.classes)
    return shapes


class SegModel:
    def __init__(self, config: SegConfig, params: dict[str, np.ndarray]):
        shapes = layer_shapes(config)
        if list(params) != list(shapes):
            raise ConfigInvalid("parameter names do not match the configuration")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ConfigInvalid(f"{name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "SegModel":
        return SegModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "SegModel":
        return SegModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def zeros_like(self) -> "SegModel":
        return SegModel(self.config, {k: np.zeros_like(v) for k, v in self.params.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def build_model(config: SegConfig, dtype=np.float32) -> SegModel:
    """He-initialised weights (normal, std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in layer_shapes(config).items():
        if name.endswith(".w"):
            fan_in = shape[0] * shape[1] * shape[2]
            params[name] = (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return SegModel(config, params)


# --- layers -----------------------------------------------------------------

def _conv_forward(x, w, b):
    k = w.shape[0]
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    if k == 1:
        out = (x.reshape(-1, cin) @ w[0, 0] + b).reshape(n, h, wd, cout)
        return out, (x, w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    if cin < 8:
        # im2col with (ky, kx, cin) column order; cheaper for thin inputs
        cols = np.concatenate(
            [xp[:, ky:ky + h, kx:kx + wd, :] for ky in range(k) for kx in range(k)], axis=-1
        ).reshape(n * h * wd, k * k * cin)
        out = (cols @ w.reshape(k * k * cin, cout) + b).reshape(n, h, wd, cout)
        return out, (xp, w)
    # one matmul against all taps, then shift-and-add the k*k partial outputs
    taps = (xp.reshape(-1, cin) @ w.transpose(2, 0, 1, 3).reshape(cin, k * k * cout))
    taps = taps.reshape(n, h + 2 * p, wd + 2 * p, k * k, cout)
    out = np.empty((n, h, wd, cout), dtype=x.dtype)
    out[...] = b
    for ky in range(k):
        for kx in range(k):
            out += taps[:, ky:ky + h, kx:kx + wd, ky * k + kx]
    return out, (xp, w)


def _conv_backward(dout, cache):
    xp, w = cache
    k, _, cin, cout = w.shape
    d2 = dout.reshape(-1, cout)
    db = d2.sum(axis=0)
    if k == 1:
        dw = (xp.reshape(-1, cin).T @ d2)[None, None]
        return (d2 @ w[0, 0].T).reshape(xp.shape), dw, db
    p = k // 2
    n, h, wd = dout.shape[:3]
    dw = np.empty_like(w)
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    for ky in range(k):
        for kx in range(k):
            window = np.ascontiguousarray(xp[:, ky:ky + h, kx:kx + wd]).reshape(-1, cin)
            dw[ky, kx] = window.T @ d2
            dxp[:, ky:ky + h, kx:kx + wd] += (d2 @ w[ky, kx].T).reshape(n, h, wd, cin)
    return dxp[:, p:p + h, p:p + wd, :], dw, db


def _pool(x):
    n, h, w, c = x.shape
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _pool_backward(d):
    return np.repeat(np.repeat(d, 2, axis=1), 2, axis=2) * d.dtype.type(0.25)


def _upsample(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _upsample_backward(d):
    n, h, w, c = d.shape
    return d.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class _Tape:
    """Records what the backward pass needs, plus every ReLU activation pattern."""

    def __init__(self):
        self.items = {}
        self.relu_masks = []

    def conv(self, name, x, params):
        out, cache = _conv_forward(x, params[f"{name}.w"], params[f"{name}.b"])
        self.items[name] = cache
        return out

    def relu(self, key, z):
        mask = z > 0
        self.items[key] = mask
        self.relu_masks.append(mask)
        return np.where(mask, z, 0).astype(z.dtype, copy=False)


def _forward(model: SegModel, x: np.ndarray, tape: _Tape | None = None) -> np.ndarray:
    cfg = model.config
    p = model.params
    t = tape if tape is not None else _Tape()

    def resblock(prefix, h):
        a = t.relu(f"{prefix}.res1.relu", t.conv(f"{prefix}.res1", h, p))
        z = t.conv(f"{prefix}.res2", a, p)
        return t.relu(f"{prefix}.out.relu", h + z)

    h = t.relu("stem.relu", t.conv("stem", x, p))
    skips = [resblock("enc0", h)]
    for i in range(1, cfg.depth + 1):
        h = t.relu(f"enc{i}.down.relu", t.conv(f"enc{i}.down", _pool(skips[-1]), p))
        skips.append(resblock(f"enc{i}", h))
    y = skips[-1]
    for i in range(cfg.depth - 1, -1, -1):
        cat = np.concatenate([_upsample(y), skips[i]], axis=-1)
        y = t.relu(f"dec{i}.relu", t.conv(f"dec{i}", cat, p))
    return t.conv("head", y, p)


def _backward(model: SegModel, dlogits: np.ndarray, tape: _Tape) -> dict[str, np.ndarray]:
    cfg = model.config
    it = tape.items
    grads: dict[str, np.ndarray] = {}

    def conv_b(name, d):
        dx, dw, db = _conv_backward(d, it[name])
        grads[f"{name}.w"], grads[f"{name}.b"] = dw, db
        return dx

    def relu_b(key, d):
        return np.where(it[key], d, 0).astype(d.dtype, copy=False)

    def resblock_b(prefix, d):
        ds = relu_b(f"{prefix}.out.relu", d)
        da = conv_b(f"{prefix}.res2", ds)
        dh = conv_b(f"{prefix}.res1", relu_b(f"{prefix}.res1.relu", da))
        return ds + dh

    dy = conv_b("head", dlogits)
    dskips = [None] * (cfg.depth + 1)
    for i in range(cfg.depth):
        dcat = conv_b(f"dec{i}", relu_b(f"dec{i}.relu", dy))
        c_up = cfg.channels(i + 1)
        dskips[i] = dcat[..., c_up:]
        dy = _upsample_backward(dcat[..., :c_up])
    dskips[cfg.depth] = dy
    for i in range(cfg.depth, 0, -1):
        dh = resblock_b(f"enc{i}", dskips[i])
        dpool = conv_b(f"enc{i}.down", relu_b(f"enc{i}.down.relu", dh))
        dskips[i - 1] = dskips[i - 1] + _pool_backward(dpool)
    dh = resblock_b("enc0", dskips[0])
    conv_b("stem", relu_b("stem.relu", dh))
    return {name: grads[name] for name in model.params}


# --- public operations ------------------------------------------------------

def _check_batch(model: SegModel, x: np.ndarray) -> np.ndarray:
    side = model.config.input_side
    if x.ndim != 4 or x.shape[1:] != (side, side, 3):
        raise DimensionMismatch(f"expected (N, {side}, {side}, 3) input, got {x.shape}")
    return x.astype(model.dtype, copy=False)


def forward_batch(model: SegModel, images: np.ndarray) -> np.ndarray:
    return _forward(model, _check_batch(model, np.asarray(images)))


def forward(model: SegModel, image) -> np.ndarray:
    """Logits of shape (H, W, classes) for one image."""
    img = as_image(image)
    return forward_batch(model, img[None])[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)
    loss = -float(picked.mean(dtype=np.float64))
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1, axis=-1)
    grad /= labels.size
    return loss, grad


def loss_ce(logits: np.ndarray, masks: MaskSet) -> float:
    """Mean per-pixel cross-entropy; pixels with no class set are background."""
    logits = np.asarray(logits)
    if logits.ndim != 3 or logits.shape[:2] != masks.shape:
        raise ShapeMismatch(f"logits {logits.shape} do not match masks {masks.shape}")
    return _ce(logits, masks.labels())[0]


def loss_and_grads(model: SegModel, images: np.ndarray, labels: np.ndarray):
    """Loss, parameter gradients and ReLU activation patterns for a batch."""
    tape = _Tape()
    logits = _forward(model, _check_batch(model, images), tape)
    loss, dlogits = _ce(logits, labels)
    return loss, _backward(model, dlogits.astype(model.dtype, copy=False), tape), tape.relu_masks


def predict_labels(model: SegModel, images: np.ndarray) -> np.ndarray:
    # argmax takes the first maximum: ties go to the lowest index (background)
    return forward_batch(model, images).argmax(axis=-1)


def predict(model: SegModel, image) -> MaskSet:
    return MaskSet.from_labels(predict_labels(model, as_image(image)[None])[0])


class Momentum:
    """SGD with heavy-ball momentum: ``v = mu v - lr g``, ``w += v``."""

    def __init__(self, model: SegModel, learning_rate: float, momentum: float, grad_clip: float | None = None):
        self.lr = learning_rate
        self.mu = momentum
        self.clip = grad_clip
        self.velocity = {k: np.zeros_like(v) for k, v in model.params.items()}

    def step(self, model: SegModel, grads: dict[str, np.ndarray]) -> None:
        scale = 1.0
        if self.clip is not None:
            norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
            if norm > self.clip:
                scale = self.clip / norm
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.mu
            v -= (self.lr * scale) * g
            model.params[name] += v


def stack_samples(samples: Sequence[tuple[np.ndarray, MaskSet]], dtype=np.float32):
    images = np.stack([np.asarray(img, dtype=dtype) for img, _ in samples])
    labels = np.stack([m.labels() for _, m in samples])
    return images, labels


def evaluate(model: SegModel, samples, batch_size: int = 8) -> float:
    """Mean IoU over all four classes; 0.0 when nothing is defined."""
    if not samples:
        return 0.0
    images, labels = stack_samples(samples, model.dtype)
    preds = np.concatenate([predict_labels(model, images[i:i + batch_size]) for i in range(0, len(images), batch_size)])
    try:
        return mean_iou([MaskSet.from_labels(p) for p in preds], [MaskSet.from_labels(t) for t in labels])[1]
    except EmptyEvaluation:
        return 0.0


def train(model: SegModel, train_set, val_set, tc: TrainConfig) -> tuple[SegModel, TrainHistory]:
    """Minibatch SGD with momentum; returns the weights with the best validation mean IoU.

    Validation runs after every epoch (``ceil(len(train_set) / batch_size)``
    steps) and after the final step. Ties keep the earlier checkpoint.
    """
    if not train_set:
        raise ValueError("training set is empty")
    if not val_set:
        raise ValueError("validation set is empty")
    model = model.copy()
    images, labels = stack_samples(train_set, model.dtype)
    n = len(images)
    rng = np.random.default_rng(tc.seed)
    opt = Momentum(model, tc.learning_rate, tc.momentum, tc.grad_clip)
    steps_per_epoch = math.ceil(n / tc.batch_size)
    history = TrainHistory()
    best = model.copy()
    queue: list[int] = []
    epoch_losses: list[float] = []
    for step in range(1, tc.steps + 1):
        while len(queue) < tc.batch_size:
            queue.extend(rng.permutation(n).tolist())
        idx, queue = queue[:tc.batch_size], queue[tc.batch_size:]
        loss, grads, _ = loss_and_grads(model, images[idx], labels[idx])
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at step {step}")
        opt.step(model, grads)
        history.losses.append(loss)
        epoch_losses.append(loss)
        if step % steps_per_epoch == 0 or step == tc.steps:
            score = evaluate(model, val_set)
            history.val_miou.append(score)
            if score > history.best_val:
                history.best_val = score
                history.best_epoch = len(history.val_miou) - 1
                history.best_loss = float(np.mean(epoch_losses))
                best = model.copy()
            epoch_losses = []
    if not best.all_finite():
        raise NonFiniteLoss("weights became non-finite")
    return best, history


def gradient_probes(
    model: SegModel,
    sample: tuple[np.ndarray, MaskSet],
    epsilon: float = 1e-3,
    probes: int = 50,
    seed: int = 0,
    names: Sequence[str] | None = None,
    corrupt: dict[str, float] | None = None,
) -> list[tuple[str, tuple, float, float]]:
    """``(name, index, analytic, numeric)`` for each accepted probe.

    Runs in float64. Probes are spread round-robin over the parameter tensors
    in ``names`` (all by default). A probe is redrawn when perturbing it by
    +-epsilon flips any ReLU, so the central difference never straddles a
    kink. ``corrupt`` scales the analytic gradient of the named tensors.
    """
    m = model.astype(np.float64)
    image, masks = sample
    x = as_image(image)[None]
    y = masks.labels()[None]
    _, grads, base_masks = loss_and_grads(m, x, y)
    for name, factor in (corrupt or {}).items():
        grads[name] = grads[name] * factor
    names = list(names) if names is not None else list(m.params)
    rng = np.random.default_rng(seed)

    def same_pattern(other):
        return all(np.array_equal(a, b) for a, b in zip(base_masks, other))

    out = []
    for k in range(probes):
        name = names[k % len(names)]
        w = m.params[name]
        for _ in range(25):
            i = np.unravel_index(rng.integers(w.size), w.shape)
            orig = w[i]
            w[i] = orig + epsilon
            lp, _, mp = loss_and_grads(m, x, y)
            w[i] = orig - epsilon
            lm, _, mm = loss_and_grads(m, x, y)
            w[i] = orig
            if same_pattern(mp) and same_pattern(mm):
                out.append((name, tuple(int(j) for j in i), float(grads[name][i]), (lp - lm) / (2 * epsilon)))
                break
    return out


def gradient_check(model: SegModel, sample, epsilon: float = 1e-3, probes: int = 50, **kwargs) -> float:
    """Max relative error ``|a - n| / max(|a|, |n|, 1e-8)`` over the probes."""
    found = gradient_probes(model, sample, epsilon, probes, **kwargs)
    if not found:
        raise ValueError("every probe sat on a ReLU kink; nothing was checked")
    return max(abs(a - n) / max(abs(a), abs(n), 1e-8) for _, _, a, n in found)


# --- checkpoints ------------------------------------------------------------

_MAGIC = b"FSSEG"
_VERSION = 1


def save_model(path, model: SegModel) -> None:
    """Write ``magic | u16 version | u32 header length | JSON header | payload``.

    The payload is every tensor in header order, little-endian, C order.
    """
    dtype = np.dtype(model.dtype).newbyteorder("<")
    header = {
        "config": asdict(model.config),
        "dtype": dtype.str,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<HI", _VERSION, len(hdr)) + hdr)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v, dtype=dtype).tobytes())


def load_model(path) -> SegModel:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path} is not a segmentation checkpoint")
    off = len(_MAGIC)
    version, hlen = struct.unpack_from("<HI", data, off)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 6
    header = json.loads(data[off:off + hlen])
    off += hlen
    dtype = np.dtype(header["dtype"])
    params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape))
        params[t["name"]] = np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(shape).astype(dtype.newbyteorder("="))
        off += count * dtype.itemsize
    return SegModel(SegConfig(**header["config"]), params)
