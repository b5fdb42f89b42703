"""From-scratch encoder-decoder convolutional network for wall segmentation.

Pure numpy, channels-last, double precision. The topology follows the
classic biomedical encoder-decoder layout: per encoder stage one 3x3
same-padding convolution + ReLU followed by 2x2 max pooling (the last stage
skips the pooling), then per decoder stage 2x2 nearest upsampling, optional
skip concatenation with the matching encoder output, and a 3x3 convolution +
ReLU. A 1x1 convolution + sigmoid produces the per-pixel wall probability.
Training is mini-batch Adam on pixel-mean binary cross-entropy.
"""

from __future__ import annotations

import io
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DivergenceError, EchoWallError, ShapeError
from . import imgproc

PAPER_ENCODER = (32, 64, 128, 256, 512, 1024)
PAPER_DECODER = (512, 256, 128, 64, 32)


@dataclass(frozen=True)
class NetConfig:
    input_size: int = 224
    encoder_filters: tuple = PAPER_ENCODER
    decoder_filters: tuple = PAPER_DECODER
    kernel_size: int = 3
    pool: int = 2
    upsample: int = 2
    skip_connections: bool = True
    scale_factor: int = 1  # divides every filter count for toy runs

    def validate(self) -> None:
        n = len(self.encoder_filters)
        if n < 2:
            raise ConfigError("encoder_filters needs at least 2 stages")
        if tuple(self.decoder_filters) != tuple(reversed(self.encoder_filters[:-1])):
            raise ConfigError(
                "decoder_filters must be the reverse of encoder_filters without its last entry"
            )
        stride = self.pool ** (n - 1)
        if self.input_size % stride != 0:
            raise ConfigError(
                f"input_size {self.input_size} must be divisible by {stride} "
                f"(pool^{n - 1})"
            )
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd for same-padding convolutions")
        if self.scale_factor < 1:
            raise ConfigError(f"scale_factor must be >= 1, got {self.scale_factor}")
        for f in self.encoder_filters:
            if f % self.scale_factor != 0:
                raise ConfigError(
                    f"scale_factor {self.scale_factor} does not divide filter count {f}"
                )

    @property
    def enc(self) -> tuple:
        return tuple(f // self.scale_factor for f in self.encoder_filters)

    @property
    def dec(self) -> tuple:
        return tuple(f // self.scale_factor for f in self.decoder_filters)


def toy_config(input_size: int = 64, scale_factor: int = 8) -> NetConfig:
    """Paper topology shrunk to desk scale."""
    return NetConfig(input_size=input_size, scale_factor=scale_factor)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class NetParams:
    config: NetConfig
    arrays: dict = field(default_factory=dict)  # key -> float64 ndarray

    def copy(self) -> "NetParams":
        return NetParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


def _layer_plan(cfg: NetConfig):
    """Conv layers in forward order: (key, c_in, c_out, spatial_side, kernel)."""
    enc, dec = cfg.enc, cfg.dec
    n = len(enc)
    side = cfg.input_size
    plan = []
    c_in = 1
    for i, f in enumerate(enc):
        plan.append((f"enc{i}", c_in, f, side, cfg.kernel_size))
        c_in = f
        if i < n - 1:
            side //= cfg.pool
    for j, f in enumerate(dec):
        side *= cfg.upsample
        if cfg.skip_connections:
            c_in += enc[n - 2 - j]
        plan.append((f"dec{j}", c_in, f, side, cfg.kernel_size))
        c_in = f
    plan.append(("head", c_in, 1, side, 1))
    return plan


def param_keys(cfg: NetConfig):
    """Canonical parameter ordering used for init, Adam, and checkpoints."""
    keys = []
    for name, *_ in _layer_plan(cfg):
        keys += [f"{name}/w", f"{name}/b"]
    return keys


def build_net(config: NetConfig, rng_seed: int = 0) -> NetParams:
    """He-initialized parameters; deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    arrays = {}
    for name, c_in, c_out, _side, k in _layer_plan(config):
        std = np.sqrt(2.0 / (k * k * c_in))
        arrays[f"{name}/w"] = rng.normal(0.0, std, size=(k, k, c_in, c_out))
        arrays[f"{name}/b"] = np.zeros(c_out)
    return NetParams(config, arrays)


# ---------------------------------------------------------------- conv ops

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    b, h, w, c = x.shape
    if k == 1:
        return x.reshape(b * h * w, c)
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    v = sliding_window_view(xp, (k, k), axis=(1, 2))  # (b, h, w, c, k, k)
    return v.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, k * k * c)


def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    k, _, c_in, c_out = w.shape
    out = _im2col(x, k) @ w.reshape(k * k * c_in, c_out)
    if b is not None:
        out += b
    return out.reshape(x.shape[0], x.shape[1], x.shape[2], c_out)


def _conv_input_grad(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    # same-padding correlation with the spatially flipped, channel-swapped kernel
    wf = w[::-1, ::-1].transpose(0, 1, 3, 2)
    return _conv(dout, wf, None)


def _conv_param_grads(x: np.ndarray, dout: np.ndarray, k: int):
    c_out = dout.shape[-1]
    cols = _im2col(x, k)
    dw = cols.T @ dout.reshape(-1, c_out)
    return dw.reshape(k, k, x.shape[-1], c_out), dout.sum(axis=(0, 1, 2))


def _maxpool(x: np.ndarray):
    b, h, w, c = x.shape
    xw = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    xw = xw.reshape(b, h // 2, w // 2, 4, c)
    idx = xw.argmax(axis=3)  # first maximum wins on ties
    out = np.take_along_axis(xw, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, idx.astype(np.uint8)


def _maxpool_grad(dout: np.ndarray, idx: np.ndarray, in_shape) -> np.ndarray:
    b, h, w, c = in_shape
    dxw = np.zeros((b, h // 2, w // 2, 4, c))
    np.put_along_axis(dxw, idx[:, :, :, None, :].astype(np.intp), dout[:, :, :, None, :], axis=3)
    dxw = dxw.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return dxw.reshape(b, h, w, c)


def _upsample(x: np.ndarray, s: int) -> np.ndarray:
    return np.repeat(np.repeat(x, s, axis=1), s, axis=2)


def _upsample_grad(dout: np.ndarray, s: int) -> np.ndarray:
    b, h, w, c = dout.shape
    return dout.reshape(b, h // s, s, w // s, s, c).sum(axis=(2, 4))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ------------------------------------------------------------ forward pass

def _forward_batch(params: NetParams, x: np.ndarray, keep_cache: bool):
    cfg = params.config
    arrays = params.arrays
    n = len(cfg.enc)
    cache = {"conv_in": {}, "relu_out": {}, "pool_idx": {}, "pool_in_shape": {}} if keep_cache else None

    a = x
    skips = []
    for i in range(n):
        w = arrays[f"enc{i}/w"]
        if keep_cache:
            cache["conv_in"][f"enc{i}"] = a
        a = np.maximum(_conv(a, w, arrays[f"enc{i}/b"]), 0.0)
        if keep_cache:
            cache["relu_out"][f"enc{i}"] = a
        if i < n - 1:
            skips.append(a)
            if keep_cache:
                cache["pool_in_shape"][i] = a.shape
            a, idx = _maxpool(a)
            if keep_cache:
                cache["pool_idx"][i] = idx

    for j in range(len(cfg.dec)):
        a = _upsample(a, cfg.upsample)
        if cfg.skip_connections:
            a = np.concatenate([a, skips[n - 2 - j]], axis=-1)
        if keep_cache:
            cache["conv_in"][f"dec{j}"] = a
        a = np.maximum(_conv(a, arrays[f"dec{j}/w"], arrays[f"dec{j}/b"]), 0.0)
        if keep_cache:
            cache["relu_out"][f"dec{j}"] = a

    if keep_cache:
        cache["conv_in"]["head"] = a
    logits = _conv(a, arrays["head/w"], arrays["head/b"])
    return logits, cache


def forward(params: NetParams, frame: np.ndarray) -> np.ndarray:
    """Per-pixel wall probability map for one frame, same spatial size."""
    frame = np.asarray(frame, dtype=np.float64)
    s = params.config.input_size
    if frame.shape != (s, s):
        raise ShapeError(f"expected a {s}x{s} frame, got {frame.shape[0]}x{frame.shape[1]}")
    logits, _ = _forward_batch(params, frame[None, :, :, None], keep_cache=False)
    return _sigmoid(logits[0, :, :, 0])


def _loss_and_grads(params: NetParams, x: np.ndarray, y: np.ndarray):
    """Pixel-mean binary cross-entropy over the batch, with full gradients."""
    cfg = params.config
    arrays = params.arrays
    n = len(cfg.enc)
    logits, cache = _forward_batch(params, x, keep_cache=True)

    elems = np.logaddexp(0.0, logits) - y * logits
    per_sample = elems.mean(axis=(1, 2, 3))
    loss = float(per_sample.mean())
    dlogits = (_sigmoid(logits) - y) / logits.size

    grads = {}
    dw, db = _conv_param_grads(cache["conv_in"]["head"], dlogits, 1)
    grads["head/w"], grads["head/b"] = dw, db
    da = _conv_input_grad(dlogits, arrays["head/w"])

    skip_grads = {}
    for j in reversed(range(len(cfg.dec))):
        dz = da * (cache["relu_out"][f"dec{j}"] > 0)
        x_in = cache["conv_in"][f"dec{j}"]
        dw, db = _conv_param_grads(x_in, dz, cfg.kernel_size)
        grads[f"dec{j}/w"], grads[f"dec{j}/b"] = dw, db
        dx = _conv_input_grad(dz, arrays[f"dec{j}/w"])
        if cfg.skip_connections:
            c_up = x_in.shape[-1] - cfg.enc[n - 2 - j]
            skip_grads[n - 2 - j] = dx[..., c_up:]
            dx = dx[..., :c_up]
        da = _upsample_grad(dx, cfg.upsample)

    for i in reversed(range(n)):
        if i < n - 1:
            da = _maxpool_grad(da, cache["pool_idx"][i], cache["pool_in_shape"][i])
            if cfg.skip_connections and i in skip_grads:
                da = da + skip_grads[i]
        dz = da * (cache["relu_out"][f"enc{i}"] > 0)
        dw, db = _conv_param_grads(cache["conv_in"][f"enc{i}"], dz, cfg.kernel_size)
        grads[f"enc{i}/w"], grads[f"enc{i}/b"] = dw, db
        if i > 0:
            da = _conv_input_grad(dz, arrays[f"enc{i}/w"])

    return loss, per_sample, grads


def _batch_loss(params: NetParams, x: np.ndarray, y: np.ndarray) -> float:
    logits, _ = _forward_batch(params, x, keep_cache=False)
    return float((np.logaddexp(0.0, logits) - y * logits).mean())


# ----------------------------------------------------------------- training

def train(params: NetParams, dataset, cfg: TrainConfig):
    """Mini-batch Adam training; returns (new params, per-epoch mean loss).

    The epoch loss is the mean of per-sample losses accumulated by dataset
    index, so it does not depend on the shuffle order. Shuffling, and hence
    the whole run, is a pure function of cfg.rng_seed.
    """
    cfg.validate()
    if not dataset:
        raise ConfigError("training dataset is empty")
    s = params.config.input_size
    for t, (frame, mask) in enumerate(dataset):
        if frame.shape != (s, s) or mask.shape != (s, s):
            raise ShapeError(f"dataset item {t} is not {s}x{s}")
    x_all = np.stack([np.asarray(f, dtype=np.float64) for f, _ in dataset])[..., None]
    y_all = np.stack([np.asarray(m, dtype=np.float64) for _, m in dataset])[..., None]
    n = len(dataset)

    params = params.copy()
    keys = param_keys(params.config)
    m = {k: np.zeros_like(params.arrays[k]) for k in keys}
    v = {k: np.zeros_like(params.arrays[k]) for k in keys}
    step = 0
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed))
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sample_losses = np.empty(n)
        for lo in range(0, n, cfg.batch_size):
            batch = perm[lo : lo + cfg.batch_size]
            loss, per_sample, grads = _loss_and_grads(params, x_all[batch], y_all[batch])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {lo // cfg.batch_size}")
            sample_losses[batch] = per_sample
            step += 1
            bc1 = 1.0 - cfg.beta1 ** step
            bc2 = 1.0 - cfg.beta2 ** step
            for k in keys:
                g = grads[k]
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g
                params.arrays[k] -= cfg.learning_rate * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + cfg.eps)
            for k in keys:
                if not np.all(np.isfinite(params.arrays[k])):
                    raise DivergenceError(f"non-finite parameters in {k} at epoch {epoch}")
        history.append(float(sample_losses.mean()))
    return params, history


@dataclass
class GradientCheckResult:
    max_relative_error: float
    n_probes: int
    warned: bool  # set when no probes were requested


def gradient_check(
    params: NetParams,
    sample,
    epsilon: float = 1e-5,
    n_probes: int = 200,
    rng_seed: int = 0,
) -> GradientCheckResult:
    """Compare analytic gradients against central finite differences.

    Probes n_probes randomly chosen parameter coordinates and returns the
    maximum relative error |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-12).
    Intended for tiny configurations (two loss evaluations per probe).
    """
    if n_probes == 0:
        return GradientCheckResult(0.0, 0, True)
    frame, mask = sample
    x = np.asarray(frame, dtype=np.float64)[None, :, :, None]
    y = np.asarray(mask, dtype=np.float64)[None, :, :, None]
    _, _, grads = _loss_and_grads(params, x, y)

    keys = param_keys(params.config)
    sizes = np.array([params.arrays[k].size for k in keys])
    total = int(sizes.sum())
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    picks = rng.choice(total, size=min(n_probes, total), replace=False)

    offsets = np.concatenate([[0], np.cumsum(sizes)])
    work = params.copy()
    worst = 0.0
    for flat in sorted(int(p) for p in picks):
        ki = int(np.searchsorted(offsets, flat, side="right") - 1)
        key = keys[ki]
        idx = flat - offsets[ki]
        arr = work.arrays[key].ravel()
        orig = arr[idx]
        arr[idx] = orig + epsilon
        up = _batch_loss(work, x, y)
        arr[idx] = orig - epsilon
        down = _batch_loss(work, x, y)
        arr[idx] = orig
        g_fd = (up - down) / (2.0 * epsilon)
        g_a = float(grads[key].ravel()[idx])
        rel = abs(g_a - g_fd) / max(abs(g_a), abs(g_fd), 1e-12)
        worst = max(worst, rel)
    return GradientCheckResult(worst, len(picks), False)


# ------------------------------------------------------------- op counting

@dataclass(frozen=True)
class OpLayer:
    name: str
    n_in: int
    n_out: int
    map_size: int  # pixels entering the layer
    kernel: int


@dataclass
class OpCounts:
    c_mul: int
    c_add: int
    per_layer: list


def conv_layer_table(config: NetConfig):
    """Per-convolution (n_in, n_out, input map size, kernel) for a config."""
    config.validate()
    return [
        OpLayer(name, c_in, c_out, side * side, k)
        for name, c_in, c_out, side, k in _layer_plan(config)
    ]


def count_ops(layers) -> OpCounts:
    """Multiplication and addition counts of the convolution stack.

    Accepts a NetConfig or an iterable of (n_in, n_out, map_size, kernel)
    rows / OpLayer entries. Per layer: mul = n_in*n_out*s*k^2 and
    add = n_in*n_out*s*(k-1)^2 + n_in*n_out*s. Counts are exact ints.
    """
    if isinstance(layers, NetConfig):
        layers = conv_layer_table(layers)
    rows = []
    for entry in layers:
        if isinstance(entry, OpLayer):
            rows.append(entry)
        else:
            n_in, n_out, s, k = entry
            rows.append(OpLayer(f"layer{len(rows)}", n_in, n_out, s, k))
    c_mul = 0
    c_add = 0
    per_layer = []
    for r in rows:
        base = r.n_in * r.n_out * r.map_size
        mul = base * r.kernel * r.kernel
        add = base * (r.kernel - 1) ** 2 + base
        per_layer.append((r.name, mul, add))
        c_mul += mul
        c_add += add
    return OpCounts(c_mul, c_add, per_layer)


# ------------------------------------------------------------ segmentation

def segment_echo(params: NetParams, frames, threshold: float = 0.5, threads: int = 1):
    """Predict a post-processed wall mask for every frame, order preserved.

    Per frame: forward pass, inclusive thresholding, 3x3 morphological
    opening, largest-component selection. Errors are tagged with the frame
    index.
    """

    def one(t_frame):
        t, frame = t_frame
        try:
            prob = forward(params, frame)
            mask = imgproc.binarize(prob, threshold)
            mask = imgproc.morphological_open(mask)
            return imgproc.largest_component(mask)
        except EchoWallError as e:
            raise type(e)(f"frame {t}: {e}") from e

    items = list(enumerate(frames))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, items))
    return [one(it) for it in items]


# -------------------------------------------------------------- checkpoint

_MAGIC = b"EDWNET"
_VERSION = 1


def save_checkpoint(path, params: NetParams) -> None:
    """Versioned binary checkpoint: magic, canonical config JSON, then one
    little-endian float64 blob per parameter array."""
    cfg_json = json.dumps(asdict(params.config), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<HI", _VERSION, len(cfg_json)))
    buf.write(cfg_json)
    for key in param_keys(params.config):
        arr = np.ascontiguousarray(params.arrays[key], dtype="<f8")
        kb = key.encode()
        buf.write(struct.pack("<I", len(kb)))
        buf.write(kb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> NetParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ConfigError(f"{path} is not a network checkpoint (bad magic)")
    off = len(_MAGIC)
    version, cfg_len = struct.unpack_from("<HI", data, off)
    off += struct.calcsize("<HI")
    if version != _VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    cfg_dict = json.loads(data[off : off + cfg_len])
    off += cfg_len
    for k in ("encoder_filters", "decoder_filters"):
        cfg_dict[k] = tuple(cfg_dict[k])
    config = NetConfig(**cfg_dict)
    config.validate()
    arrays = {}
    while off < len(data):
        (klen,) = struct.unpack_from("<I", data, off)
        off += 4
        key = data[off : off + klen].decode()
        off += klen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        arrays[key] = arr.astype(np.float64)
    expected = param_keys(config)
    if sorted(arrays) != sorted(expected):
        raise ConfigError("checkpoint parameter set does not match its config")
    params = NetParams(config, arrays)
    for name, c_in, c_out, _side, k in _layer_plan(config):
        if arrays[f"{name}/w"].shape != (k, k, c_in, c_out):
            raise ShapeError(
                f"checkpoint {name}/w has shape {arrays[f'{name}/w'].shape}, "
                f"expected {(k, k, c_in, c_out)}"
            )
        if arrays[f"{name}/b"].shape != (c_out,):
            raise ShapeError(f"checkpoint {name}/b has shape {arrays[f'{name}/b'].shape}")
    return params
