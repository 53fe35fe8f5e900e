"""Small from-scratch convolutional regressor proving the generated labels
are learnable: image in, a fixed-size block of electrode coordinates out.

The architecture is deliberately tiny and fully explicit (two strided
convolutions, two dense layers, all float64) so the backpropagation can be
validated against central finite differences. Optimization is mean squared
error under Adam with a learning rate halved on a fixed epoch schedule.
Targets are standardized per dimension with training-set statistics and
de-standardized at prediction time, so callers only ever see physical units.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .labeling import DatasetManifest, load_frame

# Fixed convolution geometry; channel counts and dense width are configurable.
CONV_KERNELS = (5, 3)
CONV_STRIDES = (2, 2)
PARAM_ORDER = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
)
# Depth is fed as meters clipped to this range, then scaled to [0, 1].
DEPTH_CLIP_M = 2.0

_MODEL_MAGIC = b"CFRG"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_width: int = 64
    input_height: int = 64
    input_channels: int = 3  # 1 = depth, 3 = RGB, 4 = RGBD
    conv_channels: tuple[int, int] = (8, 16)
    dense_width: int = 64
    output_dim: int = 16  # N*2 for pixel labels, N*3 for 3D labels

    def __post_init__(self) -> None:
        if self.input_width < 8 or self.input_height < 8:
            raise ValueError("input size must be at least 8x8")
        if self.input_channels not in (1, 3, 4):
            raise ValueError("input_channels must be 1 (D), 3 (RGB), or 4 (RGBD)")
        if min(self.conv_channels) < 1 or self.dense_width < 1:
            raise ValueError("hidden sizes must be positive")
        if self.output_dim < 2 or (
            self.output_dim % 2 != 0 and self.output_dim % 3 != 0
        ):
            raise ValueError("output_dim must be N*2 or N*3")

    def conv_output(self) -> tuple[int, int]:
        h, w = self.input_height, self.input_width
        for k, s in zip(CONV_KERNELS, CONV_STRIDES):
            h = (h - k) // s + 1
            w = (w - k) // s + 1
            if h < 1 or w < 1:
                raise ValueError("input size too small for the conv stack")
        return h, w


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    batch: int = 10
    epochs: int = 200
    halve_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if min(self.lr0, self.beta1, self.beta2, self.eps) < 0:
            raise ValueError("optimizer constants must be non-negative")
        if self.batch < 1 or self.epochs < 1 or self.halve_every < 1:
            raise ValueError("batch, epochs, and halve_every must be positive")


@dataclass(eq=False)
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def init_model(config: ModelConfig, rng_seed: int = 0) -> Model:
    """He-initialized weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(rng_seed)
    c1, c2 = config.conv_channels
    k1, k2 = CONV_KERNELS
    oh, ow = config.conv_output()
    flat = c2 * oh * ow

    def he(shape, fan_in):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    params = {
        "conv1_w": he((c1, config.input_channels, k1, k1), config.input_channels * k1 * k1),
        "conv1_b": np.zeros(c1),
        "conv2_w": he((c2, c1, k2, k2), c1 * k2 * k2),
        "conv2_b": np.zeros(c2),
        "fc1_w": he((config.dense_width, flat), flat),
        "fc1_b": np.zeros(config.dense_width),
        "fc2_w": rng.standard_normal((config.output_dim, config.dense_width))
        * np.sqrt(1.0 / config.dense_width),
        "fc2_b": np.zeros(config.output_dim),
    }
    return Model(config=config, params=params)


def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    b, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    cols = np.empty((b, c, k, k, oh, ow))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * k * k, oh * ow), oh, ow


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int) -> np.ndarray:
    b, c, h, w = x_shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    dcols = dcols.reshape(b, c, k, k, oh, ow)
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[
                :, :, i, j
            ]
    return dx


def _forward_cached(model: Model, x: np.ndarray):
    cfg = model.config
    p = model.params
    c1, c2 = cfg.conv_channels
    k1, k2 = CONV_KERNELS
    s1, s2 = CONV_STRIDES

    cols1, oh1, ow1 = _im2col(x, k1, s1)
    pre1 = np.matmul(p["conv1_w"].reshape(c1, -1), cols1) + p["conv1_b"][None, :, None]
    act1 = np.maximum(pre1, 0.0)

    act1_img = act1.reshape(x.shape[0], c1, oh1, ow1)
    cols2, oh2, ow2 = _im2col(act1_img, k2, s2)
    pre2 = np.matmul(p["conv2_w"].reshape(c2, -1), cols2) + p["conv2_b"][None, :, None]
    act2 = np.maximum(pre2, 0.0)

    flat = act2.reshape(x.shape[0], -1)
    pre3 = flat @ p["fc1_w"].T + p["fc1_b"]
    act3 = np.maximum(pre3, 0.0)
    out = act3 @ p["fc2_w"].T + p["fc2_b"]

    cache = (x, cols1, pre1, (oh1, ow1), cols2, pre2, (oh2, ow2), flat, pre3, act3)
    return out, cache


def forward(model: Model, image: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; accepts (C, H, W) or a (B, C, H, W) batch."""
    x = np.asarray(image, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    cfg = model.config
    expected = (cfg.input_channels, cfg.input_height, cfg.input_width)
    if x.shape[1:] != expected:
        raise ValueError(f"image shape {x.shape[1:]} does not match model {expected}")
    out, _ = _forward_cached(model, x)
    return out[0] if single else out


def loss_and_grad(
    model: Model, batch_images: np.ndarray, batch_targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over the batch and exact backprop gradients."""
    x = np.asarray(batch_images, dtype=float)
    t = np.asarray(batch_targets, dtype=float)
    if x.ndim != 4 or x.shape[0] < 1:
        raise ValueError("batch_images must be a non-empty (B, C, H, W) array")
    if t.shape != (x.shape[0], model.config.output_dim):
        raise ValueError(
            f"targets shape {t.shape} does not match "
            f"(B, {model.config.output_dim})"
        )
    cfg = model.config
    p = model.params
    c1, c2 = cfg.conv_channels
    k1, k2 = CONV_KERNELS
    s1, s2 = CONV_STRIDES

    out, cache = _forward_cached(model, x)
    x_in, cols1, pre1, (oh1, ow1), cols2, pre2, (oh2, ow2), flat, pre3, act3 = cache

    diff = out - t
    loss = float(np.mean(diff * diff))
    dout = 2.0 * diff / diff.size

    grads: dict[str, np.ndarray] = {}
    grads["fc2_w"] = dout.T @ act3
    grads["fc2_b"] = dout.sum(axis=0)
    dact3 = dout @ p["fc2_w"]
    dpre3 = dact3 * (pre3 > 0.0)

    grads["fc1_w"] = dpre3.T @ flat
    grads["fc1_b"] = dpre3.sum(axis=0)
    dflat = dpre3 @ p["fc1_w"]

    dact2 = dflat.reshape(x.shape[0], c2, oh2 * ow2)
    dpre2 = dact2 * (pre2 > 0.0)
    grads["conv2_w"] = (
        np.matmul(dpre2, cols2.transpose(0, 2, 1)).sum(axis=0).reshape(p["conv2_w"].shape)
    )
    grads["conv2_b"] = dpre2.sum(axis=(0, 2))
    dcols2 = np.matmul(p["conv2_w"].reshape(c2, -1).T, dpre2)
    dact1 = _col2im(dcols2, (x.shape[0], c1, oh1, ow1), k2, s2)

    dpre1 = dact1.reshape(x.shape[0], c1, oh1 * ow1) * (pre1 > 0.0)
    grads["conv1_w"] = (
        np.matmul(dpre1, cols1.transpose(0, 2, 1)).sum(axis=0).reshape(p["conv1_w"].shape)
    )
    grads["conv1_b"] = dpre1.sum(axis=(0, 2))
    return loss, grads


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    b1, b2, eps = 0.9, 0.999, 1e-8
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(m=new_m, v=new_v, step=t)


@dataclass(eq=False)
class TrainedRegressor:
    """A trained model plus the target normalization it was fitted with."""

    model: Model
    label_dim: int  # 2 for pixel labels, 3 for 3D labels
    target_mean: np.ndarray
    target_std: np.ndarray


@dataclass(eq=False)
class TrainResult:
    regressor: TrainedRegressor
    log: list[dict]
    best_epoch: int


def _forward_chunked(model: Model, x: np.ndarray, chunk: int = 64) -> np.ndarray:
    outs = [forward(model, x[i : i + chunk]) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def train_arrays(
    model: Model,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    cfg: TrainConfig,
    label_dim: int,
) -> TrainResult:
    """Core epoch loop over in-memory arrays (targets in physical units).

    Batches are drawn by seeded shuffling; the learning rate is
    ``lr0 * 0.5 ** (epoch // halve_every)`` with epochs counted from zero.
    Validation MAE/rMAE/aCC are computed in physical units each epoch and the
    parameters with the best validation MAE are returned.
    """
    if train_x.shape[0] < 1 or val_x.shape[0] < 1:
        raise ValueError("training and validation sets must be non-empty")
    if train_y.shape[1] != model.config.output_dim:
        raise ValueError(
            f"label width {train_y.shape[1]} does not match model output "
            f"{model.config.output_dim}"
        )
    t_mean = train_y.mean(axis=0)
    t_std = train_y.std(axis=0)
    t_std = np.where(t_std < 1e-12, 1.0, t_std)
    train_y_n = (train_y - t_mean) / t_std

    rng = np.random.default_rng(cfg.rng_seed)
    params = {k: v.copy() for k, v in model.params.items()}
    state = AdamState.for_params(params)
    work = Model(config=model.config, params=params)

    best_mae = np.inf
    best_epoch = -1
    best_params = {k: v.copy() for k, v in params.items()}
    log: list[dict] = []
    n = train_x.shape[0]

    for epoch in range(cfg.epochs):
        lr = cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch):
            idx = perm[start : start + cfg.batch]
            loss, grads = loss_and_grad(work, train_x[idx], train_y_n[idx])
            work.params, state = adam_step(state, work.params, grads, lr)
            batch_losses.append(loss)

        val_pred = _forward_chunked(work, val_x) * t_std + t_mean
        val_mae, val_mae_std = metrics.mae(val_pred, val_y, point_dim=label_dim)
        entry = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(batch_losses)),
            "val_mae": val_mae,
            "val_mae_std": val_mae_std,
            "val_rmae": metrics.rmae(val_pred, val_y),
            "val_acc": metrics.acc(val_pred, val_y),
        }
        log.append(entry)
        if val_mae < best_mae:
            best_mae = val_mae
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in work.params.items()}

    trained = TrainedRegressor(
        model=Model(config=model.config, params=best_params),
        label_dim=label_dim,
        target_mean=t_mean,
        target_std=t_std,
    )
    return TrainResult(regressor=trained, log=log, best_epoch=best_epoch)


def predict(trained: TrainedRegressor, x: np.ndarray) -> np.ndarray:
    """De-standardized predictions, shape (S, output_dim), physical units."""
    return _forward_chunked(trained.model, np.asarray(x, dtype=float)) * (
        trained.target_std
    ) + trained.target_mean


def mean_predictor_mae(
    train_y: np.ndarray, val_y: np.ndarray, label_dim: int
) -> tuple[float, float]:
    """MAE of always predicting the training-set mean target."""
    baseline = np.tile(train_y.mean(axis=0), (val_y.shape[0], 1))
    return metrics.mae(baseline, val_y, point_dim=label_dim)


# ---------------------------------------------------------------------------
# Dataset loading, prediction files, and the binary model format.


def _resize_bilinear_chw(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) image; identity when sizes match."""
    c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = x[:, y0][:, :, x0] * (1 - wx) + x[:, y0][:, :, x1] * wx
    bottom = x[:, y1][:, :, x0] * (1 - wx) + x[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def load_dataset(
    manifest: DatasetManifest, channels: str, label_mode: str, config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Image and label arrays for training.

    Images become (S, C, H, W) float64 in [0, 1]: RGB scaled by 255, depth
    clipped to [0, DEPTH_CLIP_M] meters then scaled; both resized to the
    model input. Labels stay physical: crop pixels for 2d, meters for 3d.
    """
    if channels not in ("rgb", "rgbd", "d"):
        raise ValueError(f"unknown channel mode {channels!r}")
    if label_mode not in ("2d", "3d"):
        raise ValueError(f"unknown label mode {label_mode!r}")
    images = []
    labels = []
    for record in manifest.records:
        planes = []
        if channels in ("rgb", "rgbd"):
            rgb, _ = None, None
            rgb = np.asarray(
                __import__("calibforge.image_io", fromlist=["read_ppm"]).read_ppm(
                    manifest.rgb_file(record)
                ),
                dtype=float,
            )
            planes.append(rgb.transpose(2, 0, 1) / 255.0)
        if channels in ("rgbd", "d"):
            depth = __import__("calibforge.image_io", fromlist=["read_pfm"]).read_pfm(
                manifest.depth_file(record)
            )
            planes.append((np.clip(depth, 0.0, DEPTH_CLIP_M) / DEPTH_CLIP_M)[None])
        stacked = np.concatenate(planes, axis=0)
        images.append(
            _resize_bilinear_chw(stacked, config.input_height, config.input_width)
        )
        if label_mode == "2d":
            labels.append(record.labels_2d.astype(float).reshape(-1))
        else:
            labels.append(record.labels_3d.reshape(-1))
    x = np.stack(images, axis=0)
    y = np.stack(labels, axis=0)
    if y.shape[1] != config.output_dim:
        raise ValueError(
            f"dataset label width {y.shape[1]} does not match model output "
            f"{config.output_dim}"
        )
    return x, y


def split_indices(
    n: int, val_fraction: float, rng_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation index split (validation floor of 1 sample)."""
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ValueError("validation fraction leaves no training samples")
    perm = np.random.default_rng(rng_seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def write_predictions(path, predictions: np.ndarray, label_dim: int) -> None:
    """JSON-lines predictions, one record per frame in manifest order."""
    predictions = np.asarray(predictions, dtype=float)
    with open(path, "w", encoding="ascii") as f:
        for i, row in enumerate(predictions):
            points = row.reshape(-1, label_dim)
            f.write(
                json.dumps(
                    {
                        "frame_index": i,
                        "points": [[float(v) for v in pt] for pt in points],
                    }
                )
                + "\n"
            )


def read_predictions(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if line:
                obj = json.loads(line)
                rows.append(np.asarray(obj["points"], dtype=float).reshape(-1))
    if not rows:
        raise ValueError(f"{path}: no prediction records")
    return np.stack(rows, axis=0)


def save_model(path, trained: TrainedRegressor) -> None:
    """Flat binary model file.

    Layout (all little-endian): magic b"CFRG", u32 version, then u32 fields
    input_width, input_height, input_channels, conv1_channels, conv2_channels,
    dense_width, output_dim, label_dim; then one float32 blob holding the
    parameters in PARAM_ORDER followed by the target mean and std vectors.
    """
    cfg = trained.model.config
    header = _MODEL_MAGIC + struct.pack(
        "<9I",
        _MODEL_VERSION,
        cfg.input_width,
        cfg.input_height,
        cfg.input_channels,
        cfg.conv_channels[0],
        cfg.conv_channels[1],
        cfg.dense_width,
        cfg.output_dim,
        trained.label_dim,
    )
    blob = b"".join(
        trained.model.params[k].astype("<f4").tobytes() for k in PARAM_ORDER
    )
    blob += trained.target_mean.astype("<f4").tobytes()
    blob += trained.target_std.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + blob)


def load_model(path) -> TrainedRegressor:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    fields = struct.unpack("<9I", raw[4 : 4 + 36])
    if fields[0] != _MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {fields[0]}")
    (_, in_w, in_h, in_c, c1, c2, dense, out_dim, label_dim) = fields
    config = ModelConfig(
        input_width=in_w,
        input_height=in_h,
        input_channels=in_c,
        conv_channels=(c1, c2),
        dense_width=dense,
        output_dim=out_dim,
    )
    oh, ow = config.conv_output()
    shapes = {
        "conv1_w": (c1, in_c, CONV_KERNELS[0], CONV_KERNELS[0]),
        "conv1_b": (c1,),
        "conv2_w": (c2, c1, CONV_KERNELS[1], CONV_KERNELS[1]),
        "conv2_b": (c2,),
        "fc1_w": (dense, c2 * oh * ow),
        "fc1_b": (dense,),
        "fc2_w": (out_dim, dense),
        "fc2_b": (out_dim,),
    }
    offset = 4 + 36
    values = np.frombuffer(raw[offset:], dtype="<f4").astype(float)
    params = {}
    cursor = 0
    for k in PARAM_ORDER:
        size = int(np.prod(shapes[k]))
        params[k] = values[cursor : cursor + size].reshape(shapes[k])
        cursor += size
    if values.size != cursor + 2 * out_dim:
        raise ValueError(f"{path}: parameter blob has the wrong size")
    target_mean = values[cursor : cursor + out_dim]
    target_std = values[cursor + out_dim : cursor + 2 * out_dim]
    return TrainedRegressor(
        model=Model(config=config, params=params),
        label_dim=label_dim,
        target_mean=target_mean,
        target_std=target_std,
    )
