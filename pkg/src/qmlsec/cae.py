"""Convolutional autoencoder in plain numpy (NCHW layout).

Encoder: conv3x3/s2 + ReLU, conv3x3/s2 + ReLU, flatten, dense -> d.
Decoder: dense d -> flat + ReLU, reshape, convT3x3/s2 + ReLU, convT3x3/s2 + sigmoid.
With the default 32x32 input and filters (8, 16) the shapes run
32 -> 16 -> 8 -> 1024 -> d -> 1024 -> 8 -> 16 -> 32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import Adam

KERNEL = 3
STRIDE = 2
PAD = 1
OUTPUT_PAD = 1

PARAM_ORDER = ("enc1_w", "enc1_b", "enc2_w", "enc2_b", "enc_fc_w", "enc_fc_b",
               "dec_fc_w", "dec_fc_b", "dec1_w", "dec1_b", "dec2_w", "dec2_b")


def _conv_out(size: int) -> int:
    return (size + 2 * PAD - KERNEL) // STRIDE + 1


def _convT_out(size: int) -> int:
    return (size - 1) * STRIDE - 2 * PAD + KERNEL + OUTPUT_PAD


def im2col(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, out_h*out_w) patches for a 3x3/s2/p1 window."""
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    cols = np.empty((n, c, KERNEL, KERNEL, out_h, out_w), dtype=x.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            cols[:, :, i, j] = xp[:, :, i:i + STRIDE * out_h:STRIDE, j:j + STRIDE * out_w:STRIDE]
    return cols.reshape(n, c * KERNEL * KERNEL, out_h * out_w)


def col2im(cols: np.ndarray, shape: tuple, out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back to an (N, C, H, W) image."""
    n, c, h, w = shape
    cols = cols.reshape(n, c, KERNEL, KERNEL, out_h, out_w)
    xp = np.zeros((n, c, h + 2 * PAD + STRIDE, w + 2 * PAD + STRIDE), dtype=cols.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            xp[:, :, i:i + STRIDE * out_h:STRIDE, j:j + STRIDE * out_w:STRIDE] += cols[:, :, i, j]
    return xp[:, :, PAD:PAD + h, PAD:PAD + w]


def conv_forward(x, w, b):
    n, _, h, wd = x.shape
    oh, ow = _conv_out(h), _conv_out(wd)
    cols = im2col(x, oh, ow)
    out = np.matmul(w.reshape(w.shape[0], -1), cols) + b[None, :, None]
    return out.reshape(n, w.shape[0], oh, ow), cols


def conv_backward(dout, x_shape, cols, w):
    n, f, oh, ow = dout.shape
    d = dout.reshape(n, f, oh * ow)
    dw = np.einsum("nfp,nkp->fk", d, cols).reshape(w.shape)
    db = d.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, -1).T, d)
    return col2im(dcols, x_shape, oh, ow), dw, db


def convT_forward(x, w, b):
    """Transposed conv; ``w`` is (C_in, C_out, k, k)."""
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    oh, ow = _convT_out(h), _convT_out(wd)
    xf = x.reshape(n, cin, h * wd)
    cols = np.matmul(w.reshape(cin, -1).T, xf)
    out = col2im(cols, (n, cout, oh, ow), h, wd) + b[None, :, None, None]
    return out


def convT_backward(dout, x, w):
    n, cin, h, wd = x.shape
    dcols = im2col(dout, h, wd)
    xf = x.reshape(n, cin, h * wd)
    dx = np.matmul(w.reshape(cin, -1), dcols).reshape(x.shape)
    dw = np.einsum("ncp,nkp->ck", xf, dcols).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class CaeModel:
    d: int
    image_size: int = 32
    filters: tuple = (8, 16)
    params: dict = field(default_factory=dict)

    @property
    def bottleneck(self) -> tuple[int, int]:
        s = _conv_out(_conv_out(self.image_size))
        return s, self.filters[1] * s * s

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "CaeModel":
        return CaeModel(self.d, self.image_size, tuple(self.filters), {k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        return {
            "d": self.d, "image_size": self.image_size, "filters": list(self.filters),
            "layers": [{"name": k, "shape": list(self.params[k].shape),
                        "data": self.params[k].ravel().tolist()} for k in PARAM_ORDER],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CaeModel":
        params = {e["name"]: np.asarray(e["data"], dtype=np.float64).reshape(e["shape"]) for e in doc["layers"]}
        model = cls(int(doc["d"]), int(doc["image_size"]), tuple(doc["filters"]), params)
        ref = cae_init(model.d, 0, model.image_size, model.filters)
        for k in PARAM_ORDER:
            if k not in params or params[k].shape != ref.params[k].shape:
                raise ValueError(f"layer {k} missing or mis-shaped")
        return model


def param_shapes(d: int, image_size: int = 32, filters=(8, 16)) -> dict:
    f1, f2 = filters
    s = _conv_out(_conv_out(image_size))
    flat = f2 * s * s
    return {
        "enc1_w": (f1, 1, KERNEL, KERNEL), "enc1_b": (f1,),
        "enc2_w": (f2, f1, KERNEL, KERNEL), "enc2_b": (f2,),
        "enc_fc_w": (d, flat), "enc_fc_b": (d,),
        "dec_fc_w": (flat, d), "dec_fc_b": (flat,),
        "dec1_w": (f2, f1, KERNEL, KERNEL), "dec1_b": (f1,),
        "dec2_w": (f1, 1, KERNEL, KERNEL), "dec2_b": (1,),
    }


def cae_init(d: int, seed: int, image_size: int = 32, filters=(8, 16)) -> CaeModel:
    """He-uniform weights, zero biases."""
    if d < 1:
        raise ValueError("latent dimension must be >= 1")
    if image_size % 4:
        raise ValueError("image_size must be a multiple of 4")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(d, image_size, filters).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
            continue
        if name in ("enc_fc_w", "dec_fc_w"):
            fan_in = shape[1]
        elif name.startswith("dec") and len(shape) == 4:
            fan_in = shape[0] * KERNEL * KERNEL
        else:
            fan_in = int(np.prod(shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-limit, limit, size=shape)
    return CaeModel(d, image_size, tuple(filters), params)


def _as_batch(model: CaeModel, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    s = model.image_size
    if x.shape[-2:] != (s, s):
        raise ValueError(f"expected {s}x{s} images, got shape {x.shape}")
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected single-channel images, got shape {x.shape}")
    return x


def _forward(model: CaeModel, x: np.ndarray):
    p = model.params
    n = x.shape[0]
    s, flat = model.bottleneck
    a1_pre, cols1 = conv_forward(x, p["enc1_w"], p["enc1_b"])
    a1 = np.maximum(a1_pre, 0)
    a2_pre, cols2 = conv_forward(a1, p["enc2_w"], p["enc2_b"])
    a2 = np.maximum(a2_pre, 0)
    h = a2.reshape(n, flat)
    z = h @ p["enc_fc_w"].T + p["enc_fc_b"]
    g_pre = z @ p["dec_fc_w"].T + p["dec_fc_b"]
    g = np.maximum(g_pre, 0).reshape(n, model.filters[1], s, s)
    u1_pre = convT_forward(g, p["dec1_w"], p["dec1_b"])
    u1 = np.maximum(u1_pre, 0)
    logits = convT_forward(u1, p["dec2_w"], p["dec2_b"])
    recon = _sigmoid(logits)
    cache = dict(x=x, cols1=cols1, a1_pre=a1_pre, a1=a1, cols2=cols2, a2_pre=a2_pre, h=h, z=z,
                 g_pre=g_pre, g=g, u1_pre=u1_pre, u1=u1, recon=recon)
    return recon, z, cache


def cae_forward(model: CaeModel, image):
    """Reconstruction (same shape as input batch, values in (0, 1)) and latent codes."""
    x = _as_batch(model, image)
    recon, z, _ = _forward(model, x)
    if np.asarray(image).ndim == 2:
        return recon[0, 0], z[0]
    return recon, z


def encode(model: CaeModel, images) -> np.ndarray:
    """Encoder-only pass, (N, d)."""
    p = model.params
    x = _as_batch(model, images)
    a1 = np.maximum(conv_forward(x, p["enc1_w"], p["enc1_b"])[0], 0)
    a2 = np.maximum(conv_forward(a1, p["enc2_w"], p["enc2_b"])[0], 0)
    return a2.reshape(x.shape[0], -1) @ p["enc_fc_w"].T + p["enc_fc_b"]


def reconstruction_loss(model: CaeModel, images) -> float:
    x = _as_batch(model, images)
    recon, _, _ = _forward(model, x)
    return float(np.mean((recon - x) ** 2))


def cae_gradient(model: CaeModel, images) -> tuple[float, dict]:
    """Mean-squared reconstruction error and its exact gradient for every weight."""
    x = _as_batch(model, images)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    p = model.params
    recon, _, c = _forward(model, x)
    loss = float(np.mean((recon - x) ** 2))
    grads = {}
    d_recon = 2.0 * (recon - x) / recon.size
    d_logits = d_recon * recon * (1.0 - recon)
    d_u1, grads["dec2_w"], grads["dec2_b"] = convT_backward(d_logits, c["u1"], p["dec2_w"])
    d_u1_pre = d_u1 * (c["u1_pre"] > 0)
    d_g, grads["dec1_w"], grads["dec1_b"] = convT_backward(d_u1_pre, c["g"], p["dec1_w"])
    d_g_pre = d_g.reshape(c["g_pre"].shape) * (c["g_pre"] > 0)
    grads["dec_fc_w"] = d_g_pre.T @ c["z"]
    grads["dec_fc_b"] = d_g_pre.sum(axis=0)
    d_z = d_g_pre @ p["dec_fc_w"]
    grads["enc_fc_w"] = d_z.T @ c["h"]
    grads["enc_fc_b"] = d_z.sum(axis=0)
    d_a2 = (d_z @ p["enc_fc_w"]).reshape(c["a2_pre"].shape) * (c["a2_pre"] > 0)
    d_a1, grads["enc2_w"], grads["enc2_b"] = conv_backward(d_a2, c["a1"].shape, c["cols2"], p["enc2_w"])
    d_a1 = d_a1 * (c["a1_pre"] > 0)
    _, grads["enc1_w"], grads["enc1_b"] = conv_backward(d_a1, x.shape, c["cols1"], p["enc1_w"])
    return loss, grads


@dataclass
class CaeConfig:
    learning_rate: float = 0.001
    epochs: int = 25
    batch_size: int = 50
    seed: int = 0
    d: int = 4
    filters: tuple = (8, 16)


def cae_train(images, config: CaeConfig | None = None, model: CaeModel | None = None):
    """Adam training with seeded shuffling.

    The history holds the full-dataset reconstruction MSE after every epoch.
    """
    cfg = config or CaeConfig()
    x = np.asarray(images, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if model is None:
        model = cae_init(cfg.d, cfg.seed, x.shape[-1], cfg.filters)
    else:
        model = model.copy()
    x = _as_batch(model, x)
    rng = np.random.default_rng(cfg.seed)
    opts = {k: Adam(cfg.learning_rate) for k in PARAM_ORDER}
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, order.size, cfg.batch_size):
            _, grads = cae_gradient(model, x[order[start:start + cfg.batch_size]])
            for k in PARAM_ORDER:
                model.params[k] = opts[k].step(model.params[k].ravel(), grads[k].ravel()).reshape(grads[k].shape)
        history.append(_dataset_loss(model, x, cfg.batch_size * 10))
    return model, history


def _dataset_loss(model, x, chunk):
    total = 0.0
    for start in range(0, x.shape[0], chunk):
        xb = x[start:start + chunk]
        recon, _, _ = _forward(model, xb)
        total += float(np.sum((recon - xb) ** 2))
    return total / x.size


def cae_encode_dataset(model: CaeModel, images, labels=None, chunk: int = 500):
    """Latent matrix (N, d) in input order, with the labels passed through."""
    x = np.asarray(images, dtype=np.float64)
    latents = np.concatenate([encode(model, x[i:i + chunk]) for i in range(0, x.shape[0], chunk)]) \
        if x.shape[0] else np.zeros((0, model.d))
    if labels is None:
        return latents
    labels = np.asarray(labels)
    if labels.shape[0] != latents.shape[0]:
        raise ValueError("labels and images differ in length")
    return latents, labels


def save_cae(model: CaeModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_cae(path) -> CaeModel:
    return CaeModel.from_dict(json.loads(Path(path).read_text()))
