"""Shallow x-vector network for bonafide/spoof detection.

Layers: two TDNN layers (context {-2..2} then {-2,0,2}), statistics
pooling (mean and standard deviation over time), one embedding layer and a
two-way softmax output. Everything is plain numpy with hand-written reverse
mode gradients so the training step can be checked against finite
differences exactly.
"""

from __future__ import annotations

import copy
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import (
    CropLongerThanShortestUtterance,
    DimensionMismatch,
    MalformedArchive,
    NotFound,
    SingleClassDataset,
    UtteranceTooShort,
)
from .features import FeatureMatrix, config_digest
from .scores import TrialScore

log = logging.getLogger(__name__)

CONTEXT1 = (-2, -1, 0, 1, 2)
CONTEXT2 = (-2, 0, 2)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "We", "be", "Wo", "bo")
STD_FLOOR = 1e-5
VAR_EPS = 1e-10
P_CLAMP = 1e-7

CHECKPOINT_MAGIC = b"SPXV"
CHECKPOINT_VERSION = 1


def _span(offsets) -> int:
    return max(offsets) - min(offsets)


RECEPTIVE_FIELD = _span(CONTEXT1) + _span(CONTEXT2) + 1


@dataclass(frozen=True)
class FocalLossParams:
    alpha: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class TdnnLayer:
    weight: np.ndarray  # (len(offsets) * D_in, H)
    bias: np.ndarray  # (H,)
    offsets: tuple


def _splice(x: np.ndarray, offsets) -> np.ndarray:
    """Stack frames at the given offsets along the feature axis (valid positions only)."""
    lo = min(offsets)
    t_out = x.shape[-2] - _span(offsets)
    return np.concatenate([x[..., o - lo : o - lo + t_out, :] for o in offsets], axis=-1)


def _unsplice(grad: np.ndarray, offsets, t_in: int) -> np.ndarray:
    """Adjoint of :func:`_splice`: scatter-add spliced gradients back onto input frames."""
    lo = min(offsets)
    t_out = grad.shape[-2]
    d = grad.shape[-1] // len(offsets)
    out = np.zeros(grad.shape[:-2] + (t_in, d), dtype=grad.dtype)
    for j, o in enumerate(offsets):
        out[..., o - lo : o - lo + t_out, :] += grad[..., j * d : (j + 1) * d]
    return out


def tdnn_forward(layer: TdnnLayer, frames: np.ndarray) -> np.ndarray:
    """ReLU(W . [x_{t+o} for o in offsets] + b) over every valid ``t``."""
    span = _span(layer.offsets)
    if frames.shape[-2] <= span:
        raise UtteranceTooShort(f"{frames.shape[-2]} frames, TDNN context spans {span + 1}")
    return np.maximum(_splice(frames, layer.offsets) @ layer.weight + layer.bias, 0.0)


def _moments(frames: np.ndarray):
    """Mean, centred frames and ``sqrt(var + 1e-10)`` over the time axis.

    Sums run over values sorted along time after shifting by the per-dimension
    minimum, so the result is exactly invariant to frame order and a constant
    input has exactly zero deviation.
    """
    ref = frames.min(axis=-2, keepdims=True)
    shifted = frames - ref
    t = frames.shape[-2]
    offset = np.sort(shifted, axis=-2).sum(axis=-2) / t
    centred = shifted - offset[..., None, :]
    var = np.sort(centred**2, axis=-2).sum(axis=-2) / t
    return ref[..., 0, :] + offset, centred, np.sqrt(var + VAR_EPS)


def stats_pooling(frames: np.ndarray) -> np.ndarray:
    """Mean and population standard deviation over time, concatenated.

    The deviation is ``max(sqrt(var + 1e-10), 1e-5)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-2] < 1:
        raise UtteranceTooShort("statistics pooling needs at least one frame")
    mean, _, sd_raw = _moments(frames)
    std = np.maximum(sd_raw, STD_FLOOR)
    return np.concatenate([mean, std], axis=-1)


def focal_loss(p, y, params: FocalLossParams = FocalLossParams()):
    """``-alpha [y (1-p)^g ln p + (1-y) p^g ln(1-p)]`` with ``p`` the bonafide posterior."""
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    g = params.gamma
    loss = -params.alpha * (y * (1.0 - p) ** g * np.log(p) + (1.0 - y) * p**g * np.log1p(-p))
    return loss if loss.ndim else float(loss)


def focal_loss_grad(p, y, params: FocalLossParams = FocalLossParams()):
    """d focal_loss / d p (zero where the clamp is active)."""
    raw = np.asarray(p, dtype=np.float64)
    p = np.clip(raw, P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    g = params.gamma
    q = 1.0 - p
    if g > 0:
        d_pos = -g * q ** (g - 1) * np.log(p) + q**g / p
        d_neg = g * p ** (g - 1) * np.log1p(-p) - p**g / q
    else:
        d_pos = 1.0 / p
        d_neg = -1.0 / q
    grad = -params.alpha * (y * d_pos + (1.0 - y) * d_neg)
    return np.where((raw > P_CLAMP) & (raw < 1.0 - P_CLAMP), grad, 0.0)


def init_params(input_dim: int, hidden1: int = 256, hidden2: int = 256,
                embed: int = 128, rng=None) -> dict:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(rng)
    shapes = {
        "W1": (len(CONTEXT1) * input_dim, hidden1),
        "W2": (len(CONTEXT2) * hidden1, hidden2),
        "We": (2 * hidden2, embed),
        "Wo": (embed, 2),
    }
    params = {}
    for name in PARAM_NAMES:
        if name.startswith("W"):
            fan_in = shapes[name][0]
            params[name] = rng.standard_normal(shapes[name]) * np.sqrt(2.0 / fan_in)
        else:
            params[name] = np.zeros(shapes["W" + name[1:]][1])
    return params


@dataclass
class XVectorModel:
    params: dict
    input_mean: np.ndarray
    input_std: np.ndarray
    focal: FocalLossParams = field(default_factory=FocalLossParams)

    @classmethod
    def create(cls, input_dim: int, hidden1: int = 256, hidden2: int = 256, embed: int = 128,
               seed=0, focal: FocalLossParams = FocalLossParams()) -> "XVectorModel":
        return cls(init_params(input_dim, hidden1, hidden2, embed, seed),
                   np.zeros(input_dim), np.ones(input_dim), focal)

    @property
    def dims(self) -> tuple:
        d = self.params["W1"].shape[0] // len(CONTEXT1)
        return d, self.params["W1"].shape[1], self.params["W2"].shape[1], self.params["We"].shape[1]

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def tdnn1(self) -> TdnnLayer:
        return TdnnLayer(self.params["W1"], self.params["b1"], CONTEXT1)

    @property
    def tdnn2(self) -> TdnnLayer:
        return TdnnLayer(self.params["W2"], self.params["b2"], CONTEXT2)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x.values if isinstance(x, FeatureMatrix) else x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"features have {x.shape[-1]} dims, model expects {self.input_dim}")
        if x.shape[-2] < RECEPTIVE_FIELD:
            raise UtteranceTooShort(
                f"{x.shape[-2]} frames is below the {RECEPTIVE_FIELD}-frame receptive field"
            )
        return x

    def _forward(self, x: np.ndarray):
        """Batched forward pass on (..., T, D); returns logits and the backward cache."""
        p = self.params
        x0 = (x - self.input_mean) / self.input_std
        c1 = _splice(x0, CONTEXT1)
        a1 = c1 @ p["W1"] + p["b1"]
        h1 = np.maximum(a1, 0.0)
        c2 = _splice(h1, CONTEXT2)
        a2 = c2 @ p["W2"] + p["b2"]
        h2 = np.maximum(a2, 0.0)
        mean, centred, sd_raw = _moments(h2)
        sd = np.maximum(sd_raw, STD_FLOOR)
        pooled = np.concatenate([mean, sd], axis=-1)
        ae = pooled @ p["We"] + p["be"]
        emb = np.maximum(ae, 0.0)
        logits = emb @ p["Wo"] + p["bo"]
        cache = dict(c1=c1, a1=a1, h1=h1, c2=c2, a2=a2, centred=centred, sd_raw=sd_raw,
                     pooled=pooled, ae=ae, emb=emb)
        return logits, cache

    def logits(self, f) -> np.ndarray:
        return self._forward(self._check(f))[0]

    def forward(self, f):
        """Posteriors ``(p_bonafide, p_spoof)`` for one utterance of any length >= 9 frames."""
        z = self.logits(f)
        p_b = float(expit(z[0] - z[1]))
        return p_b, float(expit(z[1] - z[0]))

    def embedding(self, f) -> np.ndarray:
        return self._forward(self._check(f))[1]["emb"]

    def loss_and_grads(self, x, y):
        """Mean focal loss over a batch (B, T, D) and its gradient for every parameter."""
        x = self._check(x)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim == 2:
            x, y = x[None], np.atleast_1d(y)
        p = self.params
        n = x.shape[0]
        logits, c = self._forward(x)
        prob = expit(logits[:, 0] - logits[:, 1])
        loss = float(np.mean(focal_loss(prob, y, self.focal)))

        dprob = focal_loss_grad(prob, y, self.focal) / n
        dz0 = dprob * prob * (1.0 - prob)
        dlogits = np.stack([dz0, -dz0], axis=1)
        g = {}
        g["Wo"] = c["emb"].T @ dlogits
        g["bo"] = dlogits.sum(axis=0)
        dae = (dlogits @ p["Wo"].T) * (c["ae"] > 0)
        g["We"] = c["pooled"].T @ dae
        g["be"] = dae.sum(axis=0)
        dpooled = dae @ p["We"].T
        h2_dim = p["W2"].shape[1]
        dmean = dpooled[:, :h2_dim]
        dsd = dpooled[:, h2_dim:] * (c["sd_raw"] > STD_FLOOR)
        t2 = c["centred"].shape[1]
        dvar = dsd / (2.0 * c["sd_raw"])
        dh2 = (dmean[:, None, :] + 2.0 * dvar[:, None, :] * c["centred"]) / t2
        da2 = dh2 * (c["a2"] > 0)
        g["W2"] = np.tensordot(c["c2"], da2, axes=([0, 1], [0, 1]))
        g["b2"] = da2.sum(axis=(0, 1))
        dh1 = _unsplice(da2 @ p["W2"].T, CONTEXT2, c["h1"].shape[1])
        da1 = dh1 * (c["a1"] > 0)
        g["W1"] = np.tensordot(c["c1"], da1, axes=([0, 1], [0, 1]))
        g["b1"] = da1.sum(axis=(0, 1))
        return loss, g


def forward(model: XVectorModel, f):
    return model.forward(f)


def backward(model: XVectorModel, f, y, params: FocalLossParams | None = None) -> dict:
    """Gradients of the focal loss for one utterance (or a batch) w.r.t. every parameter."""
    if params is not None and params != model.focal:
        model = XVectorModel(model.params, model.input_mean, model.input_std, params)
    return model.loss_and_grads(f, y)[1]


def xvector_score(model: XVectorModel, f, trial_id: str = "", system: str = "") -> TrialScore:
    """``ln p_bonafide - ln p_spoof``, i.e. the difference of the two logits."""
    z = model.logits(f)
    return TrialScore(trial_id, float(z[0] - z[1]), system)


def extract_embedding(model: XVectorModel, f) -> np.ndarray:
    return model.embedding(f)


# training --------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 30
    batch: int = 64
    crop_frames: int = 150
    seed: int = 42
    alpha: float = 1.0
    gamma: float = 2.0
    hidden1: int = 256
    hidden2: int = 256
    embed: int = 128
    val_fraction: float = 0.2
    patience: int = 2

    def digest(self) -> str:
        return config_digest(self.__dict__)


@dataclass
class TrainState:
    model: XVectorModel  # best-validation model
    velocity: dict
    epoch: int
    seed: int
    lr: float
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    config_digest: str = ""


def stratified_split(labels: np.ndarray, val_fraction: float, rng) -> tuple:
    train_idx, val_idx = [], []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_val = int(round(val_fraction * len(idx)))
        if len(idx) - n_val < 1:
            n_val = len(idx) - 1
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    return np.sort(np.array(train_idx, dtype=int)), np.sort(np.array(val_idx, dtype=int))


def _mean_loss(model: XVectorModel, feats: list, labels: np.ndarray) -> float:
    """Mean focal loss over whole utterances, batching equal lengths together."""
    by_len: dict = {}
    for i, f in enumerate(feats):
        by_len.setdefault(f.shape[0], []).append(i)
    total = 0.0
    for t in sorted(by_len):
        idx = by_len[t]
        logits, _ = model._forward(np.stack([feats[i] for i in idx]))
        prob = expit(logits[:, 0] - logits[:, 1])
        total += float(np.sum(focal_loss(prob, labels[idx], model.focal)))
    return total / len(feats)


def train(dataset, cfg: TrainConfig = TrainConfig()) -> TrainState:
    """Train on ``[(features, label), ...]`` with label 1 = bonafide, 0 = spoof.

    A seeded stratified split holds out ``val_fraction`` of each class.
    Batches are fixed-length random crops; validation uses whole
    utterances. SGD with momentum; the learning rate halves when the
    validation loss fails to improve for ``patience`` epochs, and the
    best-validation model is returned.
    """
    feats = [np.asarray(f.values if isinstance(f, FeatureMatrix) else f, dtype=np.float64)
             for f, _ in dataset]
    labels = np.array([int(y) for _, y in dataset])
    if len(set(labels.tolist())) < 2:
        raise SingleClassDataset("training data must contain both bonafide and spoof utterances")
    shortest = min(f.shape[0] for f in feats)
    if cfg.crop_frames > shortest:
        raise CropLongerThanShortestUtterance(
            f"crop of {cfg.crop_frames} frames exceeds the shortest utterance ({shortest})"
        )
    if cfg.crop_frames < RECEPTIVE_FIELD:
        raise UtteranceTooShort(f"crop must cover the {RECEPTIVE_FIELD}-frame receptive field")

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = stratified_split(labels, cfg.val_fraction, rng)
    train_frames = np.concatenate([feats[i] for i in train_idx])
    std = train_frames.std(axis=0)
    std[std < 1e-8] = 1.0
    focal = FocalLossParams(cfg.alpha, cfg.gamma)
    model = XVectorModel(
        init_params(feats[0].shape[1], cfg.hidden1, cfg.hidden2, cfg.embed, rng),
        train_frames.mean(axis=0), std, focal,
    )
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    state = TrainState(copy.deepcopy(model), velocity, 0, cfg.seed, cfg.lr,
                       config_digest=cfg.digest())
    best = np.inf
    stale = 0
    lr = cfg.lr
    val_feats = [feats[i] for i in val_idx]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        batch_losses = []
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            crops = []
            for i in idx:
                off = rng.integers(feats[i].shape[0] - cfg.crop_frames + 1)
                crops.append(feats[i][off : off + cfg.crop_frames])
            loss, grads = model.loss_and_grads(np.stack(crops), labels[idx])
            for k in PARAM_NAMES:
                velocity[k] *= cfg.momentum
                velocity[k] -= lr * grads[k]
                model.params[k] += velocity[k]
            batch_losses.append(loss * len(idx))
        train_loss = sum(batch_losses) / len(order)
        val_loss = _mean_loss(model, val_feats, labels[val_idx]) if len(val_idx) else train_loss
        state.train_loss.append(train_loss)
        state.val_loss.append(val_loss)
        log.info("epoch %d lr %.2e train %.5f val %.5f", epoch, lr, train_loss, val_loss)
        if val_loss < best:
            best = val_loss
            stale = 0
            state.model = copy.deepcopy(model)
            state.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                lr *= 0.5
                stale = 0
    state.epoch = cfg.epochs
    state.velocity = velocity
    state.lr = lr
    return state


# checkpoint ------------------------------------------------------------------

def save_checkpoint(path, model: XVectorModel, train_digest: str = "") -> None:
    """Binary checkpoint; parameters stored as little-endian f32.

    Layout: b"SPXV" | u16 version | u32 D, H1, H2, E | f64 alpha, gamma
    | D f32 input mean | D f32 input std | W1 b1 W2 b2 We be Wo bo (f32)
    | u16 len | training-config digest.
    """
    d, h1, h2, e = model.dims
    blob = CHECKPOINT_MAGIC + struct.pack("<H4I2d", CHECKPOINT_VERSION, d, h1, h2, e,
                                          model.focal.alpha, model.focal.gamma)
    blob += model.input_mean.astype("<f4").tobytes() + model.input_std.astype("<f4").tobytes()
    for name in PARAM_NAMES:
        blob += model.params[name].astype("<f4").tobytes()
    digest = train_digest.encode("utf-8")
    blob += struct.pack("<H", len(digest)) + digest
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> tuple:
    """Returns ``(model, training-config digest)``."""
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    buf = path.read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise MalformedArchive(f"{path}: not an x-vector checkpoint")
    try:
        head = struct.calcsize("<H4I2d")
        version, d, h1, h2, e, alpha, gamma = struct.unpack_from("<H4I2d", buf, 4)
        if version != CHECKPOINT_VERSION:
            raise MalformedArchive(f"{path}: unsupported checkpoint version {version}")
        pos = 4 + head
        template = init_params(d, h1, h2, e, 0)

        def take(shape):
            nonlocal pos
            count = int(np.prod(shape))
            a = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float64)
            pos += 4 * count
            return a.reshape(shape)

        mean, std = take((d,)), take((d,))
        params = {name: take(template[name].shape) for name in PARAM_NAMES}
        (n,) = struct.unpack_from("<H", buf, pos)
        digest = buf[pos + 2 : pos + 2 + n].decode("utf-8")
    except (struct.error, ValueError) as exc:
        raise MalformedArchive(f"{path}: truncated checkpoint") from exc
    return XVectorModel(params, mean, std, FocalLossParams(alpha, gamma)), digest
