"""Semantic-conditioned VAE over feature vectors.

The encoder sees ``[x; a]`` and outputs ``[mu_z; logvar_z]``; the decoder sees
``[z; a]`` and outputs a nonnegative feature vector. Training minimises
KL(q(z|x,a) || N(0, I)) + 0.5 * ||x - x_hat||^2 with one reparameterized
sample per datum.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .datastore import SemanticTable
from .errors import ContractError, FormatError, NumericError, ShapeError
from .gradnet import (
    IDENTITY, RELU, AdamState, MlpSpec, adam_step, layer_arrays, leaky_relu,
    mlp_backward, mlp_forward,
)

LOGVAR_CLAMP = 10.0


@dataclass
class CvaeConfig:
    feat_dim: int
    sem_dim: int
    latent_dim: int = 512
    hidden_dim: int = 4096
    decoder_depth: int = 2
    learning_rate: float = 1e-4
    epochs: int = 40
    batch_size: int = 128
    seed: int = 0
    leaky_slope: float = 0.2

    def __post_init__(self):
        for name in ("feat_dim", "sem_dim", "latent_dim", "hidden_dim", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.decoder_depth not in (2, 3):
            raise ContractError("decoder_depth must be 2 or 3")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")

    def encoder_spec(self) -> MlpSpec:
        return MlpSpec((self.feat_dim + self.sem_dim, self.hidden_dim, 2 * self.latent_dim),
                       leaky_relu(self.leaky_slope), IDENTITY)

    def decoder_spec(self) -> MlpSpec:
        hidden = (self.hidden_dim,) * (self.decoder_depth - 1)
        return MlpSpec((self.latent_dim + self.sem_dim, *hidden, self.feat_dim),
                       leaky_relu(self.leaky_slope), RELU)


@dataclass
class CvaeLoss:
    total: float
    kl: float
    recon: float
    encoder_grads: list
    decoder_grads: list


def reparameterize(mu, logvar, rng: np.random.Generator | None = None, noise=None):
    """``mu + exp(logvar / 2) * noise`` with ``noise ~ N(0, I)`` unless supplied."""
    mu = np.asarray(mu, dtype=np.float64)
    if noise is None:
        noise = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * np.asarray(logvar, dtype=np.float64)) * noise


def kl_divergence(mu, logvar):
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError("mu and logvar shapes differ")
    return 0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=-1)


def reconstruction_loss(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError("x and x_hat shapes differ")
    diff = x - x_hat
    return 0.5 * np.sum(diff * diff, axis=-1)


class CvaeModel:
    """Encoder/decoder parameters plus their Adam state."""

    def __init__(self, config: CvaeConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.encoder_spec = config.encoder_spec()
        self.decoder_spec = config.decoder_spec()
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.encoder = self.encoder_spec.init_params(rng)
        self.decoder = self.decoder_spec.init_params(rng)
        self.encoder_state = AdamState.zeros_like(self.encoder)
        self.decoder_state = AdamState.zeros_like(self.decoder)

    def param_count(self) -> int:
        return self.encoder_spec.param_count() + self.decoder_spec.param_count()

    def parameter_arrays(self) -> list:
        return layer_arrays(self.encoder) + layer_arrays(self.decoder)

    def _cat(self, v, a, width):
        v = np.asarray(v, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if v.shape[-1] != width:
            raise ShapeError(f"expected width {width}, got {v.shape[-1]}")
        if a.shape[-1] != self.config.sem_dim:
            raise ShapeError(f"expected semantic width {self.config.sem_dim}, got {a.shape[-1]}")
        if v.ndim == 2 and a.ndim == 1:
            a = np.broadcast_to(a, (v.shape[0], a.size))
        return np.concatenate([v, a], axis=-1)

    def _encode(self, x, a):
        out, cache = mlp_forward(self.encoder_spec, self.encoder, self._cat(x, a, self.config.feat_dim))
        L = self.config.latent_dim
        mu = out[..., :L]
        logvar = np.clip(out[..., L:], -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar, cache

    def encode(self, x, a):
        mu, logvar, _ = self._encode(x, a)
        return mu, logvar

    def decode(self, z, a):
        out, _ = mlp_forward(self.decoder_spec, self.decoder, self._cat(z, a, self.config.latent_dim))
        return out

    def loss(self, x, a, rng: np.random.Generator | None = None, noise=None) -> CvaeLoss:
        """Loss and gradients, averaged over rows when ``x`` is a batch.

        ``noise`` fixes the reparameterization draw (useful for gradient
        checks); otherwise it is drawn from ``rng``.
        """
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[0] if x.ndim == 2 else 1
        L = self.config.latent_dim
        mu, logvar, enc_cache = self._encode(x, a)
        if noise is None:
            noise = rng.standard_normal(mu.shape)
        noise = np.asarray(noise, dtype=np.float64)
        std = np.exp(0.5 * logvar)
        z = mu + std * noise
        x_hat, dec_cache = mlp_forward(self.decoder_spec, self.decoder, self._cat(z, a, L))

        with np.errstate(over="ignore", invalid="ignore"):
            kl_mean = float(np.mean(kl_divergence(mu, logvar)))
            recon_mean = float(np.mean(reconstruction_loss(x, x_hat)))
            total = kl_mean + recon_mean
        if not np.isfinite(total):
            raise NumericError("CVAE loss is not finite")

        dec_grads, g_in = mlp_backward(self.decoder_spec, self.decoder, dec_cache, (x_hat - x) / batch)
        g_z = g_in[..., :L]
        g_mu = g_z + mu / batch
        # gradient passes straight through the logvar clamp
        g_logvar = 0.5 * g_z * noise * std + 0.5 * (np.exp(logvar) - 1.0) / batch
        enc_grads, _ = mlp_backward(self.encoder_spec, self.encoder, enc_cache,
                                    np.concatenate([g_mu, g_logvar], axis=-1))
        return CvaeLoss(total, kl_mean, recon_mean, enc_grads, dec_grads)

    def step(self, result: CvaeLoss, lr: float | None = None):
        lr = self.config.learning_rate if lr is None else lr
        adam_step(self.encoder, result.encoder_grads, self.encoder_state, lr)
        adam_step(self.decoder, result.decoder_grads, self.decoder_state, lr)


def cvae_loss(model: CvaeModel, x, a, rng=None, noise=None) -> CvaeLoss:
    return model.loss(x, a, rng=rng, noise=noise)


@dataclass
class TrainLog:
    seed: int
    total: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    recon: list = field(default_factory=list)

    @property
    def epochs_completed(self) -> int:
        return len(self.total)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "total", "kl", "recon"])
            for i, row in enumerate(zip(self.total, self.kl, self.recon)):
                w.writerow([i, *(repr(v) for v in row)])


def train(model: CvaeModel, features, labels, semantics: SemanticTable,
          epochs: int | None = None, batch_size: int | None = None,
          seed: int | None = None) -> TrainLog:
    """Mini-batch training over ``(features[i], semantics[labels[i]])`` pairs.

    Each epoch draws a permutation, then per batch a noise block of shape
    ``(batch, latent_dim)``, all from ``default_rng(seed)``. The logged value
    for an epoch is the sample-weighted mean of the batch losses, each
    measured before that batch's update.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    seed = cfg.seed if seed is None else seed
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("training set is empty")
    if labels.shape != (x.shape[0],):
        raise ShapeError("need one label per training row")
    a_all = np.asarray(semantics[labels], dtype=np.float64)

    rng = np.random.default_rng(seed)
    log = TrainLog(seed=seed)
    n = x.shape[0]
    for epoch in range(epochs):
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = perm[start:start + batch_size]
            noise = rng.standard_normal((idx.size, cfg.latent_dim))
            try:
                res = model.loss(x[idx], a_all[idx], noise=noise)
                model.step(res)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
            sums += idx.size * np.array([res.total, res.kl, res.recon])
        log.total.append(float(sums[0] / n))
        log.kl.append(float(sums[1] / n))
        log.recon.append(float(sums[2] / n))
    return log


def generate_features(model: CvaeModel, a, count: int, rng: np.random.Generator) -> np.ndarray:
    """Decode ``count`` draws of ``z ~ N(0, I)`` conditioned on ``a``."""
    if count < 1:
        raise ContractError("count must be >= 1")
    z = rng.standard_normal((count, model.config.latent_dim))
    return model.decode(z, a)


# -- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"CVA1"
CKPT_VERSION = 1
_CFG_INTS = ("feat_dim", "sem_dim", "latent_dim", "hidden_dim", "decoder_depth",
             "epochs", "batch_size", "seed")
_CKPT_HEAD = struct.Struct("<4sI8Idd")
_ADAM_HEAD = struct.Struct("<Qddd")


def _layers_bytes(layers):
    return b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in layer_arrays(layers))


def encode_checkpoint(model: CvaeModel) -> bytes:
    cfg = model.config
    parts = [_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, *(int(getattr(cfg, k)) for k in _CFG_INTS),
                             float(cfg.learning_rate), float(cfg.leaky_slope)),
             _layers_bytes(model.encoder), _layers_bytes(model.decoder)]
    for state in (model.encoder_state, model.decoder_state):
        parts.append(_ADAM_HEAD.pack(state.step_count, state.beta1, state.beta2, state.epsilon))
        parts.append(_layers_bytes(state.first_moment))
        parts.append(_layers_bytes(state.second_moment))
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> CvaeModel:
    if len(buf) < _CKPT_HEAD.size:
        raise FormatError("truncated checkpoint header", len(buf))
    head = _CKPT_HEAD.unpack_from(buf, 0)
    if head[0] != CKPT_MAGIC:
        raise FormatError(f"bad magic {head[0]!r}", 0)
    if head[1] != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {head[1]}", 4)
    values = dict(zip(_CFG_INTS, head[2:10]))
    try:
        cfg = CvaeConfig(**values, learning_rate=head[10], leaky_slope=head[11])
    except ContractError as exc:
        raise FormatError(f"invalid config: {exc}", 8) from None
    model = CvaeModel(cfg, rng=np.random.default_rng(0))
    offset = _CKPT_HEAD.size

    def fill(layers):
        nonlocal offset
        for arr in layer_arrays(layers):
            nbytes = arr.size * 8
            if offset + nbytes > len(buf):
                raise FormatError("truncated parameter data", len(buf))
            arr[...] = np.frombuffer(buf, dtype="<f8", count=arr.size, offset=offset).reshape(arr.shape)
            offset += nbytes

    fill(model.encoder)
    fill(model.decoder)
    for state in (model.encoder_state, model.decoder_state):
        if offset + _ADAM_HEAD.size > len(buf):
            raise FormatError("truncated optimizer state", len(buf))
        step, b1, b2, eps = _ADAM_HEAD.unpack_from(buf, offset)
        offset += _ADAM_HEAD.size
        state.step_count, state.beta1, state.beta2, state.epsilon = step, b1, b2, eps
        fill(state.first_moment)
        fill(state.second_moment)
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes", offset)
    return model


def save_checkpoint(model: CvaeModel, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_checkpoint(model))


def load_checkpoint(path) -> CvaeModel:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
