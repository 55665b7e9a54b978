"""Bidirectional GAN: encoder E, generator G and a pair discriminator D(x, z).

D has an x-branch and a z-branch whose features are concatenated and fed to
a joint head producing one logit.  Training alternates one discriminator
update with one joint encoder/generator update; the generator/encoder loss
uses the non-saturating form plus a weighted per-sample L2 reconstruction
term ``||x - G(E(x))||_2``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .nn import Adam, LayerSpec, Network, ParamSet, backward_pass, bce_with_logits, forward_pass
from .weights import load_tensors, save_tensors

log = logging.getLogger(__name__)

DATA_BOUND = 5.0


class TrainingError(RuntimeError):
    pass


class DataLeakError(RuntimeError):
    """Raised when held-out test data reaches a fitting routine."""


# Hidden layer lists are [width, batch_norm] pairs.
@dataclass
class BiGANConfig:
    latent_dim: int = 16
    data_shape: tuple = (4, 32)
    encoder: list = field(default_factory=lambda: [[128, True], [64, True]])
    generator: list = field(default_factory=lambda: [[64, True], [128, True]])
    disc_x: list = field(default_factory=lambda: [[128, False], [64, True]])
    disc_z: list = field(default_factory=lambda: [[64, False]])
    disc_joint: list = field(default_factory=list)
    batch_size: int = 128
    total_steps: int = 3000
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    recon_weight: float = 1.0
    adv_weight: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    zero_init_disc_head: bool = True

    def __post_init__(self):
        self.data_shape = tuple(int(s) for s in self.data_shape)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if self.recon_weight < 0 or self.adv_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")

    @property
    def data_dim(self) -> int:
        return int(np.prod(self.data_shape))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data_shape"] = list(self.data_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BiGANConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown BiGAN config keys: {sorted(unknown)}")
        return cls(**known)


def mnist_preset(**overrides) -> BiGANConfig:
    """Full-size MNIST layout with dense layers in place of convolutions, same layer count and widths."""
    base = dict(
        latent_dim=100,
        encoder=[[768, False], [32, True], [64, True], [128, True]],
        generator=[[128, True], [64, True], [32, False]],
        disc_x=[[64, False], [64, True]],
        disc_z=[[512, False]],
        disc_joint=[],
        lr=1e-5,
        beta1=0.5,
    )
    base.update(overrides)
    return BiGANConfig(**base)


def _stack(in_width: int, hidden: list, out_width: int | None, activation: str,
           out_activation: str = "linear") -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    width = in_width
    for w, bn in hidden:
        nn.relu_block(specs, width, int(w), bool(bn), activation)
        width = int(w)
    if out_width is not None:
        specs.append(LayerSpec("dense", width, out_width))
        if out_activation != "linear":
            specs.append(LayerSpec("activation", out_width, out_width, out_activation))
    return specs


def is_tainted(x) -> bool:
    return bool(getattr(x, "tainted", False))


class TaintedArray(np.ndarray):
    """ndarray marked as held-out test data; the mark survives slicing and ufuncs."""

    def __new__(cls, data):
        obj = np.asarray(data).view(cls)
        obj.tainted = True
        return obj

    def __array_finalize__(self, obj):
        self.tainted = True


def taint(x) -> TaintedArray:
    return TaintedArray(x)


def check_untainted(x, where: str) -> None:
    if is_tainted(x):
        raise DataLeakError(f"test data passed to {where}")


class BiGANModel:
    def __init__(self, config: BiGANConfig):
        self.config = config
        c = config
        rng = np.random.default_rng([c.seed, 0])
        self.ge_params = ParamSet()
        self.d_params = ParamSet()
        self.encoder = Network(_stack(c.data_dim, c.encoder, c.latent_dim, "relu"), rng,
                               "encoder", self.ge_params)
        self.generator = Network(_stack(c.latent_dim, c.generator, c.data_dim, "relu"), rng,
                                 "generator", self.ge_params)
        self.disc_x = Network(_stack(c.data_dim, c.disc_x, None, "leaky-relu"), rng,
                              "disc_x", self.d_params) if c.disc_x else None
        self.disc_z = Network(_stack(c.latent_dim, c.disc_z, None, "leaky-relu"), rng,
                              "disc_z", self.d_params) if c.disc_z else None
        self._hx = c.disc_x[-1][0] if c.disc_x else c.data_dim
        self._hz = c.disc_z[-1][0] if c.disc_z else c.latent_dim
        self.disc_joint = Network(_stack(self._hx + self._hz, c.disc_joint, 1, "leaky-relu"), rng,
                                  "disc_joint", self.d_params, zero_init_last=c.zero_init_disc_head)
        self.d_opt = Adam(self.d_params, c.lr, c.beta1, c.beta2)
        self.ge_opt = Adam(self.ge_params, c.lr, c.beta1, c.beta2)
        self.history: list[tuple[int, float, float, float]] = []

    # -- inference -------------------------------------------------------
    def _flat(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim >= 2 and x.shape[1:] == self.config.data_shape:
            x = x.reshape(x.shape[0], -1)
        if x.ndim != 2 or x.shape[1] != self.config.data_dim:
            raise nn.DimensionError(f"expected data of shape (batch, {self.config.data_shape}), got {x.shape}")
        return x

    def encode(self, x, mode: str = "eval") -> np.ndarray:
        z = forward_pass(self.encoder, self._flat(x), mode)[0]
        return taint(z) if is_tainted(x) else z

    def generate(self, z, mode: str = "eval", flat: bool = False) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise nn.DimensionError(f"expected latent codes of width {self.config.latent_dim}, got {z.shape}")
        out = forward_pass(self.generator, z, mode)[0]
        return out if flat else out.reshape((-1,) + self.config.data_shape)

    def reconstruct(self, x) -> np.ndarray:
        return self.generate(self.encode(x), flat=True).reshape(np.shape(x))

    def _disc_forward(self, x, z, mode):
        if x.shape[0] != z.shape[0]:
            raise nn.DimensionError(f"batch sizes differ: x {x.shape[0]} vs z {z.shape[0]}")
        if self.disc_x is not None:
            hx, tx = forward_pass(self.disc_x, x, mode)
        else:
            hx, tx = x, None
        if self.disc_z is not None:
            hz, tz = forward_pass(self.disc_z, z, mode)
        else:
            hz, tz = z, None
        logits, tj = forward_pass(self.disc_joint, np.concatenate([hx, hz], axis=1), mode)
        return logits[:, 0], (tx, tz, tj)

    def _disc_backward(self, tapes, g_logits):
        tx, tz, tj = tapes
        gh = backward_pass(tj, g_logits[:, None])
        gx, gz = gh[:, :self._hx], gh[:, self._hx:]
        if tx is not None:
            gx = backward_pass(tx, gx)
        if tz is not None:
            gz = backward_pass(tz, gz)
        return gx, gz

    def disc_logits(self, x, z, mode: str = "eval") -> np.ndarray:
        return self._disc_forward(self._flat(x), np.asarray(z, dtype=np.float64), mode)[0]

    def discriminate(self, x, z, mode: str = "eval") -> np.ndarray:
        return nn._sigmoid(self.disc_logits(x, z, mode))

    # -- training --------------------------------------------------------
    def train_step(self, batch, rng: np.random.Generator, step: int | None = None) -> tuple[float, float, float]:
        """One discriminator update then one encoder/generator update.

        Returns ``(d_loss, ge_loss, recon_loss)``; d_loss is the sum of the
        real-pair and fake-pair mean BCE terms before the update.
        """
        c = self.config
        x = self._flat(batch)
        n = x.shape[0]
        if n < 2:
            raise ValueError("train_step needs a batch of at least 2")
        z = sample_latent(n, c.latent_dim, rng)
        where = f"step {step}" if step is not None else "train_step"

        # discriminator: encoder and generator outputs are treated as constants
        ex = forward_pass(self.encoder, x, "train")[0]
        gz = forward_pass(self.generator, z, "train")[0]
        self.d_params.zero_grad()
        logit_real, t_real = self._disc_forward(x, ex, "train")
        logit_fake, t_fake = self._disc_forward(gz, z, "train")
        l_real, g_real = bce_with_logits(logit_real, 1.0)
        l_fake, g_fake = bce_with_logits(logit_fake, 0.0)
        d_loss = l_real + l_fake
        self._disc_backward(t_real, g_real)
        self._disc_backward(t_fake, g_fake)
        if not np.isfinite(d_loss):
            raise TrainingError(f"non-finite discriminator loss at {where}")
        self.d_opt.step()

        # encoder + generator
        self.ge_params.zero_grad()
        ex, t_enc = forward_pass(self.encoder, x, "train")
        gz, t_gen = forward_pass(self.generator, z, "train")
        xhat, t_rec = forward_pass(self.generator, ex, "train")
        logit_real, t_real = self._disc_forward(x, ex, "train")
        logit_fake, t_fake = self._disc_forward(gz, z, "train")
        # non-saturating: real pairs pushed towards 0, fake pairs towards 1
        l_real, g_real = bce_with_logits(logit_real, 0.0)
        l_fake, g_fake = bce_with_logits(logit_fake, 1.0)
        w = c.adv_weight
        _, gz_real = self._disc_backward(t_real, w * g_real)
        gx_fake, _ = self._disc_backward(t_fake, w * g_fake)

        resid = x - xhat
        norms = np.linalg.norm(resid, axis=1)
        recon = float(norms.mean())
        safe = np.where(norms > 0, norms, 1.0)
        g_xhat = np.where(norms[:, None] > 0, -resid / safe[:, None], 0.0) * (c.recon_weight / n)
        g_ex = backward_pass(t_rec, g_xhat) + gz_real
        backward_pass(t_gen, gx_fake)
        backward_pass(t_enc, g_ex)
        ge_loss = w * (l_real + l_fake) + c.recon_weight * recon
        if not np.isfinite(ge_loss):
            raise TrainingError(f"non-finite generator/encoder loss at {where}")
        self.ge_opt.step()
        return d_loss, ge_loss, recon

    # -- persistence -----------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = self.ge_params.state_dict()
        state.update(self.d_params.state_dict())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.ge_params.load_state_dict({k: v for k, v in state.items() if k in self.ge_params})
        self.d_params.load_state_dict({k: v for k, v in state.items() if k in self.d_params})

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_tensors(directory / "bigan.iggn", self.state_dict())
        (directory / "bigan_config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "BiGANModel":
        directory = Path(directory)
        config = BiGANConfig.from_dict(json.loads((directory / "bigan_config.json").read_text()))
        model = cls(config)
        model.load_state_dict(load_tensors(directory / "bigan.iggn"))
        return model


def sample_latent(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1 or d < 1:
        raise ValueError("count and d must be >= 1")
    return rng.standard_normal((count, d))


def encode(model: BiGANModel, x) -> np.ndarray:
    return model.encode(x)


def generate(model: BiGANModel, z) -> np.ndarray:
    return model.generate(z)


def discriminate(model: BiGANModel, x, z) -> np.ndarray:
    return model.discriminate(x, z)


def train_bigan(config: BiGANConfig, dataset, checkpoint_dir=None,
                callback: Callable[[int, tuple], None] | None = None) -> BiGANModel:
    """Train on random batches (sampled with replacement) for ``total_steps`` steps."""
    check_untainted(dataset, "train_bigan")
    data = np.asarray(dataset, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    data = data.reshape(data.shape[0], -1)
    if data.shape[1] != config.data_dim:
        raise nn.DimensionError(f"dataset rows have {data.shape[1]} values, config expects {config.data_dim}")
    if not np.all(np.isfinite(data)):
        raise nn.NumericError("dataset contains non-finite values")
    if np.abs(data).max() > DATA_BOUND:
        raise ValueError(f"dataset not normalized: values exceed +/-{DATA_BOUND}")
    model = BiGANModel(config)
    rng = np.random.default_rng([config.seed, 1])
    for step in range(config.total_steps):
        idx = rng.integers(0, data.shape[0], size=config.batch_size)
        losses = model.train_step(data[idx], rng, step)
        model.history.append((step, *losses))
        if callback is not None:
            callback(step, losses)
        if checkpoint_dir is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            model.save(Path(checkpoint_dir) / f"step_{step + 1:06d}")
        if step % 500 == 0:
            log.debug("step %d d=%.4f ge=%.4f rec=%.4f", step, *losses)
    return model


def write_history_csv(model: BiGANModel, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "d_loss", "ge_loss", "recon_loss"])
        for step, d, ge, rec in model.history:
            w.writerow([step, repr(float(d)), repr(float(ge)), repr(float(rec))])
    return path
