"""Regularized autoencoder: encoder, decoder, loss and the curiosity reward.

The per-sample loss is the pixel-mean squared reconstruction error plus
``latent_penalty * ||z||^2``. The batch loss averages those and adds
``decoder_decay * ||theta||^2`` over all decoder parameters once per
update. The per-sample values measured before an update are the
intrinsic rewards handed to the curious agent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rcac import diffcompute as dc
from rcac.diffcompute.layers import conv_out_size
from rcac.errors import ConfigurationError, NumericError

ENCODER_STRIDES = (2, 1, 1, 1)
KERNEL = 3


@dataclass
class RaeHyper:
    latent_penalty: float = 1e-6
    decoder_decay: float = 1e-7
    lr: float = 1e-3
    decoder_update_freq: int = 1

    def __post_init__(self):
        if self.latent_penalty < 0 or self.decoder_decay < 0:
            raise ConfigurationError("RAE penalties must be non-negative")


def conv_sizes(size: int) -> list[int]:
    sizes = []
    for s in ENCODER_STRIDES:
        size = conv_out_size(size, KERNEL, s)
        sizes.append(size)
    return sizes


def build_encoder(obs_shape, num_filters=32, latent_dim=50) -> dc.Net:
    channels, height, width = obs_shape
    if height != width:
        raise ConfigurationError("observations must be square")
    final = conv_sizes(height)[-1]
    if final < 1:
        raise ConfigurationError(f"observation size {height} too small for the encoder")
    specs = [dc.permute(1, 2, 0)]
    cin = channels
    for stride in ENCODER_STRIDES:
        specs += [dc.conv2d(cin, num_filters, stride, KERNEL), dc.relu()]
        cin = num_filters
    specs += [dc.flatten(), dc.dense(num_filters * final * final, latent_dim),
              dc.layernorm(latent_dim), dc.tanh()]
    return dc.Net(specs, "enc")


def build_decoder(obs_shape, num_filters=32, latent_dim=50) -> dc.Net:
    channels, height, _ = obs_shape
    sizes = conv_sizes(height)
    final = sizes[-1]
    # the stride-2 layer maps m back to 2m + 1; pad one row/col when the input was even
    output_padding = height - ((sizes[0] - 1) * 2 + KERNEL)
    specs = [dc.dense(latent_dim, num_filters * final * final), dc.relu(),
             dc.reshape(final, final, num_filters)]
    for _ in range(len(ENCODER_STRIDES) - 1):
        specs += [dc.deconv2d(num_filters, num_filters, 1, KERNEL), dc.relu()]
    specs += [dc.deconv2d(num_filters, channels, 2, KERNEL, output_padding), dc.permute(2, 0, 1)]
    return dc.Net(specs, "dec")


def rae_loss_per_sample(obs, recon, z, latent_penalty):
    """Pixel-mean squared error plus ``latent_penalty * ||z||^2``, one value per sample."""
    if len(obs) != len(recon) or len(obs) != len(z):
        raise ConfigurationError("batch lengths differ")
    n = len(obs)
    diff = (recon - obs).reshape(n, -1)
    per_sample = (diff * diff).mean(axis=1) + latent_penalty * (z * z).sum(axis=1)
    if not np.isfinite(per_sample).all():
        raise NumericError("non-finite RAE loss")
    return per_sample


def decoder_decay_term(dec_params: dc.ParameterSet, decoder_decay: float) -> float:
    return decoder_decay * float(sum((v.astype(np.float64) ** 2).sum()
                                     for v in dec_params.values.values()))


class Autoencoder:
    """Owns the shared encoder, the decoder and the RAE optimizer."""

    def __init__(self, obs_shape, rng, num_filters=32, latent_dim=50, hyper=None,
                 dtype=np.float32):
        self.obs_shape = tuple(obs_shape)
        self.latent_dim = latent_dim
        self.hyper = hyper or RaeHyper()
        self.encoder = build_encoder(self.obs_shape, num_filters, latent_dim)
        self.decoder = build_decoder(self.obs_shape, num_filters, latent_dim)
        self.enc_params = self.encoder.init_params(rng, dtype)
        self.dec_params = self.decoder.init_params(rng, dtype)
        self.optimizer = dc.Adam([self.enc_params, self.dec_params], self.hyper.lr, name="rae")
        self.updates = 0

    def encode(self, obs, record=False):
        z, tape = dc.forward(self.encoder, self.enc_params, obs, record=record)
        return (z, tape) if record else z

    def reconstruct(self, obs):
        z = self.encode(obs)
        recon, _ = dc.forward(self.decoder, self.dec_params, z, record=False)
        return recon

    def objective(self, obs, compute_grads=True):
        """Per-sample losses and the batch loss; optionally fills encoder/decoder grads.

        Gradient buffers are zeroed first when ``compute_grads`` is set.
        """
        n = len(obs)
        z, etape = dc.forward(self.encoder, self.enc_params, obs, record=compute_grads)
        recon, dtape = dc.forward(self.decoder, self.dec_params, z, record=compute_grads)
        lam_z, lam_t = self.hyper.latent_penalty, self.hyper.decoder_decay
        per_sample = rae_loss_per_sample(obs, recon, z, lam_z)
        batch_loss = float(per_sample.mean()) + decoder_decay_term(self.dec_params, lam_t)
        if compute_grads:
            self.enc_params.zero_grad()
            self.dec_params.zero_grad()
            pixels = recon[0].size
            g_recon = (2.0 / (n * pixels)) * (recon - obs)
            dz = dc.backward(dtape, g_recon.astype(recon.dtype, copy=False))
            dz += (2.0 * lam_z / n) * z
            dc.backward(etape, dz, input_grad=False)
            for name, value in self.dec_params.values.items():
                self.dec_params.grads[name] += 2.0 * lam_t * value
        return per_sample, batch_loss

    def update(self, obs):
        """One RAE step on ``obs``; returns the pre-step per-sample losses and batch loss.

        With ``decoder_update_freq > 1`` the step is only taken on every
        n-th call; the losses are reported on every call.
        """
        self.updates += 1
        step = self.updates % self.hyper.decoder_update_freq == 0
        per_sample, batch_loss = self.objective(obs, compute_grads=step)
        if step:
            self.optimizer.step()
        return per_sample, batch_loss
