"""Soft actor-critic over encoder latents.

Actor: latent -> (mean, raw log-std) per action dim, tanh-squashed Gaussian.
The raw log-std is mapped smoothly into [log_std_min, log_std_max] with a
tanh, so the bound never kills the gradient.

Gradient routing: critic losses flow into the shared encoder (each agent's
critic optimizer also steps the encoder with its own Adam state); the actor
sees detached latents unless ``actor_grad_to_encoder`` is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rcac import diffcompute as dc
from rcac.errors import ConfigurationError

LOG_2PI = math.log(2 * math.pi)
LOG_2 = math.log(2.0)


@dataclass
class SacHyper:
    hidden_dim: int = 1024
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    alpha_lr: float = 1e-4
    init_alpha: float = 0.1
    gamma: float = 0.99
    tau: float = 0.01
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    actor_update_freq: int = 2
    target_update_freq: int = 2
    actor_grad_to_encoder: bool = False

    def __post_init__(self):
        if not self.log_std_min < self.log_std_max:
            raise ConfigurationError("log_std_min must be below log_std_max")
        if self.init_alpha <= 0:
            raise ConfigurationError("init_alpha must be positive")


def build_actor(latent_dim, action_dim, hidden_dim, prefix="actor"):
    return dc.Net([dc.dense(latent_dim, hidden_dim), dc.relu(),
                   dc.dense(hidden_dim, hidden_dim), dc.relu(),
                   dc.dense(hidden_dim, 2 * action_dim)], prefix)


def build_critic(latent_dim, action_dim, hidden_dim, prefix):
    return dc.Net([dc.dense(latent_dim + action_dim, hidden_dim), dc.relu(),
                   dc.dense(hidden_dim, hidden_dim), dc.relu(),
                   dc.dense(hidden_dim, 1)], prefix)


def log1m_tanh_sq(u):
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


def squashed_log_prob(noise, log_std, u):
    """Log-density of a = tanh(mu + std * noise), summed over action dims."""
    per_dim = -0.5 * noise * noise - log_std - 0.5 * LOG_2PI - log1m_tanh_sq(u)
    return per_dim.sum(axis=1)


class Agent:
    """Actor, twin critics with targets, and a learned temperature."""

    def __init__(self, role, latent_dim, action_dim, enc_params, rng, hyper=None,
                 dtype=np.float32):
        self.role = role
        self.latent_dim = latent_dim
        self.action_dim = action_dim
        self.hyper = h = hyper or SacHyper()
        self.target_entropy = -float(action_dim)
        self.enc_params = enc_params
        self.actor = build_actor(latent_dim, action_dim, h.hidden_dim)
        self.q1 = build_critic(latent_dim, action_dim, h.hidden_dim, "q1")
        self.q2 = build_critic(latent_dim, action_dim, h.hidden_dim, "q2")
        self.actor_params = self.actor.init_params(rng, dtype)
        self.q1_params = self.q1.init_params(rng, dtype)
        self.q2_params = self.q2.init_params(rng, dtype)
        self.q1_target = self.q1_params.copy()
        self.q2_target = self.q2_params.copy()
        init_log_alpha = np.array([math.log(h.init_alpha)], dtype=dtype)
        self.log_alpha = dc.ParameterSet({"log_alpha": init_log_alpha})
        actor_sets = [self.actor_params] + ([enc_params] if h.actor_grad_to_encoder else [])
        self.actor_opt = dc.Adam(actor_sets, h.actor_lr, name=f"{role}_actor")
        self.critic_opt = dc.Adam([self.q1_params, self.q2_params, enc_params], h.critic_lr,
                                  name=f"{role}_critic")
        self.alpha_opt = dc.Adam([self.log_alpha], h.alpha_lr, name=f"{role}_alpha")
        self.critic_updates = 0
        self.actor_updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"][0]))

    def parameter_sets(self) -> dict[str, dc.ParameterSet]:
        return {"actor": self.actor_params, "q1": self.q1_params, "q2": self.q2_params,
                "q1_target": self.q1_target, "q2_target": self.q2_target,
                "log_alpha": self.log_alpha}

    def optimizers(self) -> list[dc.Adam]:
        return [self.actor_opt, self.critic_opt, self.alpha_opt]

    # -- actor -----------------------------------------------------------

    def _policy_head(self, z, record=False):
        out, tape = dc.forward(self.actor, self.actor_params, z, record=record)
        a = self.action_dim
        mu, raw = out[:, :a], out[:, a:]
        t = np.tanh(raw)
        lo, hi = self.hyper.log_std_min, self.hyper.log_std_max
        log_std = lo + 0.5 * (hi - lo) * (t + 1.0)
        return mu, log_std, t, tape

    def sample_action(self, z, rng=None, deterministic=False, noise=None):
        """Return (action, log-prob). Deterministic mode returns tanh(mean) and no log-prob."""
        mu, log_std, _, _ = self._policy_head(z)
        if deterministic:
            return np.tanh(mu), None
        if noise is None:
            noise = rng.standard_normal(mu.shape).astype(mu.dtype)
        u = mu + np.exp(log_std) * noise
        return np.tanh(u), squashed_log_prob(noise, log_std, u)

    # -- critics ---------------------------------------------------------

    def q_values(self, z, actions, target=False):
        x = np.concatenate([z, actions], axis=1)
        p1, p2 = (self.q1_target, self.q2_target) if target else (self.q1_params, self.q2_params)
        q1, _ = dc.forward(self.q1, p1, x, record=False)
        q2, _ = dc.forward(self.q2, p2, x, record=False)
        return q1[:, 0], q2[:, 0]

    def critic_target(self, rewards, dones, next_z, rng, noise=None):
        """Soft Bellman backup; no gradient flows through it."""
        next_a, next_logp = self.sample_action(next_z, rng, noise=noise)
        tq1, tq2 = self.q_values(next_z, next_a, target=True)
        soft_v = np.minimum(tq1, tq2) - self.alpha * next_logp
        return rewards + self.hyper.gamma * (1.0 - dones) * soft_v

    def critic_objective(self, encoder, obs, actions, targets, compute_grads=True):
        """Mean over batch and over both critics of (Q - y)^2.

        With ``compute_grads`` the critic and encoder gradient buffers are
        zeroed and refilled.
        """
        n = len(obs)
        z, etape = dc.forward(encoder, self.enc_params, obs, record=compute_grads)
        x = np.concatenate([z, actions], axis=1)
        q1, t1 = dc.forward(self.q1, self.q1_params, x, record=compute_grads)
        q2, t2 = dc.forward(self.q2, self.q2_params, x, record=compute_grads)
        e1, e2 = q1[:, 0] - targets, q2[:, 0] - targets
        loss = 0.5 * (float(np.mean(e1 * e1)) + float(np.mean(e2 * e2)))
        if compute_grads:
            for ps in (self.q1_params, self.q2_params, self.enc_params):
                ps.zero_grad()
            dx1 = dc.backward(t1, (e1 / n)[:, None].astype(q1.dtype))
            dx2 = dc.backward(t2, (e2 / n)[:, None].astype(q2.dtype))
            dz = dx1[:, :self.latent_dim] + dx2[:, :self.latent_dim]
            dc.backward(etape, dz, input_grad=False)
        return loss

    def update_critic(self, encoder, batch_obs, actions, rewards, next_obs, dones, rng):
        next_z, _ = dc.forward(encoder, self.enc_params, next_obs, record=False)
        y = self.critic_target(rewards, dones, next_z, rng).astype(next_z.dtype)
        loss = self.critic_objective(encoder, batch_obs, actions, y)
        self.critic_opt.step()
        self.critic_updates += 1
        return loss

    # -- actor and temperature -------------------------------------------

    def actor_objective(self, z, noise, compute_grads=True, etape=None):
        """Actor loss mean(alpha * logp - min(Q1, Q2)) with fixed noise.

        Returns (loss, log-probs). Critic parameters receive no gradient.
        When ``etape`` is given the latent gradient is pushed into the encoder.
        """
        n = len(z)
        mu, log_std, t, atape = self._policy_head(z, record=compute_grads)
        std = np.exp(log_std)
        u = mu + std * noise
        a = np.tanh(u)
        logp = squashed_log_prob(noise, log_std, u)
        x = np.concatenate([z, a], axis=1)
        q1, t1 = dc.forward(self.q1, self.q1_params, x, record=compute_grads)
        q2, t2 = dc.forward(self.q2, self.q2_params, x, record=compute_grads)
        q1, q2 = q1[:, 0], q2[:, 0]
        pick1 = q1 <= q2
        alpha = self.alpha
        loss = float(np.mean(alpha * logp - np.where(pick1, q1, q2)))
        if compute_grads:
            g = np.full(n, -1.0 / n, dtype=z.dtype)
            dx = (dc.backward(t1, (g * pick1)[:, None], param_grads=False)
                  + dc.backward(t2, (g * ~pick1)[:, None], param_grads=False))
            da = dx[:, self.latent_dim:]
            # d(-log(1 - tanh(u)^2))/du = 2 tanh(u)
            du = da * (1.0 - a * a) + (alpha / n) * 2.0 * a
            dlog_std = du * std * noise - alpha / n
            lo, hi = self.hyper.log_std_min, self.hyper.log_std_max
            draw = dlog_std * 0.5 * (hi - lo) * (1.0 - t * t)
            self.actor_params.zero_grad()
            want_dz = etape is not None
            dz = dc.backward(atape, np.concatenate([du, draw], axis=1).astype(z.dtype),
                             input_grad=want_dz)
            if want_dz:
                self.enc_params.zero_grad()
                dc.backward(etape, dz + dx[:, :self.latent_dim], input_grad=False)
        return loss, logp

    def temperature_objective(self, logp, compute_grads=True):
        """mean(-alpha * (logp + target_entropy)) with logp held constant."""
        alpha = self.alpha
        slack = logp.astype(np.float64) + self.target_entropy
        loss = float(np.mean(-alpha * slack))
        if compute_grads:
            self.log_alpha.zero_grad()
            self.log_alpha.grads["log_alpha"][0] = -alpha * float(np.mean(slack))
        return loss

    def update_actor_and_temperature(self, encoder, batch_obs, rng):
        record = self.hyper.actor_grad_to_encoder
        z, etape = dc.forward(encoder, self.enc_params, batch_obs, record=record)
        noise = rng.standard_normal((len(z), self.action_dim)).astype(z.dtype)
        actor_loss, logp = self.actor_objective(z, noise, etape=etape)
        self.actor_opt.step()
        alpha_loss = self.temperature_objective(logp)
        self.alpha_opt.step()
        self.actor_updates += 1
        return actor_loss, alpha_loss

    def update_targets(self):
        dc.soft_update(self.q1_target, self.q1_params, self.hyper.tau)
        dc.soft_update(self.q2_target, self.q2_params, self.hyper.tau)

    # -- persistence -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for label, ps in self.parameter_sets().items():
            for name, value in ps.values.items():
                out[f"{label}/{name}"] = value
        for opt in self.optimizers():
            out.update(opt.state_arrays())
        return out

    def state_meta(self) -> dict:
        return {"role": self.role, "latent_dim": self.latent_dim,
                "action_dim": self.action_dim, "hidden_dim": self.hyper.hidden_dim,
                "optimizer_steps": {o.name: o.step_count for o in self.optimizers()}}

    def load_state_arrays(self, arrays, meta):
        if meta.get("role") != self.role:
            raise ConfigurationError(f"checkpoint holds a {meta.get('role')} agent, not {self.role}")
        for label, ps in self.parameter_sets().items():
            ps.load_values({name: arrays[f"{label}/{name}"] for name in ps})
        steps = meta.get("optimizer_steps", {})
        for opt in self.optimizers():
            if opt.name in steps and f"{opt.name}/m/{next(iter(opt.m))}" in arrays:
                opt.load_state_arrays(arrays, steps[opt.name])
