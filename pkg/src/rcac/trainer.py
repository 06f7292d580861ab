"""The training loop: policy mixing, pretraining, the three-way update, evaluation.

Each environment step runs, in order: policy selection, a stochastic action
from the chosen policy, the environment step, a replay push of the task
reward, one RAE update on a sampled batch (its pre-step per-sample losses
are the curiosity rewards), the task agent's update on stored task rewards,
then the curious agent's update on the fresh curiosity rewards. Actor,
temperature and target updates happen when the global step count is a
multiple of their frequency.

Modes:

* ``rcac``: the above.
* ``baseline``: the curious agent is built but never acts or learns.
* ``mixed``: only the task agent learns, on ``r_task + beta * r_cure``.

Pretraining transitions count towards the environment step total.
"""

from __future__ import annotations

import csv
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rcac import diffcompute as dc
from rcac.config import RunConfig
from rcac.envs import make_env
from rcac.errors import UsageError
from rcac.replay import ReplayBuffer, Transition, to_float
from rcac.sac import Agent, SacHyper
from rcac.srl import Autoencoder, RaeHyper

CURIOUS = "curious"
TASK = "task"
EVAL_COLUMNS = ("step", "seed", "mode", "mean_return", "return_per_episode", "rae_loss",
                "mean_r_cure", "alpha_task", "alpha_curious")
# RNG streams, spawned from the run seed in this order
STREAMS = ("init_rae", "init_task", "init_curious", "env", "select", "act", "replay",
           "update_task", "update_curious", "pretrain", "eval")


def select_policy(rng: np.random.Generator, p_c: float) -> str:
    """Curious iff a uniform draw from [0, 1) is strictly below ``p_c``."""
    return CURIOUS if rng.random() < p_c else TASK


@dataclass
class StepMetrics:
    step: int
    policy: str
    reward: float
    episode_return: float | None  # set on the step that ends an episode
    rae_loss: float
    mean_r_cure: float
    task_critic_loss: float
    task_actor_loss: float | None
    curious_critic_loss: float | None
    curious_actor_loss: float | None
    alpha_task: float
    alpha_curious: float


@dataclass
class EvalResult:
    mean: float
    returns: list[float] = field(default_factory=list)


def run_episodes(env, act, episodes, seeds):
    """Roll out ``episodes`` full episodes; ``act(obs_u8) -> action``."""
    returns = []
    for i in range(episodes):
        obs = env.reset(seed=seeds[i])
        total, finished = 0.0, False
        while not finished:
            res = env.step(act(obs))
            total += res.reward
            obs = res.observation
            finished = res.done or res.truncated
        returns.append(total)
    return EvalResult(float(np.mean(returns)), returns)


def random_policy_return(env_id, episodes=10, seed=0, obs_size=48, action_repeat=None,
                         frame_stack=1):
    """Mean return of uniform-random actions, the reference level for sanity checks."""
    env = make_env(env_id, obs_size=obs_size, frame_stack=frame_stack,
                   action_repeat=action_repeat)
    rng = np.random.default_rng(seed)
    seeds = [int(s) for s in rng.integers(0, 2**31, episodes)]
    return run_episodes(env, lambda _: rng.uniform(-1, 1, env.action_dim), episodes, seeds)


class Trainer:
    """Owns every learner, both environments, the replay buffer and the RNG streams.

    ``events`` (when ``record_events`` is set) receives one tuple per update,
    ``(step, kind, role, info)``, for accounting checks.
    """

    def __init__(self, cfg: RunConfig, record_events=False, dtype=np.float32):
        self.cfg = cfg.validate()
        seeds = np.random.SeedSequence(cfg.seed).spawn(len(STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(STREAMS, seeds)}
        repeat = cfg.resolved_action_repeat
        self.env = make_env(cfg.env, cfg.obs_size, cfg.frame_stack, repeat)
        self.eval_env = make_env(cfg.env, cfg.obs_size, cfg.frame_stack, repeat)
        obs_shape = self.env.obs_shape
        self.action_dim = self.env.action_dim
        self.ae = Autoencoder(obs_shape, self.rngs["init_rae"], cfg.num_filters, cfg.latent_dim,
                              RaeHyper(cfg.latent_penalty, cfg.decoder_decay, cfg.rae_lr), dtype)
        hyper = SacHyper(hidden_dim=cfg.hidden_dim, actor_lr=cfg.actor_lr,
                         critic_lr=cfg.critic_lr, alpha_lr=cfg.alpha_lr,
                         init_alpha=cfg.init_alpha, gamma=cfg.gamma, tau=cfg.tau,
                         log_std_min=cfg.log_std_min, log_std_max=cfg.log_std_max,
                         actor_update_freq=cfg.actor_update_freq,
                         target_update_freq=cfg.target_update_freq,
                         actor_grad_to_encoder=cfg.actor_grad_to_encoder)
        self.task = Agent(TASK, cfg.latent_dim, self.action_dim, self.ae.enc_params,
                          self.rngs["init_task"], hyper, dtype)
        self.curious = Agent(CURIOUS, cfg.latent_dim, self.action_dim, self.ae.enc_params,
                             self.rngs["init_curious"], hyper, dtype)
        self.buffer = ReplayBuffer(obs_shape, self.action_dim, cfg.buffer_capacity)
        eval_rng = self.rngs["eval"]
        self.eval_seeds = [int(s) for s in eval_rng.integers(0, 2**31, cfg.eval_episodes)]
        self.step = 0
        self.pretrained = False
        self.obs = None
        self.episode_return = 0.0
        self.record_events = record_events
        self.events: list[tuple] = []
        self.visit_sink = None
        self.completed_episodes: list[tuple[int, float]] = []

    # -- bookkeeping -----------------------------------------------------

    def _event(self, kind, role, **info):
        if self.record_events:
            self.events.append((self.step, kind, role, info))

    def _next_env_seed(self):
        return int(self.rngs["env"].integers(0, 2**31))

    def _env_step(self, action):
        """Step the training env, store the transition and log the visited state."""
        res = self.env.step(action)
        self.step += 1
        self.buffer.push(Transition(self.obs, action, res.reward, res.observation, res.done))
        self._event("push", None, reward=res.reward)
        if self.visit_sink is not None:
            self.visit_sink(self.step, self.env.state)
        self.episode_return += res.reward
        finished_return = None
        if res.done or res.truncated:
            finished_return = self.episode_return
            self.completed_episodes.append((self.step, finished_return))
            self.episode_return = 0.0
            self.obs = self.env.reset(seed=self._next_env_seed())
        else:
            self.obs = res.observation
        return res, finished_return

    def latent(self, obs_u8):
        return self.ae.encode(to_float(obs_u8[None]))

    # -- training loop -----------------------------------------------------

    def pretrain(self):
        """Fill the buffer with uniform-random transitions, then run RAE-only updates."""
        if len(self.buffer) or self.pretrained:
            raise UsageError("pretrain() needs an empty buffer and runs once")
        cfg = self.cfg
        self.obs = self.env.reset(seed=self._next_env_seed())
        rng = self.rngs["pretrain"]
        for _ in range(cfg.pretrain_transitions):
            self._env_step(rng.uniform(-1, 1, self.action_dim).astype(np.float32))
        losses = []
        for _ in range(cfg.pretrain_updates):
            batch = self.buffer.sample(cfg.batch_size, self.rngs["replay"])
            _, loss = self.ae.update(batch.obs)
            losses.append(loss)
            self._event("rae", None, pretrain=True)
        self.pretrained = True
        return losses

    def _update_agent(self, agent, batch, rewards, rng):
        critic_loss = agent.update_critic(self.ae.encoder, batch.obs, batch.actions, rewards,
                                          batch.next_obs, batch.dones, rng)
        self._event("critic", agent.role, rewards=rewards, indices=batch.indices)
        actor_loss = None
        if self.step % agent.hyper.actor_update_freq == 0:
            actor_loss, _ = agent.update_actor_and_temperature(self.ae.encoder, batch.obs, rng)
            self._event("actor", agent.role)
        if self.step % agent.hyper.target_update_freq == 0:
            agent.update_targets()
            self._event("target", agent.role)
        return critic_loss, actor_loss

    def train_step(self) -> StepMetrics:
        if not self.pretrained:
            raise UsageError("train_step() before pretrain()")
        cfg = self.cfg
        policy = select_policy(self.rngs["select"], cfg.p_c)
        actor = self.curious if policy == CURIOUS else self.task
        action, _ = actor.sample_action(self.latent(self.obs), self.rngs["act"])
        res, finished = self._env_step(action[0])
        self._event("act", policy)

        batch = self.buffer.sample(cfg.batch_size, self.rngs["replay"])
        r_cure, rae_loss = self.ae.update(batch.obs)
        r_cure = r_cure.astype(np.float32)
        self._event("rae", None, r_cure=r_cure, indices=batch.indices)

        task_rewards = batch.rewards
        if cfg.mode == "mixed":
            task_rewards = batch.rewards + np.float32(cfg.beta) * r_cure
        task_c, task_a = self._update_agent(self.task, batch, task_rewards,
                                            self.rngs["update_task"])
        cur_c = cur_a = None
        if cfg.mode == "rcac":
            cur_c, cur_a = self._update_agent(self.curious, batch, r_cure,
                                              self.rngs["update_curious"])
        return StepMetrics(self.step, policy, res.reward, finished, rae_loss,
                           float(r_cure.mean()), task_c, task_a, cur_c, cur_a,
                           self.task.alpha, self.curious.alpha)

    def evaluate(self, episodes=None) -> EvalResult:
        """Deterministic task policy on the dedicated evaluation env with fixed seeds."""
        episodes = episodes or self.cfg.eval_episodes
        act = lambda obs: self.task.sample_action(self.latent(obs), deterministic=True)[0][0]
        return run_episodes(self.eval_env, act, episodes, self.eval_seeds)

    # -- persistence -----------------------------------------------------

    def save_checkpoint(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"step": self.step, "seed": self.cfg.seed, "mode": self.cfg.mode}
        rae_arrays = {f"enc/{k}": v for k, v in self.ae.enc_params.values.items()}
        rae_arrays.update({f"dec/{k}": v for k, v in self.ae.dec_params.values.items()})
        rae_arrays.update(self.ae.optimizer.state_arrays())
        dc.save_arrays(directory / "rae.ckpt", rae_arrays,
                       dict(meta, role="rae", optimizer_steps=self.ae.optimizer.step_count))
        for agent in (self.task, self.curious):
            dc.save_arrays(directory / f"{agent.role}.ckpt", agent.state_arrays(),
                           dict(meta, **agent.state_meta()))
        (directory / "config.txt").write_text(self.cfg.to_text())
        if self.cfg.checkpoint_buffer:
            self.buffer.save(directory / "replay.ckpt")

    def load_checkpoint(self, directory):
        directory = Path(directory)
        arrays, meta = dc.load_arrays(directory / "rae.ckpt")
        self.ae.enc_params.load_values({k: arrays[f"enc/{k}"] for k in self.ae.enc_params})
        self.ae.dec_params.load_values({k: arrays[f"dec/{k}"] for k in self.ae.dec_params})
        self.ae.optimizer.load_state_arrays(arrays, meta["optimizer_steps"])
        for agent in (self.task, self.curious):
            arrays, ameta = dc.load_arrays(directory / f"{agent.role}.ckpt")
            agent.load_state_arrays(arrays, ameta)
        self.step = int(meta["step"])
        return meta


class _VisitWriter:
    def __init__(self, path, state_names):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(("step",) + tuple(state_names))

    def __call__(self, step, state):
        self.writer.writerow([step] + [repr(float(s)) for s in state])

    def close(self):
        self.fh.close()


def _fmt(x):
    return repr(float(x))


def run(cfg: RunConfig, out_dir, progress=None, keep_checkpoints=1) -> list[dict]:
    """Train one (config, seed) to completion, writing artifacts into ``out_dir``.

    Artifacts: ``config.txt``, ``eval.csv`` (one row per evaluation),
    ``episodes.csv``, ``visits.csv`` when enabled, checkpoints under
    ``checkpoints/step_<n>`` (the newest ``keep_checkpoints`` kept; 0 keeps
    all) and a ``DONE`` marker. Returns the evaluation rows.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    trainer = Trainer(cfg)
    writer = None
    if cfg.log_visits:
        writer = _VisitWriter(out / "visits.csv", trainer.env.state_names)
        trainer.visit_sink = writer
    rows, saved = [], []
    rae_losses, r_cures = [], []
    try:
        trainer.pretrain()
        with open(out / "eval.csv", "w", newline="") as fh:
            ev = csv.writer(fh)
            ev.writerow(EVAL_COLUMNS)
            while trainer.step < cfg.total_steps:
                m = trainer.train_step()
                rae_losses.append(m.rae_loss)
                r_cures.append(m.mean_r_cure)
                if trainer.step % cfg.eval_interval:
                    continue
                result = trainer.evaluate()
                row = {"step": trainer.step, "seed": cfg.seed, "mode": cfg.mode,
                       "mean_return": _fmt(result.mean),
                       "return_per_episode": ";".join(_fmt(r) for r in result.returns),
                       "rae_loss": _fmt(np.mean(rae_losses)),
                       "mean_r_cure": _fmt(np.mean(r_cures)),
                       "alpha_task": _fmt(m.alpha_task), "alpha_curious": _fmt(m.alpha_curious)}
                ev.writerow([row[c] for c in EVAL_COLUMNS])
                fh.flush()
                rows.append(row)
                rae_losses, r_cures = [], []
                ckpt = out / "checkpoints" / f"step_{trainer.step:07d}"
                trainer.save_checkpoint(ckpt)
                saved.append(ckpt)
                while keep_checkpoints and len(saved) > keep_checkpoints:
                    shutil.rmtree(saved.pop(0))
                if progress:
                    progress(cfg, row)
    finally:
        if writer is not None:
            writer.close()
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "episode_return"))
        for step, ret in trainer.completed_episodes:
            w.writerow((step, _fmt(ret)))
    (out / "DONE").write_text(f"{cfg.total_steps}\n")
    return rows
