"""Pixel-observation continuous-control environments.

Two tasks, both rendered with a deterministic, non-anti-aliased rasterizer:

``pendulum_swingup``
    Rod pendulum, angle 0 upright, undamped. Per physics substep of
    ``DT / SUBSTEPS`` seconds (semi-implicit Euler)::

        omega += (3 g / (2 l) * sin(theta) + 3 / (m l^2) * torque) * h
        omega  = clip(omega, -8, 8)
        theta += omega * h

    with g = 10, m = l = 1, torque = 2 * action. One control tick is
    ``DT = 0.05`` s; the angle is wrapped to (-pi, pi] after each tick.
    Tick reward is ``exp(-cost)`` with cost = theta^2 + 0.1 omega^2 +
    0.001 torque^2, so cost in [0, 16.27] maps into [0, 1].

``point_reacher_sparse``
    Point mass in the box [-1, 1]^2 starting at the origin, goal drawn
    uniformly from the annulus 0.5 <= r <= 0.9. Velocity follows
    ``v += (2 * action - v) * h``, each component clipped to [-1, 1];
    walls stop motion along their normal. Tick reward is 1 inside
    radius 0.05 of the goal, else 0.

A step applies the action for ``action_repeat`` ticks and sums the tick
rewards. Episodes last ``1000 // action_repeat`` steps and end with
``truncated=True``; neither task has terminal states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rcac.errors import ConfigurationError, UsageError

ENV_IDS = ("pendulum_swingup", "point_reacher_sparse")
DEFAULT_ACTION_REPEAT = {"pendulum_swingup": 4, "point_reacher_sparse": 2}
EPISODE_TICKS = 1000
DT = 0.05
SUBSTEPS = 10
FRAME_CHANNELS = 3

BACKGROUND = np.array([24, 28, 40], dtype=np.uint8)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool


def wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    wrapped = math.remainder(theta, 2 * math.pi)
    return math.pi if wrapped <= -math.pi else wrapped


class _Canvas:
    """Pixel-centre coordinate grids in world units for one image size."""

    def __init__(self, size, half_extent):
        self.size = size
        centres = (np.arange(size) + 0.5) / size * 2 * half_extent - half_extent
        self.x = centres[None, :]
        self.y = -centres[:, None]  # image rows go downwards
        self.px = 2 * half_extent / size

    def blank(self):
        frame = np.empty((FRAME_CHANNELS, self.size, self.size), dtype=np.uint8)
        frame[...] = BACKGROUND[:, None, None]
        return frame

    def disc_mask(self, cx, cy, radius):
        return (self.x - cx) ** 2 + (self.y - cy) ** 2 <= radius * radius

    def segment_mask(self, x0, y0, x1, y1, half_width):
        dx, dy = x1 - x0, y1 - y0
        t = ((self.x - x0) * dx + (self.y - y0) * dy) / (dx * dx + dy * dy)
        t = np.clip(t, 0.0, 1.0)
        d2 = (self.x - x0 - t * dx) ** 2 + (self.y - y0 - t * dy) ** 2
        return d2 <= half_width * half_width


def _paint(frame, mask, color):
    for c in range(FRAME_CHANNELS):
        frame[c][mask] = color[c]


class PixelEnv:
    """Shared frame stacking, action repeat and episode bookkeeping."""

    env_id = ""
    action_dim = 0
    state_names: tuple = ()

    def __init__(self, obs_size=48, frame_stack=3, action_repeat=None, frame_dump_dir=None):
        if obs_size < 16:
            raise ConfigurationError("obs_size must be at least 16")
        if frame_stack < 1:
            raise ConfigurationError("frame_stack must be positive")
        self.obs_size = obs_size
        self.frame_stack = frame_stack
        self.action_repeat = action_repeat or DEFAULT_ACTION_REPEAT[self.env_id]
        if EPISODE_TICKS % self.action_repeat:
            raise ConfigurationError(f"action_repeat must divide {EPISODE_TICKS}")
        self.frame_dump_dir = Path(frame_dump_dir) if frame_dump_dir else None
        self.state = None
        self._frames = None
        self._steps = 0
        self._finished = True
        self._episode = -1
        self.rng = np.random.default_rng(0)

    @property
    def obs_shape(self):
        return (FRAME_CHANNELS * self.frame_stack, self.obs_size, self.obs_size)

    @property
    def episode_length(self):
        return EPISODE_TICKS // self.action_repeat

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = self._initial_state()
        frame = self.render(self.state)
        self._frames = [frame] * self.frame_stack
        self._steps = 0
        self._finished = False
        self._episode += 1
        self._dump(frame)
        return self.observation()

    def observation(self):
        return np.concatenate(self._frames, axis=0)

    def step(self, action):
        if self._finished:
            raise UsageError("step() called on a finished episode; call reset() first")
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(self.action_dim), -1, 1)
        reward = 0.0
        for _ in range(self.action_repeat):
            reward += self._tick(action)
        self._steps += 1
        frame = self.render(self.state)
        self._frames = self._frames[1:] + [frame]
        self._dump(frame)
        truncated = self._steps >= self.episode_length
        self._finished = truncated
        return StepResult(self.observation(), reward, False, truncated)

    def _dump(self, frame):
        if self.frame_dump_dir is None:
            return
        from PIL import Image

        self.frame_dump_dir.mkdir(parents=True, exist_ok=True)
        path = self.frame_dump_dir / f"ep{self._episode:04d}_step{self._steps:05d}.png"
        Image.fromarray(frame.transpose(1, 2, 0)).save(path)

    def _initial_state(self):
        raise NotImplementedError

    def _tick(self, action):
        raise NotImplementedError

    def render(self, state):
        raise NotImplementedError


class PendulumSwingup(PixelEnv):
    env_id = "pendulum_swingup"
    action_dim = 1
    state_names = ("angle", "angvel")

    gravity = 10.0
    mass = 1.0
    length = 1.0
    max_speed = 8.0
    max_torque = 2.0
    max_cost = np.pi ** 2 + 0.1 * 8.0 ** 2 + 0.001 * 2.0 ** 2

    _ROD = np.array([200, 140, 60], dtype=np.uint8)
    _BOB = np.array([230, 60, 50], dtype=np.uint8)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._canvas = _Canvas(self.obs_size, 1.25)

    def _initial_state(self):
        theta = wrap_angle(self.rng.uniform(-np.pi, np.pi))
        return np.array([theta, self.rng.uniform(-1.0, 1.0)])

    def _tick(self, action):
        theta, omega = self.state
        torque = self.max_torque * float(action[0])
        h = DT / SUBSTEPS
        accel_g = 3.0 * self.gravity / (2.0 * self.length)
        accel_u = 3.0 / (self.mass * self.length ** 2) * torque
        for _ in range(SUBSTEPS):
            omega = omega + (accel_g * math.sin(theta) + accel_u) * h
            omega = min(max(omega, -self.max_speed), self.max_speed)
            theta = theta + omega * h
        theta = wrap_angle(theta)
        self.state = np.array([theta, omega])
        cost = theta ** 2 + 0.1 * omega ** 2 + 0.001 * torque ** 2
        return math.exp(-cost)

    def energy(self, state=None):
        """Mechanical energy of the rod (zero-torque invariant of the continuous dynamics)."""
        theta, omega = self.state if state is None else state
        inertia = self.mass * self.length ** 2 / 3.0
        return 0.5 * inertia * omega ** 2 + self.mass * self.gravity * self.length / 2 * np.cos(theta)

    def render(self, state):
        theta = state[0]
        cv = self._canvas
        frame = cv.blank()
        tip_x, tip_y = np.sin(theta), np.cos(theta)
        _paint(frame, cv.segment_mask(0.0, 0.0, tip_x, tip_y, max(0.06, cv.px)), self._ROD)
        _paint(frame, cv.disc_mask(tip_x, tip_y, max(0.15, 1.5 * cv.px)), self._BOB)
        return frame


class PointReacherSparse(PixelEnv):
    env_id = "point_reacher_sparse"
    action_dim = 2
    state_names = ("x", "y", "vx", "vy", "goal_x", "goal_y")

    accel = 2.0
    max_speed = 1.0
    goal_radius = 0.05
    arena = 1.0

    _AGENT = np.array([240, 70, 60], dtype=np.uint8)
    _GOAL = np.array([60, 220, 90], dtype=np.uint8)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._canvas = _Canvas(self.obs_size, 1.1)

    def _initial_state(self):
        angle = self.rng.uniform(-np.pi, np.pi)
        radius = self.rng.uniform(0.5, 0.9)
        goal = radius * np.array([np.cos(angle), np.sin(angle)])
        return np.concatenate([np.zeros(4), goal])

    def reward_at(self, state):
        return 1.0 if np.hypot(*(state[0:2] - state[4:6])) < self.goal_radius else 0.0

    def _tick(self, action):
        x, y, vx, vy, gx, gy = (float(s) for s in self.state)
        ax, ay = self.accel * float(action[0]), self.accel * float(action[1])
        h, vmax, lim = DT / SUBSTEPS, self.max_speed, self.arena
        for _ in range(SUBSTEPS):
            vx = min(max(vx + (ax - vx) * h, -vmax), vmax)
            vy = min(max(vy + (ay - vy) * h, -vmax), vmax)
            x += vx * h
            y += vy * h
            if abs(x) > lim:
                x, vx = math.copysign(lim, x), 0.0
            if abs(y) > lim:
                y, vy = math.copysign(lim, y), 0.0
        self.state = np.array([x, y, vx, vy, gx, gy])
        return 1.0 if math.hypot(x - gx, y - gy) < self.goal_radius else 0.0

    def render(self, state):
        cv = self._canvas
        frame = cv.blank()
        _paint(frame, cv.disc_mask(state[4], state[5], max(self.goal_radius, 1.5 * cv.px)),
               self._GOAL)
        _paint(frame, cv.disc_mask(state[0], state[1], max(0.07, 1.5 * cv.px)), self._AGENT)
        return frame


_REGISTRY = {cls.env_id: cls for cls in (PendulumSwingup, PointReacherSparse)}


def make_env(env_id, obs_size=48, frame_stack=3, action_repeat=None, frame_dump_dir=None):
    try:
        cls = _REGISTRY[env_id]
    except KeyError:
        raise ConfigurationError(f"unknown env id {env_id!r}; choose from {ENV_IDS}") from None
    return cls(obs_size=obs_size, frame_stack=frame_stack, action_repeat=action_repeat,
               frame_dump_dir=frame_dump_dir)
