"""Proximal policy optimization in plain numpy.

The policy is a diagonal Gaussian whose mean comes from a tanh MLP and
whose log standard deviation is a free, state-independent vector.  A
second MLP of the same shape estimates state values.  Gradients are
computed by hand-written backpropagation; ``tests/test_ppo.py`` checks them
against central finite differences.

Defaults follow the usual continuous-control settings: two hidden layers
of 64 units, Adam (eps 1e-5) at 3e-4, rollouts of 2048 steps, 10 epochs of
minibatch 64, gamma 0.99, GAE lambda 0.95, clip 0.2, value coefficient
0.5, no entropy bonus and a global gradient-norm clip of 0.5.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .trading_env import OBS_DIM, AlphaTradingEnv, BacktestReport, run_episode

__all__ = [
    "PpoConfig",
    "ObsNormalizer",
    "RolloutBuffer",
    "PpoPolicy",
    "TrainResult",
    "TrainingDivergedError",
    "init_params",
    "policy_forward",
    "sample_action",
    "gaussian_log_prob",
    "compute_gae",
    "ppo_loss",
    "Adam",
    "train",
    "evaluate_policy",
    "save_checkpoint",
    "load_checkpoint",
    "params_digest",
]

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_FORMAT = "alphappo-checkpoint/1"


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, last_good: "PpoPolicy"):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class PpoConfig:
    learning_rate: float = 3e-4
    rollout_length: int = 2048
    minibatch_size: int = 64
    epochs_per_rollout: int = 10
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    total_steps: int = 100_000
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0
    adam_eps: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        if self.rollout_length < 1 or self.minibatch_size < 1 or self.epochs_per_rollout < 1:
            raise ValueError("rollout_length, minibatch_size and epochs_per_rollout must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


# -- parameters and forward pass --------------------------------------------

def _orthogonal(shape, gain, rng) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def _layer_sizes(obs_dim, hidden, out):
    return [obs_dim, *hidden, out]


def init_params(obs_dim: int, n_actions: int, hidden=(64, 64), rng=None, init_log_std: float = 0.0) -> dict:
    """Orthogonal weights (gain sqrt 2 hidden, 0.01 policy head, 1 value head), zero biases."""
    rng = rng if rng is not None else np.random.default_rng(0)
    params = {}
    for prefix, out, head_gain in (("pi", n_actions, 0.01), ("vf", 1, 1.0)):
        sizes = _layer_sizes(obs_dim, hidden, out)
        for i in range(len(sizes) - 1):
            gain = head_gain if i == len(sizes) - 2 else math.sqrt(2.0)
            params[f"{prefix}_W{i}"] = _orthogonal((sizes[i], sizes[i + 1]), gain, rng)
            params[f"{prefix}_b{i}"] = np.zeros(sizes[i + 1])
    params["log_std"] = np.full(n_actions, float(init_log_std))
    return params


def _n_layers(params, prefix) -> int:
    return sum(1 for k in params if k.startswith(f"{prefix}_W"))


def _mlp_forward(params, prefix, x):
    acts = [x]
    h = x
    n = _n_layers(params, prefix)
    for i in range(n - 1):
        h = np.tanh(h @ params[f"{prefix}_W{i}"] + params[f"{prefix}_b{i}"])
        acts.append(h)
    out = h @ params[f"{prefix}_W{n - 1}"] + params[f"{prefix}_b{n - 1}"]
    return out, acts


def _mlp_backward(params, prefix, acts, dout, grads):
    delta = dout
    for i in reversed(range(len(acts))):
        grads[f"{prefix}_W{i}"] = acts[i].T @ delta
        grads[f"{prefix}_b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[f"{prefix}_W{i}"].T) * (1.0 - acts[i] ** 2)


def _clamped_log_std(params):
    return np.clip(params["log_std"], LOG_STD_MIN, LOG_STD_MAX)


def policy_forward(params: dict, obs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, standard deviation and value for one observation or a batch."""
    x = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("observation contains non-finite values")
    single = x.ndim == 1
    x = np.atleast_2d(x)
    mean, _ = _mlp_forward(params, "pi", x)
    value, _ = _mlp_forward(params, "vf", x)
    std = np.exp(_clamped_log_std(params))
    if single:
        return mean[0], std, value[0, 0]
    return mean, np.broadcast_to(std, mean.shape), value[:, 0]


def gaussian_log_prob(action, mean, std) -> np.ndarray:
    z = (np.asarray(action) - mean) / std
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(std) * np.ones_like(z), axis=-1) \
        - 0.5 * z.shape[-1] * LOG_2PI


def sample_action(mean, std, rng=None, deterministic: bool = False) -> tuple[np.ndarray, float]:
    """Draw from N(mean, diag(std^2)); ``deterministic`` returns the mean."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std <= 0):
        raise ValueError("std must be positive")
    if deterministic:
        action = mean.copy()
    else:
        action = mean + std * rng.standard_normal(mean.shape)
    return action, float(gaussian_log_prob(action, mean, std))


# -- observation normalization ----------------------------------------------

@dataclass(frozen=True)
class ObsNormalizer:
    """Per-dimension z-score with statistics frozen from the training data.

    Dimensions with zero spread (and the previous-position slot, which is
    already bounded) pass through with mean 0, scale 1.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, observations, passthrough=(5,)) -> "ObsNormalizer":
        obs = np.asarray(observations, dtype=float)
        mean = obs.mean(axis=0)
        std = obs.std(axis=0)
        flat = ~(std > 0)
        mean[flat] = 0.0
        std[flat] = 1.0
        for i in passthrough:
            mean[i], std[i] = 0.0, 1.0
        return cls(mean, std)

    @classmethod
    def identity(cls, dim: int = OBS_DIM) -> "ObsNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, obs) -> np.ndarray:
        return (np.asarray(obs, dtype=float) - self.mean) / self.std


# -- rollouts and advantages -------------------------------------------------

@dataclass
class RolloutBuffer:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def empty(cls, length: int, obs_dim: int, n_actions: int) -> "RolloutBuffer":
        return cls(
            observations=np.zeros((length, obs_dim)),
            actions=np.zeros((length, n_actions)),
            log_probs=np.zeros(length),
            rewards=np.zeros(length),
            values=np.zeros(length),
            dones=np.zeros(length, dtype=bool),
        )

    def __len__(self):
        return len(self.rewards)


def compute_gae(buffer: RolloutBuffer, last_value: float, gamma: float, lam: float) -> RolloutBuffer:
    """Fill ``advantages`` and ``returns`` by the backward GAE recursion.

    ``dones[t]`` marks that the episode ended with step ``t``; the value of
    the following state is then not bootstrapped.
    """
    n = len(buffer)
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        nonterminal = 1.0 - float(buffer.dones[t])
        next_value = last_value if t == n - 1 else buffer.values[t + 1]
        delta = buffer.rewards[t] + gamma * next_value * nonterminal - buffer.values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return buffer


# -- loss --------------------------------------------------------------------

def ppo_loss(params: dict, batch: dict, clip_epsilon: float = 0.2, value_coef: float = 0.5,
             entropy_coef: float = 0.0) -> tuple[float, dict, dict]:
    """Clipped-surrogate PPO loss and its exact gradient.

    ``batch`` holds ``obs``, ``actions``, ``old_log_prob``, ``advantages``
    (already normalized if desired) and ``returns``.  Returns
    ``(loss, grads, info)``.
    """
    obs = np.atleast_2d(np.asarray(batch["obs"], dtype=float))
    actions = np.atleast_2d(np.asarray(batch["actions"], dtype=float))
    old_lp = np.asarray(batch["old_log_prob"], dtype=float)
    adv = np.asarray(batch["advantages"], dtype=float)
    ret = np.asarray(batch["returns"], dtype=float)
    B, N = actions.shape

    mean, pi_acts = _mlp_forward(params, "pi", obs)
    value, vf_acts = _mlp_forward(params, "vf", obs)
    value = value[:, 0]
    log_std = _clamped_log_std(params)
    std = np.exp(log_std)
    z = (actions - mean) / std
    log_prob = -0.5 * np.sum(z * z, axis=1) - log_std.sum() - 0.5 * N * LOG_2PI
    with np.errstate(over="ignore"):
        ratio = np.exp(log_prob - old_lp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    unclipped = surr1 <= surr2
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    value_loss = np.mean((value - ret) ** 2)
    entropy = float(np.sum(log_std) + 0.5 * N * (1.0 + LOG_2PI))
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite PPO loss (max ratio {np.max(ratio):.3g}, policy {policy_loss}, value {value_loss})"
        )

    g_lp = -(ratio * adv * unclipped) / B
    grads: dict = {}
    d_mean = g_lp[:, None] * z / std
    _mlp_backward(params, "pi", pi_acts, d_mean, grads)
    d_log_std = (g_lp[:, None] * (z * z - 1.0)).sum(axis=0) - entropy_coef
    in_range = (params["log_std"] > LOG_STD_MIN) & (params["log_std"] < LOG_STD_MAX)
    grads["log_std"] = d_log_std * in_range
    d_value = (value_coef * 2.0 / B) * (value - ret)
    _mlp_backward(params, "vf", vf_acts, d_value[:, None], grads)

    info = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_epsilon)),
        "approx_kl": float(np.mean((ratio - 1.0) - np.log(ratio))),
    }
    return float(loss), grads, info


class Adam:
    def __init__(self, params: dict, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-5):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


# -- policy, training, evaluation -------------------------------------------

@dataclass
class PpoPolicy:
    params: dict
    normalizer: ObsNormalizer
    config: PpoConfig
    metadata: dict = field(default_factory=dict)

    @property
    def n_actions(self) -> int:
        return len(self.params["log_std"])

    def act(self, obs, rng=None, deterministic: bool = False) -> np.ndarray:
        mean, std, _ = policy_forward(self.params, self.normalizer(obs))
        action, _ = sample_action(mean, std, rng, deterministic)
        return action

    def copy(self) -> "PpoPolicy":
        return PpoPolicy({k: v.copy() for k, v in self.params.items()}, self.normalizer, self.config,
                         dict(self.metadata))


@dataclass
class TrainResult:
    policy: PpoPolicy
    curve: list[dict]
    steps: int


def train(env: AlphaTradingEnv, config: PpoConfig | None = None, normalizer: ObsNormalizer | None = None,
          callback=None) -> TrainResult:
    """Collect rollouts on ``env`` and update the policy by clipped PPO.

    One episode is one pass over the environment's dates; it restarts at
    the first date when exhausted.  Everything random (initialization,
    action noise, minibatch order) flows from ``config.seed``.
    """
    config = config or PpoConfig()
    rng = np.random.default_rng(config.seed)
    n_actions = env.n_alphas
    params = init_params(OBS_DIM, n_actions, config.hidden, rng, config.init_log_std)
    if normalizer is None:
        normalizer = ObsNormalizer.fit(env.market_observations())
    policy = PpoPolicy(params, normalizer, config)
    opt = Adam(params, config.learning_rate, eps=config.adam_eps)
    curve: list[dict] = []
    steps = 0
    obs = normalizer(env.reset())
    episode_rewards: list[float] = []
    episode_return = 0.0

    while steps < config.total_steps:
        L = min(config.rollout_length, config.total_steps - steps)
        buf = RolloutBuffer.empty(L, OBS_DIM, n_actions)
        for i in range(L):
            mean, std, value = policy_forward(params, obs)
            action, logp = sample_action(mean, std, rng)
            next_obs, reward, done, _ = env.step(action)
            buf.observations[i] = obs
            buf.actions[i] = action
            buf.log_probs[i] = logp
            buf.rewards[i] = reward
            buf.values[i] = value
            buf.dones[i] = done
            episode_return += reward
            if done:
                episode_rewards.append(episode_return)
                episode_return = 0.0
                next_obs = env.reset()
            obs = normalizer(next_obs)
        steps += L
        _, _, last_value = policy_forward(params, obs)
        compute_gae(buf, float(last_value), config.gamma, config.gae_lambda)

        last_good = policy.copy()
        stats = []
        for _ in range(config.epochs_per_rollout):
            perm = rng.permutation(L)
            for lo in range(0, L, config.minibatch_size):
                idx = perm[lo:lo + config.minibatch_size]
                adv = buf.advantages[idx]
                if len(idx) > 1:
                    adv = (adv - adv.mean()) / (adv.std(ddof=1) + 1e-8)
                batch = {
                    "obs": buf.observations[idx],
                    "actions": buf.actions[idx],
                    "old_log_prob": buf.log_probs[idx],
                    "advantages": adv,
                    "returns": buf.returns[idx],
                }
                try:
                    loss, grads, info = ppo_loss(params, batch, config.clip_epsilon, config.value_coef,
                                                 config.entropy_coef)
                except FloatingPointError as exc:
                    raise TrainingDivergedError(f"step {steps}: {exc}", last_good) from exc
                _clip_grad_norm(grads, config.max_grad_norm)
                opt.step(params, grads)
                stats.append(info)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise TrainingDivergedError(f"non-finite parameters after {steps} steps", last_good)
        record = {
            "steps": steps,
            "mean_reward": float(buf.rewards.mean()),
            "policy_loss": float(np.mean([s["policy_loss"] for s in stats])),
            "value_loss": float(np.mean([s["value_loss"] for s in stats])),
            "approx_kl": float(np.mean([s["approx_kl"] for s in stats])),
            "clip_fraction": float(np.mean([s["clip_fraction"] for s in stats])),
            "mean_std": float(np.exp(_clamped_log_std(params)).mean()),
        }
        curve.append(record)
        if callback is not None:
            callback(record)
    return TrainResult(policy, curve, steps)


def _summary_stats(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if np.any(np.isnan(arr)):
        return math.nan, math.nan
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def evaluate_policy(policy: PpoPolicy, env: AlphaTradingEnv, episodes: int = 10, deterministic: bool = False,
                    seeds=None) -> dict:
    """Run ``episodes`` backtests and aggregate mean and sample std of the summary metrics.

    Stochastic runs use one generator per entry of ``seeds`` (default
    0..episodes-1); deterministic runs act on the policy mean.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = list(range(episodes)) if seeds is None else list(seeds)
    if len(seeds) != episodes:
        raise ValueError("need one seed per episode")
    reports: list[BacktestReport] = []
    for s in seeds:
        rng = np.random.default_rng(s)
        reports.append(run_episode(env, lambda o, rng=rng: policy.act(o, rng, deterministic)))
    out = {"episodes": episodes, "deterministic": deterministic, "seeds": seeds, "reports": reports}
    for key in ("cum_return", "sharpe", "max_drawdown", "mean_reward"):
        vals = [r.summary[key] for r in reports]
        out[key] = {"mean": _summary_stats(vals)[0], "std": _summary_stats(vals)[1], "runs": vals}
    return out


# -- checkpoints -------------------------------------------------------------

def _encode_params(params: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": [float(x) for x in np.ravel(v)]} for k, v in sorted(params.items())}


def _decode_params(blob: dict) -> dict:
    return {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in blob.items()}


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()


def checkpoint_text(policy: PpoPolicy) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(policy.config),
        "seed": policy.config.seed,
        "metadata": policy.metadata,
        "normalizer": {"mean": [float(x) for x in policy.normalizer.mean],
                       "std": [float(x) for x in policy.normalizer.std]},
        "params": _encode_params(policy.params),
        "params_sha256": params_digest(policy.params),
    }
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_checkpoint(path, policy: PpoPolicy) -> str:
    """Write a JSON checkpoint; returns the SHA-256 of the file contents."""
    text = checkpoint_text(policy)
    Path(path).write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_checkpoint(path) -> PpoPolicy:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    cfg = dict(doc["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    params = _decode_params(doc["params"])
    if params_digest(params) != doc["params_sha256"]:
        raise ValueError(f"{path}: parameter checksum mismatch")
    norm = ObsNormalizer(np.array(doc["normalizer"]["mean"]), np.array(doc["normalizer"]["std"]))
    return PpoPolicy(params, norm, PpoConfig(**cfg), doc.get("metadata", {}))
