"""Can PPO find the one informative alpha among fifty?

A synthetic market where ``oracle_t`` equals the next-day return and 49
other columns are noise.  We train a small PPO allocator on the first 80%
of dates and compare it with an equal-weighted blend on the rest.

    python3 demos/oracle_alpha_experiment.py [steps] [seed]
"""
from __future__ import annotations

import sys

import numpy as np

from alphappo.alpha_dsl import build_matrix
from alphappo.market_data import SplitSpec
from alphappo.ppo import PpoConfig, evaluate_policy, train
from alphappo.synthetic import oracle_alpha_market
from alphappo.trading_env import AlphaTradingEnv, run_equal_weighted

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

# %% Data: 2000 business days, alphas standardized on training rows only
frame, exprs = oracle_alpha_market(2000, 49, seed=seed)
split = SplitSpec(0.8)
b = split.boundary_index(len(frame))
matrix = build_matrix(exprs, frame, split)
print(f"{len(matrix.names)} alphas, {b} training rows, {len(frame) - b} test rows")

# %% Train on the prefix
train_env = AlphaTradingEnv(matrix, frame.iloc[:b])
result = train(train_env, PpoConfig(total_steps=steps, seed=seed))
print(f"trained {steps} steps; last rollout mean reward {result.curve[-1]['mean_reward']:.2e}")

# %% Evaluate on held-out dates
test_env = AlphaTradingEnv(matrix, frame, start=b)
ppo = evaluate_policy(result.policy, test_env, 5, deterministic=False)
det = evaluate_policy(result.policy, test_env, 1, deterministic=True)
ew = run_equal_weighted(matrix, frame, start=b).summary

print(f"{'strategy':<20}{'cum return':>12}{'sharpe':>10}{'mdd':>10}")
print(f"{'ppo (5 samples)':<20}{ppo['cum_return']['mean']:>12.4f}{ppo['sharpe']['mean']:>10.3f}"
      f"{ppo['max_drawdown']['mean']:>10.4f}")
print(f"{'ppo (mean action)':<20}{det['cum_return']['mean']:>12.4f}{det['sharpe']['mean']:>10.3f}"
      f"{det['max_drawdown']['mean']:>10.4f}")
print(f"{'equal weight':<20}{ew['cum_return']:>12.4f}{ew['sharpe']:>10.3f}{ew['max_drawdown']:>10.4f}")

# %% Where does the policy put its weight?
obs = test_env.reset()
mean_action = result.policy.act(obs, deterministic=True)
w = np.clip(mean_action, -1, 1)
w = w / (np.abs(w).sum() + 1e-8)
top = np.argsort(-np.abs(w))[:5]
for i in top:
    print(f"  {matrix.names[i]:<10} {w[i]:+.3f}")
