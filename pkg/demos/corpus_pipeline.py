"""End-to-end pipeline over the built-in 50-alpha corpus.

Writes a synthetic price CSV and a run configuration into a scratch
directory, then drives each CLI stage in order, the same way
``python3 -m alphappo <command> config.json`` would.

    python3 demos/corpus_pipeline.py [workdir]
"""
from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

from alphappo import cli
from alphappo.synthetic import corpus_market

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="alphappo_"))
work.mkdir(parents=True, exist_ok=True)

# %% Market data: OHLCV plus the index and polarity columns some alphas read
raw = corpus_market(1200, seed=3)
raw = raw.rename(columns={"O_t": "open", "High_t": "high", "Low_t": "low", "C_t": "close", "V_t": "volume"})
raw.drop(columns=["Close_t"]).to_csv(work / "prices.csv", index_label="date", date_format="%Y-%m-%d",
                                     float_format="%.17g")

config = {
    "data_path": "prices.csv",
    "output_dir": "run",
    "selection": {"method": "low_correlation", "threshold": 0.7},
    "ppo": {"total_steps": 10_000, "seed": 0},
    "boost": {"n_trees": 50},
    "eval_runs": 5,
}
cfg_path = work / "config.json"
cfg_path.write_text(json.dumps(config, indent=2))

# %% Stages
for command in ("features", "eval-alphas", "select", "train", "backtest", "report"):
    code = cli.main([command, str(cfg_path)])
    print(f"{command:<12} exit {code}")
    if code:
        raise SystemExit(code)

# %% Strongest alphas by information coefficient
metrics = json.loads((work / "run" / "alpha_metrics.json").read_text())
for row in sorted(metrics["alphas"], key=lambda r: -abs(r["ic"]))[:5]:
    print(f"  {row['name']:<10} IC {row['ic']:+.3f}  MI {row['mi']:.4f}  gain {row['gain_normalized']:.3f}")

print()
print((work / "run" / "report.txt").read_text())
print(f"artifacts in {work / 'run'}")
