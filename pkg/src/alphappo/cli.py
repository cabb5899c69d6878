"""Command-line pipeline: features, alpha evaluation, selection, training, backtest, report.

Every command reads one JSON run configuration::

    {
      "data_path": "prices.csv",
      "schema": {"close": "Adj Close"},
      "alpha_file": null,
      "train_fraction": 0.8,
      "selection": {"method": "low_correlation", "threshold": 0.7},
      "env": {"sigma_target": 0.15, "lambda_cost": 0.001},
      "ppo": {"total_steps": 100000, "seed": 0},
      "boost": {"n_trees": 100, "max_depth": 3},
      "mi_bins": 16,
      "eval_runs": 10,
      "benchmark": {"column": "Close_SP500"},
      "output_dir": "runs/demo"
    }

Relative paths resolve against the configuration file's directory.  Exit
codes: 0 success, 1 invalid input or configuration, 2 runtime or numeric
failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .alpha_dsl import (
    AlphaFileError,
    AlphaMatrix,
    AlphaSyntaxError,
    NoUsableAlphasError,
    UnresolvedIdentifierError,
    build_matrix,
    builtin_corpus_text,
    corpus_hash,
    parse_alpha_file,
)
from .boost_fi import BoostConfig, fit_boosted_trees, gain_importance
from .market_data import DataValidationError, SplitSpec, build_features, build_split_features, load_csv
from .metrics import DEFAULT_MI_BINS, information_coefficient, mutual_information
from .ppo import (
    PpoConfig,
    TrainingDivergedError,
    evaluate_policy,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .selection import (
    SelectionResult,
    select_all,
    select_high_contribution,
    select_low_correlation,
    select_random,
)
from .trading_env import AlphaTradingEnv, EnvConfig, MissingInputError, run_equal_weighted

__all__ = ["ConfigError", "RunConfig", "load_config", "main"]

log = logging.getLogger("alphappo")

SELECTION_METHODS = ("all", "low_correlation", "high_contribution", "random")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_path: Path
    output_dir: Path
    alpha_file: Path | None = None
    schema: dict = field(default_factory=dict)
    train_fraction: float = 0.8
    selection: dict = field(default_factory=lambda: {"method": "all"})
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    boost_seed: int = 0
    mi_bins: int = DEFAULT_MI_BINS
    eval_runs: int = 10
    benchmark: dict | None = None

    def echo(self) -> dict:
        return {
            "data_path": str(self.data_path),
            "output_dir": str(self.output_dir),
            "alpha_file": None if self.alpha_file is None else str(self.alpha_file),
            "schema": dict(self.schema),
            "train_fraction": self.train_fraction,
            "selection": dict(self.selection),
            "env": dataclasses.asdict(self.env),
            "ppo": dataclasses.asdict(self.ppo),
            "boost": {**dataclasses.asdict(self.boost), "seed": self.boost_seed},
            "mi_bins": self.mi_bins,
            "eval_runs": self.eval_runs,
            "benchmark": self.benchmark,
        }


def _build(cls, raw, what):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{what} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def _check_selection(sel) -> dict:
    if not isinstance(sel, dict) or sel.get("method") not in SELECTION_METHODS:
        raise ConfigError(f"selection.method must be one of {SELECTION_METHODS}")
    allowed = {"all": set(), "low_correlation": {"threshold"}, "high_contribution": {"k"},
               "random": {"k", "seed"}}[sel["method"]]
    extra = sorted(set(sel) - allowed - {"method"})
    if extra:
        raise ConfigError(f"selection {sel['method']!r} does not take {', '.join(extra)}")
    return dict(sel)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    base = path.parent
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"boost_seed"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in ("data_path", "output_dir"):
        if not raw.get(key):
            raise ConfigError(f"{key} is required")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    data_path = resolve(raw["data_path"])
    if not data_path.exists():
        raise ConfigError(f"data_path does not exist: {data_path}")
    alpha_file = resolve(raw["alpha_file"]) if raw.get("alpha_file") else None
    if alpha_file is not None and not alpha_file.exists():
        raise ConfigError(f"alpha_file does not exist: {alpha_file}")
    boost_raw = dict(raw.get("boost") or {})
    boost_seed = int(boost_raw.pop("seed", 0))
    ppo_raw = dict(raw.get("ppo") or {})
    if "hidden" in ppo_raw:
        ppo_raw["hidden"] = tuple(ppo_raw["hidden"])
    bench = raw.get("benchmark")
    if bench is not None:
        if not isinstance(bench, dict) or "column" not in bench:
            raise ConfigError("benchmark must be an object with a 'column' (and optional 'path')")
        bench = dict(bench)
        if bench.get("path"):
            bench["path"] = str(resolve(bench["path"]))
            if not Path(bench["path"]).exists():
                raise ConfigError(f"benchmark path does not exist: {bench['path']}")
    try:
        train_fraction = float(raw.get("train_fraction", 0.8))
        SplitSpec(train_fraction)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train_fraction: {exc}") from exc
    eval_runs = raw.get("eval_runs", 10)
    if not isinstance(eval_runs, int) or eval_runs < 1:
        raise ConfigError("eval_runs must be a positive integer")
    mi_bins = raw.get("mi_bins", DEFAULT_MI_BINS)
    if not isinstance(mi_bins, int) or mi_bins < 2:
        raise ConfigError("mi_bins must be an integer >= 2")
    return RunConfig(
        data_path=data_path,
        output_dir=resolve(raw["output_dir"]),
        alpha_file=alpha_file,
        schema=dict(raw.get("schema") or {}),
        train_fraction=train_fraction,
        selection=_check_selection(raw.get("selection", {"method": "all"})),
        env=_build(EnvConfig, raw.get("env"), "env"),
        ppo=_build(PpoConfig, ppo_raw, "ppo"),
        boost=_build(BoostConfig, boost_raw, "boost"),
        boost_seed=boost_seed,
        mi_bins=mi_bins,
        eval_runs=eval_runs,
        benchmark=bench,
    )


# -- shared pipeline pieces --------------------------------------------------

@dataclass
class Pipeline:
    config: RunConfig
    raw: pd.DataFrame
    frame: pd.DataFrame
    boundary: int
    corpus_text: str
    matrix: AlphaMatrix

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.config.train_fraction)

    def header(self, command: str, seeds: dict | None = None) -> dict:
        return {
            "command": command,
            "version": __version__,
            "config": self.config.echo(),
            "seeds": seeds or {},
            "corpus_sha256": corpus_hash(self.corpus_text),
            "rows": {"total": len(self.frame), "train": self.boundary, "test": len(self.frame) - self.boundary},
        }


def _prepare(cfg: RunConfig) -> Pipeline:
    raw = load_csv(cfg.data_path, cfg.schema or None)
    split = SplitSpec(cfg.train_fraction)
    frame, b = build_split_features(raw, split)
    text = cfg.alpha_file.read_text(encoding="utf-8") if cfg.alpha_file else builtin_corpus_text()
    exprs = parse_alpha_file(text)
    if not exprs:
        raise NoUsableAlphasError("alpha file defines no alphas")
    matrix = build_matrix(exprs, frame, split)
    return Pipeline(cfg, raw, frame, b, text, matrix)


def _training_xy(p: Pipeline) -> tuple[np.ndarray, np.ndarray]:
    z = p.matrix.standardized[: p.boundary]
    y = p.frame["future_return"].to_numpy(dtype=float)[: p.boundary]
    ok = np.isfinite(z).all(axis=1) & np.isfinite(y)
    return z[ok], y[ok]


def _gain(p: Pipeline):
    X, y = _training_xy(p)
    model = fit_boosted_trees(X, y, p.config.boost, seed=p.config.boost_seed)
    return gain_importance(model), len(y)


def _select(p: Pipeline) -> SelectionResult:
    sel = p.config.selection
    method = sel["method"]
    if method == "all":
        return select_all(p.matrix.names)
    if method == "low_correlation":
        return select_low_correlation(p.matrix, float(sel.get("threshold", 0.7)))
    if method == "high_contribution":
        report, _ = _gain(p)
        return select_high_contribution(report, p.matrix.names, int(sel.get("k", 10)))
    return select_random(p.matrix.names, int(sel.get("k", 30)), int(sel.get("seed", 0)))


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if isinstance(v, float) and not math.isfinite(v) else
                        (repr(v) if isinstance(v, float) else v) for v in row])
    return path


# -- commands ----------------------------------------------------------------

def cmd_features(cfg: RunConfig) -> dict:
    raw = load_csv(cfg.data_path, cfg.schema or None)
    frame = build_features(raw)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "features.csv", float_format="%.17g", date_format="%Y-%m-%d", lineterminator="\n")
    warm = {}
    for c in frame.columns:
        valid = np.flatnonzero(frame[c].notna().to_numpy())
        warm[c] = int(valid[0]) if len(valid) else None
    doc = {
        "command": "features",
        "version": __version__,
        "config": cfg.echo(),
        "seeds": {},
        "rows": len(frame),
        "columns": list(frame.columns),
        "first_valid_row": warm,
        "insufficient_history": bool(frame["tau_upper"].isna().all()),
    }
    _write_json(out / "features_report.json", doc)
    return doc


def cmd_eval_alphas(cfg: RunConfig) -> dict:
    p = _prepare(cfg)
    fr = p.frame["future_return"].to_numpy(dtype=float)[: p.boundary]
    report, n_fit = _gain(p)
    rows = []
    for j, name in enumerate(p.matrix.names):
        x = p.matrix.standardized[: p.boundary, j]
        try:
            ic = information_coefficient(x, fr)
        except ValueError:
            ic = math.nan
        try:
            mi = mutual_information(x, fr, cfg.mi_bins)
        except ValueError:
            mi = math.nan
        rows.append({"name": name, "ic": ic, "mi": mi, "gain": float(report.importance[j]),
                     "gain_normalized": float(report.normalized[j]),
                     "zero_divisions": int(p.matrix.zero_divisions.get(name, 0))})
    doc = {
        **p.header("eval-alphas", {"boost": cfg.boost_seed}),
        "n_input": len(p.matrix.names) + len(p.matrix.dropped),
        "n_kept": len(p.matrix.names),
        "dropped": [{"name": n, "reason": r} for n, r in p.matrix.dropped],
        "boost_rows": n_fit,
        "alphas": rows,
    }
    _write_json(cfg.output_dir / "alpha_metrics.json", doc)
    _write_csv(cfg.output_dir / "alpha_metrics.csv", ["name", "ic", "mi", "gain", "gain_normalized"],
               [[r["name"], r["ic"], r["mi"], r["gain"], r["gain_normalized"]] for r in rows])
    return doc


def cmd_select(cfg: RunConfig) -> dict:
    p = _prepare(cfg)
    res = _select(p)
    seeds = {"selection": res.params.get("seed")} if "seed" in res.params else {}
    doc = {**p.header("select", seeds), "selection": res.to_dict(),
           "upstream_dropped": [{"name": n, "reason": r} for n, r in p.matrix.dropped]}
    _write_json(cfg.output_dir / "selection.json", doc)
    return doc


def _envs(p: Pipeline, names) -> tuple[AlphaTradingEnv, AlphaTradingEnv, AlphaMatrix]:
    sub = p.matrix.subset(names)
    train_env = AlphaTradingEnv(sub, p.frame.iloc[: p.boundary], p.config.env)
    test_env = AlphaTradingEnv(sub, p.frame, p.config.env, start=p.boundary)
    return train_env, test_env, sub


def cmd_train(cfg: RunConfig) -> dict:
    p = _prepare(cfg)
    res = _select(p)
    train_env, _, _ = _envs(p, res.kept)
    log.info("training on %d alphas for %d steps", len(res.kept), cfg.ppo.total_steps)
    out = cfg.output_dir
    try:
        result = train(train_env, cfg.ppo)
    except TrainingDivergedError as exc:
        save_checkpoint(out / "checkpoint_last_good.json", exc.last_good)
        raise
    policy = result.policy
    policy.metadata.update({
        "alphas": list(res.kept),
        "selection": res.to_dict(),
        "corpus_sha256": corpus_hash(p.corpus_text),
        "train_rows": p.boundary,
        "version": __version__,
    })
    out.mkdir(parents=True, exist_ok=True)
    digest = save_checkpoint(out / "checkpoint.json", policy)
    keys = ["steps", "mean_reward", "policy_loss", "value_loss", "approx_kl", "clip_fraction", "mean_std"]
    _write_csv(out / "training_curve.csv", keys, [[r[k] for k in keys] for r in result.curve])
    doc = {
        **p.header("train", {"ppo": cfg.ppo.seed, **({"selection": res.params["seed"]} if "seed" in res.params else {})}),
        "selection": res.to_dict(),
        "checkpoint": "checkpoint.json",
        "checkpoint_sha256": digest,
        "steps": result.steps,
        "episode_steps": train_env.n_steps,
        "curve": result.curve,
    }
    _write_json(out / "train_report.json", doc)
    return doc


def _benchmark_return(p: Pipeline, test_env: AlphaTradingEnv) -> dict | None:
    bench = p.config.benchmark
    if not bench:
        return None
    col = bench["column"]
    if bench.get("path"):
        other = load_csv(bench["path"], bench.get("schema"))
        src = other.reindex(p.frame.index)
        series = src[col] if col in src.columns else src["C_t"]
    else:
        if col not in p.raw.columns:
            raise DataValidationError(f"benchmark column {col!r} not in data")
        series = p.raw[col]
    dates = p.frame.index[test_env.start:test_env.stop + 1]
    s = series.reindex(dates).dropna()
    if len(s) < 2:
        raise DataValidationError(f"benchmark {col!r} has fewer than two prices in the test window")
    return {"column": col, "cum_return": float(s.iloc[-1] / s.iloc[0] - 1.0),
            "start": s.index[0].strftime("%Y-%m-%d"), "end": s.index[-1].strftime("%Y-%m-%d")}


def _row(label, summary_or_eval, stochastic: bool):
    out = {"strategy": label}
    for key in ("cum_return", "sharpe", "max_drawdown", "mean_reward"):
        if stochastic:
            out[key] = summary_or_eval[key]["mean"]
            out[f"{key}_std"] = summary_or_eval[key]["std"]
        else:
            out[key] = summary_or_eval[key]
            out[f"{key}_std"] = 0.0
    return out


def cmd_backtest(cfg: RunConfig, checkpoint: Path | None = None) -> dict:
    p = _prepare(cfg)
    ckpt = checkpoint or cfg.output_dir / "checkpoint.json"
    if not Path(ckpt).exists():
        raise ConfigError(f"checkpoint not found: {ckpt} (run 'train' first)")
    policy = load_checkpoint(ckpt)
    names = policy.metadata.get("alphas")
    if not names:
        raise ConfigError(f"{ckpt}: checkpoint lists no alphas")
    missing = [n for n in names if n not in p.matrix.names]
    if missing:
        raise ConfigError(f"checkpoint alphas not available in this run: {', '.join(missing)}")
    _, test_env, sub = _envs(p, names)
    seeds = list(range(cfg.eval_runs))
    sto = evaluate_policy(policy, test_env, cfg.eval_runs, deterministic=False, seeds=seeds)
    det = evaluate_policy(policy, test_env, 1, deterministic=True)
    ew = run_equal_weighted(sub, p.frame, cfg.env, start=p.boundary)
    bench = _benchmark_return(p, test_env)
    close = p.frame["C_t"].to_numpy(dtype=float)
    buy_hold = float(close[test_env.stop] / close[test_env.start] - 1.0) if test_env.stop < len(close) else math.nan
    table = [
        _row("ppo_stochastic", sto, True),
        _row("ppo_deterministic", det, True),
        _row("equal_weighted", ew.summary, False),
    ]
    doc = {
        **p.header("backtest", {"ppo": policy.config.seed, "evaluation": seeds}),
        "checkpoint_sha256": _file_sha(ckpt),
        "alphas": list(names),
        "test_window": {"start": test_env.dates[test_env.start].strftime("%Y-%m-%d"),
                        "end": test_env.dates[test_env.stop - 1].strftime("%Y-%m-%d"),
                        "steps": test_env.n_steps},
        "summary": table,
        "asset_buy_and_hold": buy_hold,
        "benchmark": bench,
        "runs": {
            "ppo_stochastic": [r.to_dict() for r in sto["reports"]],
            "ppo_deterministic": det["reports"][0].to_dict(),
            "equal_weighted": ew.to_dict(),
        },
    }
    _write_json(cfg.output_dir / "backtest.json", doc)
    cols = ["strategy", "cum_return", "cum_return_std", "sharpe", "sharpe_std", "max_drawdown",
            "max_drawdown_std", "mean_reward", "mean_reward_std"]
    _write_csv(cfg.output_dir / "backtest_summary.csv", cols, [[r[c] for c in cols] for r in table])
    return doc


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(v, std=None) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "n/a"
    return f"{v:.4f}" if std is None else f"{v:.4f} ({std:.4f})"


def cmd_report(cfg: RunConfig) -> dict:
    """Collect the JSON artifacts of a run into one summary (text + JSON)."""
    out = cfg.output_dir
    parts = {}
    for name in ("features_report", "alpha_metrics", "selection", "train_report", "backtest"):
        path = out / f"{name}.json"
        if path.exists():
            parts[name] = json.loads(path.read_text(encoding="utf-8"))
    if not parts:
        raise ConfigError(f"no run artifacts in {out}; run another command first")
    lines = [f"alphappo {__version__} run report: {out}"]
    if "alpha_metrics" in parts:
        am = parts["alpha_metrics"]
        lines.append(f"alphas: {am['n_input']} input, {am['n_kept']} usable, {len(am['dropped'])} dropped")
        top = sorted(am["alphas"], key=lambda r: -(r["gain"] or 0))[:5]
        for r in top:
            lines.append(f"  {r['name']:<14} IC {_fmt(r['ic'])}  MI {_fmt(r['mi'])}  gain {_fmt(r['gain_normalized'])}")
    if "selection" in parts:
        sel = parts["selection"]["selection"]
        lines.append(f"selection {sel['method']}: kept {len(sel['kept'])}, dropped {len(sel['dropped'])}")
    if "train_report" in parts:
        tr = parts["train_report"]
        lines.append(f"training: {tr['steps']} steps, checkpoint {tr['checkpoint_sha256'][:12]}")
    if "backtest" in parts:
        bt = parts["backtest"]
        lines.append(f"test window {bt['test_window']['start']} .. {bt['test_window']['end']}")
        lines.append(f"  {'strategy':<18} {'cum return':>18} {'sharpe':>18} {'max drawdown':>18}")
        for r in bt["summary"]:
            lines.append(f"  {r['strategy']:<18} {_fmt(r['cum_return'], r['cum_return_std']):>18} "
                         f"{_fmt(r['sharpe'], r['sharpe_std']):>18} {_fmt(r['max_drawdown'], r['max_drawdown_std']):>18}")
        lines.append(f"  asset buy-and-hold {_fmt(bt['asset_buy_and_hold'])}")
        if bt.get("benchmark"):
            lines.append(f"  benchmark {bt['benchmark']['column']} {_fmt(bt['benchmark']['cum_return'])}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    doc = {"command": "report", "version": __version__, "config": cfg.echo(), "sections": sorted(parts),
           "text": text}
    _write_json(out / "report.json", doc)
    return doc


# -- entry point -------------------------------------------------------------

VALIDATION_ERRORS = (ConfigError, DataValidationError, AlphaSyntaxError, AlphaFileError,
                     UnresolvedIdentifierError, NoUsableAlphasError)
RUNTIME_ERRORS = (TrainingDivergedError, FloatingPointError, MissingInputError, RuntimeError, ValueError,
                  ArithmeticError, OSError)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m alphappo", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"alphappo {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "features": "compute indicator, return and risk columns",
        "eval-alphas": "IC, MI and gain importance per alpha on the training split",
        "select": "apply the configured alpha selection",
        "train": "train the PPO weighting policy on the training split",
        "backtest": "evaluate PPO and the equal-weighted baseline on the test split",
        "report": "summarize the artifacts in the output directory",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config", type=Path, help="JSON run configuration")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "backtest":
            sp.add_argument("--checkpoint", type=Path, default=None,
                            help="checkpoint file (default: <output_dir>/checkpoint.json)")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "features":
            cmd_features(cfg)
        elif args.command == "eval-alphas":
            cmd_eval_alphas(cfg)
        elif args.command == "select":
            cmd_select(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "backtest":
            cmd_backtest(cfg, args.checkpoint)
        else:
            cmd_report(cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
