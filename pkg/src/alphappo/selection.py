"""Alpha subset selection: low correlation, top gain contribution, random."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alpha_dsl import AlphaMatrix
from .boost_fi import GainReport

__all__ = [
    "SelectionResult",
    "correlation_matrix",
    "select_all",
    "select_low_correlation",
    "select_high_contribution",
    "select_random",
]


@dataclass(frozen=True)
class SelectionResult:
    method: str
    kept: tuple[str, ...]
    dropped: tuple[tuple[str, str], ...] = ()
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params": dict(self.params),
            "kept": list(self.kept),
            "dropped": [{"name": n, "reason": r} for n, r in self.dropped],
        }


def correlation_matrix(matrix: AlphaMatrix, min_rows: int = 3) -> np.ndarray:
    """Pairwise Pearson correlation over jointly valid training rows.

    Entries with fewer than ``min_rows`` joint rows or a zero-variance side
    are NaN.
    """
    z = matrix.standardized[: matrix.train_rows]
    n = z.shape[1]
    valid = ~np.isnan(z)
    corr = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i, n):
            ok = valid[:, i] & valid[:, j]
            if ok.sum() < min_rows:
                continue
            a = z[ok, i] - z[ok, i].mean()
            b = z[ok, j] - z[ok, j].mean()
            denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
            if denom == 0:
                continue
            c = 1.0 if i == j else float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))
            corr[i, j] = corr[j, i] = c
    return corr


def select_all(names) -> SelectionResult:
    return SelectionResult("all", tuple(names))


def select_low_correlation(matrix: AlphaMatrix, threshold: float = 0.7) -> SelectionResult:
    """Greedy scan in file order: drop an alpha whose |corr| with any kept one exceeds ``threshold``."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    corr = correlation_matrix(matrix)
    kept: list[int] = []
    dropped: list[tuple[str, str]] = []
    for i, name in enumerate(matrix.names):
        clash = None
        for j in kept:
            c = corr[i, j]
            if not np.isnan(c) and abs(c) > threshold:
                clash = (j, c)
                break
        if clash is None:
            kept.append(i)
        else:
            dropped.append((name, f"corr {clash[1]:.2f} with {matrix.names[clash[0]]}"))
    return SelectionResult(
        "low_correlation",
        tuple(matrix.names[i] for i in kept),
        tuple(dropped),
        {"threshold": threshold},
    )


def select_high_contribution(report: GainReport, names, k: int = 10) -> SelectionResult:
    """Top ``k`` alphas by gain importance; ties keep the earlier alpha."""
    names = list(names)
    imp = np.asarray(report.importance, dtype=float)
    if len(imp) != len(names):
        raise ValueError("importance and names differ in length")
    if not 1 <= k <= len(names):
        raise ValueError(f"k must lie in [1, {len(names)}]")
    if not np.any(imp > 0):
        raise ValueError("all gain importances are zero; nothing to rank")
    order = sorted(range(len(names)), key=lambda i: (-imp[i], i))
    top = set(order[:k])
    rank = {i: r + 1 for r, i in enumerate(order)}
    kept = tuple(names[i] for i in range(len(names)) if i in top)
    dropped = tuple(
        (names[i], f"gain rank {rank[i]} (importance {imp[i]:.3g})")
        for i in range(len(names))
        if i not in top
    )
    return SelectionResult("high_contribution", kept, dropped, {"k": k})


def select_random(names, k: int = 30, seed: int = 0) -> SelectionResult:
    """Uniform draw of ``k`` names without replacement, kept in input order."""
    names = list(names)
    if not 1 <= k <= len(names):
        raise ValueError(f"k must lie in [1, {len(names)}]")
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(names), size=k, replace=False).tolist())
    kept = tuple(n for i, n in enumerate(names) if i in chosen)
    dropped = tuple((n, "not drawn") for i, n in enumerate(names) if i not in chosen)
    return SelectionResult("random", kept, dropped, {"k": k, "seed": seed})
