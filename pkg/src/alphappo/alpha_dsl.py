"""A small arithmetic language for formulaic alphas.

Grammar (Python-compatible subset)::

    line   := NAME '=' expr
    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | atom
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Only ``min``, ``max`` and ``abs`` may be called.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Union

import numpy as np
import pandas as pd

from .market_data import SplitSpec

__all__ = [
    "AlphaSyntaxError",
    "AlphaFileError",
    "UnresolvedIdentifierError",
    "NoUsableAlphasError",
    "Num",
    "Name",
    "Neg",
    "BinOp",
    "Call",
    "AlphaExpr",
    "AlphaMatrix",
    "parse_expression",
    "parse_alpha",
    "parse_alpha_file",
    "render",
    "identifiers",
    "evaluate",
    "build_matrix",
    "render_prompt",
    "builtin_corpus_text",
    "builtin_corpus",
    "corpus_hash",
]

FUNCTIONS = {"min": 2, "max": 2, "abs": 1}


class AlphaSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class AlphaFileError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnresolvedIdentifierError(KeyError):
    def __init__(self, names: list[str], alpha: str = ""):
        super().__init__(f"unresolved identifiers in {alpha or 'expression'}: {', '.join(names)}")
        self.names = names

    def __str__(self):
        return self.args[0]


class NoUsableAlphasError(ValueError):
    pass


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Union[Num, Name, Neg, BinOp, Call]


@dataclass(frozen=True)
class AlphaExpr:
    name: str
    ast: Node
    source_text: str = field(default="", compare=False)

    @property
    def identifiers(self) -> list[str]:
        return identifiers(self.ast)

    def __str__(self):
        return f"{self.name} = {render(self.ast)}"


# -- tokenizer / parser ------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/(),=]))"
)


def _tokenize(text: str, offset: int = 0) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise AlphaSyntaxError(f"unexpected character {text[pos]!r}", pos + offset, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, offset: int = 0):
        self.text = text
        self.tokens = _tokenize(text, offset)
        self.i = 0
        self.offset = offset

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        where = "end of line" if tok[0] == "end" else repr(tok[1])
        raise AlphaSyntaxError(f"{msg}, found {where}", tok[2] + self.offset, self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != value:
            self.error(f"expected {value!r}")
        return self.take()

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Node:
        tok = self.peek()
        if tok[0] == "num":
            self.take()
            return Num(float(tok[1]))
        if tok[0] == "name":
            self.take()
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if tok[1] not in FUNCTIONS:
                    raise AlphaSyntaxError(f"unknown function {tok[1]!r}", tok[2] + self.offset, self.text)
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[tok[1]]:
                    raise AlphaSyntaxError(
                        f"{tok[1]}() takes {FUNCTIONS[tok[1]]} argument(s), got {len(args)}",
                        tok[2] + self.offset,
                        self.text,
                    )
                return Call(tok[1], tuple(args))
            return Name(tok[1])
        if tok[0] == "op" and tok[1] == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        self.error("expected a number, identifier or '('")

    def finish(self):
        if self.peek()[0] != "end":
            self.error("unexpected trailing input")


def parse_expression(text: str) -> Node:
    p = _Parser(text)
    if p.peek()[0] == "end":
        raise AlphaSyntaxError("empty expression", 0, text)
    node = p.expr()
    p.finish()
    return node


def parse_alpha(line: str) -> AlphaExpr:
    """Parse ``name = expression`` into an :class:`AlphaExpr`."""
    text = line.rstrip("\r\n")
    m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*=", text)
    if m is None:
        raise AlphaSyntaxError("expected 'name = expression'", 0, text)
    rhs_offset = m.end()
    rhs = text[rhs_offset:]
    if not rhs.strip():
        raise AlphaSyntaxError("empty right-hand side", len(text), text)
    p = _Parser(rhs, offset=rhs_offset)
    node = p.expr()
    p.finish()
    return AlphaExpr(m.group(1), node, text.strip())


def parse_alpha_file(text: str) -> list[AlphaExpr]:
    exprs: list[AlphaExpr] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            expr = parse_alpha(stripped)
        except AlphaSyntaxError as exc:
            raise AlphaFileError(str(exc), lineno) from exc
        if expr.name in seen:
            raise AlphaFileError(
                f"duplicate alpha name {expr.name!r} (first defined on line {seen[expr.name]})", lineno
            )
        seen[expr.name] = lineno
        exprs.append(expr)
    return exprs


# -- printing ----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_UNARY_PREC = 3


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _UNARY_PREC
    return 4


def render(node: Node) -> str:
    """Print with the fewest parentheses that reparse to the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Call):
        return f"{node.func}({', '.join(render(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = render(node.operand)
        if _prec(node.operand) < _UNARY_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[node.op]
    left = render(node.left)
    if _prec(node.left) < p:
        left = f"({left})"
    right = render(node.right)
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def identifiers(node: Node) -> list[str]:
    """Leaf identifiers in first-appearance order."""
    out: list[str] = []

    def walk(n):
        if isinstance(n, Name):
            if n.id not in out:
                out.append(n.id)
        elif isinstance(n, Neg):
            walk(n.operand)
        elif isinstance(n, BinOp):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Call):
            for a in n.args:
                walk(a)

    walk(node)
    return out


# -- evaluation --------------------------------------------------------------

@dataclass
class _EvalStats:
    zero_divisions: int = 0


def _eval(node: Node, cols: dict[str, np.ndarray], n: int, stats: _EvalStats) -> np.ndarray:
    if isinstance(node, Num):
        return np.full(n, node.value)
    if isinstance(node, Name):
        return cols[node.id]
    if isinstance(node, Neg):
        return -_eval(node.operand, cols, n, stats)
    if isinstance(node, Call):
        args = [_eval(a, cols, n, stats) for a in node.args]
        if node.func == "abs":
            return np.abs(args[0])
        fn = np.minimum if node.func == "min" else np.maximum
        return fn(args[0], args[1])
    a = _eval(node.left, cols, n, stats)
    b = _eval(node.right, cols, n, stats)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    zero = b == 0.0
    stats.zero_divisions += int(np.count_nonzero(zero & ~np.isnan(a)))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a / np.where(zero, np.nan, b)
    return out


def evaluate(expr: AlphaExpr | Node, frame: pd.DataFrame, diagnostics: dict | None = None) -> np.ndarray:
    """Row-wise value of an alpha; NaN wherever an operand is NaN or a divisor is 0.

    If ``diagnostics`` is given, the number of zero divisions is stored
    under ``"zero_divisions"``.
    """
    node = expr.ast if isinstance(expr, AlphaExpr) else expr
    names = identifiers(node)
    missing = [nm for nm in names if nm not in frame.columns]
    if missing:
        raise UnresolvedIdentifierError(missing, getattr(expr, "name", ""))
    cols = {nm: frame[nm].to_numpy(dtype=float) for nm in names}
    stats = _EvalStats()
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.array(_eval(node, cols, len(frame), stats), dtype=float)
    out[~np.isfinite(out)] = np.nan
    if diagnostics is not None:
        diagnostics["zero_divisions"] = stats.zero_divisions
    return out


@dataclass(frozen=True)
class AlphaMatrix:
    """Evaluated alphas, standardized with training-split statistics."""

    names: tuple[str, ...]
    dates: pd.DatetimeIndex
    raw: np.ndarray
    standardized: np.ndarray
    fit_mean: np.ndarray
    fit_std: np.ndarray
    train_rows: int
    dropped: tuple[tuple[str, str], ...] = ()
    zero_divisions: dict = field(default_factory=dict)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.standardized)

    @property
    def n_alphas(self) -> int:
        return len(self.names)

    def column(self, name: str) -> np.ndarray:
        return self.standardized[:, self.names.index(name)]

    def subset(self, names: Iterable[str]) -> "AlphaMatrix":
        names = tuple(names)
        idx = [self.names.index(nm) for nm in names]
        return AlphaMatrix(
            names=names,
            dates=self.dates,
            raw=self.raw[:, idx],
            standardized=self.standardized[:, idx],
            fit_mean=self.fit_mean[idx],
            fit_std=self.fit_std[idx],
            train_rows=self.train_rows,
            dropped=self.dropped,
            zero_divisions={nm: self.zero_divisions.get(nm, 0) for nm in names},
        )

    def to_frame(self, standardized: bool = True) -> pd.DataFrame:
        data = self.standardized if standardized else self.raw
        return pd.DataFrame(data, index=self.dates, columns=list(self.names))


def build_matrix(exprs: list[AlphaExpr], frame: pd.DataFrame, split: SplitSpec) -> AlphaMatrix:
    """Evaluate every alpha and z-score it with training-row mean and sample std.

    Columns with fewer than two valid training rows or zero training
    variance are dropped and listed in ``dropped``.
    """
    if not exprs:
        raise NoUsableAlphasError("no alpha expressions given")
    b = split.boundary_index(len(frame))
    kept, raw_cols, means, stds, dropped, zdiv = [], [], [], [], [], {}
    for expr in exprs:
        diag: dict = {}
        values = evaluate(expr, frame, diag)
        train = values[:b]
        train = train[~np.isnan(train)]
        if len(train) < 2:
            dropped.append((expr.name, "fewer than 2 valid training rows"))
            continue
        mu = train.mean()
        sd = train.std(ddof=1)
        if not sd > 0 or np.ptp(train) == 0:
            dropped.append((expr.name, "zero variance on training rows"))
            continue
        kept.append(expr.name)
        raw_cols.append(values)
        means.append(mu)
        stds.append(sd)
        zdiv[expr.name] = diag["zero_divisions"]
    if not kept:
        raise NoUsableAlphasError("every alpha was dropped: " + "; ".join(f"{n}: {r}" for n, r in dropped))
    raw = np.column_stack(raw_cols)
    mean = np.array(means)
    std = np.array(stds)
    return AlphaMatrix(
        names=tuple(kept),
        dates=frame.index,
        raw=raw,
        standardized=(raw - mean) / std,
        fit_mean=mean,
        fit_std=std,
        train_rows=b,
        dropped=tuple(dropped),
        zero_divisions=zdiv,
    )


# -- prompt and corpus -------------------------------------------------------

PROMPT_TEMPLATE = (
    "You are a quantitative trader. Generate 50 alpha formulas using the given stock features:\n"
    "{features}.\n"
    "The formulas should be mathematical expressions combining these features.\n"
    "Return only the formulas in Python syntax, using variables like C_t (Close), O_t (Open),\n"
    "V_t (Volume), S_t (Sentiment), and standard indicators (SMA, Momentum).\n"
    "Example Output: alpha_t = (C_t - O_t) / O_t + 0.5 * S_t"
)


def render_prompt(features: list[str]) -> str:
    if not features:
        raise ValueError("at least one feature identifier is required")
    return PROMPT_TEMPLATE.format(features=", ".join(features))


def builtin_corpus_text() -> str:
    return resources.files("alphappo").joinpath("data/alphas_50.txt").read_text(encoding="utf-8")


def builtin_corpus() -> list[AlphaExpr]:
    return parse_alpha_file(builtin_corpus_text())


def corpus_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
