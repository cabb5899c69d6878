import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphappo.alpha_dsl import (
    AlphaFileError,
    AlphaSyntaxError,
    BinOp,
    Call,
    Name,
    Neg,
    NoUsableAlphasError,
    Num,
    UnresolvedIdentifierError,
    build_matrix,
    builtin_corpus,
    builtin_corpus_text,
    evaluate,
    parse_alpha,
    parse_alpha_file,
    parse_expression,
    render,
    render_prompt,
)
from alphappo.market_data import SplitSpec


def frame_of(**cols):
    n = len(next(iter(cols.values())))
    return pd.DataFrame({k: np.asarray(v, dtype=float) for k, v in cols.items()},
                        index=pd.bdate_range("2021-01-01", periods=n))


# -- parsing -----------------------------------------------------------------

def test_parse_alpha1():
    expr = parse_alpha("alpha1_t = (C_t - O_t) / O_t + 0.5 * Momentum_3")
    assert expr.name == "alpha1_t"
    assert expr.ast == BinOp(
        "+",
        BinOp("/", BinOp("-", Name("C_t"), Name("O_t")), Name("O_t")),
        BinOp("*", Num(0.5), Name("Momentum_3")),
    )


def test_parse_atom():
    assert parse_alpha("a = C_t").ast == Name("C_t")


def test_parse_error_at_end_of_line():
    line = "a = C_t +"
    with pytest.raises(AlphaSyntaxError) as err:
        parse_alpha(line)
    assert err.value.offset == len(line)


@pytest.mark.parametrize("line, offset", [("a = C_t * * 2", 10), ("a = (C_t", 8), ("a = C_t $ 1", 8)])
def test_parse_error_offsets(line, offset):
    with pytest.raises(AlphaSyntaxError) as err:
        parse_alpha(line)
    assert err.value.offset == offset


def test_parse_rejects_unknown_function_and_empty_rhs():
    with pytest.raises(AlphaSyntaxError, match="unknown function"):
        parse_alpha("a = log(C_t)")
    with pytest.raises(AlphaSyntaxError, match="empty"):
        parse_alpha("a =   ")
    with pytest.raises(AlphaSyntaxError):
        parse_alpha("C_t + 1")


def test_precedence_and_associativity():
    assert parse_expression("a - b - c") == BinOp("-", BinOp("-", Name("a"), Name("b")), Name("c"))
    assert parse_expression("a / b * c") == BinOp("*", BinOp("/", Name("a"), Name("b")), Name("c"))
    assert parse_expression("-a * b") == BinOp("*", Neg(Name("a")), Name("b"))
    assert parse_expression("a - -b") == BinOp("-", Name("a"), Neg(Name("b")))
    assert parse_expression("max(a, abs(b))") == Call("max", (Name("a"), Call("abs", (Name("b"),))))


def test_builtin_corpus_parses_in_order():
    exprs = builtin_corpus()
    assert len(exprs) == 50
    assert [e.name for e in exprs] == [f"alpha{i}_t" for i in range(1, 51)]


def test_corpus_round_trip():
    for e in builtin_corpus():
        assert parse_expression(render(e.ast)) == e.ast


def test_file_comments_and_duplicates():
    assert parse_alpha_file("# only\n\n   # comments\n") == []
    with pytest.raises(AlphaFileError) as err:
        parse_alpha_file("alpha1_t = C_t\n# x\nalpha1_t = O_t\n")
    assert err.value.line == 3
    with pytest.raises(AlphaFileError) as err:
        parse_alpha_file("a = C_t\nb = (\n")
    assert err.value.line == 2


_names = st.sampled_from(["C_t", "O_t", "S_t", "x", "Momentum_3"])
_nums = st.floats(0, 1e6, allow_nan=False, allow_infinity=False).map(Num)
_leaves = st.one_of(_names.map(Name), _nums)
_trees = st.recursive(
    _leaves,
    lambda kids: st.one_of(
        st.builds(Neg, kids),
        st.builds(BinOp, st.sampled_from("+-*/"), kids, kids),
        st.builds(lambda f, a, b: Call(f, (a, b)), st.sampled_from(["min", "max"]), kids, kids),
        st.builds(lambda a: Call("abs", (a,)), kids),
    ),
    max_leaves=12,
)


@settings(max_examples=300, deadline=None)
@given(_trees)
def test_render_parse_fixed_point(tree):
    assert parse_expression(render(tree)) == tree


# -- evaluation --------------------------------------------------------------

def test_evaluate_alpha1():
    frame = frame_of(C_t=[110.0], O_t=[100.0], Momentum_3=[0.2])
    out = evaluate(parse_alpha("alpha1_t = (C_t - O_t) / O_t + 0.5 * Momentum_3"), frame)
    assert out[0] == pytest.approx(0.2, rel=1e-15)


def test_evaluate_mean_reversion_zero():
    frame = frame_of(C_t=[10.0, 12.5], SMA_10=[10.0, 12.5])
    out = evaluate(parse_alpha("a = -(C_t - SMA_10)"), frame)
    assert out.tolist() == [0.0, 0.0]


def test_evaluate_index_product():
    nk, sp, hs = [30000.0, 30100.5, 29950.25], [4000.0, 4010.0, 3999.5], [20000.0, 19990.0, 20010.0]
    frame = frame_of(Close_Nikkei225=nk, Close_SP500=sp, Close_HSI=hs)
    expr = next(e for e in builtin_corpus() if e.name == "alpha19_t")
    expected = [a * b * c for a, b, c in zip(nk, sp, hs)]
    assert evaluate(expr, frame).tolist() == expected


def test_evaluate_missing_and_division_by_zero():
    frame = frame_of(a=[1.0, np.nan, 3.0, 4.0], b=[1.0, 2.0, 0.0, 2.0])
    diag = {}
    out = evaluate(parse_alpha("x = a / b"), frame, diag)
    assert out[0] == 1.0 and math.isnan(out[1]) and math.isnan(out[2]) and out[3] == 2.0
    assert diag["zero_divisions"] == 1
    assert math.isnan(evaluate(parse_alpha("x = min(a, b)"), frame)[1])


def test_evaluate_unresolved_identifier():
    with pytest.raises(UnresolvedIdentifierError, match="Ghost_t"):
        evaluate(parse_alpha("x = C_t + Ghost_t"), frame_of(C_t=[1.0]))


def test_duplicate_corpus_alphas_evaluate_identically(rng):
    frame = frame_of(BB_Upper=rng.normal(10, 1, 30), BB_Lower=rng.normal(5, 1, 30))
    by_name = {e.name: e for e in builtin_corpus()}
    np.testing.assert_array_equal(evaluate(by_name["alpha25_t"], frame), evaluate(by_name["alpha39_t"], frame))


def test_evaluation_is_row_local(rng):
    frame = frame_of(C_t=rng.uniform(90, 110, 20), O_t=rng.uniform(90, 110, 20), Momentum_3=rng.normal(size=20))
    expr = builtin_corpus()[0]
    base = evaluate(expr, frame)
    frame.iloc[11:] *= 3.0
    np.testing.assert_array_equal(evaluate(expr, frame)[:11], base[:11])


# -- matrix ------------------------------------------------------------------

def test_build_matrix_z_score_convention():
    frame = frame_of(x=[1.0, 3.0, 5.0, 7.0, 9.0])
    m = build_matrix([parse_alpha("a = x")], frame, SplitSpec(0.4))
    assert m.train_rows == 2
    assert m.fit_mean[0] == 2.0
    assert m.fit_std[0] == pytest.approx(math.sqrt(2.0), rel=1e-15)
    np.testing.assert_allclose(m.standardized[:2, 0], [-1 / math.sqrt(2), 1 / math.sqrt(2)], rtol=1e-15)
    # test rows reuse training statistics
    assert m.standardized[4, 0] == pytest.approx((9 - 2) / math.sqrt(2), rel=1e-15)


def test_build_matrix_drops_constant_and_keeps_twins(rng):
    frame = frame_of(x=rng.normal(size=50), k=np.full(50, 3.0))
    exprs = parse_alpha_file("a = x\nb = k\nc = x\n")
    m = build_matrix(exprs, frame, SplitSpec(0.8))
    assert m.names == ("a", "c")
    assert m.dropped[0][0] == "b" and "zero variance" in m.dropped[0][1]
    np.testing.assert_array_equal(m.column("a"), m.column("c"))
    with pytest.raises(NoUsableAlphasError):
        build_matrix([exprs[1]], frame, SplitSpec(0.8))


def test_standardized_training_columns_have_zero_mean_unit_std(rng):
    frame = frame_of(x=rng.lognormal(size=300), y=rng.normal(5, 3, 300))
    m = build_matrix(parse_alpha_file("a = x * y\nb = y - x\n"), frame, SplitSpec(0.7))
    train = m.standardized[: m.train_rows]
    assert np.all(np.abs(train.mean(axis=0)) < 1e-9)
    np.testing.assert_allclose(train.std(axis=0, ddof=1), 1.0, rtol=1e-12)


def test_matrix_ignores_test_rows_in_fit(rng):
    x = rng.normal(size=100)
    m1 = build_matrix([parse_alpha("a = x")], frame_of(x=x), SplitSpec(0.8))
    x2 = x.copy()
    x2[80:] = 1e9
    m2 = build_matrix([parse_alpha("a = x")], frame_of(x=x2), SplitSpec(0.8))
    assert m1.fit_mean[0] == m2.fit_mean[0] and m1.fit_std[0] == m2.fit_std[0]
    np.testing.assert_array_equal(m1.standardized[:80], m2.standardized[:80])


# -- prompt ------------------------------------------------------------------

def test_render_prompt():
    text = render_prompt(["C_t", "O_t"])
    assert "Generate 50 alpha formulas" in text
    assert "C_t, O_t" in text
    assert text.startswith("You are a quantitative trader.")
    assert render_prompt(["C_t", "O_t"]) == text
    with pytest.raises(ValueError):
        render_prompt([])


def test_prompt_example_output_is_valid_dsl():
    last = render_prompt(["S_t"]).splitlines()[-1]
    expr = parse_alpha(last.split(":", 1)[1])
    assert expr.name == "alpha_t"


def test_corpus_text_has_group_comments():
    assert builtin_corpus_text().count("#") == 10
