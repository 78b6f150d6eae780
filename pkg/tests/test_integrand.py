import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aquasi.errors import InputError, ParseError
from aquasi.integrand import (
    PRESETS,
    coercivity_probe,
    eval as eval_at,
    grad,
    parse_integrand,
    pretty,
    resolve_integrand,
)


def test_branch_value():
    assert eval_at(parse_integrand("sq(v1-1)+sq(v2)", 2), [1, 0]) == 0.0


def test_remark_min_at_origin():
    assert eval_at(parse_integrand("min(sq(v1-1)+sq(v2), sq(v1+1)+sq(v2))", 2), [0, 0]) == 1.0


def test_double_well_vanishes_on_circle():
    g = parse_integrand("sq(sq(v1)+sq(v2)-1)", 2)
    t = np.linspace(0, 2 * np.pi, 17)
    np.testing.assert_allclose(g.value(np.stack([np.cos(t), np.sin(t)])), 0.0, atol=1e-15)


def test_scalar_examples():
    g = parse_integrand("sq(v1)", 1)
    assert eval_at(g, [3]) == 9.0 and grad(g, [3])[0] == 6.0
    dw = resolve_integrand("doublewell2", 2)
    assert eval_at(dw, [0, 0]) == 1.0
    np.testing.assert_array_equal(grad(dw, [0, 0]), [0.0, 0.0])


def test_presets_resolve():
    for name, (_, n) in PRESETS.items():
        assert resolve_integrand(name, n).n == n
    with pytest.raises(InputError):
        resolve_integrand("doublewell2", 3)


EXPRESSIONS = [
    "sq(sq(v1)+sq(v2)-1)",
    "min(sq(v1-1)+sq(v2), sq(v1+1)+sq(v2))",
    "v1^3 - 2*v1*v2 + abs(v2)",
    "1/max(sq(v1), 0.5) + v2/(1+sq(v2))",
    "max(v1, v2, 0.3*v1*v2) + (v1-v2)^4",
    "(1 + sq(v1))^-1",
]


@pytest.mark.parametrize("src", EXPRESSIONS)
def test_gradient_matches_central_differences(src):
    g = parse_integrand(src, 2)
    rng = np.random.default_rng(0x5EED)
    x = rng.uniform(-2, 2, size=(2, 1000))
    h = 1e-6
    _, gr = g.value_and_grad(x)
    fd = np.stack([(g.value(x + h * e[:, None]) - g.value(x - h * e[:, None])) / (2 * h) for e in np.eye(2)])
    err = np.abs(fd - gr)
    tol = np.maximum(1e-6, 1e-6 * np.abs(gr))
    # skip the measure-zero neighbourhoods of min/max/abs switch sets
    near_kink = np.zeros(1000, dtype=bool)
    if "min" in src or "max" in src or "abs" in src:
        for e in np.eye(2):
            _, g1 = g.value_and_grad(x + 1e-4 * e[:, None])
            _, g2 = g.value_and_grad(x - 1e-4 * e[:, None])
            near_kink |= np.any(np.abs(g1 - g2) > 0.5, axis=0)
    assert np.all((err <= 10 * tol)[:, ~near_kink]), err[:, ~near_kink].max()
    assert (~near_kink).sum() > 900


def test_min_max_left_branch_at_ties():
    g = parse_integrand("min(v1, v2)", 2)
    np.testing.assert_array_equal(grad(g, [1.0, 1.0]), [1.0, 0.0])
    g = parse_integrand("max(v2, v1)", 2)
    np.testing.assert_array_equal(grad(g, [1.0, 1.0]), [0.0, 1.0])


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_min_gradient_convention(a, b):
    g = parse_integrand("min(sq(v1), v2)", 2)
    left = parse_integrand("sq(v1)", 2)
    right = parse_integrand("v2", 2)
    v = [a, b]
    chosen = left if eval_at(left, v) <= eval_at(right, v) else right
    np.testing.assert_array_equal(grad(g, v), grad(chosen, v))


@pytest.mark.parametrize(
    "src,line,col",
    [("v1 +", 1, 5), ("sq(v1", 1, 6), ("v1 $ v2", 1, 4), ("v1 +\n  * v2", 2, 3)],
)
def test_syntax_errors_report_position(src, line, col):
    with pytest.raises(ParseError) as info:
        parse_integrand(src, 2)
    assert (info.value.line, info.value.column) == (line, col)


@pytest.mark.parametrize(
    "src",
    ["v3", "foo(v1)", "sq(v1, v2)", "min(v1)", "cap(v1, v2)", "1/v1", "v1^-1", "1/(v1-v1)", "v1^2.5", ""],
)
def test_rejected_sources(src):
    with pytest.raises(InputError):
        parse_integrand(src, 2)


def test_guarded_division_is_accepted():
    g = parse_integrand("1/max(v1, 0.5)", 1)
    assert eval_at(g, [-3]) == 2.0


def test_unsigned_denominator_rejected():
    # a product with free sign has no provable positive lower bound
    with pytest.raises(InputError):
        parse_integrand("1/(v1*v2)", 2)
    assert eval_at(parse_integrand("1/(sq(v1) + 1)", 1), [1]) == 0.5


def test_cap_truncates():
    g = parse_integrand("cap(sq(v1), 4)", 1)
    assert g.cap == 4.0
    assert eval_at(g, [3]) == 4.0 and eval_at(g, [1]) == 1.0


# -------------------------------------------------------------- round trips

LEAF = st.one_of(
    st.sampled_from(["v1", "v2", "v3"]),
    st.integers(0, 20).map(str),
    st.sampled_from(["0.5", "2.25", "1e-3"]),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]}) {t[1]} ({t[2]})"),
        children.map(lambda c: f"-({c})"),
        st.tuples(children, st.integers(0, 4)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(st.sampled_from(["sq", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        st.tuples(st.sampled_from(["min", "max"]), children, children).map(lambda t: f"{t[0]}({t[1]}, {t[2]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]}) / (1 + sq({t[1]}))"),
    )


EXPR = st.recursive(LEAF, _combine, max_leaves=12)


@given(EXPR)
def test_pretty_print_round_trip(src):
    g = parse_integrand(src, 3)
    once = pretty(g.ast)
    again = parse_integrand(once, 3)
    assert pretty(again.ast) == once
    x = np.random.default_rng(1).uniform(-1.5, 1.5, size=(3, 16))
    with np.errstate(all="ignore"):
        np.testing.assert_allclose(again.value(x), g.value(x), rtol=1e-12, atol=1e-12, equal_nan=True)


# -------------------------------------------------------------- coercivity


def test_coercivity_double_well():
    assert coercivity_probe(resolve_integrand("doublewell2", 2), C=0.1, p=2, R=10).ok


def test_coercivity_linear_fails_on_negative_axis():
    res = coercivity_probe(parse_integrand("v1", 2), C=0.1, p=2, R=10)
    assert not res.ok
    assert res.witness[0] < 0 and res.witness[1] == 0


def test_coercivity_quadratic_margin():
    res = coercivity_probe(parse_integrand("sq(v1)+sq(v2)", 2), C=1, p=2, R=3)
    assert res.ok and res.margin == pytest.approx(1.0)
