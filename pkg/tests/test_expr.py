import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finslerlab import expr as E


def fd(e, var, bindings, h=1e-5):
    up = dict(bindings)
    dn = dict(bindings)
    up[var] = up[var] + h
    dn[var] = dn[var] - h
    return (E.evaluate(e, up) - E.evaluate(e, dn)) / (2.0 * h)


# ---------------------------------------------------------------------------
# parsing


def test_parse_polynomial():
    e = E.parse_expression("v1^2 + v2^2", 2)
    assert E.evaluate(e, {"v1": 3.0, "v2": 4.0}) == 25.0


def test_parse_product_node():
    e = E.parse_expression("sin(x1)*v2", 2)
    assert e.op == "mul"
    assert e.args[0].op == "call" and e.args[0].payload == "sin"


def test_parse_index_out_of_range():
    with pytest.raises(E.ParseError) as exc:
        E.parse_expression("v3", 2)
    d = exc.value.diagnostic
    assert d.offset == 0 and d.token == "v3"


def test_parse_precedence():
    assert E.const_value(E.parse_expression("1 + 2*3^2", 1)) == 19.0
    assert E.const_value(E.parse_expression("2^3^2", 1)) == 64.0  # left-assoc
    assert E.const_value(E.parse_expression("-2^2", 1)) == -4.0  # ^ binds tighter
    assert E.const_value(E.parse_expression("2 - 3 - 4", 1)) == -5.0
    assert E.const_value(E.parse_expression("2/4/2", 1)) == 0.25
    assert E.const_value(E.parse_expression("2^-2", 1)) == 0.25


@pytest.mark.parametrize(
    "bad",
    ["", "   ", "x1 +* 2", "sin()", "2 + ", "foo(2)", "x1)", "(x1", "x1 @ 2", "sqrt"],
)
def test_parse_diagnostics_offsets(bad):
    with pytest.raises(E.ParseError) as exc:
        E.parse_expression(bad, 2)
    assert 0 <= exc.value.diagnostic.offset <= len(bad)


def test_parse_unknown_identifier():
    with pytest.raises(E.ParseError):
        E.parse_expression("x1 + b", 2)
    e = E.parse_expression("x1 + b", 2, params=["b"])
    assert E.evaluate(e, {"x1": 1.0, "b": 2.5}) == 3.5


def test_parse_rejects_colliding_param_names():
    with pytest.raises(ValueError):
        E.parse_expression("x1", 2, params=["x1"])
    with pytest.raises(ValueError):
        E.parse_expression("x1", 2, params=["sin"])


def test_interning_gives_structural_identity():
    a = E.parse_expression("v1^2 + sin(x1)*v2", 2)
    b = E.parse_expression("v1^2 + sin(x1)*v2", 2)
    assert a is b


# ---------------------------------------------------------------------------
# differentiation


def test_derivative_polynomial():
    e = E.parse_expression("v1^2 + v2^2", 2)
    d = E.differentiate(e, "v1")
    assert d is E.parse_expression("2*v1", 2)


def test_derivative_product():
    e = E.parse_expression("sin(x1)*v2", 2)
    d = E.differentiate(e, "x1")
    assert d is E.parse_expression("cos(x1)*v2", 2)


def test_quartic_hessian_diagonal_entry():
    # oracle: plain-python finite differences of (v1^4+v2^4)^(1/2), no engine
    f = lambda a, b: math.sqrt(a**4 + b**4)
    h = 1e-4
    oracle = (f(1 + h, 0) - 2 * f(1, 0) + f(1 - h, 0)) / h**2
    e = E.parse_expression("(v1^4 + v2^4)^0.5", 2)
    d2 = E.differentiate(E.differentiate(e, "v1"), "v1")
    got = E.evaluate(d2, {"v1": 1.0, "v2": 0.0})
    assert got == pytest.approx(2.0, abs=1e-12)
    assert got == pytest.approx(oracle, abs=1e-6)


def test_derivative_of_constant_is_zero():
    assert E.differentiate(E.parse_expression("3.5", 1), "x1") is E.const(0.0)


def test_sqrt_square_composition_is_smooth_at_zero():
    # (q^0.5)^2 folds back to q, so fiber Hessians of composed norms stay
    # finite where a factor length vanishes
    q = E.parse_expression("v1^4 + v2^4", 2)
    s = E.power(q, E.const(0.5))
    assert E.power(s, E.const(2.0)) is q
    d2 = E.differentiate(E.differentiate(E.power(s, E.const(2.0)), "v1"), "v2")
    E.evaluate(d2, {"v1": 1.0, "v2": 0.0})  # must not raise


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_examples():
    assert E.evaluate(E.parse_expression("v1^2 + v2^2", 2), {"v1": 3, "v2": 4}) == 25.0
    assert E.evaluate(E.parse_expression("sqrt(v1^2)", 1), {"v1": -2.0}) == 2.0


def test_evaluate_domain_errors():
    with pytest.raises(E.DomainError):
        E.evaluate(E.parse_expression("log(x1)", 1), {"x1": 0.0})
    with pytest.raises(E.DomainError):
        E.evaluate(E.parse_expression("1/x1", 1), {"x1": 0.0})
    with pytest.raises(E.DomainError):
        E.evaluate(E.parse_expression("x1^0.5", 1), {"x1": -1.0})
    with pytest.raises(E.UnboundSymbolError):
        E.evaluate(E.parse_expression("x1 + b", 1, params=["b"]), {"x1": 0.0})


def test_domain_error_names_subexpression():
    with pytest.raises(E.DomainError) as exc:
        E.evaluate(E.parse_expression("1 + log(x1 - 2)", 1), {"x1": 1.0})
    assert "log(x1 - 2)" in str(exc.value)


def test_fractional_power_of_zero_is_zero():
    assert E.evaluate(E.parse_expression("x1^1.5", 1), {"x1": 0.0}) == 0.0


# ---------------------------------------------------------------------------
# substitution


def test_substitute_shifts_indices():
    e = E.parse_expression("sin(x1)*v2", 2)
    shifted = E.substitute(e, {"x1": E.sym("x3"), "v2": E.sym("v4")})
    assert shifted is E.parse_expression("sin(x3)*v4", 4)


def test_substitute_expression_body():
    e = E.parse_expression("x1^2", 1)
    s = E.substitute(e, {"x1": E.parse_expression("v1 + v2", 2)})
    assert E.evaluate(s, {"v1": 1.0, "v2": 2.0}) == 9.0


# ---------------------------------------------------------------------------
# property tests


SAFE_SYMS = ("x1", "x2", "v1", "v2")

_small = st.floats(min_value=-1.5, max_value=1.5, allow_nan=False)


def _leaf():
    return st.one_of(_small.map(E.const), st.sampled_from(SAFE_SYMS).map(E.sym))


def _extend(children):
    pairs = st.tuples(children, children)
    return st.one_of(
        pairs.map(lambda ab: E.add(*ab)),
        pairs.map(lambda ab: E.sub(*ab)),
        pairs.map(lambda ab: E.mul(*ab)),
        children.map(E.neg),
        children.map(lambda a: E.call("sin", a)),
        children.map(lambda a: E.call("cos", a)),
        children.map(lambda a: E.call("exp", E.call("sin", a))),
        children.map(lambda a: E.call("log", E.add(E.mul(a, a), E.const(1.5)))),
        st.tuples(children, st.floats(min_value=1.0, max_value=4.0)).map(
            lambda ac: E.div(ac[0], E.const(ac[1]))
        ),
    )


safe_exprs = st.recursive(_leaf(), _extend, max_leaves=6)

bindings_st = st.fixed_dictionaries({name: _small for name in SAFE_SYMS})


@settings(max_examples=150, deadline=None)
@given(e=safe_exprs, b=bindings_st, var=st.sampled_from(SAFE_SYMS))
def test_symbolic_matches_finite_difference(e, b, var):
    d = E.differentiate(e, var)
    sym_val = E.evaluate(d, b)
    fd_val = fd(e, var, b, h=1e-5)
    assert abs(sym_val - fd_val) <= 1e-6 * (1.0 + abs(sym_val))


@settings(max_examples=150, deadline=None)
@given(e=safe_exprs, b=bindings_st)
def test_partials_commute(e, b):
    dxy = E.differentiate(E.differentiate(e, "x1"), "v1")
    dyx = E.differentiate(E.differentiate(e, "v1"), "x1")
    a = E.evaluate(dxy, b)
    c = E.evaluate(dyx, b)
    assert abs(a - c) <= 1e-12 * (1.0 + max(abs(a), abs(c)))


def _extend_printable(children):
    pairs = st.tuples(children, children)
    return st.one_of(
        pairs.map(lambda ab: E.add(*ab)),
        pairs.map(lambda ab: E.sub(*ab)),
        pairs.map(lambda ab: E.mul(*ab)),
        pairs.map(lambda ab: E.div(*ab)),
        pairs.map(lambda ab: E.power(*ab)),
        children.map(E.neg),
        st.tuples(st.sampled_from(["sin", "cos", "tan", "exp", "log", "sqrt"]), children).map(
            lambda fa: E.call(*fa)
        ),
        st.tuples(children, st.sampled_from([-2.0, 0.5, 2.0, 3.0])).map(
            lambda ap: E.power(ap[0], E.const(ap[1]))
        ),
    )


printable_exprs = st.recursive(_leaf(), _extend_printable, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(e=printable_exprs)
def test_print_parse_roundtrip_is_identity(e):
    assert E.parse_expression(E.to_string(e), 2) is e


@settings(max_examples=100, deadline=None)
@given(e=safe_exprs, b=bindings_st)
def test_program_matches_evaluate(e, b):
    ref = E.evaluate(e, b)
    prog = E.ExprProgram([e], 2)
    x = [b["x1"], b["x2"]]
    v = [b["v1"], b["v2"]]
    scalar = prog.run_scalar(x, v)[0]
    batch = prog.run_batch(np.array([x, x]), np.array([v, v]))
    assert scalar == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert batch[0, 0] == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert batch[1, 0] == batch[0, 0]


def test_program_with_parameters():
    e = E.parse_expression("b*x1*v2", 2, params=["b"])
    prog = E.ExprProgram([e], 2, params={"b": 0.1})
    assert prog.run_scalar([2.0, 0.0], [0.0, 3.0])[0] == pytest.approx(0.6)
