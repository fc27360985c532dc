import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierflow import kv
from hierflow.scenario import ScenarioError, build_problem, parse_scenario, serialize
from tests.conftest import SCENARIOS, load_scenario

ALL = sorted(p.name for p in SCENARIOS.glob("*.scn"))


@pytest.mark.parametrize("name", ALL)
def test_canonical_round_trip(name):
    text = (SCENARIOS / name).read_text(encoding="utf-8")
    sc = parse_scenario(text)
    assert serialize(sc) == text
    assert parse_scenario(serialize(sc)) == sc


@pytest.mark.parametrize("name", ALL)
def test_scenarios_build(name):
    prob = build_problem(load_scenario(name))
    assert prob.dim == load_scenario(name).dim


MINIMAL = """\
[problem]
kind = "gradient"
dim = 2

[phi]
type = "quadratic"
rows = 2
Q = [1, 0, 0, 1]

[psi]
type = "sqdist_box"
lo = [0, 0]
hi = [1, 1]

[schedule]
law = "power 1 2"

[run]
h = 0.1
t_end = 1
x0 = [2, 2]
"""


def test_defaults_and_comments():
    sc = parse_scenario("# leading comment\n" + MINIMAL)
    assert sc.parameterization == "beta" and sc.theta == 1.0 and sc.oracle == "none"
    assert sc.csv == "trajectory.csv"
    assert build_problem(sc).phi(np.ones(2)) == pytest.approx(1.0)


def _diag(text):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    return [(d.line, d.message) for d in info.value.diagnostics]


def test_diagnostics_carry_line_numbers():
    bad = MINIMAL.replace("h = 0.1", "h = -0.1").replace('law = "power 1 2"', 'law = "cubic 2"')
    diags = _diag(bad)
    lines = {line for line, _ in diags}
    assert bad.splitlines().index("h = -0.1") + 1 in lines
    assert bad.splitlines().index('law = "cubic 2"') + 1 in lines
    assert len(diags) == 2


@pytest.mark.parametrize("edit,needle", [
    (("dim = 2", "dim = 0"), "dim must be positive"),
    (("x0 = [2, 2]", "x0 = [2]"), "x0"),
    (("t_end = 1", "t_end = 1.05"), "whole number"),
    (('type = "sqdist_box"', 'type = "hexagon"'), "hexagon"),
    (("Q = [1, 0, 0, 1]", "Q = [1, 0, 0]"), "Q"),
    (("Q = [1, 0, 0, 1]", "Q = [-1, 0, 0, 1]"), "semidefinite"),
    (("[run]", "[run]\nbogus = 1"), "bogus"),
    (("[run]", "[extra]\nk = 1\n[run]"), "unknown section"),
    (("h = 0.1", "h = 0.1\nh = 0.2"), "duplicate"),
    (("h = 0.1", "h = 0.1 0.2"), "number"),
    (("[run]", "[run]\ntheta = 0.5"), "theta"),
])
def test_rejections(edit, needle):
    msgs = " | ".join(m for _, m in _diag(MINIMAL.replace(*edit)))
    assert needle in msgs


def test_missing_dim_is_fatal():
    assert "'dim'" in _diag("[problem]\nkind = \"gradient\"\n")[0][1]


def test_kv_values():
    doc = kv.loads('a = 1\nb = -2.5e-3\n[s]\nc = "x \\"q\\" \\\\"\nd = [1, nan, -inf]\ne = []\n')
    assert doc[""]["a"] == (1, 1)
    assert doc[""]["b"][0] == -2.5e-3
    assert doc["s"]["c"][0] == 'x "q" \\'
    d = doc["s"]["d"][0]
    assert d[0] == 1 and math.isnan(d[1]) and d[2] == -math.inf
    assert doc["s"]["e"][0] == []


@pytest.mark.parametrize("text", ['a = "open', "a = [1, 2", "a = 1 2", "= 3", "[bad section", 'a = "x" y',
                                  'a = "\\n"'])
def test_kv_errors(text):
    with pytest.raises(kv.KVError) as info:
        kv.loads(text)
    assert info.value.diagnostics[0].line == 1


finite = st.floats(allow_nan=False, allow_infinity=True)


@settings(max_examples=300, deadline=None)
@given(st.dictionaries(st.from_regex(r"[a-z_][a-z0-9_]{0,6}", fullmatch=True),
                       st.one_of(finite, st.integers(-10 ** 12, 10 ** 12),
                                 st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=12),
                                 st.lists(finite, max_size=4)),
                       max_size=6))
def test_kv_dump_load_round_trip(body):
    text = kv.dumps({"": {}, "sec": body})
    back = {k: v for k, (v, _) in kv.loads(text).get("sec", {}).items()}
    assert back == body
    assert kv.dumps({"": {}, "sec": back}) == text
