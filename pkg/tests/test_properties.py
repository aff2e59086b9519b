"""Randomized structural properties (hypothesis, >= 500 examples each)."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spimon.coverage import CheckId, coverage_ratio, run_coverage_checks
from spimon.lifecycle import (
    AnalysisCompleted,
    AnalysisStarted,
    analysis_deadline,
    overdue_analyses,
    replay,
)
from spimon.model import (
    Comparator,
    Level,
    SpiDefinition,
    SpiKind,
    leg_of,
    level_compare,
    parse_safety_case,
    serialize_safety_case,
)
from spimon.spi_eval import MetricSample, SpiViolation, derive_violations, flag_claims
from spimon.units import HOUR

from generators import random_log, tree_document
from oracles import proper_goal_ancestors

PROPERTY = settings(max_examples=500)


@st.composite
def cases(draw, max_nodes=50, max_spis=12):
    n = draw(st.integers(1, max_nodes))
    parents = [draw(st.integers(0, i - 1)) for i in range(1, n)]
    strategies = draw(st.sets(st.integers(1, max(1, n - 1)), max_size=n // 4))
    spis = draw(st.lists(
        st.tuples(st.integers(0, n - 1), st.sampled_from(["leading", "lagging"]),
                  st.sampled_from(["at_least", "at_most"])),
        max_size=max_spis))
    item_level = draw(st.sets(st.integers(0, n - 1), max_size=3)) | {0}
    return parse_safety_case(tree_document(parents, strategies, spis, item_level))


def _higher(case, a, b):
    return level_compare(case, a, b) is Level.A_HIGHER


@PROPERTY
@given(cases(), st.data())
def test_level_compare_is_a_strict_partial_order(case, data):
    ids = list(case.node_ids)
    a, b, c = (data.draw(st.sampled_from(ids)) for _ in range(3))
    assert level_compare(case, a, a) is Level.EQUAL
    assert not _higher(case, a, a)
    if _higher(case, a, b):
        assert not _higher(case, b, a)
        assert level_compare(case, b, a) is Level.B_HIGHER
    if _higher(case, a, b) and _higher(case, b, c):
        assert _higher(case, a, c)
    mirror = {Level.A_HIGHER: Level.B_HIGHER, Level.B_HIGHER: Level.A_HIGHER,
              Level.EQUAL: Level.EQUAL, Level.INCOMPARABLE: Level.INCOMPARABLE}
    assert level_compare(case, b, a) is mirror[level_compare(case, a, b)]


@PROPERTY
@given(cases())
def test_top_goal_dominates_and_legs_are_unique(case):
    top = case.top_goal.id
    legs = case.legs
    for g in case.goal_ids:
        if g == top:
            continue
        assert level_compare(case, top, g) is Level.A_HIGHER
        owners = [c for c in legs
                  if level_compare(case, c, g) in (Level.A_HIGHER, Level.EQUAL)]
        assert owners == [leg_of(case, g)]


@PROPERTY
@given(cases())
def test_serialize_round_trip(case):
    doc = serialize_safety_case(case)
    assert serialize_safety_case(parse_safety_case(doc)) == doc


def _c1_to_c3(findings):
    c123 = {CheckId.C1_LAGGING_ITEM_LEVEL, CheckId.C2_LEADING_PREDICTIVE, CheckId.C3_LEG_RATIO}
    return {(f.check_id, f.subject) for f in findings if f.check_id in c123}


@PROPERTY
@given(cases(), st.data(), st.sampled_from(list(SpiKind)), st.floats(0.0, 1.0))
def test_coverage_monotone_under_spi_addition(case, data, kind, ratio):
    goal = data.draw(st.sampled_from(list(case.goal_ids)))
    spi = SpiDefinition("NEW", "m_new", Comparator.AT_MOST, 1.0, "count", kind, goal, "ci/new")
    bigger = case.with_spi(spi)
    for leg in case.legs:
        assert coverage_ratio(bigger, leg) >= coverage_ratio(case, leg)
    before = _c1_to_c3(run_coverage_checks(case, ratio))
    after = _c1_to_c3(run_coverage_checks(bigger, ratio))
    assert after <= before


@PROPERTY
@given(cases(max_nodes=30), st.integers(0, 2**32))
def test_risk_score_conservation(case, seed):
    log = random_log(case, random.Random(seed), max_events=120)
    state = replay(case, log)
    violation_claim = {}
    analysis_claim = {}
    expected = {}
    for e in log:
        p = e.payload
        if isinstance(p, SpiViolation):
            violation_claim[p.violation_id] = case.spi_index[p.spi_id].claim_id
        elif isinstance(p, AnalysisStarted):
            analysis_claim[p.analysis_id] = violation_claim[p.violation_id]
        elif isinstance(p, AnalysisCompleted):
            claim = analysis_claim[p.analysis_id]
            expected[claim] = expected.get(claim, 0.0) + p.risk_delta
    for claim in set(state.risk_score) | set(expected):
        assert state.risk_score.get(claim, 0.0) == expected.get(claim, 0.0)


@PROPERTY
@given(cases(max_nodes=20), st.integers(0, 2**32), st.integers(0, 40 * 24), st.integers(1, 240))
def test_overdue_monotone_in_now(case, seed, now_h, step_h):
    log = random_log(case, random.Random(seed), max_events=60)
    state = replay(case, log)
    early = set(overdue_analyses(state, now_h * HOUR, 48 * HOUR, 1.0))
    late = set(overdue_analyses(state, (now_h + step_h) * HOUR, 48 * HOUR, 1.0))
    assert early <= late


@PROPERTY
@given(st.floats(1.0, 1e9), st.floats(1e-3, 1e6), st.floats(1e-3, 1e6), st.floats(0.0, 1e7))
def test_analysis_deadline_inverse_proportional(base, exposure, ref, minimum):
    d1 = analysis_deadline(base, exposure, ref, minimum)
    d2 = analysis_deadline(base, 2 * exposure, ref, minimum)
    assert d1 >= minimum and d2 >= minimum
    assert d2 <= d1
    raw = base * ref / exposure
    if raw / 2 > minimum:
        assert d2 == pytest.approx(d1 / 2, rel=1e-12)
    else:
        assert d2 == minimum or d2 == pytest.approx(raw / 2, rel=1e-12)


samples_st = st.lists(
    st.tuples(st.integers(0, 500), st.sampled_from(["v1", "v2", "v3"]),
              st.floats(-5, 5, allow_nan=False)),
    max_size=60,
)


@PROPERTY
@given(samples_st, st.sampled_from(list(Comparator)))
def test_debounce_k1_is_one_to_one(raw, comparator):
    spi = SpiDefinition("S", "m", comparator, 1.0, "u", SpiKind.LEADING, "G", "ci")
    samples = sorted((MetricSample("m", v, t * 1000, x) for t, v, x in raw),
                     key=lambda s: (s.timestamp, s.vehicle_id))
    got = derive_violations(spi, samples)
    breaching = [s for s in samples if spi.breached_by(s.value)]
    assert [(v.timestamp, v.vehicle_id, v.observed_value) for v in got] == \
        [(s.timestamp, s.vehicle_id, s.value) for s in breaching]


@PROPERTY
@given(samples_st, st.integers(1, 4), st.integers(1, 100))
def test_debounced_violations_are_genuine(raw, k, window_s):
    spi = SpiDefinition("S", "m", Comparator.AT_MOST, 1.0, "u", SpiKind.LEADING, "G", "ci")
    samples = sorted((MetricSample("m", v, t * 1000, x) for t, v, x in raw),
                     key=lambda s: (s.timestamp, s.vehicle_id))
    got = derive_violations(spi, samples, k, window_s * 1000)
    assert len(got) <= sum(spi.breached_by(s.value) for s in samples)
    assert all(spi.breached_by(v.observed_value) for v in got)
    assert len({v.violation_id for v in got}) == len(got)


@PROPERTY
@given(cases(max_nodes=25), st.data())
def test_flag_claims_matches_brute_force_and_is_monotone(case, data):
    spis = sorted(case.spi_index)
    if not spis:
        assert flag_claims(case, []).to_dict() == {"violated_by_spi": {}, "at_risk": []}
        return
    tripped = data.draw(st.lists(st.sampled_from(spis), max_size=8))
    vs = [SpiViolation(f"x{i}", s, i, "v", 0.0) for i, s in enumerate(tripped)]
    flags = flag_claims(case, vs)
    violated = {case.spi_index[s].claim_id for s in tripped}
    at_risk = set().union(*(proper_goal_ancestors(case, c) for c in violated)) - violated
    assert set(flags.violated) == violated
    assert flags.at_risk == at_risk
    extra = data.draw(st.sampled_from(spis))
    more = flag_claims(case, [*vs, SpiViolation("y", extra, 99, "v", 0.0)])
    assert set(flags.violated) <= set(more.violated)
    assert set(flags.violated) | flags.at_risk <= set(more.violated) | more.at_risk
