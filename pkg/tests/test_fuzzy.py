import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from fdd.fuzzy import (
    FuzzySystem,
    InconclusiveError,
    LinguisticVariable,
    MembershipFunction,
    RuleMatrix,
    Verdict,
    default_system,
    defuzzify_centroid,
    dump_config,
    evaluate_mf,
    fuzzify,
    gaussian_system,
    infer,
    load_config,
    spline_system,
)


def test_gaussian_peak_and_shoulder():
    mf = MembershipFunction("gaussian", (50, 10))
    assert evaluate_mf(mf, 50) == 1.0
    assert evaluate_mf(mf, 60) == pytest.approx(oracles.gaussian_mf(60, 50, 10), abs=1e-15)
    assert evaluate_mf(mf, 60) == pytest.approx(0.6065306597, abs=1e-9)


def test_triangle_midpoint_of_rising_edge():
    assert evaluate_mf(MembershipFunction("triangular", (0, 25, 50)), 12.5) == 0.5


def test_trapezoid_plateau_and_shoulders():
    mf = MembershipFunction("trapezoidal", (0, 0, 15, 30))
    assert evaluate_mf(mf, 0) == 1.0
    assert evaluate_mf(mf, 15) == 1.0
    assert evaluate_mf(mf, 22.5) == 0.5
    assert evaluate_mf(mf, 30) == 0.0
    right = MembershipFunction("trapezoidal", (45, 60, 100, 100))
    assert evaluate_mf(right, 100) == 1.0
    assert evaluate_mf(right, 101) == 0.0


@pytest.mark.parametrize(
    "kind, params",
    [
        ("gaussian", (50, 0)),
        ("gaussian", (50, -1)),
        ("triangular", (10, 5, 20)),
        ("triangular", (5, 5, 5)),
        ("trapezoidal", (0, 20, 10, 30)),
        ("spline", (3, 2, 1, 0, 4)),
        ("spline", (1, 1, 1, 1, 2)),
        ("sigmoid", (1, 2)),
    ],
)
def test_invalid_params_rejected_at_construction(kind, params):
    with pytest.raises(ValueError):
        MembershipFunction(kind, params)


def test_spline_is_normalised_cubic():
    mf = MembershipFunction("spline", (0, 10, 20, 30, 40))
    assert mf.order == 4
    xs = np.linspace(-5, 45, 5001)
    ys = mf(xs)
    assert ys.max() == pytest.approx(1.0, abs=1e-9)
    assert xs[np.argmax(ys)] == pytest.approx(20, abs=0.02)
    assert ys[xs <= 0].max() == 0.0 and ys[xs >= 40].max() == 0.0
    # uniform cubic B-spline: B(k2 +- h) = 1/6 relative to the 2/3 peak
    assert evaluate_mf(mf, 10) == pytest.approx((1 / 6) / (2 / 3), abs=1e-12)


def test_spline_with_repeated_knots_still_peaks_at_one():
    mf = MembershipFunction("spline", (0, 0, 10, 25, 30))
    xs = np.linspace(0, 30, 20001)
    assert mf(xs).max() == pytest.approx(1.0, abs=1e-6)


_mf_strategy = st.one_of(
    st.tuples(st.floats(-50, 150), st.floats(0, 60), st.floats(0, 60)).map(
        lambda t: MembershipFunction("triangular", (t[0], t[0] + t[1], t[0] + t[1] + t[2] + 1e-3))),
    st.tuples(st.floats(-50, 150), st.floats(0, 40), st.floats(0, 40), st.floats(0, 40)).map(
        lambda t: MembershipFunction(
            "trapezoidal", (t[0], t[0] + t[1], t[0] + t[1] + t[2], t[0] + t[1] + t[2] + t[3] + 1e-3))),
    st.tuples(st.floats(-50, 150), st.floats(0.01, 80)).map(lambda t: MembershipFunction("gaussian", t)),
    st.lists(st.floats(0.5, 30), min_size=4, max_size=4).map(
        lambda steps: MembershipFunction("spline", tuple(np.cumsum([0.0] + steps)))),
)


@settings(max_examples=200, deadline=None)
@given(_mf_strategy)
def test_degree_always_in_unit_interval(mf):
    xs = np.random.default_rng(0).uniform(-200, 300, 10_000)
    ys = mf(xs)
    assert np.all(ys >= 0.0) and np.all(ys <= 1.0)


def test_fuzzify_vital_above_half_past_fifty(system):
    degrees, clamped = fuzzify(system.error, 55)
    assert degrees["vital"] > 0.5
    assert not clamped


def test_fuzzify_left_edge_favours_leftmost_term(system):
    degrees, _ = fuzzify(system.error, 0)
    assert degrees["trivial"] == max(degrees.values())


def test_fuzzify_matches_independent_per_term_evaluation(system):
    degrees, _ = fuzzify(system.error, 30)
    for label, fn in oracles.ERROR_TERMS.items():
        assert degrees[label] == pytest.approx(fn([30.0])[0], abs=1e-15)
    assert degrees == {"trivial": 0.0, "fair": pytest.approx(10 / 17.5), "vital": 0.0}


def test_fuzzify_clamps_out_of_range(system):
    degrees, clamped = fuzzify(system.error, 140)
    assert clamped
    assert degrees == fuzzify(system.error, 100)[0]
    assert fuzzify(system.weight, -3)[1]


def test_variable_rejects_gaps_and_duplicate_labels():
    a = MembershipFunction("triangular", (0, 10, 20), "a")
    b = MembershipFunction("triangular", (40, 60, 100), "b")
    with pytest.raises(ValueError, match="uncovered"):
        LinguisticVariable("X", (0, 100), (a, b))
    with pytest.raises(ValueError, match="unique"):
        LinguisticVariable("X", (0, 20), (a, MembershipFunction("trapezoidal", (0, 0, 20, 20), "a")))


def test_declared_matrix_cells(system):
    expected = {k: Verdict[v] for k, v in oracles.MATRIX.items()}
    assert {(e, w): v for e, w, v in system.matrix.rules()} == expected


def test_matrix_rejects_non_monotone_or_benign_violation():
    terms = ("t", "f", "v"), ("m", "a", "M")
    N, W, Y = Verdict.NO, Verdict.WARNING, Verdict.YES
    with pytest.raises(ValueError, match="monotone"):
        RuleMatrix(*terms, ((N, W, Y), (N, N, Y), (W, Y, Y)))
    with pytest.raises(ValueError, match="NO"):
        RuleMatrix(*terms, ((W, W, Y), (W, W, Y), (Y, Y, Y)))
    with pytest.raises(ValueError, match="every"):
        RuleMatrix(*terms, ((N, W, Y), (N, W, Y)))


def test_benign_and_extreme_corners(system):
    assert system.infer(0, 0).verdict is Verdict.NO
    out = system.infer(100, 100)
    assert out.verdict is Verdict.YES
    # only the (vital, major) rule fires: centroid of trapezoid (60, 80, 100, 100)
    assert out.severity == pytest.approx(100 - 140 / 9, abs=1e-12)


def test_firing_strength_is_min_of_antecedents(system):
    out = system.infer(25, 40)
    e, _ = fuzzify(system.error, 25)
    w, _ = fuzzify(system.weight, 40)
    for (et, wt), s in out.firing_strengths.items():
        assert s == min(e[et], w[wt])


@pytest.mark.parametrize("e, w", [(30, 30), (42, 18), (50, 50), (27.3, 61.9), (12, 48)])
def test_mid_range_severity_matches_grid_oracle(system, e, w):
    assert system.infer(e, w).severity == pytest.approx(oracles.mamdani_severity(e, w), rel=1e-6)


def test_verdict_is_region_containing_centroid(system):
    for e, w in [(30, 30), (100, 0), (50, 50), (10, 90)]:
        out = system.infer(e, w)
        degs = {v: float(system.output_term(v)([out.severity])[0]) for v in Verdict}
        best = max(degs.values())
        assert out.verdict == max(v for v in Verdict if degs[v] == best)


def test_region_ties_break_toward_more_severe(system):
    # NO and WARNING cross at 35, WARNING and YES at 65
    assert system.classify(35.0) is Verdict.WARNING
    assert system.classify(65.0) is Verdict.YES
    assert system.classify(34.999) is Verdict.NO


def test_infer_function_form(system):
    vars_ = [system.error, system.weight, system.detection]
    assert infer(system.matrix, 55, 60, vars_).verdict is Verdict.YES
    with pytest.raises(ValueError, match="missing"):
        infer(system.matrix, 1, 1, vars_[:2])


def test_empty_levels_give_massless_curve(system):
    xs, mu = system.aggregate({v: 0.0 for v in Verdict})
    with pytest.raises(InconclusiveError):
        defuzzify_centroid(xs, mu)


def test_inconclusive_output_shape(monkeypatch):
    system = default_system()
    import fdd.fuzzy as fz

    monkeypatch.setattr(fz, "fuzzify", lambda var, x: ({t: 0.0 for t in var.labels}, False))
    out = system.infer(10, 10)
    assert out.inconclusive and out.verdict is Verdict.NO and out.severity == 0.0


def test_centroid_examples():
    xs = np.linspace(0, 100, 1001)
    assert defuzzify_centroid(xs, oracles.triangle_mf(xs, 30, 50, 70)) == pytest.approx(50.0, abs=1e-12)
    assert defuzzify_centroid(xs, np.ones_like(xs)) == pytest.approx(50.0, abs=1e-12)
    two = np.maximum(oracles.triangle_mf(xs, 10, 20, 30), oracles.triangle_mf(xs, 70, 80, 90))
    fine = np.linspace(0, 100, 100_001)
    oracle = oracles.grid_centroid(
        fine, np.maximum(oracles.triangle_mf(fine, 10, 20, 30), oracles.triangle_mf(fine, 70, 80, 90)))
    assert oracle == pytest.approx(50.0, abs=1e-9)
    assert defuzzify_centroid(xs, two) == pytest.approx(oracle, abs=1e-9)
    with pytest.raises(InconclusiveError):
        defuzzify_centroid(xs, np.zeros_like(xs))


def test_centroid_exact_on_nonuniform_piecewise_linear():
    xs = np.array([0.0, 3.0, 10.0, 11.0, 40.0])
    mu = np.array([0.0, 1.0, 0.2, 0.7, 0.0])
    fine = np.linspace(0, 40, 400_001)
    oracle = oracles.grid_centroid(fine, np.interp(fine, xs, mu))
    assert defuzzify_centroid(xs, mu) == pytest.approx(oracle, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.05, 1.0))
def test_scaling_variant_centroid_invariant_under_common_scale(e, w, factor):
    # product (scaling) implication only; min-clipping is not scale invariant
    system = default_system().with_implication("product")
    out = system.infer(e, w)
    levels = {v: 0.0 for v in Verdict}
    for (et, wt), s in out.firing_strengths.items():
        v = system.matrix.cell(et, wt)
        levels[v] = max(levels[v], s)
    xs, mu = system.aggregate({v: s * factor for v, s in levels.items()})
    assert defuzzify_centroid(xs, mu) == pytest.approx(out.severity, rel=1e-9)


def test_verdict_monotone_over_grid(system):
    grid = np.array([[system.infer(e, w).verdict for w in range(0, 101, 5)] for e in range(0, 101, 5)])
    assert np.all(np.diff(grid, axis=0) >= 0)
    assert np.all(np.diff(grid, axis=1) >= 0)


def test_spline_swap_keeps_confident_verdicts():
    g, s = gaussian_system(), spline_system()
    for v in (g.error, g.weight, g.detection):
        w = {"Error": s.error, "Weight": s.weight, "Detection": s.detection}[v.name]
        for a, b in zip(v.terms, w.terms):
            assert a.peak_location == pytest.approx(b.peak_location, abs=0.05)
    checked = changed = 0
    for e in range(0, 101, 4):
        for w in range(0, 101, 4):
            a, b = g.infer(e, w), s.infer(e, w)
            changed += not math.isclose(a.severity, b.severity)
            if a.winning_strength > 0.8:
                checked += 1
                assert a.verdict == b.verdict, (e, w)
    assert checked > 50 and changed > 0


def test_config_roundtrip_and_override(tmp_path, system):
    text = dump_config(system)
    again = load_config(text)
    assert again == system
    path = tmp_path / "fuzzy.cfg"
    path.write_text(
        "[variable:Error]\nrange = 0, 100\n"
        "trivial = gaussian 0 12\nfair = gaussian 37.5 10\nvital = gaussian 100 20\n"
        "[rules]\ntrivial.major = NO\n"
    )
    custom = load_config(path)
    assert custom.error.term("fair").kind == "gaussian"
    assert custom.matrix.cell("trivial", "major") is Verdict.NO
    assert custom.matrix.cell("vital", "major") is Verdict.YES
    assert custom.weight == system.weight


@pytest.mark.parametrize(
    "text, match",
    [
        ("[variable:Speed]\nslow = triangular 0 1 2\n", "unknown linguistic"),
        ("[rules]\ntrivial.huge = YES\n", "unknown terms"),
        ("[rules]\nvital.major = NO\n", "monotone"),
        ("[variable:Error]\ntrivial = triangular 0 x 2\n", "non-numeric"),
        ("[other]\na = 1\n", "unknown config section"),
        ("[fuzzy]\nimplicaton = product\n", "unknown key"),
    ],
)
def test_bad_config_rejected(text, match):
    with pytest.raises(ValueError, match=match):
        load_config(text)
