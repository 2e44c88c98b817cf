import csv
import io
import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from inceptionnext.complexity import (
    KINDS,
    analytic_conv_cost,
    count_layer,
    count_mixer,
    count_model,
    curve_to_csv,
    flops_curve,
)
from inceptionnext.errors import ShapeError
from inceptionnext.mixer import BranchConfig
from inceptionnext.model import DepthwiseMixerConfig, build_model


def test_analytic_examples():
    assert analytic_conv_cost("conventional", 3, 32, 8, 8) == (9 * 32 * 32, 2 * 9 * 32 * 32 * 64)
    assert analytic_conv_cost("depthwise", 7, 96, 56, 56) == (4704, 2 * 4704 * 56 * 56)
    params, flops = analytic_conv_cost("inception", 11, 96, 56, 56)
    assert params == 31 * 96 // 8 == 372
    assert flops == 31 * 96 * 56 * 56 // 4


def test_analytic_fraction_when_inexact():
    params, _ = analytic_conv_cost("inception", 3, 7, 1, 1)
    assert params == Fraction(15 * 7, 8)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("k", [3, 5, 7, 11])
@pytest.mark.parametrize("c", [32, 96])
def test_walker_matches_formula(kind, k, c):
    entry = count_layer(kind, k, c, 14, 14).entries[0]
    params, flops = analytic_conv_cost(kind, k, c, 14, 14)
    assert entry.params_no_bias == params
    assert entry.flops == flops


def test_flops_ratio_at_k11():
    _, dw = analytic_conv_cost("depthwise", 11, 96, 56, 56)
    _, inc = analytic_conv_cost("inception", 11, 96, 56, 56)
    assert Fraction(inc, dw) == Fraction(31, 968)


def test_curve_rows_and_csv():
    rows = flops_curve(["depthwise", "inception"], range(3, 33, 2), 96, 56, 56)
    assert len(rows) == 30
    text = curve_to_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert list(parsed[0]) == ["k", "kind", "flops"]
    for r in parsed:
        k, hw = int(r["k"]), 96 * 56 * 56
        expected = 2 * k * k * hw if r["kind"] == "depthwise" else (2 * k + 9) * hw // 4
        assert int(r["flops"]) == expected


def test_curve_rejects_even():
    with pytest.raises(ValueError):
        flops_curve(["depthwise"], [3, 4], 8, 4, 4)


@given(k=st.integers(1, 40).map(lambda v: 2 * v + 1), c=st.integers(1, 64).map(lambda v: 8 * v))
def test_monotone_and_ordered(k, c):
    for kind in KINDS:
        assert analytic_conv_cost(kind, k + 2, c, 7, 7)[1] > analytic_conv_cost(kind, k, c, 7, 7)[1]
    conv, dw, inc = (analytic_conv_cost(kind, k, c, 7, 7)[1] for kind in KINDS)
    assert conv >= dw
    if k >= 3:
        assert dw > inc


def test_mixer_count_matches_formula_plus_bias():
    cost = count_mixer(BranchConfig(), 96, 56, 56)
    assert cost.params_no_bias == (2 * 11 + 9) * 96 // 8
    assert cost.params_with_bias == cost.params_no_bias + 36
    assert cost.macs == cost.params_no_bias * 56 * 56
    dw = count_mixer(DepthwiseMixerConfig(3, 0.25), 64, 8, 8)
    assert dw.params_no_bias == 16 * 9


def test_order_invariance_of_totals():
    report = count_model(build_model("convnext_t_k3"), (1, 3, 224, 224))
    total = report.total_params
    assert sum(e.params_with_bias for e in reversed(report.entries)) == total
    assert report.total_flops == 2 * report.total_macs


def test_batch_scales_macs_not_params():
    one = count_model("inceptionnext_s_iso", (1, 3, 224, 224))
    four = count_model("inceptionnext_s_iso", (4, 3, 224, 224))
    assert four.total_params == one.total_params
    assert four.total_macs == 4 * one.total_macs


def test_json_schema():
    report = count_model("inceptionnext_t")
    d = json.loads(report.to_json())
    assert set(d["totals"]) == {"params", "params_no_bias", "macs", "flops"}
    assert d["input_shape"] == [1, 3, 224, 224]
    assert d["layers"][0]["name"] == "stem.conv"
    assert "layers" not in report.to_dict(per_layer=False)


def test_input_shape_errors():
    with pytest.raises(ShapeError):
        count_model("inceptionnext_t", (1, 3, 100, 100))
    with pytest.raises(ShapeError):
        count_model("inceptionnext_t", (1, 1, 224, 224))
