# tests/test_profiler.py
import pytest

from layers.attention import AttentionSpec
from models import ModelConfig, build_model, tiny_config
from profiler import (
    CONVENTION,
    ProfileReport,
    REFERENCE_METRICS,
    count_flops,
    count_params,
    diff_reports,
    load_profile_json,
    profile_graph,
    table2_row,
)

ARCHS = ["resnet18", "mobilenetv2"]
KINDS = ["none", "se", "eca", "lca"]

_cache = {}


def report(arch, attn):
    if (arch, attn) not in _cache:
        _cache[arch, attn] = profile_graph(build_model(ModelConfig(arch, attn)))
    return _cache[arch, attn]


def test_resnet18_baseline_flops_exact():
    # 555,422,720 MACs + BN/ReLU/add/GAP elementwise terms
    assert report("resnet18", "none").total_flops == 557_462_528


def test_mobilenetv2_baseline_flops_exact():
    assert report("mobilenetv2", "none").total_flops == 92_849_664


@pytest.mark.parametrize("arch,attn,delta", [
    ("resnet18", "eca", 502_784),
    ("resnet18", "lca", 502_784),
    ("resnet18", "se", 580_600),
    ("mobilenetv2", "eca", 283_072),
    ("mobilenetv2", "lca", 283_072),
])
def test_attention_flops_deltas(arch, attn, delta):
    assert diff_reports(report(arch, "none"), report(arch, attn)).flops_delta == delta


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("attn", KINDS)
def test_flops_within_one_percent_of_reference(arch, attn):
    r = report(arch, attn)
    ref = r.reference()
    assert ref is not None
    assert abs(ref["flops_residual_pct"]) < 1.0
    assert ref["params_match"]
    assert ref["flops_m"] == REFERENCE_METRICS[arch, attn][1]


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("attn", ["se", "eca", "lca"])
def test_attention_costs_under_one_percent_flops(arch, attn):
    delta = diff_reports(report(arch, "none"), report(arch, attn))
    assert 0 < delta.flops_pct < 1.0


def test_totals_equal_per_node_sums():
    r = report("mobilenetv2", "se")
    assert r.total_params == sum(n.params for n in r.per_node)
    assert r.total_flops == sum(n.flops for n in r.per_node)
    attn_params, attn_flops = r.kind_totals("attention")
    assert attn_params == 28_416
    assert attn_flops == 305_469


def test_param_count_matches_materialized_graph():
    g = build_model(ModelConfig("resnet18", "se"))
    assert count_params(g).total_params == g.num_parameters()


def test_count_flops_accepts_batched_shape_per_sample():
    g = build_model(tiny_config("resnet18", "eca"))
    assert count_flops(g, (3, 8, 8)).total_flops == count_flops(g, (16, 3, 8, 8)).total_flops
    with pytest.raises(ValueError):
        count_flops(g, (8, 8))


def test_flops_scale_with_input_resolution():
    g = build_model(tiny_config("resnet18", "none"))
    small = count_flops(g, (3, 8, 8)).total_flops
    large = count_flops(g, (3, 16, 16)).total_flops
    assert large > 3 * small


def test_reduced_configs_have_no_reference():
    assert profile_graph(build_model(tiny_config("resnet18", "eca"))).reference() is None
    cfg = ModelConfig("resnet18", AttentionSpec("lca", per_group_filters=True))
    assert profile_graph(build_model(cfg)).reference() is None


def test_diff_reports_rejects_mixed_architectures():
    with pytest.raises(ValueError):
        diff_reports(report("resnet18", "none"), report("mobilenetv2", "none"))


def test_diff_percentages():
    d = diff_reports(report("resnet18", "none"), report("resnet18", "se"))
    assert d.params_delta == 87_040
    assert d.params_pct == pytest.approx(87_040 / 11_173_962 * 100)
    assert (d.base, d.other) == ("none", "se")


def test_json_round_trip_and_csv(tmp_path):
    r = report("mobilenetv2", "eca")
    path = r.to_json(str(tmp_path / "p.json"))
    again = load_profile_json(path)
    assert again.per_node == r.per_node
    assert again.total_flops == r.total_flops
    assert again.convention == CONVENTION

    csv = r.to_csv(str(tmp_path / "p.csv"))
    lines = open(csv, encoding="utf-8").read().splitlines()
    assert lines[0] == "node_id,name,kind,params,flops"
    assert len(lines) == len(r.per_node) + 1


def test_tampered_totals_are_rejected(tmp_path):
    d = report("resnet18", "eca").to_dict()
    d["totals"]["flops"] += 1
    with pytest.raises(ValueError):
        ProfileReport.from_dict(d)


def test_table2_row_shape():
    base, se = report("mobilenetv2", "none"), report("mobilenetv2", "se")
    row = table2_row(se, diff_reports(base, se), latency_ms=7.26)
    assert row.startswith("MobileNetV2")
    assert " SE " in row and "2.27" in row and "7.26" in row and "+28,416 params" in row
