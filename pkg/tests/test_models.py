# tests/test_models.py
import struct

import numpy as np
import pytest

import models
from gradcheck import norm_rel_error, numeric_grad, sample_indices
from layers.attention import AttentionSpec, adaptive_kernel_size
from layers.tensor import batchnorm_forward, conv2d_forward, global_avg_pool, linear_forward, relu_forward
from models import (
    ModelConfig,
    backward,
    build_model,
    forward,
    infer_shapes,
    init_weights,
    tiny_config,
)
from utils.checkpoint import MAGIC, load_checkpoint, read_header, save_checkpoint
from utils.errors import CheckpointError

KINDS = ["none", "se", "eca", "lca"]


def _params(arch, attn):
    return build_model(ModelConfig(arch, attn)).num_parameters()


# ---------- exact parameter identities ----------
def test_resnet18_baseline_parameter_count():
    assert _params("resnet18", "none") == 11_173_962


def test_mobilenetv2_baseline_parameter_count():
    assert _params("mobilenetv2", "none") == 2_236_682


@pytest.mark.parametrize("arch,attn,delta", [
    ("resnet18", "se", 87_040),
    ("resnet18", "eca", 36),
    ("resnet18", "lca", 36),
    ("mobilenetv2", "eca", 59),
    ("mobilenetv2", "lca", 59),
    # floor(C / 16) bottlenecks (1 for the 16- and 24-channel blocks); DESIGN.md, "SE width"
    ("mobilenetv2", "se", 28_416),
])
def test_attention_parameter_deltas(arch, attn, delta):
    assert _params(arch, attn) - _params(arch, "none") == delta


@pytest.mark.parametrize("arch,expected", [
    ("resnet18", {"none": 11.17, "se": 11.26, "eca": 11.17, "lca": 11.17}),
    ("mobilenetv2", {"none": 2.24, "se": 2.27, "eca": 2.24, "lca": 2.24}),
])
def test_parameter_totals_in_millions(arch, expected):
    for attn, m in expected.items():
        assert round(_params(arch, attn) / 1e6, 2) == m


def test_lca_per_group_filters_multiplies_kernel_params():
    base = _params("resnet18", "none")
    cfg = ModelConfig("resnet18", AttentionSpec("lca", per_group_filters=True))
    assert build_model(cfg).num_parameters() - base == 36 * 4


# ---------- topology ----------
def test_resnet18_topology():
    g = build_model(ModelConfig("resnet18", "eca"))
    shapes = dict(infer_shapes(g))
    assert shapes["stem.conv"] == (64, 32, 32)
    assert shapes["layer4.1.relu2"] == (512, 4, 4)
    assert shapes["head.fc"] == (10,)
    assert len(g.shortcuts) == 8
    assert sum(n.name.endswith("shortcut.conv") for n in g.nodes) == 3
    # attention sits on the residual branch, before the addition
    for n in g.attention_nodes:
        prefix = n.name.rsplit(".", 1)[0]
        assert g.nodes[n.inputs[0]].name == f"{prefix}.bn2"
        assert g.node(f"{prefix}.add").inputs[0] == n.id
    assert [adaptive_kernel_size(n.channels) for n in g.attention_nodes] == [3, 3, 5, 5, 5, 5, 5, 5]


def test_mobilenetv2_topology():
    g = build_model(ModelConfig("mobilenetv2", "lca"))
    shapes = dict(infer_shapes(g))
    assert shapes["stem.conv"] == (32, 32, 32)
    assert shapes["last.relu6"] == (1280, 4, 4)
    assert len(g.attention_nodes) == 17
    assert len(g.shortcuts) == 10
    channels = [n.channels for n in g.attention_nodes]
    assert channels == [16, 24, 24, 32, 32, 32, 64, 64, 64, 64, 96, 96, 96, 160, 160, 160, 320]
    # attention reads the block output (after the residual add where there is one)
    assert g.nodes[g.node("blocks.1.attn").inputs[0]].name == "blocks.1.project.bn"
    assert g.nodes[g.node("blocks.2.attn").inputs[0]].name == "blocks.2.add"


def test_imagenet_stride_plan_shrinks_feature_maps():
    g = build_model(ModelConfig("mobilenetv2", "none", stride_plan="imagenet"))
    assert dict(infer_shapes(g))["last.relu6"] == (1280, 2, 2)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig("vgg16")
    with pytest.raises(ValueError):
        ModelConfig("resnet18", "cbam")
    cfg = ModelConfig("mobilenetv2", "se")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.standard_cifar and not tiny_config("resnet18").standard_cifar


def test_lca_groups_must_divide_channels():
    with pytest.raises(ValueError):
        build_model(tiny_config("resnet18", AttentionSpec("lca", groups_g=3)))


# ---------- execution ----------
def test_forward_rejects_wrong_input_shape():
    g = build_model(tiny_config("resnet18"), seed=0)
    with pytest.raises(ValueError):
        forward(g, np.zeros((1, 3, 32, 32)))


def test_backward_needs_cached_forward(rng):
    g = build_model(tiny_config("resnet18"), seed=0)
    x = rng.standard_normal((2, 3, 8, 8))
    forward(g, x, training=False)
    with pytest.raises(ValueError):
        backward(g, x, np.ones((2, 3)))


@pytest.mark.parametrize("arch", ["resnet18", "mobilenetv2"])
def test_seeded_init_is_deterministic(arch, rng):
    a = build_model(tiny_config(arch, "se"), seed=7)
    b = build_model(tiny_config(arch, "se"), seed=7)
    c = build_model(tiny_config(arch, "se"), seed=8)
    x = rng.standard_normal((2, 3, 8, 8))
    np.testing.assert_array_equal(forward(a, x), forward(b, x))
    assert not np.array_equal(forward(a, x), forward(c, x))


def test_eval_forward_leaves_running_stats_alone(rng):
    g = build_model(tiny_config("resnet18", "eca"), seed=0)
    before = {k: v.copy() for k, v in g.state_dict().items()}
    forward(g, rng.standard_normal((2, 3, 8, 8)), training=False)
    for k, v in g.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    forward(g, rng.standard_normal((2, 3, 8, 8)), training=True)
    assert not np.array_equal(g.node("stem.bn").buffers["running_mean"], before["stem.bn.running_mean"])


@pytest.mark.parametrize("arch", ["resnet18", "mobilenetv2"])
@pytest.mark.parametrize("attn", KINDS)
def test_full_graph_gradcheck(arch, attn):
    """Reduced variants in training mode; a sample of entries per tensor."""
    graph = build_model(tiny_config(arch, attn), seed=3, dtype="float64")
    r = np.random.default_rng(11)
    x = r.standard_normal((2, 3, 8, 8))
    up = r.standard_normal((2, 3))

    def loss():
        return float((forward(graph, x, training=True) * up).sum())

    forward(graph, x, training=True)
    grads = backward(graph, x, up)
    for name, pair, _ in graph.named_parameters():
        idx = sample_indices(pair.value.shape, 6, r)
        num = numeric_grad(loss, pair.value, indices=idx)
        ana = np.array([grads[name][i] for i in idx])
        assert norm_rel_error(ana, np.array([num[i] for i in idx])) < 1e-3, name
        assert pair.grad is not None and pair.grad.shape == pair.value.shape


def _randomize_bn_buffers(graph, r):
    for n in graph.nodes:
        if n.kind == "bn":
            n.buffers["running_mean"][...] = r.standard_normal(n.channels) * 0.1
            n.buffers["running_var"][...] = r.uniform(0.5, 1.5, n.channels)


def test_zero_head_gives_uniform_predictions(rng):
    g = build_model(tiny_config("mobilenetv2", "se"), seed=0)
    fc = g.node("head.fc")
    fc.params["weight"].value[...] = 0.0
    fc.params["bias"].value[...] = 0.0
    logits = forward(g, rng.standard_normal((4, 3, 8, 8)))
    np.testing.assert_array_equal(logits, np.zeros((4, 3)))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, 1 / 3)


@pytest.mark.parametrize("arch", ["resnet18", "mobilenetv2"])
def test_identical_images_give_identical_logits(arch, rng):
    g = build_model(tiny_config(arch, "lca"), seed=2)
    x = np.repeat(rng.standard_normal((1, 3, 8, 8)), 5, axis=0)
    logits = forward(g, x, training=False)
    np.testing.assert_allclose(logits, np.broadcast_to(logits[0], logits.shape), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("attn", KINDS)
def test_eval_forward_is_repeatable(attn, rng):
    g = build_model(tiny_config("resnet18", attn), seed=4)
    _randomize_bn_buffers(g, rng)
    x = rng.standard_normal((3, 3, 8, 8))
    np.testing.assert_array_equal(forward(g, x), forward(g, x))


@pytest.mark.parametrize("arch", ["resnet18", "mobilenetv2"])
@pytest.mark.parametrize("attn", ["se", "eca", "lca"])
def test_identity_attention_matches_the_plain_network(arch, attn, rng, monkeypatch):
    plain = build_model(tiny_config(arch, "none"), seed=9)
    _randomize_bn_buffers(plain, rng)
    wrapped = build_model(tiny_config(arch, attn), seed=9)
    wrapped.load_state_dict(plain.state_dict(), strict=False)
    monkeypatch.setattr(models, "attention_forward", lambda x, params: x)
    x = rng.standard_normal((2, 3, 8, 8))
    np.testing.assert_array_equal(forward(wrapped, x), forward(plain, x))


def test_forward_matches_layer_by_layer_composition(rng):
    """Two BasicBlocks (identity and projection shortcut) composed by hand."""
    g = build_model(tiny_config("resnet18", "none"), seed=6)
    _randomize_bn_buffers(g, rng)
    x = rng.standard_normal((3, 3, 8, 8))

    def conv(h, name):
        n = g.node(name)
        return conv2d_forward(h, n.params["weight"].value, None, n.conv)

    def bn(h, name):
        n = g.node(name)
        return batchnorm_forward(h, n.params["gamma"].value, n.params["beta"].value,
                                 n.buffers["running_mean"], n.buffers["running_var"], False)

    h = relu_forward(bn(conv(x, "stem.conv"), "stem.bn"))
    y = bn(conv(relu_forward(bn(conv(h, "layer1.0.conv1"), "layer1.0.bn1")), "layer1.0.conv2"), "layer1.0.bn2")
    h = relu_forward(y + h)
    y = bn(conv(relu_forward(bn(conv(h, "layer2.0.conv1"), "layer2.0.bn1")), "layer2.0.conv2"), "layer2.0.bn2")
    h = relu_forward(y + bn(conv(h, "layer2.0.shortcut.conv"), "layer2.0.shortcut.bn"))
    fc = g.node("head.fc")
    expected = linear_forward(global_avg_pool(h), fc.params["weight"].value, fc.params["bias"].value)

    assert h.shape == (3, 8, 4, 4)
    np.testing.assert_allclose(forward(g, x, training=False), expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("arch", ["resnet18", "mobilenetv2"])
@pytest.mark.parametrize("attn", KINDS)
def test_zero_upstream_gives_zero_gradients(arch, attn, rng):
    g = build_model(tiny_config(arch, attn), seed=1)
    x = rng.standard_normal((2, 3, 8, 8))
    forward(g, x, training=True)
    grads = backward(g, x, np.zeros((2, 3)))
    assert set(grads) == {name for name, _, _ in g.named_parameters()}
    for name, grad in grads.items():
        assert not np.any(grad), name


def test_head_gradients_match_the_linear_closed_form(rng):
    g = build_model(tiny_config("resnet18", "eca"), seed=3)
    x = rng.standard_normal((4, 3, 8, 8))
    forward(g, x, training=True)
    features = g.cache.values[g.node("head.gap").id].copy()
    up = rng.standard_normal((4, 3))
    grads = backward(g, x, up)
    np.testing.assert_allclose(grads["head.fc.weight"], up.T @ features, rtol=1e-12)
    np.testing.assert_allclose(grads["head.fc.bias"], up.sum(axis=0), rtol=1e-12)


def test_seeded_conv_init_has_he_variance():
    g = build_model(ModelConfig("resnet18", "none"), seed=42)
    n = g.node("layer2.0.conv1")
    w = n.params["weight"].value
    fan_in = n.conv.weight_shape[1] * n.conv.kernel_h * n.conv.kernel_w
    assert w.size >= 10_000 and fan_in == 576
    assert abs(w.var() / (2.0 / fan_in) - 1.0) < 0.2


def test_init_weights_is_in_place():
    g = build_model(tiny_config("mobilenetv2", "lca"))
    w = g.node("stem.conv").params["weight"].value
    init_weights(g, 5)
    assert g.node("stem.conv").params["weight"].value is w
    assert np.any(w != 0)


def test_load_state_dict_rejects_shape_mismatch():
    g = build_model(tiny_config("resnet18"), seed=0)
    state = g.state_dict()
    state["head.fc.weight"] = np.zeros((5, 5))
    with pytest.raises(ValueError):
        g.load_state_dict(state)


# ---------- checkpoints ----------
def test_checkpoint_round_trip_is_bitwise(tmp_path, rng):
    g = build_model(tiny_config("mobilenetv2", "se"), seed=1)
    forward(g, rng.standard_normal((4, 3, 8, 8)), training=True)      # non-trivial BN buffers
    path = save_checkpoint(g, str(tmp_path / "m.ckpt"), seed=1)
    g2, header = load_checkpoint(path)
    assert header["seed"] == 1
    assert g2.config == g.config
    for k, v in g.state_dict().items():
        np.testing.assert_array_equal(g2.state_dict()[k], v)
    x = rng.standard_normal((2, 3, 8, 8))
    np.testing.assert_array_equal(forward(g2, x), forward(g, x))


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\0" * 32)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(p))


def test_checkpoint_rejects_future_version(tmp_path):
    g = build_model(tiny_config("resnet18"), seed=0)
    path = save_checkpoint(g, str(tmp_path / "m.ckpt"))
    raw = bytearray(open(path, "rb").read())
    raw[len(MAGIC):len(MAGIC) + 2] = struct.pack("<H", 99)
    open(path, "wb").write(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        read_header(path)


def test_checkpoint_rejects_truncated_payload(tmp_path):
    g = build_model(tiny_config("resnet18"), seed=0)
    path = save_checkpoint(g, str(tmp_path / "m.ckpt"))
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-16])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
