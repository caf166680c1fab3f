import json
import math

import numpy as np
import pytest
import scipy.ndimage
import scipy.special

from gespot import (EncoderSpec, FeatureConfig, HeadSpec, ModelParams,
                    ModelSpec, SpecError, forward, forward_fine, init_params,
                    load_checkpoint, save_checkpoint)
from gespot.layers import (adaptive_avg_pool1d, adaptive_avg_pool1d_backward,
                           conv1d, conv1d_backward, global_avg_pool,
                           global_avg_pool_backward, mse,
                           sigmoid_cross_entropy, softmax_cross_entropy)
from gespot.model import (CHECKPOINT_MAGIC, VIEW_NAMES, backward_batch,
                          forward_batch, param_shapes, task_losses,
                          task_losses_backward)

# screened so every ReLU pre-activation is >= 1e-3 from the kink, far beyond
# the finite-difference step
GRADCHECK_SEED = 36


def small_spec(with_gc=True):
    return ModelSpec(w=8, n_joints=4, num_classes=3,
                     encoder=EncoderSpec(hidden=(4,), kernel=3),
                     head=HeadSpec(hidden=(4,), kernel=3),
                     with_gc=with_gc).validate()


def random_views(spec, batch, rng, dtype=np.float64):
    return {name: (0.5 * rng.standard_normal((batch,) + shape)).astype(dtype)
            for name, shape in spec.view_shapes().items()}


def random_labels(spec, batch, rng):
    return {
        "sdn": rng.integers(0, 3, size=batch),
        "fine": rng.integers(0, spec.num_classes, size=batch),
        "start": rng.uniform(0, 1, size=batch),
        "end": rng.uniform(0, 1, size=batch),
        "gc": rng.integers(0, 2, size=batch).astype(np.float64),
    }


# --- independent forward implementation (plain loops) ----------------------

def naive_conv_same(x, w, b):
    o_n, c_n, k = w.shape
    p = (k - 1) // 2
    t = x.shape[1]
    xp = np.zeros((c_n, t + 2 * p))
    xp[:, p:p + t] = x
    out = np.zeros((o_n, t))
    for o in range(o_n):
        for i in range(t):
            acc = b[o]
            for c in range(c_n):
                for j in range(k):
                    acc += xp[c, i + j] * w[o, c, j]
            out[o, i] = acc
    return out


def naive_pool(x, out_len):
    c, t = x.shape
    out = np.zeros((c, out_len))
    for i in range(out_len):
        s = (i * t) // out_len
        e = math.ceil((i + 1) * t / out_len)
        out[:, i] = x[:, s:e].mean(axis=1)
    return out


def naive_forward_single(params, views_one):
    """Loop-based reimplementation; also reports the smallest |preactivation|."""
    spec = params.spec
    arr = params.arrays
    closest = np.inf
    embeds = []
    for view in VIEW_NAMES:
        x = views_one[view]
        for i in range(len(spec.encoder.hidden)):
            x = naive_conv_same(x, arr[f"enc.{view}.c{i + 1}.w"],
                                arr[f"enc.{view}.c{i + 1}.b"])
            closest = min(closest, np.abs(x).min())
            x = np.maximum(x, 0)
        x = naive_pool(x, spec.embed_len)
        x = naive_conv_same(x, arr[f"enc.{view}.proj.w"],
                            arr[f"enc.{view}.proj.b"])
        embeds.append(x)
    g = np.concatenate(embeds, axis=0)
    outs = {}
    for head in spec.heads:
        x = g
        for i in range(len(spec.head.hidden)):
            x = naive_conv_same(x, arr[f"head.{head}.c{i + 1}.w"],
                                arr[f"head.{head}.c{i + 1}.b"])
            closest = min(closest, np.abs(x).min())
            x = np.maximum(x, 0)
        v = x.mean(axis=1)
        outs[head] = arr[f"head.{head}.fc.w"] @ v + arr[f"head.{head}.fc.b"]
    return outs, g, closest


# --- layer oracles ---------------------------------------------------------

def test_conv1d_matches_scipy():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 11))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    out, _ = conv1d(x, w, b)
    for bi in range(2):
        for o in range(4):
            want = b[o]
            for c in range(3):
                want = want + scipy.ndimage.correlate1d(
                    x[bi, c], w[o, c], mode="constant", cval=0.0)
            assert np.allclose(out[bi, o], want, atol=1e-12)


def test_conv1d_stride_contract():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 12))
    w = rng.standard_normal((4, 3, 3))
    b = np.zeros(4)
    full, _ = conv1d(x, w, b)
    strided, _ = conv1d(x, w, b, stride=2)
    assert np.array_equal(strided, full[:, :, ::2])
    with pytest.raises(ValueError):
        conv1d(x, rng.standard_normal((4, 3, 2)), b)


def test_adaptive_pool_matches_naive():
    rng = np.random.default_rng(2)
    for t, o in [(15, 8), (8, 8), (7, 8), (16, 4), (3, 8)]:
        x = rng.standard_normal((2, 3, t))
        out, _ = adaptive_avg_pool1d(x, o)
        assert out.shape == (2, 3, o)
        for bi in range(2):
            for c in range(3):
                assert np.allclose(out[bi, c], naive_pool(x[bi, c][None], o)[0])
    const = np.full((1, 2, 13), 3.7)
    out, _ = adaptive_avg_pool1d(const, 8)
    assert np.allclose(out, 3.7)


def test_linear_layer_adjoints():
    # <y, A x> == <A^T y, x> pins each backward as the exact adjoint
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 10))
    w = rng.standard_normal((5, 3, 3))
    out, cache = conv1d(x, w, np.zeros(5))
    y = rng.standard_normal(out.shape)
    dx, _, _ = conv1d_backward(y, cache)
    assert np.allclose((y * out).sum(), (dx * x).sum(), atol=1e-10)

    out, cache = adaptive_avg_pool1d(x, 4)
    y = rng.standard_normal(out.shape)
    dx = adaptive_avg_pool1d_backward(y, cache)
    assert np.allclose((y * out).sum(), (dx * x).sum(), atol=1e-10)

    out, cache = global_avg_pool(x)
    y = rng.standard_normal(out.shape)
    dx = global_avg_pool_backward(y, cache)
    assert np.allclose((y * out).sum(), (dx * x).sum(), atol=1e-10)


def test_softmax_ce_matches_scipy():
    rng = np.random.default_rng(4)
    logits = 5 * rng.standard_normal((6, 4))
    targets = rng.integers(0, 4, size=6)
    losses, _ = softmax_cross_entropy(logits, targets)
    want = -scipy.special.log_softmax(logits, axis=1)[np.arange(6), targets]
    assert np.allclose(losses, want, atol=1e-12)


def test_sigmoid_ce_matches_naive():
    z = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
    y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    losses, _ = sigmoid_cross_entropy(z, y)
    sig = 1 / (1 + np.exp(-z))
    want = -(y * np.log(sig) + (1 - y) * np.log(1 - sig))
    assert np.allclose(losses, want, atol=1e-12)
    d = np.array([0.25, -0.5])
    losses, _ = mse(np.array([1.25, 0.0]), np.array([1.0, 0.5]))
    assert np.allclose(losses, d * d)


# --- model shape algebra ---------------------------------------------------

def test_param_shapes_and_count():
    spec = ModelSpec(w=16, n_joints=26, num_classes=7)
    shapes = param_shapes(spec)
    assert shapes["enc.jcd.c1.w"] == (16, 325, 3)
    assert shapes["enc.m_slow.c1.w"] == (16, 78, 3)
    assert shapes["enc.m_fast.c2.w"] == (16, 16, 3)
    assert shapes["enc.jcd.proj.w"] == (8, 16, 1)
    assert shapes["head.fine.fc.w"] == (7, 16)
    assert shapes["head.start.fc.w"] == (1, 16)
    assert "head.gc.fc.w" not in shapes
    assert "head.gc.fc.w" in param_shapes(ModelSpec(w=16, n_joints=26,
                                                    num_classes=7, with_gc=True))
    params = init_params(spec, seed=0)
    assert params.param_count() == sum(
        int(np.prod(s)) for s in shapes.values())
    # magnitude mode shrinks the motion encoders' input channels to J
    mag = param_shapes(ModelSpec(w=16, n_joints=26, num_classes=7,
                                 motion_mode="magnitude"))
    assert mag["enc.m_slow.c1.w"] == (16, 26, 3)


def test_init_deterministic():
    spec = small_spec()
    a = init_params(spec, seed=5)
    b = init_params(spec, seed=5)
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)
    c = init_params(spec, seed=6)
    assert any(not np.array_equal(a.arrays[k], c.arrays[k]) for k in a.arrays)
    assert all(not a.arrays[k].any() for k in a.arrays if k.endswith(".b"))


def test_spec_validation_errors():
    with pytest.raises(SpecError):
        ModelSpec(w=7).validate()
    with pytest.raises(SpecError):
        ModelSpec(encoder=EncoderSpec(embed_channels=4)).validate()
    with pytest.raises(SpecError):
        ModelSpec(encoder=EncoderSpec(kernel=2)).validate()
    with pytest.raises(SpecError):
        ModelSpec(head=HeadSpec(hidden=())).validate()
    with pytest.raises(SpecError):
        ModelSpec(num_classes=1).validate()
    spec = small_spec()
    params = init_params(spec)
    bad = dict(params.arrays)
    del bad["head.gc.fc.b"]
    with pytest.raises(SpecError):
        ModelParams(spec, bad).validate()


def test_forward_shapes_and_head_subsets():
    spec = small_spec()
    params = init_params(spec, seed=1)
    rng = np.random.default_rng(0)
    views = random_views(spec, 5, rng, dtype=np.float32)
    outs, cache = forward_batch(params, views)
    assert set(outs) == {"sdn", "fine", "start", "end", "gc"}
    assert outs["sdn"].shape == (5, 3)
    assert outs["fine"].shape == (5, 3)
    assert outs["start"].shape == (5, 1)
    assert cache["g"].shape == (5, 24, 4)
    only, _ = forward_batch(params, views, heads=("fine",))
    assert set(only) == {"fine"}
    assert np.array_equal(only["fine"], outs["fine"])
    with pytest.raises(SpecError):
        forward_batch(params, views, heads=("bogus",))

    vs = type("VS", (), {n: views[n][0] for n in VIEW_NAMES})
    out1 = forward(params, vs)
    assert out1.g_t.shape == (4, 24)
    # same windows through a larger batch agree to float32 reduction noise
    assert np.allclose(out1.g_t, cache["g"][0].T, atol=1e-6)
    assert np.allclose(out1.fine_logits, outs["fine"][0], atol=1e-5)
    assert out1.gc_logit == pytest.approx(float(outs["gc"][0, 0]), abs=1e-5)
    # and bitwise against an equal-shape batched call
    solo, _ = forward_batch(params, {n: views[n][:1] for n in VIEW_NAMES})
    assert np.array_equal(out1.fine_logits, solo["fine"][0])
    assert np.array_equal(forward_fine(params, vs), solo["fine"][0])


def test_zeroed_params_give_flat_logits():
    spec = small_spec()
    params = init_params(spec, seed=0)
    zero = ModelParams(spec, {k: np.zeros_like(v)
                              for k, v in params.arrays.items()})
    views = random_views(spec, 2, np.random.default_rng(1), np.float32)
    outs, _ = forward_batch(zero, views)
    for head in outs:
        assert not outs[head].any()


def test_forward_matches_naive_loops():
    spec = small_spec()
    params = init_params(spec, seed=GRADCHECK_SEED, dtype=np.float64)
    rng = np.random.default_rng(GRADCHECK_SEED)
    views = random_views(spec, 3, rng)
    outs, cache = forward_batch(params, views)
    for bi in range(3):
        one = {n: views[n][bi] for n in VIEW_NAMES}
        naive_outs, naive_g, closest = naive_forward_single(params, one)
        assert closest >= 1e-3  # seed screening for the gradcheck below
        assert np.allclose(cache["g"][bi], naive_g, atol=1e-12)
        for head in spec.heads:
            assert np.allclose(outs[head][bi], naive_outs[head], atol=1e-12)


def test_gradcheck_finite_differences():
    spec = small_spec()
    params = init_params(spec, seed=GRADCHECK_SEED, dtype=np.float64)
    rng = np.random.default_rng(GRADCHECK_SEED)
    batch = 3
    views = random_views(spec, batch, rng)
    labels = random_labels(spec, batch, rng)
    coeffs = {h: rng.uniform(0.2, 1.0, size=batch) for h in spec.heads}

    def scalar_loss(p):
        outs, _ = forward_batch(p, views)
        losses, _ = task_losses(outs, labels)
        return float(sum((coeffs[h] * losses[h]).sum() for h in outs))

    outs, cache = forward_batch(params, views)
    losses, loss_caches = task_losses(outs, labels)
    out_grads = task_losses_backward(loss_caches, coeffs)
    grads = backward_batch(params, cache, out_grads)

    eps = 1e-5
    worst = 0.0
    for name, arr in params.arrays.items():
        flat = arr.reshape(-1)
        idxs = range(0, flat.size, max(1, flat.size // 25))
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            hi = scalar_loss(params)
            flat[i] = orig - eps
            lo = scalar_loss(params)
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            an = grads[name].reshape(-1)[i]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-5)
            worst = max(worst, rel)
            assert rel < 1e-4, f"{name}[{i}]: analytic {an}, fd {fd}"
    assert worst < 1e-4


def test_encoder_independence():
    spec = small_spec()
    params = init_params(spec, seed=2)
    rng = np.random.default_rng(7)
    views = random_views(spec, 2, rng, np.float32)
    _, cache_a = forward_batch(params, views)
    bumped = dict(views)
    bumped["m_fast"] = views["m_fast"] + 1.0
    _, cache_b = forward_batch(params, bumped)
    # channels 0..15 belong to the jcd and m_slow encoders
    assert np.array_equal(cache_a["g"][:, :16], cache_b["g"][:, :16])
    assert not np.array_equal(cache_a["g"][:, 16:], cache_b["g"][:, 16:])


def test_backward_gating_is_bitwise():
    spec = small_spec()
    params = init_params(spec, seed=4, dtype=np.float64)
    rng = np.random.default_rng(9)
    batch = 4
    views = random_views(spec, batch, rng)
    labels = random_labels(spec, batch, rng)
    outs, cache = forward_batch(params, views)
    losses, loss_caches = task_losses(outs, labels)

    live = {h: rng.uniform(0.5, 1.0, size=batch) for h in spec.heads}
    gated = dict(live, start=np.zeros(batch))

    g_live = backward_batch(params, cache, task_losses_backward(loss_caches, live))
    g_gated = backward_batch(params, cache, task_losses_backward(loss_caches, gated))
    absent = {h: c for h, c in live.items() if h != "start"}
    g_absent = backward_batch(params, cache, task_losses_backward(loss_caches, absent))

    for name in g_gated:
        if name.startswith("head.start."):
            assert not g_gated[name].any()
            assert not np.signbit(g_gated[name]).any()
        assert np.array_equal(g_gated[name], g_absent[name]), name
    # a live start head does reach the shared encoders
    assert any(not np.array_equal(g_live[n], g_gated[n])
               for n in g_live if n.startswith("enc."))
    # force_all runs the real backward; zero upstream still yields zero grads
    g_forced = backward_batch(params, cache,
                              task_losses_backward(loss_caches, gated),
                              force_all=True)
    for name in g_forced:
        assert np.array_equal(g_forced[name], g_gated[name]), name


def test_checkpoint_round_trip(tmp_path):
    spec = small_spec()
    params = init_params(spec, seed=8, dtype=np.float32)
    feature = FeatureConfig(w=spec.w, scale=2.0, overlap_threshold=0.6)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path, feature=feature, extra={"epoch": 3})
    loaded, feat, extra = load_checkpoint(path)
    assert loaded.spec == spec
    assert list(loaded.arrays) == list(params.arrays)
    for k in params.arrays:
        assert np.array_equal(loaded.arrays[k], params.arrays[k])
    assert feat == feature
    assert extra == {"epoch": 3}

    # documented container layout: magic, u64 LE header length, JSON, raw f32
    blob = path.read_bytes()
    assert blob[:8] == CHECKPOINT_MAGIC
    hlen = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16:16 + hlen])
    assert header["format"] == "gespot-checkpoint"
    total = sum(e["nbytes"] for e in header["params"])
    assert len(blob) == 16 + hlen + total
    first = header["params"][0]
    raw = np.frombuffer(blob, dtype="<f4",
                        count=int(np.prod(first["shape"])),
                        offset=16 + hlen + first["offset"])
    assert np.array_equal(raw.reshape(first["shape"]),
                          params.arrays[first["name"]])

    (tmp_path / "junk.ckpt").write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(SpecError):
        load_checkpoint(tmp_path / "junk.ckpt")
    (tmp_path / "short.ckpt").write_bytes(blob[:len(blob) - 10])
    with pytest.raises(SpecError):
        load_checkpoint(tmp_path / "short.ckpt")
