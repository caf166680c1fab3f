import csv

import numpy as np
import pytest
import scipy.stats

from gespot import (ConfigError, SequenceTooShortError, TrainConfig,
                    WindowDataset, build_window_dataset, init_params, loss,
                    train)
from gespot.model import backward_batch, forward, forward_batch, task_losses_backward
from gespot.synth import generate_corpus
from gespot.train import (HEAD_SETS, apply_on_off_policy, apply_policy_dataset,
                          gated_batch_loss, trainable_names)
from gespot.features import make_sample, normalize_index, window_labels
from gespot.util import sub_rng

from conftest import ann, make_sequence


def fake_dataset(n, rng, w=16):
    """Labels only; enough for the policy machinery, which ignores views."""
    start = np.where(rng.random(n) < 0.5, rng.integers(0, w, size=n), -1)
    end = np.where(rng.random(n) < 0.5, rng.integers(0, w, size=n), -1)
    return WindowDataset(views={}, sdn=np.zeros(n, dtype=np.int64),
                         fine=np.zeros(n, dtype=np.int64),
                         start_idx=start.astype(np.int64),
                         end_idx=end.astype(np.int64), w=w, num_classes=2)


def test_window_counts():
    seq = make_sequence(n_frames=100, n_joints=5)
    ds = build_window_dataset([seq], TrainConfig(w=16, stride=1))
    assert len(ds) == 85
    ds = build_window_dataset([seq], TrainConfig(w=16, stride=4))
    assert len(ds) == 22
    with pytest.raises(SequenceTooShortError):
        build_window_dataset([make_sequence(n_frames=10)], TrainConfig(w=16))
    with pytest.raises(ConfigError):
        build_window_dataset([], TrainConfig())


def test_unannotated_corpus_gates_off_boundaries():
    ds = build_window_dataset([make_sequence(n_frames=80, n_joints=5)],
                              TrainConfig(w=16))
    assert not ds.fine.any()
    assert (ds.sdn == 2).all()
    assert (ds.start_idx == -1).all() and (ds.end_idx == -1).all()
    assert ds.mask[:, :2].all() and not ds.mask[:, 2:].any()
    assert not ds.gc.any()


def test_dataset_rows_match_per_window_labels():
    seq = make_sequence(n_frames=120, n_joints=5,
                        annotations=[ann(1, 20, 52), ann(2, 70, 95)], seed=3)
    cfg = TrainConfig(w=16, stride=3)
    ds = build_window_dataset([seq], cfg)
    ts = list(range(15, 120, 3))
    assert len(ds) == len(ts)
    for k, t in enumerate(ts):
        lab = window_labels(seq, t, 16, cfg.overlap_threshold)
        assert ds.sdn[k] == lab.sdn
        assert ds.fine[k] == lab.fine
        assert ds.start_idx[k] == (-1 if lab.start_index is None else lab.start_index)
        assert ds.end_idx[k] == (-1 if lab.end_index is None else lab.end_index)
    views, labels, mask = ds.batch(np.arange(len(ds)))
    present = ds.start_idx >= 0
    assert np.allclose(labels["start"][present], ds.start_idx[present] / 15)
    assert not labels["start"][~present].any()
    assert np.array_equal(labels["gc"].astype(bool),
                          (ds.start_idx >= 0) | (ds.end_idx >= 0))
    assert views["jcd"].dtype == np.float32


def test_single_window_loss_components():
    seq = make_sequence(n_frames=64, n_joints=5,
                        annotations=[ann(1, 20, 40)], seed=4)
    spec = TrainConfig(w=16, encoder_hidden=(4,), head_hidden=(4,)).model_spec(5, 4)
    params = init_params(spec, seed=0)

    sample = make_sample(seq, 45, 16)  # start absent, end inside
    out = forward(params, sample.views)
    total, comps = loss(out, sample.labels, sample.mask)
    assert set(comps) == {"sdn", "fine", "end"}
    z = out.fine_logits - out.fine_logits.max()
    ce_fine = float(np.log(np.exp(z).sum()) - z[sample.labels.fine])
    assert comps["fine"] == pytest.approx(ce_fine, abs=1e-12)
    mse_end = (out.end_pred - normalize_index(sample.labels.end_index, 16)) ** 2
    assert comps["end"] == pytest.approx(mse_end, abs=1e-12)
    assert total == pytest.approx(sum(comps.values()))
    weighted, _ = loss(out, sample.labels, sample.mask,
                       weights={"end": 0.25})
    assert weighted == pytest.approx(comps["sdn"] + comps["fine"]
                                     + 0.25 * comps["end"])

    # c=(1,1,0,0): exactly the two cross-entropies
    plain = make_sample(seq, 63, 16)
    assert plain.mask == (True, True, False, False)
    out = forward(params, plain.views)
    total, comps = loss(out, plain.labels, plain.mask)
    assert set(comps) == {"sdn", "fine"}

    # cross-entropy vanishes monotonically as the true-class margin grows
    margins = []
    for m in (1.0, 2.0, 4.0, 8.0, 16.0):
        logits = np.zeros(4)
        logits[2] = m
        z = logits - logits.max()
        margins.append(float(np.log(np.exp(z).sum()) - z[2]))
    assert all(b < a for a, b in zip(margins, margins[1:]))
    assert margins[-1] < 1e-6


def test_gated_gradient_decomposes(two_class_cfg):
    corpus = generate_corpus(two_class_cfg, 2)
    cfg = TrainConfig(w=16, stride=9, encoder_hidden=(4,), head_hidden=(4,))
    ds = build_window_dataset(corpus, cfg)
    # need boundary windows in the batch for the gates to matter
    assert ds.mask[:, 2].any() and not ds.mask[:, 2].all()
    spec = cfg.model_spec(corpus[0].n_joints, corpus[0].num_classes)
    params = init_params(spec, seed=1, dtype=np.float64)
    idx = np.arange(min(64, len(ds)))
    views, labels, mask = ds.batch(idx)
    outs, cache = forward_batch(params, views, heads=cfg.heads)
    total, per_task, caches, coeffs = gated_batch_loss(outs, labels, mask, cfg)

    combined = backward_batch(params, cache,
                              task_losses_backward(caches, coeffs))
    pieces = None
    for head in cfg.heads:
        solo = backward_batch(params, cache,
                              task_losses_backward(caches, {head: coeffs[head]}))
        if pieces is None:
            pieces = {k: v.copy() for k, v in solo.items()}
        else:
            for k in pieces:
                pieces[k] += solo[k]
    for name in combined:
        scale = max(np.abs(combined[name]).max(), 1e-12)
        assert np.abs(combined[name] - pieces[name]).max() / scale < 1e-10, name

    # a window whose c(3)=0 contributes exactly zero start-head gradient
    gone = {h: np.where(mask[:, 2], 0.0, 0.0) if h == "start" else coeffs[h]
            for h in coeffs}
    gone["start"] = np.zeros(len(idx))
    z = backward_batch(params, cache, task_losses_backward(caches, gone))
    for name in z:
        if name.startswith("head.start."):
            assert not z[name].any()


def test_policy_exact_is_identity():
    rng = sub_rng(0, "t")
    ds = fake_dataset(100, rng)
    assert apply_policy_dataset(ds, "exact", rng) is ds
    seq = make_sequence(n_frames=64, n_joints=5, annotations=[ann(1, 20, 40)])
    s = make_sample(seq, 30, 16)
    assert apply_on_off_policy(s, "exact", rng) is s
    with pytest.raises(ConfigError):
        apply_policy_dataset(ds, "typo", rng)


def test_index_error_randomizes_present_indices_only():
    rng = sub_rng(1, "t")
    ds = fake_dataset(10000, rng)
    out = apply_policy_dataset(ds, "index_error", sub_rng(2, "p"))
    assert np.array_equal(out.start_idx >= 0, ds.start_idx >= 0)
    assert np.array_equal(out.end_idx >= 0, ds.end_idx >= 0)
    drawn = out.start_idx[out.start_idx >= 0]
    counts = np.bincount(drawn, minlength=16)
    assert scipy.stats.chisquare(counts).pvalue > 0.01
    assert drawn.min() >= 0 and drawn.max() <= 15

    seq = make_sequence(n_frames=64, n_joints=5, annotations=[ann(1, 25, 40)])
    s = make_sample(seq, 30, 16)
    assert s.labels.start_index is not None and s.labels.end_index is None
    out_s = apply_on_off_policy(s, "index_error", sub_rng(3, "p"))
    assert out_s.labels.end_index is None
    assert 0 <= out_s.labels.start_index <= 15
    assert out_s.mask == s.mask


def test_window_error_redraws_gates():
    rng = sub_rng(4, "t")
    ds = fake_dataset(10000, rng)
    out = apply_policy_dataset(ds, "window_error", sub_rng(5, "p"), p=0.5)
    for arr in (out.start_idx, out.end_idx):
        rate = float((arr >= 0).mean())
        assert 0.47 <= rate <= 0.53
    # a gate that stays on keeps its true index; fresh ones get a valid draw
    kept = (ds.start_idx >= 0) & (out.start_idx >= 0)
    assert np.array_equal(out.start_idx[kept], ds.start_idx[kept])
    fresh = (ds.start_idx < 0) & (out.start_idx >= 0)
    assert fresh.any()
    assert out.start_idx[fresh].min() >= 0 and out.start_idx[fresh].max() <= 15

    none = apply_policy_dataset(ds, "window_error", sub_rng(6, "p"), p=0.0)
    assert (none.start_idx == -1).all() and (none.end_idx == -1).all()
    full = apply_policy_dataset(ds, "window_error", sub_rng(7, "p"), p=1.0)
    assert (full.start_idx >= 0).all() and (full.end_idx >= 0).all()


def test_separable_two_class_training(two_class_cfg):
    corpus = generate_corpus(two_class_cfg, 20)
    cfg = TrainConfig(epochs=18, stride=2, batch_size=128, seed=0,
                      val_fraction=0.0)
    res = train(corpus, cfg)
    assert res.log[-1]["window_accuracy"] > 0.9
    losses = [row["loss"] for row in res.log[:10]]
    rises = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
    assert rises <= 2


def test_head_set_fg_leaves_other_heads_untouched(two_class_cfg):
    corpus = generate_corpus(two_class_cfg, 3)
    cfg = TrainConfig(epochs=2, stride=6, batch_size=64, seed=2,
                      head_set="FG", val_fraction=0.0)
    res = train(corpus, cfg)
    spec = cfg.model_spec(corpus[0].n_joints, corpus[0].num_classes)
    virgin = init_params(spec, seed=cfg.seed)
    for name in res.params.arrays:
        same = np.array_equal(res.params.arrays[name], virgin.arrays[name])
        if name.startswith(("head.sdn.", "head.start.", "head.end.")):
            assert same, name
        elif name.startswith("enc.") or name.startswith("head.fine."):
            assert not same, name
    assert HEAD_SETS["FG"] == ("fine",)
    names = trainable_names(spec, ("fine",))
    assert all(not n.startswith(("head.sdn.", "head.start.", "head.end."))
               for n in names)
    assert any(n.startswith("enc.") for n in names)


def test_zero_learning_rate_is_identity(two_class_cfg):
    corpus = generate_corpus(two_class_cfg, 2)
    cfg = TrainConfig(epochs=2, stride=6, batch_size=64, seed=3, lr=0.0,
                      val_fraction=0.0)
    res = train(corpus, cfg)
    virgin = init_params(cfg.model_spec(corpus[0].n_joints,
                                        corpus[0].num_classes), seed=3)
    for name in res.params.arrays:
        assert np.array_equal(res.params.arrays[name], virgin.arrays[name])


def test_training_is_bitwise_reproducible(two_class_cfg, tmp_path):
    corpus = generate_corpus(two_class_cfg, 4)
    cfg = TrainConfig(epochs=2, stride=4, batch_size=64, seed=5)
    a = train(corpus, cfg, out_dir=tmp_path / "a")
    b = train(corpus, cfg, out_dir=tmp_path / "b")
    for name in a.params.arrays:
        assert np.array_equal(a.params.arrays[name], b.params.arrays[name])
    assert (tmp_path / "a" / "checkpoint_last.ckpt").read_bytes() == \
        (tmp_path / "b" / "checkpoint_last.ckpt").read_bytes()

    with open(tmp_path / "a" / "train_log.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == cfg.epochs
    assert {"epoch", "loss", "loss_sdn", "loss_fine", "loss_start",
            "loss_end", "window_accuracy"} <= set(rows[0])
    assert float(rows[0]["loss"]) == pytest.approx(a.log[0]["loss"])
    assert (tmp_path / "a" / "checkpoint_best.ckpt").exists()
    assert TrainConfig.from_yaml(tmp_path / "a" / "train_config.yaml") == cfg


def test_adafactor_descends_and_clips():
    from gespot.optim import Adafactor
    rng = np.random.default_rng(0)
    x = {"w": rng.standard_normal((8, 6)).astype(np.float32),
         "b": rng.standard_normal(8).astype(np.float32)}
    opt = Adafactor(lr=0.05)
    def f():
        return 0.5 * sum(float(np.square(v).sum()) for v in x.values())
    before = f()
    for _ in range(60):
        prev = {k: v.copy() for k, v in x.items()}
        opt.step(x, {k: v.astype(np.float64) for k, v in x.items()})
        for k in x:
            step_rms = np.sqrt(np.mean(np.square(x[k] - prev[k])))
            assert step_rms <= opt.lr * 1.01  # clip keeps update RMS <= lr
    assert f() < 0.05 * before


def test_adam_matches_reference():
    from gespot.optim import Adam, make_optimizer
    rng = np.random.default_rng(1)
    x = {"w": rng.standard_normal((4, 3))}
    grads = [rng.standard_normal((4, 3)) for _ in range(5)]
    opt = Adam(lr=0.01)
    mine = {k: v.copy() for k, v in x.items()}
    for g in grads:
        opt.step(mine, {"w": g})
    # straight-line reimplementation of the update rule
    ref = x["w"].copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(mine["w"], ref, atol=1e-12)
    with pytest.raises(ConfigError):
        make_optimizer("sgd")


def test_train_config_yaml_and_validation():
    cfg = TrainConfig(epochs=7, head_set="FG+SDN", loss_weights={"fine": 2.0},
                      lr=0.01, encoder_hidden=(8, 8))
    back = TrainConfig.from_yaml(cfg.to_yaml(), is_text=True)
    assert back == cfg
    for bad in (dict(w=9), dict(epochs=0), dict(head_set="FG+XX"),
                dict(on_off_policy="noisy"), dict(policy_p=1.5),
                dict(val_fraction=1.0), dict(loss_weights={"fine": -1.0}),
                dict(optimizer="sgd"), dict(stride=0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()
