"""Window dataset construction and the gated multi-task training loop.

Windows are cut from annotated sequences at a fixed stride and labeled by
overlap. Each window carries a 4-bit task mask; the aggregate objective is

    loss = sum_k weight_k * c(k) * F_k

where c(1)=c(2)=1 (the two classifiers always train), c(3)/c(4) gate the
start/end regressors on whether the window actually contains a boundary,
F_1/F_2 are cross-entropies and F_3/F_4 mean-squared errors on normalized
indices. Heads outside the configured head set are neither run forward nor
updated, so their parameters stay at initialization bitwise.

Boundary-supervision corruption policies reproduce the robustness study:
"index_error" keeps the gates but randomizes present indices,
"window_error" re-draws each gate as Bernoulli(p) and gives spuriously
activated gates a random index.
"""

import csv
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError, SequenceTooShortError
from .features import (FeatureConfig, SequenceFeatures, TaskLabels,
                       WindowSample, normalize_index, window_labels)
from .model import (ModelParams, ModelSpec, EncoderSpec, HeadSpec,
                    backward_batch, forward_batch, init_params, param_shapes,
                    save_checkpoint, task_losses, task_losses_backward)
from .optim import make_optimizer
from .util import sub_rng, write_text_atomic

HEAD_SETS = {
    "FG": ("fine",),
    "FG+GS/GE": ("fine", "start", "end"),
    "FG+SDN": ("sdn", "fine"),
    "FG+SDN+GC": ("sdn", "fine", "gc"),
    "full": ("sdn", "fine", "start", "end"),
}

POLICIES = ("exact", "window_error", "index_error")


@dataclass
class TrainConfig:
    w: int = 16
    overlap_threshold: float = 0.5
    stride: int = 1
    batch_size: int = 256
    epochs: int = 100
    lr: float = None  # None -> optimizer default
    optimizer: str = "adafactor"
    loss_weights: dict = field(default_factory=dict)  # head -> weight, default 1
    head_set: str = "full"
    on_off_policy: str = "exact"
    policy_p: float = 0.5
    seed: int = 0
    val_fraction: float = 0.1
    motion_mode: str = "per_axis"
    scale: float = 1.0
    encoder_hidden: tuple = (16, 16)
    head_hidden: tuple = (16, 16)
    kernel: int = 3

    def validate(self):
        if self.w < 4 or self.w % 2 != 0:
            raise ConfigError(f"W must be even and >= 4, got {self.w}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.stride < 1 or self.batch_size < 1:
            raise ConfigError("stride and batch_size must be >= 1")
        if self.head_set not in HEAD_SETS:
            raise ConfigError(
                f"head_set must be one of {tuple(HEAD_SETS)}, got {self.head_set!r}")
        if self.on_off_policy not in POLICIES:
            raise ConfigError(f"on_off_policy must be one of {POLICIES}")
        if not (0.0 <= self.policy_p <= 1.0):
            raise ConfigError("policy_p must be in [0, 1]")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError("val_fraction must be in [0, 1)")
        if any(w < 0 for w in self.loss_weights.values()):
            raise ConfigError("loss weights must be >= 0")
        if self.optimizer not in ("adafactor", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        return self

    @property
    def heads(self):
        return HEAD_SETS[self.head_set]

    def weight(self, head):
        return float(self.loss_weights.get(head, 1.0))

    def feature_config(self):
        return FeatureConfig(w=self.w, scale=self.scale,
                             motion_mode=self.motion_mode,
                             overlap_threshold=self.overlap_threshold)

    def model_spec(self, n_joints, num_classes):
        return ModelSpec(
            w=self.w, n_joints=n_joints, num_classes=num_classes,
            motion_mode=self.motion_mode,
            encoder=EncoderSpec(hidden=tuple(self.encoder_hidden),
                                kernel=self.kernel),
            head=HeadSpec(hidden=tuple(self.head_hidden), kernel=self.kernel),
            with_gc="gc" in self.heads,
        ).validate()

    def to_yaml(self):
        d = {k: getattr(self, k) for k in (
            "w", "overlap_threshold", "stride", "batch_size", "epochs",
            "optimizer", "head_set", "on_off_policy", "policy_p", "seed",
            "val_fraction", "motion_mode", "scale", "kernel")}
        d["lr"] = self.lr
        d["loss_weights"] = dict(self.loss_weights)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["head_hidden"] = list(self.head_hidden)
        return yaml.safe_dump(d, sort_keys=False)

    @classmethod
    def from_yaml(cls, path_or_text, is_text=False):
        if is_text:
            data = yaml.safe_load(path_or_text)
        else:
            with open(path_or_text) as f:
                data = yaml.safe_load(f)
        if not isinstance(data, dict):
            raise ConfigError("train config must be a mapping")
        kwargs = {}
        for f_ in ("w", "stride", "batch_size", "epochs", "seed", "kernel"):
            if f_ in data:
                kwargs[f_] = int(data[f_])
        for f_ in ("overlap_threshold", "policy_p", "val_fraction", "scale"):
            if f_ in data:
                kwargs[f_] = float(data[f_])
        if data.get("lr") is not None:
            kwargs["lr"] = float(data["lr"])
        for f_ in ("optimizer", "head_set", "on_off_policy", "motion_mode"):
            if f_ in data:
                kwargs[f_] = str(data[f_])
        if "loss_weights" in data:
            kwargs["loss_weights"] = {str(k): float(v)
                                      for k, v in data["loss_weights"].items()}
        for f_ in ("encoder_hidden", "head_hidden"):
            if f_ in data:
                kwargs[f_] = tuple(int(x) for x in data[f_])
        return cls(**kwargs).validate()


@dataclass
class WindowDataset:
    """Stacked window views and labels for one corpus."""

    views: dict  # view name -> (N, C, T) float32
    sdn: np.ndarray  # (N,) int64
    fine: np.ndarray  # (N,) int64
    start_idx: np.ndarray  # (N,) int64, -1 when absent
    end_idx: np.ndarray  # (N,) int64, -1 when absent
    w: int
    num_classes: int

    def __len__(self):
        return self.sdn.shape[0]

    @property
    def mask(self):
        m = np.ones((len(self), 4), dtype=bool)
        m[:, 2] = self.start_idx >= 0
        m[:, 3] = self.end_idx >= 0
        return m

    @property
    def gc(self):
        return ((self.start_idx >= 0) | (self.end_idx >= 0)).astype(np.float64)

    def fine_counts(self):
        return np.bincount(self.fine, minlength=self.num_classes)

    def batch(self, idx):
        views = {k: v[idx] for k, v in self.views.items()}
        denom = self.w - 1
        start = np.where(self.start_idx[idx] >= 0, self.start_idx[idx], 0)
        end = np.where(self.end_idx[idx] >= 0, self.end_idx[idx], 0)
        labels = {
            "sdn": self.sdn[idx],
            "fine": self.fine[idx],
            "start": start / denom,
            "end": end / denom,
            "gc": self.gc[idx],
        }
        return views, labels, self.mask[idx]

    def summary(self):
        counts = self.fine_counts()
        return (f"{len(self)} windows, W={self.w}, "
                f"fine counts={counts.tolist()}, "
                f"starts={int((self.start_idx >= 0).sum())}, "
                f"ends={int((self.end_idx >= 0).sum())}")


def build_window_dataset(corpus, cfg):
    """Cut and label windows from every sequence at the configured stride."""
    cfg.validate()
    if not corpus:
        raise ConfigError("empty corpus")
    fcfg = cfg.feature_config()
    num_classes = corpus[0].num_classes
    views_acc = {"jcd": [], "m_slow": [], "m_fast": []}
    sdn, fine, s_idx, e_idx = [], [], [], []
    for seq in corpus:
        if len(seq) < cfg.w:
            raise SequenceTooShortError(
                f"{seq.source_id or 'sequence'}: {len(seq)} frames < W={cfg.w}")
        feats = SequenceFeatures(seq, fcfg)
        for t in range(cfg.w - 1, len(seq), cfg.stride):
            vs = feats.views(t)
            views_acc["jcd"].append(vs.jcd)
            views_acc["m_slow"].append(vs.m_slow)
            views_acc["m_fast"].append(vs.m_fast)
            lab = window_labels(seq, t, cfg.w, cfg.overlap_threshold)
            sdn.append(lab.sdn)
            fine.append(lab.fine)
            s_idx.append(-1 if lab.start_index is None else lab.start_index)
            e_idx.append(-1 if lab.end_index is None else lab.end_index)
    views = {k: np.stack(v).astype(np.float32) for k, v in views_acc.items()}
    return WindowDataset(
        views=views,
        sdn=np.asarray(sdn, dtype=np.int64),
        fine=np.asarray(fine, dtype=np.int64),
        start_idx=np.asarray(s_idx, dtype=np.int64),
        end_idx=np.asarray(e_idx, dtype=np.int64),
        w=cfg.w,
        num_classes=num_classes,
    )


# ---------------------------------------------------------------------------
# boundary-supervision corruption

def apply_on_off_policy(sample, policy, rng, p=0.5, w=None):
    """Corrupt one WindowSample's boundary supervision; exact is identity."""
    if policy == "exact":
        return sample
    w = w or sample.views.w
    lab = sample.labels
    if policy == "index_error":
        start = lab.start_index if lab.start_index is None else int(rng.integers(w))
        end = lab.end_index if lab.end_index is None else int(rng.integers(w))
    elif policy == "window_error":
        on3 = rng.random() < p
        on4 = rng.random() < p
        start = (lab.start_index if lab.start_index is not None
                 else int(rng.integers(w))) if on3 else None
        end = (lab.end_index if lab.end_index is not None
               else int(rng.integers(w))) if on4 else None
    else:
        raise ConfigError(f"unknown on_off policy {policy!r}")
    labels = TaskLabels(sdn=lab.sdn, fine=lab.fine, start_index=start,
                        end_index=end).validate(w=w)
    return WindowSample(views=sample.views, labels=labels,
                        mask=(True, True, start is not None,
                              end is not None)).validate()


def apply_policy_dataset(ds, policy, rng, p=0.5):
    """Vectorized policy over a whole dataset; returns a new dataset."""
    if policy == "exact":
        return ds
    n = len(ds)
    start = ds.start_idx.copy()
    end = ds.end_idx.copy()
    if policy == "index_error":
        has = start >= 0
        start[has] = rng.integers(ds.w, size=int(has.sum()))
        has = end >= 0
        end[has] = rng.integers(ds.w, size=int(has.sum()))
    elif policy == "window_error":
        for arr in (start, end):
            on = rng.random(n) < p
            fresh = on & (arr < 0)
            arr[fresh] = rng.integers(ds.w, size=int(fresh.sum()))
            arr[~on] = -1
    else:
        raise ConfigError(f"unknown on_off policy {policy!r}")
    return replace(ds, start_idx=start, end_idx=end)


# ---------------------------------------------------------------------------
# losses

def gated_batch_loss(outs, labels, mask, cfg):
    """Masked aggregate loss over a batch.

    Returns (total, per-task mean over active samples, caches, coeffs).
    Total is the batch mean of the per-window gated sum, so the gradient
    decomposes exactly into the active tasks' isolated gradients.
    """
    b = mask.shape[0]
    gates = {"sdn": mask[:, 0], "fine": mask[:, 1],
             "start": mask[:, 2], "end": mask[:, 3]}
    losses, caches = task_losses(outs, labels)
    total = 0.0
    coeffs = {}
    per_task = {}
    for head, l in losses.items():
        gate = gates.get(head, np.ones(b, dtype=bool)).astype(l.dtype)
        coeff = cfg.weight(head) * gate / b
        coeffs[head] = coeff
        total += float(np.dot(coeff, l))
        active = gate.sum()
        per_task[head] = float(np.dot(gate, l) / active) if active else 0.0
    return total, per_task, caches, coeffs


def loss(output, labels, mask, weights=None, w=None):
    """Gated loss of a single window from a ForwardOutput.

    Returns (total, per-task components); components appear only for heads
    that were computed and gated on.
    """
    if w is None:
        w = output.g_t.shape[0] * 2
    weights = weights or {}
    c1, c2, c3, c4 = (bool(x) for x in mask)
    comps = {}
    if output.sdn_logits is not None and c1:
        z = output.sdn_logits - output.sdn_logits.max()
        comps["sdn"] = float(np.log(np.exp(z).sum()) - z[labels.sdn])
    if output.fine_logits is not None and c2:
        z = output.fine_logits - output.fine_logits.max()
        comps["fine"] = float(np.log(np.exp(z).sum()) - z[labels.fine])
    if output.start_pred is not None and c3:
        comps["start"] = float(
            (output.start_pred - normalize_index(labels.start_index, w)) ** 2)
    if output.end_pred is not None and c4:
        comps["end"] = float(
            (output.end_pred - normalize_index(labels.end_index, w)) ** 2)
    total = sum(weights.get(k, 1.0) * v for k, v in comps.items())
    return total, comps


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    params: ModelParams  # final epoch
    best_params: ModelParams  # highest validation window accuracy
    log: list  # per-epoch dict rows
    best_epoch: int
    feature: FeatureConfig


def _fine_accuracy(params, ds, batch_size):
    if len(ds) == 0:
        return 0.0
    hits = 0
    for lo in range(0, len(ds), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(ds)))
        views, labels, _ = ds.batch(idx)
        outs, _ = forward_batch(params, views, heads=("fine",))
        hits += int((outs["fine"].argmax(axis=1) == labels["fine"]).sum())
    return hits / len(ds)


def trainable_names(spec, heads):
    """Parameter groups that receive updates for the configured head set."""
    names = []
    for name in param_shapes(spec):
        if name.startswith("head.") and name.split(".")[1] not in heads:
            continue
        names.append(name)
    return names


def train(corpus, cfg, out_dir=None, progress=None):
    """Fit the network on annotated sequences; deterministic in cfg.seed."""
    cfg.validate()
    if not corpus:
        raise ConfigError("empty corpus")
    n_joints = corpus[0].n_joints
    num_classes = corpus[0].num_classes
    for seq in corpus:
        if seq.n_joints != n_joints or seq.num_classes != num_classes:
            raise ConfigError("corpus sequences disagree on J or class count")

    n_val = int(round(cfg.val_fraction * len(corpus))) if len(corpus) > 1 else 0
    train_seqs = corpus[:len(corpus) - n_val] if n_val else corpus
    val_seqs = corpus[len(corpus) - n_val:] if n_val else []

    ds = build_window_dataset(train_seqs, cfg)
    ds = apply_policy_dataset(ds, cfg.on_off_policy,
                              sub_rng(cfg.seed, "policy"), cfg.policy_p)
    val_ds = build_window_dataset(val_seqs, cfg) if val_seqs else None

    spec = cfg.model_spec(n_joints, num_classes)
    params = init_params(spec, seed=cfg.seed)
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    updatable = set(trainable_names(spec, cfg.heads))
    rng = sub_rng(cfg.seed, "epochs")

    log = []
    best_acc = -1.0
    best_epoch = -1
    best_params = params.copy()
    loss_heads = [h for h in cfg.heads]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(ds))
        sums = {h: 0.0 for h in loss_heads}
        gate_counts = {h: 0 for h in loss_heads}
        total_sum = 0.0
        for lo in range(0, len(ds), cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            views, labels, mask = ds.batch(idx)
            outs, cache = forward_batch(params, views, heads=loss_heads)
            total, _, caches, coeffs = gated_batch_loss(outs, labels, mask, cfg)
            out_grads = task_losses_backward(caches, coeffs)
            grads = backward_batch(params, cache, out_grads)
            opt.step(params.arrays,
                     {k: g for k, g in grads.items() if k in updatable})
            total_sum += total * len(idx)
            ls, _ = task_losses(outs, labels)
            gates = {"sdn": mask[:, 0], "fine": mask[:, 1],
                     "start": mask[:, 2], "end": mask[:, 3]}
            for h in loss_heads:
                gate = gates.get(h, np.ones(len(idx), dtype=bool))
                sums[h] += float(ls[h][gate].sum())
                gate_counts[h] += int(gate.sum())
        eval_ds = val_ds if val_ds is not None else ds
        acc = _fine_accuracy(params, eval_ds, cfg.batch_size)
        row = {"epoch": epoch, "loss": total_sum / len(ds)}
        for h in ("sdn", "fine", "start", "end", "gc"):
            if h in loss_heads:
                row[f"loss_{h}"] = sums[h] / max(gate_counts[h], 1)
        row["window_accuracy"] = acc
        log.append(row)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_params = params.copy()
        if progress:
            progress(row)

    result = TrainResult(params=params, best_params=best_params, log=log,
                         best_epoch=best_epoch, feature=cfg.feature_config())
    if out_dir is not None:
        save_run(result, cfg, out_dir)
    return result


def save_run(result, cfg, out_dir):
    """checkpoint_last / checkpoint_best / train_log.csv / train_config.yaml."""
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(result.params, os.path.join(out_dir, "checkpoint_last.ckpt"),
                    feature=result.feature,
                    extra={"epoch": len(result.log) - 1})
    save_checkpoint(result.best_params,
                    os.path.join(out_dir, "checkpoint_best.ckpt"),
                    feature=result.feature,
                    extra={"epoch": result.best_epoch,
                           "window_accuracy": result.log[result.best_epoch]
                           ["window_accuracy"] if result.log else None})
    buf = io.StringIO()
    cols = list(result.log[0].keys()) if result.log else ["epoch", "loss"]
    writer = csv.DictWriter(buf, fieldnames=cols)
    writer.writeheader()
    for row in result.log:
        writer.writerow(row)
    write_text_atomic(os.path.join(out_dir, "train_log.csv"), buf.getvalue())
    write_text_atomic(os.path.join(out_dir, "train_config.yaml"), cfg.to_yaml())
