"""Multi-view multi-head recognition network.

Three independent encoders (one per view) each map their input to an
(embed_channels, W/2) embedding; the embeddings concatenate channel-wise
into g_t of shape (W/2, 24), on which four small convolutional heads
operate: a 3-way static/dynamic/none classifier, the L-way fine-grained
classifier, and two scalar regressors for the window-local gesture start
and end indices. An optional binary head flags windows containing either
boundary.

The backward pass takes a per-sample, per-task coefficient matrix; a task
whose coefficients are all zero is skipped outright, so masked-off heads
produce exactly-zero parameter gradients and contribute exactly zero to the
encoder gradients rather than a rounded small number.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, SpecError
from .features import MOTION_MODES, FeatureConfig, n_pairs
from .layers import (adaptive_avg_pool1d, adaptive_avg_pool1d_backward,
                     conv1d, conv1d_backward, dense, dense_backward,
                     global_avg_pool, global_avg_pool_backward, mse,
                     mse_backward, relu, relu_backward,
                     sigmoid_cross_entropy, sigmoid_cross_entropy_backward,
                     softmax_cross_entropy, softmax_cross_entropy_backward)
from .util import sub_rng, write_bytes_atomic

VIEW_NAMES = ("jcd", "m_slow", "m_fast")
EMBED_CHANNELS = 8
HEAD_ARITY = {"sdn": 3, "start": 1, "end": 1, "gc": 1}  # fine is L-way

CHECKPOINT_MAGIC = b"GESPOTCK"


@dataclass
class EncoderSpec:
    """One view encoder: conv stack, pool to W/2, linear channel projection."""

    hidden: tuple = (16, 16)
    kernel: int = 3
    embed_channels: int = EMBED_CHANNELS

    def validate(self):
        if not self.hidden:
            raise SpecError("encoder needs at least one conv layer")
        if any(h < 1 for h in self.hidden):
            raise SpecError(f"bad encoder widths {self.hidden}")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise SpecError(f"encoder kernel must be odd >= 1, got {self.kernel}")
        if self.embed_channels != EMBED_CHANNELS:
            raise SpecError(
                f"per-view embedding must have {EMBED_CHANNELS} channels, "
                f"got {self.embed_channels}"
            )
        return self


@dataclass
class HeadSpec:
    """Shared trunk shape for the task heads: convs, global mean, one FC."""

    hidden: tuple = (16, 16)
    kernel: int = 3

    def validate(self):
        if not self.hidden:
            raise SpecError("head needs at least one conv layer")
        if any(h < 1 for h in self.hidden):
            raise SpecError(f"bad head widths {self.hidden}")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise SpecError(f"head kernel must be odd >= 1, got {self.kernel}")
        return self


@dataclass
class ModelSpec:
    w: int = 16
    n_joints: int = 26
    num_classes: int = 2
    motion_mode: str = "per_axis"
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    head: HeadSpec = field(default_factory=HeadSpec)
    with_gc: bool = False

    def validate(self):
        if self.w < 4 or self.w % 2 != 0:
            raise SpecError(f"W must be even and >= 4, got {self.w}")
        if self.n_joints < 2:
            raise SpecError(f"need >= 2 joints, got {self.n_joints}")
        if self.num_classes < 2:
            raise SpecError(f"need >= 2 classes, got {self.num_classes}")
        if self.motion_mode not in MOTION_MODES:
            raise SpecError(f"motion_mode must be one of {MOTION_MODES}")
        self.encoder.validate()
        self.head.validate()
        return self

    @property
    def heads(self):
        base = ("sdn", "fine", "start", "end")
        return base + ("gc",) if self.with_gc else base

    def head_arity(self, name):
        return self.num_classes if name == "fine" else HEAD_ARITY[name]

    @property
    def embed_len(self):
        return self.w // 2

    @property
    def g_channels(self):
        return EMBED_CHANNELS * len(VIEW_NAMES)

    def view_shapes(self):
        """Expected (channels, length) of each input view."""
        motion_c = self.n_joints * (3 if self.motion_mode == "per_axis" else 1)
        return {
            "jcd": (n_pairs(self.n_joints), self.w),
            "m_slow": (motion_c, self.w - 1),
            "m_fast": (motion_c, self.w // 2 - 1),
        }

    def to_dict(self):
        return {
            "w": self.w, "n_joints": self.n_joints,
            "num_classes": self.num_classes, "motion_mode": self.motion_mode,
            "encoder": {"hidden": list(self.encoder.hidden),
                        "kernel": self.encoder.kernel,
                        "embed_channels": self.encoder.embed_channels},
            "head": {"hidden": list(self.head.hidden),
                     "kernel": self.head.kernel},
            "with_gc": self.with_gc,
        }

    @classmethod
    def from_dict(cls, d):
        enc = d.get("encoder", {})
        hd = d.get("head", {})
        return cls(
            w=int(d["w"]), n_joints=int(d["n_joints"]),
            num_classes=int(d["num_classes"]),
            motion_mode=d.get("motion_mode", "per_axis"),
            encoder=EncoderSpec(
                hidden=tuple(enc.get("hidden", (16, 16))),
                kernel=int(enc.get("kernel", 3)),
                embed_channels=int(enc.get("embed_channels", EMBED_CHANNELS))),
            head=HeadSpec(hidden=tuple(hd.get("hidden", (16, 16))),
                          kernel=int(hd.get("kernel", 3))),
            with_gc=bool(d.get("with_gc", False)),
        ).validate()


@dataclass
class ModelParams:
    """Named parameter arrays plus the spec that shaped them."""

    spec: ModelSpec
    arrays: dict  # name -> ndarray, deterministic insertion order

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def param_count(self):
        return sum(int(a.size) for a in self.arrays.values())

    def astype(self, dtype):
        return ModelParams(self.spec,
                           {k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self):
        return ModelParams(self.spec,
                           {k: v.copy() for k, v in self.arrays.items()})

    def validate(self):
        self.spec.validate()
        expect = param_shapes(self.spec)
        got = {k: tuple(v.shape) for k, v in self.arrays.items()}
        if got != expect:
            missing = set(expect) - set(got)
            extra = set(got) - set(expect)
            bad = {k for k in set(got) & set(expect) if got[k] != expect[k]}
            raise SpecError(
                f"parameter set mismatch: missing={sorted(missing)} "
                f"extra={sorted(extra)} wrong_shape={sorted(bad)}"
            )
        for k, v in self.arrays.items():
            if not np.isfinite(v).all():
                raise SpecError(f"non-finite values in parameter {k}")
        return self


def param_shapes(spec):
    """Deterministic name -> shape map for every parameter group."""
    spec.validate()
    shapes = {}
    views = spec.view_shapes()
    k = spec.encoder.kernel
    for view in VIEW_NAMES:
        cin = views[view][0]
        for i, h in enumerate(spec.encoder.hidden):
            shapes[f"enc.{view}.c{i + 1}.w"] = (h, cin, k)
            shapes[f"enc.{view}.c{i + 1}.b"] = (h,)
            cin = h
        shapes[f"enc.{view}.proj.w"] = (spec.encoder.embed_channels, cin, 1)
        shapes[f"enc.{view}.proj.b"] = (spec.encoder.embed_channels,)
    hk = spec.head.kernel
    for head in spec.heads:
        cin = spec.g_channels
        for i, h in enumerate(spec.head.hidden):
            shapes[f"head.{head}.c{i + 1}.w"] = (h, cin, hk)
            shapes[f"head.{head}.c{i + 1}.b"] = (h,)
            cin = h
        shapes[f"head.{head}.fc.w"] = (spec.head_arity(head), cin)
        shapes[f"head.{head}.fc.b"] = (spec.head_arity(head),)
    return shapes


def init_params(spec, seed=0, dtype=np.float32):
    """Fan-in-scaled Gaussian weights, zero biases; deterministic in seed."""
    spec.validate()
    rng = sub_rng(seed, "init")
    arrays = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        if len(shape) == 3:
            fan_in = shape[1] * shape[2]
            gain = 1.0 if ".proj." in name else 2.0  # ReLU follows the stack convs
        else:
            fan_in = shape[1]
            gain = 1.0
        std = np.sqrt(gain / fan_in)
        arrays[name] = (rng.standard_normal(shape) * std).astype(dtype)
    return ModelParams(spec, arrays).validate()


@dataclass
class ForwardOutput:
    """Single-window outputs; g_t rows are time steps, columns channels."""

    g_t: np.ndarray  # (W/2, 24)
    sdn_logits: np.ndarray  # (3,)
    fine_logits: np.ndarray  # (L,)
    start_pred: float
    end_pred: float
    gc_logit: float = None


def _check_views(spec, views):
    expect = spec.view_shapes()
    for name in VIEW_NAMES:
        if name not in views:
            raise ShapeError(f"missing view {name}")
        got = views[name].shape
        if got[1:] != expect[name]:
            raise ShapeError(
                f"view {name}: expected (B, {expect[name][0]}, "
                f"{expect[name][1]}), got {got}"
            )


def _encoder_forward(arrays, spec, view, x):
    caches = []
    n = len(spec.encoder.hidden)
    for i in range(n):
        x, c = conv1d(x, arrays[f"enc.{view}.c{i + 1}.w"],
                      arrays[f"enc.{view}.c{i + 1}.b"])
        caches.append(c)
        x, m = relu(x)
        caches.append(m)
    x, c = adaptive_avg_pool1d(x, spec.embed_len)
    caches.append(c)
    x, c = conv1d(x, arrays[f"enc.{view}.proj.w"], arrays[f"enc.{view}.proj.b"])
    caches.append(c)
    return x, caches


def _encoder_backward(arrays, spec, view, grad, caches, grads):
    it = list(caches)
    grad, dw, db = conv1d_backward(grad, it.pop())
    grads[f"enc.{view}.proj.w"] = dw
    grads[f"enc.{view}.proj.b"] = db
    grad = adaptive_avg_pool1d_backward(grad, it.pop())
    for i in range(len(spec.encoder.hidden), 0, -1):
        grad = relu_backward(grad, it.pop())
        grad, dw, db = conv1d_backward(grad, it.pop())
        grads[f"enc.{view}.c{i}.w"] = dw
        grads[f"enc.{view}.c{i}.b"] = db
    return grad


def _head_forward(arrays, spec, head, g):
    caches = []
    x = g
    for i in range(len(spec.head.hidden)):
        x, c = conv1d(x, arrays[f"head.{head}.c{i + 1}.w"],
                      arrays[f"head.{head}.c{i + 1}.b"])
        caches.append(c)
        x, m = relu(x)
        caches.append(m)
    x, c = global_avg_pool(x)
    caches.append(c)
    x, c = dense(x, arrays[f"head.{head}.fc.w"], arrays[f"head.{head}.fc.b"])
    caches.append(c)
    return x, caches


def _head_backward(arrays, spec, head, grad, caches, grads):
    it = list(caches)
    grad, dw, db = dense_backward(grad, it.pop())
    grads[f"head.{head}.fc.w"] = dw
    grads[f"head.{head}.fc.b"] = db
    grad = global_avg_pool_backward(grad, it.pop())
    for i in range(len(spec.head.hidden), 0, -1):
        grad = relu_backward(grad, it.pop())
        grad, dw, db = conv1d_backward(grad, it.pop())
        grads[f"head.{head}.c{i}.w"] = dw
        grads[f"head.{head}.c{i}.b"] = db
    return grad


def forward_batch(params, views, heads=None):
    """Run the network on stacked views.

    views: dict of (B, channels, length) arrays keyed by view name.
    heads: iterable of head names to evaluate (default: all in the spec).
    Returns (outputs dict head -> (B, arity), cache for backward).
    """
    spec = params.spec
    _check_views(spec, views)
    heads = tuple(heads) if heads is not None else spec.heads
    for h in heads:
        if h not in spec.heads:
            raise SpecError(f"unknown head {h!r}")
    dtype = params.dtype
    embeds = {}
    enc_caches = {}
    for view in VIEW_NAMES:
        x = np.ascontiguousarray(views[view], dtype=dtype)
        embeds[view], enc_caches[view] = _encoder_forward(params.arrays, spec,
                                                          view, x)
    g = np.concatenate([embeds[v] for v in VIEW_NAMES], axis=1)
    outs = {}
    head_caches = {}
    for head in heads:
        outs[head], head_caches[head] = _head_forward(params.arrays, spec,
                                                      head, g)
    cache = {"g": g, "enc": enc_caches, "heads": head_caches,
             "batch": g.shape[0]}
    return outs, cache


def backward_batch(params, cache, out_grads, force_all=False):
    """Gradients of sum_b <out_grads, logits> w.r.t. every parameter.

    out_grads: dict head -> (B, arity) upstream gradients. Heads absent from
    the dict, or whose upstream gradient is entirely zero, are skipped unless
    force_all is set; skipped heads get freshly-zeroed parameter gradients
    and add nothing to the encoder gradient.
    """
    spec = params.spec
    shapes = param_shapes(spec)
    grads = {}
    dg = np.zeros_like(cache["g"])
    for head in spec.heads:
        g_up = out_grads.get(head)
        active = g_up is not None and (force_all or np.any(g_up))
        if active:
            if head not in cache["heads"]:
                raise SpecError(f"head {head!r} was not run forward")
            dg += _head_backward(params.arrays, spec, head,
                                 np.ascontiguousarray(g_up, dtype=dg.dtype),
                                 cache["heads"][head], grads)
        else:
            for name, shape in shapes.items():
                if name.startswith(f"head.{head}."):
                    grads[name] = np.zeros(shape, dtype=params.dtype)
    c = EMBED_CHANNELS
    for i, view in enumerate(VIEW_NAMES):
        _encoder_backward(params.arrays, spec, view,
                          dg[:, i * c:(i + 1) * c, :], cache["enc"][view],
                          grads)
    return {name: grads[name] for name in shapes}


def forward(params, viewset, heads=None):
    """Single-window forward pass from a ViewSet."""
    views = {name: getattr(viewset, name)[None, :, :] for name in VIEW_NAMES}
    outs, cache = forward_batch(params, views, heads=heads)
    run = tuple(heads) if heads is not None else params.spec.heads
    g = cache["g"][0].T

    def out(h, flat=False):
        if h not in run:
            return None
        return float(outs[h][0, 0]) if flat else outs[h][0]
    return ForwardOutput(
        g_t=g,
        sdn_logits=out("sdn"),
        fine_logits=out("fine"),
        start_pred=out("start", flat=True),
        end_pred=out("end", flat=True),
        gc_logit=out("gc", flat=True) if params.spec.with_gc else None,
    )


def forward_fine(params, viewset):
    """Fine-grained logits only; the inference hot path."""
    views = {name: getattr(viewset, name)[None, :, :] for name in VIEW_NAMES}
    outs, _ = forward_batch(params, views, heads=("fine",))
    return outs["fine"][0]


# ---------------------------------------------------------------------------
# per-task losses

def task_losses(outs, labels):
    """Per-sample loss vectors for every computed head.

    labels: dict with integer vectors 'sdn', 'fine', float vectors 'start',
    'end' (normalized targets), and optionally 'gc' in {0, 1}.
    Returns (losses dict head -> (B,), cache).
    """
    losses = {}
    caches = {}
    for head, out in outs.items():
        if head in ("sdn", "fine"):
            l, c = softmax_cross_entropy(out, labels[head])
        elif head in ("start", "end"):
            l, c = mse(out[:, 0], labels[head])
        elif head == "gc":
            l, c = sigmoid_cross_entropy(out[:, 0], labels[head])
        else:
            raise SpecError(f"unknown head {head!r}")
        losses[head] = l
        caches[head] = c
    return losses, caches


def task_losses_backward(caches, coeffs):
    """Upstream logit gradients of sum_b coeff_b * loss_b per head.

    coeffs: dict head -> (B,) float coefficients (loss weight x gate / batch).
    """
    out_grads = {}
    for head, coeff in coeffs.items():
        c = caches[head]
        if head in ("sdn", "fine"):
            out_grads[head] = softmax_cross_entropy_backward(coeff, c)
        elif head in ("start", "end"):
            out_grads[head] = mse_backward(coeff, c)[:, None]
        elif head == "gc":
            out_grads[head] = sigmoid_cross_entropy_backward(coeff, c)[:, None]
        else:
            raise SpecError(f"unknown head {head!r}")
    return out_grads


# ---------------------------------------------------------------------------
# checkpoint format: magic, u64 header length, JSON header, raw LE float32

def save_checkpoint(params, path, feature=None, extra=None):
    """Write a self-describing checkpoint (spec + feature setup + weights)."""
    params.validate()
    feature = feature or FeatureConfig(w=params.spec.w,
                                       motion_mode=params.spec.motion_mode)
    entries = []
    offset = 0
    for name, arr in params.arrays.items():
        nbytes = arr.size * 4
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format": "gespot-checkpoint", "version": 1,
        "spec": params.spec.to_dict(),
        "feature": {"w": feature.w, "scale": feature.scale,
                    "motion_mode": feature.motion_mode,
                    "overlap_threshold": feature.overlap_threshold},
        "params": entries,
    }
    if extra:
        header["extra"] = extra
    hb = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(len(hb).to_bytes(8, "little"))
    buf.write(hb)
    for arr in params.arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    write_bytes_atomic(path, buf.getvalue())


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelParams, FeatureConfig, extra dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise SpecError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    hlen = int.from_bytes(blob[pos:pos + 8], "little")
    pos += 8
    try:
        header = json.loads(blob[pos:pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SpecError(f"{path}: corrupt checkpoint header: {e}") from None
    pos += hlen
    spec = ModelSpec.from_dict(header["spec"])
    arrays = {}
    for ent in header["params"]:
        start = pos + ent["offset"]
        raw = blob[start:start + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise SpecError(f"{path}: truncated checkpoint")
        arrays[ent["name"]] = np.frombuffer(raw, dtype="<f4").reshape(
            ent["shape"]).copy()
    fc = header.get("feature", {})
    feature = FeatureConfig(
        w=int(fc.get("w", spec.w)), scale=float(fc.get("scale", 1.0)),
        motion_mode=fc.get("motion_mode", spec.motion_mode),
        overlap_threshold=float(fc.get("overlap_threshold", 0.5)),
    ).validate()
    params = ModelParams(spec, arrays).validate()
    return params, feature, header.get("extra", {})
