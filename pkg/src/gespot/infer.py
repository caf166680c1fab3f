"""Online sliding-window inference.

Per incoming frame: materialize the W-frame window, compute the views, take
the fine-grained head's argmax as the preliminary label, then emit the
majority vote over the last W preliminary labels as the final label. A
detection opens when the final label leaves 0 and closes when it changes
again; spans are attributed by shifting emit frames back by W/2 (window
center), which is what makes the reported delay exactly W/2.

Nothing here looks ahead: outputs at frame t depend only on frames <= t,
and per-frame cost is independent of stream length.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, SequenceTooShortError, ShapeError,
                     SpecError)
from .features import FeatureConfig, ViewSet, jcd, m_fast, m_slow
from .model import forward_batch, forward_fine
from .pose import PoseFrame
from .util import sub_rng, write_text_atomic

ATTRIBUTIONS = ("center", "window_start", "emit_frame")


def attribution_shift(attribution, w):
    if attribution == "center":
        return w // 2
    if attribution == "window_start":
        return w - 1
    if attribution == "emit_frame":
        return 0
    raise ConfigError(f"unknown attribution {attribution!r}")


@dataclass
class DetectionEvent:
    """One recognized gesture occurrence, spans inclusive."""

    label: int
    pred_start: int
    pred_end: int
    first_emit: int  # last input frame consumed when the detection appeared

    def validate(self):
        if self.label == 0:
            raise ConfigError("detections carry gesture labels, not 0")
        if self.pred_start > self.pred_end:
            raise ConfigError(
                f"empty detection span [{self.pred_start}, {self.pred_end}]")
        return self

    @property
    def delay(self):
        return self.first_emit - self.pred_start


def vote_labels(prelim):
    """Mode of a label window; ties go to the most recently seen label."""
    arr = np.asarray(prelim)
    counts = {}
    for x in arr:
        counts[int(x)] = counts.get(int(x), 0) + 1
    best = max(counts.values())
    for x in arr[::-1]:
        if counts[int(x)] == best:
            return int(x)
    raise AssertionError("unreachable")


class StreamState:
    """Mutable per-stream state: frame/label ring buffers and the open event.

    Create via make_stream; advance via step. Buffers never exceed W.
    """

    def __init__(self, w, n_joints, num_classes, feature, attribution):
        self.w = w
        self.n_joints = n_joints
        self.num_classes = num_classes
        self.feature = feature
        self.attribution = attribution
        self.frames = np.zeros((w, n_joints, 3))
        self.prelim = np.zeros(w, dtype=np.int64)
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.frames_seen = 0
        self.prelim_seen = 0
        self.current_label = 0
        self.open_label = 0
        self.open_emit = -1
        self.last_emit = -1

    @property
    def ready(self):
        return self.frames_seen >= 2 * self.w - 1

    def window_positions(self):
        """Chronological (W, J, 3) copy of the ring buffer."""
        i = self.frames_seen % self.w
        return np.concatenate([self.frames[i:], self.frames[:i]], axis=0)


def make_stream(params, feature=None, attribution="center"):
    spec = params.spec
    feature = feature or FeatureConfig(w=spec.w, motion_mode=spec.motion_mode)
    feature.validate()
    if feature.w != spec.w:
        raise SpecError(f"feature W={feature.w} != model W={spec.w}")
    if feature.motion_mode != spec.motion_mode:
        raise SpecError("feature and model disagree on the motion-view variant")
    attribution_shift(attribution, spec.w)
    return StreamState(spec.w, spec.n_joints, spec.num_classes, feature,
                       attribution)


def step(state, frame, params):
    """Consume one frame; returns (state, final label or None, closed event).

    Final label is None until 2W-1 frames have been seen: W to fill the
    window plus W preliminary labels to vote over.
    """
    pos = frame.joints if isinstance(frame, PoseFrame) else np.asarray(frame)
    if pos.shape != (state.n_joints, 3):
        raise ShapeError(
            f"expected frame shape ({state.n_joints}, 3), got {pos.shape}")
    t = state.frames_seen
    state.frames[t % state.w] = pos
    state.frames_seen = t + 1

    if state.frames_seen < state.w:
        return state, None, None

    window = state.window_positions()
    views = ViewSet(
        jcd=jcd(window, state.feature.scale),
        m_slow=m_slow(window, state.feature.motion_mode, state.feature.scale),
        m_fast=m_fast(window, state.feature.motion_mode, state.feature.scale),
    )
    pre = int(np.argmax(forward_fine(params, views)))
    slot = state.prelim_seen % state.w
    if state.prelim_seen >= state.w:
        state.counts[state.prelim[slot]] -= 1
    state.prelim[slot] = pre
    state.counts[pre] += 1
    state.prelim_seen += 1

    if state.prelim_seen < state.w:
        return state, None, None

    # majority vote with most-recent tie-break over the last W preliminaries
    best = state.counts.max()
    label = None
    for back in range(state.w):
        cand = int(state.prelim[(state.prelim_seen - 1 - back) % state.w])
        if state.counts[cand] == best:
            label = cand
            break

    event = None
    if label != state.open_label:
        if state.open_label != 0:
            event = _close_event(state)
        if label != 0:
            state.open_label = label
            state.open_emit = t
    state.last_emit = t
    state.current_label = label
    return state, label, event


def _close_event(state, close_emit=None):
    shift = attribution_shift(state.attribution, state.w)
    close = state.last_emit if close_emit is None else close_emit
    start = max(state.open_emit - shift, 0)
    end = max(close - shift, start)
    ev = DetectionEvent(label=state.open_label, pred_start=start,
                        pred_end=end, first_emit=state.open_emit).validate()
    state.open_label = 0
    state.open_emit = -1
    return ev


def flush(state):
    """Close a detection left open at end of stream; returns it or None."""
    if state.open_label != 0:
        return _close_event(state, close_emit=state.last_emit)
    return None


def events_from_labels(labels, w, attribution="center", warmup_value=-1):
    """Pure conversion of a final-label track into detection events.

    labels: per-frame final labels, warmup frames marked warmup_value.
    The span of a run of label l over emit frames [a, b] becomes
    [a - shift, b - shift] clamped at 0.
    """
    shift = attribution_shift(attribution, w)
    events = []
    open_label = 0
    open_emit = -1
    last_emitted = -1
    for t, raw in enumerate(labels):
        lab = int(raw)
        if lab == warmup_value:
            continue
        if lab != open_label:
            if open_label != 0:
                start = max(open_emit - shift, 0)
                events.append(DetectionEvent(
                    label=open_label, pred_start=start,
                    pred_end=max(last_emitted - shift, start),
                    first_emit=open_emit).validate())
            open_label = lab if lab != 0 else 0
            open_emit = t if lab != 0 else -1
        last_emitted = t
    if open_label != 0:
        start = max(open_emit - shift, 0)
        events.append(DetectionEvent(
            label=open_label, pred_start=start,
            pred_end=max(last_emitted - shift, start),
            first_emit=open_emit).validate())
    return events


def run_offline(seq, params, w=None, feature=None, attribution="center"):
    """Feed a whole sequence through step; returns (events, label track).

    The label track has one entry per frame, -1 while warming up. This is
    by construction identical to online frame-by-frame processing.
    """
    _check_w(params, w)
    if len(seq) < 2 * params.spec.w - 1:
        raise SequenceTooShortError(
            f"need >= {2 * params.spec.w - 1} frames, got {len(seq)}")
    state = make_stream(params, feature, attribution)
    track = np.full(len(seq), -1, dtype=np.int64)
    events = []
    for t in range(len(seq)):
        state, label, ev = step(state, seq.positions[t], params)
        if label is not None:
            track[t] = label
        if ev is not None:
            events.append(ev)
    ev = flush(state)
    if ev is not None:
        events.append(ev)
    return events, track


def run_offline_batched(seq, params, w=None, feature=None,
                        attribution="center", batch_size=256):
    """Same outputs as run_offline, computed with batched forward passes.

    Used by evaluation pipelines; equivalence with the frame-by-frame fold
    is asserted in the test suite.
    """
    from .features import SequenceFeatures
    _check_w(params, w)
    spec = params.spec
    if len(seq) < 2 * spec.w - 1:
        raise SequenceTooShortError(
            f"need >= {2 * spec.w - 1} frames, got {len(seq)}")
    feature = feature or FeatureConfig(w=spec.w, motion_mode=spec.motion_mode)
    feats = SequenceFeatures(seq, feature)
    ts = np.arange(spec.w - 1, len(seq))
    prelims = np.empty(len(ts), dtype=np.int64)
    for lo in range(0, len(ts), batch_size):
        chunk = ts[lo:lo + batch_size]
        views = {"jcd": [], "m_slow": [], "m_fast": []}
        for t in chunk:
            vs = feats.views(int(t))
            views["jcd"].append(vs.jcd)
            views["m_slow"].append(vs.m_slow)
            views["m_fast"].append(vs.m_fast)
        stacked = {k: np.stack(v) for k, v in views.items()}
        outs, _ = forward_batch(params, stacked, heads=("fine",))
        prelims[lo:lo + len(chunk)] = outs["fine"].argmax(axis=1)
    track = np.full(len(seq), -1, dtype=np.int64)
    for i in range(spec.w - 1, len(prelims)):
        track[ts[i]] = vote_labels(prelims[i - spec.w + 1:i + 1])
    events = events_from_labels(track, spec.w, attribution)
    return events, track


def _check_w(params, w):
    if w is not None and w != params.spec.w:
        raise ConfigError(
            f"requested W={w} but checkpoint was built with W={params.spec.w}")


# ---------------------------------------------------------------------------
# latency measurement

def measure_step_latency(params, n_frames=2000, seed=0, feature=None):
    """Per-frame step wall times over a random stream; millisecond stats."""
    spec = params.spec
    rng = sub_rng(seed, "latency")
    frames = rng.standard_normal((n_frames, spec.n_joints, 3)) * 0.05
    state = make_stream(params, feature)
    times = np.empty(n_frames)
    for t in range(n_frames):
        t0 = time.perf_counter()
        step(state, frames[t], params)
        times[t] = time.perf_counter() - t0
    ms = times * 1e3
    return {
        "n_frames": n_frames,
        "p50_ms": float(np.percentile(ms, 50)),
        "p95_ms": float(np.percentile(ms, 95)),
        "max_ms": float(ms.max()),
        "mean_ms": float(ms.mean()),
    }


# ---------------------------------------------------------------------------
# detection interchange format: one line per event
#   sequence_id label pred_start pred_end first_emit

def format_detections(seq_id, events):
    lines = []
    for ev in events:
        lines.append(f"{seq_id} {ev.label} {ev.pred_start} {ev.pred_end} "
                     f"{ev.first_emit}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_detections(path, seq_id, events):
    write_text_atomic(path, format_detections(seq_id, events))


def parse_detections(text):
    """Detection lines -> dict sequence_id -> [DetectionEvent]."""
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ConfigError(
                f"detection line {ln}: expected 5 fields, got {len(parts)}")
        seq_id, label, start, end, emit = parts
        try:
            ev = DetectionEvent(label=int(label), pred_start=int(start),
                                pred_end=int(end),
                                first_emit=int(emit)).validate()
        except ValueError:
            raise ConfigError(f"detection line {ln}: non-integer field") from None
        out.setdefault(seq_id, []).append(ev)
    return out


def load_detections(path):
    with open(path) as f:
        return parse_detections(f.read())
