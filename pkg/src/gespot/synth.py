"""Synthetic labeled pose-stream generator.

Produces annotated 26-joint hand sequences from a configurable gesture
dictionary so training, inference and evaluation can run at desk scale.
The hand is a wrist plus 5 fingers x 5 joints driven by a scalar curl per
finger; static gestures hold a finger configuration, dynamic gestures
translate the whole hand along a 2D trajectory, periodic gestures sweep a
trajectory back and forth sinusoidally, and the filler between gestures is
a smoothed random walk with occasional pauses (so "hand not moving" alone
never identifies a static gesture).

Generation is a pure function of (config, sequence index): the same pair
always yields bit-identical sequences.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError
from .pose import GestureAnnotation, GestureDictionary, PoseSequence
from .util import sub_rng

N_JOINTS = 26

# wrist->knuckle reach and the four phalanx lengths, meters
_FINGER_ROOT = 0.085
_SEGMENTS = (0.035, 0.028, 0.022, 0.019)
# fan angles of thumb..pinky in the palm plane, radians
_FINGER_ANGLES = (-0.9, -0.25, 0.0, 0.25, 0.5)
_FINGER_SCALE = (0.72, 1.0, 1.05, 0.95, 0.78)

TRAJECTORY_SHAPES = ("circle", "square", "v_mark", "x_mark", "caret", "line")

_WAYPOINTS = {
    "square": [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)],
    "v_mark": [(0, 0), (0.5, -1), (1, 0)],
    "caret": [(0, 0), (0.5, 1), (1, 0)],
    "x_mark": [(0, 0), (1, -1), (0, -1), (1, 0)],
    "line": [(0, 0), (1, 0)],
}


def build_hand(curl):
    """Forward-kinematics hand: (26, 3) joint positions for per-finger curls.

    curl is a scalar or a 5-vector in [0, 1]; 0 is a flat open hand, 1 a
    tight fist. Joint 0 is the wrist, then finger f occupies joints
    1+5f .. 5+5f from knuckle to tip.
    """
    curls = np.broadcast_to(np.asarray(curl, dtype=np.float64), (5,))
    joints = np.zeros((N_JOINTS, 3))
    for f in range(5):
        ang = _FINGER_ANGLES[f]
        u = np.array([math.cos(ang), math.sin(ang), 0.0])
        scale = _FINGER_SCALE[f]
        pos = u * _FINGER_ROOT * scale
        joints[1 + 5 * f] = pos
        bend = 0.0
        for s, seg in enumerate(_SEGMENTS):
            bend += curls[f] * (0.55 + 0.15 * s)
            direction = math.cos(bend) * u - math.sin(bend) * np.array([0.0, 0.0, 1.0])
            pos = pos + direction * seg * scale
            joints[2 + 5 * f + s] = pos
    return joints


def trajectory_point(shape, u, amplitude):
    """Point on a unit trajectory at arc-length fraction u, scaled to meters.

    Paths live in the x-y plane and start at the origin, so a gesture
    continues from wherever the hand currently is.
    """
    u = min(max(u, 0.0), 1.0)
    if shape == "circle":
        th = 2.0 * math.pi * u
        return amplitude * np.array([math.cos(th) - 1.0, math.sin(th), 0.0])
    pts = np.asarray(_WAYPOINTS[shape], dtype=np.float64)
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = seg_len.sum()
    dist = u * total
    acc = 0.0
    for i, ln in enumerate(seg_len):
        if dist <= acc + ln or i == len(seg_len) - 1:
            frac = 0.0 if ln == 0 else (dist - acc) / ln
            p = pts[i] + frac * seg[i]
            return amplitude * np.array([p[0], p[1], 0.0])
        acc += ln
    raise AssertionError("unreachable")


@dataclass
class GestureTemplate:
    """Generator recipe for one gesture class."""

    label: int
    name: str
    category: str  # static | dynamic | periodic
    duration: tuple  # (lo, hi) frames, inclusive
    curl: object = 0.3  # scalar or 5-list, finger configuration while gesturing
    shape: str = None  # trajectory, required unless static
    amplitude: float = 0.1  # meters
    jitter_std: float = 0.0015
    cycles: int = 3  # periodic only: back-and-forth sweeps

    def validate(self):
        if self.category not in ("static", "dynamic", "periodic"):
            raise ConfigError(f"template {self.name}: bad category {self.category!r}")
        lo, hi = self.duration
        if not (0 < lo <= hi):
            raise ConfigError(f"template {self.name}: bad duration range {self.duration}")
        if self.jitter_std < 0:
            raise ConfigError(f"template {self.name}: negative jitter_std")
        if self.category == "static":
            if self.shape is not None:
                raise ConfigError(f"template {self.name}: static gestures take no shape")
        else:
            if self.shape not in TRAJECTORY_SHAPES:
                raise ConfigError(
                    f"template {self.name}: shape must be one of {TRAJECTORY_SHAPES}"
                )
        return self

    @property
    def annotation_category(self):
        return {"static": "static", "dynamic": "dynamic_coarse",
                "periodic": "periodic"}[self.category]


@dataclass
class NonGestureModel:
    """Filler-motion parameters: OU-smoothed centroid walk plus curl wander.

    curl_band keeps the relaxed hand away from deliberate extreme poses
    (full fist, fully spread palm), which belong to gestures only.
    """

    step_std: float = 0.004
    smooth: float = 0.85
    pause_prob: float = 0.012
    pause_len: tuple = (8, 40)
    finger_std: float = 0.0015
    curl_walk_std: float = 0.03
    curl_band: tuple = (0.2, 0.65)


@dataclass
class SynthConfig:
    templates: list
    sequence_length: tuple = (320, 400)
    gestures_per_sequence: tuple = (2, 3)
    margin: int = 24
    min_gap: int = 24
    nongesture: NonGestureModel = field(default_factory=NonGestureModel)
    seed: int = 0
    j: int = N_JOINTS
    fps: float = 60.0
    blend_frames: int = 4

    @property
    def num_classes(self):
        return len(self.templates) + 1

    def validate(self):
        if self.j != N_JOINTS:
            raise ConfigError(f"hand model is {N_JOINTS}-joint; got j={self.j}")
        if not self.templates:
            raise ConfigError("need at least one gesture template")
        labels = sorted(t.label for t in self.templates)
        if labels != list(range(1, len(self.templates) + 1)):
            raise ConfigError(f"template labels must be exactly 1..K, got {labels}")
        for t in self.templates:
            t.validate()
        for name, rng_ in (("sequence_length", self.sequence_length),
                           ("gestures_per_sequence", self.gestures_per_sequence)):
            lo, hi = rng_
            if not (0 < lo <= hi):
                raise ConfigError(f"bad {name} range {rng_}")
        if self.margin < 0 or self.min_gap < 0:
            raise ConfigError("margin and min_gap must be >= 0")
        lo, hi = self.nongesture.curl_band
        if not (0.0 <= lo <= hi <= 1.0):
            raise ConfigError(f"bad curl_band {self.nongesture.curl_band}")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        # worst-case feasibility so generation can never fail mid-draw
        n_max = self.gestures_per_sequence[1]
        d_max = max(t.duration[1] for t in self.templates)
        need = 2 * self.margin + n_max * d_max + max(n_max - 1, 0) * self.min_gap
        if need > self.sequence_length[0]:
            raise ConfigError(
                f"gesture durations exceed sequence length: worst case needs "
                f"{need} frames but sequences may have only {self.sequence_length[0]}"
            )
        return self

    def template_for(self, label):
        return self.templates[label - 1]

    def dictionary(self):
        names = ["non_gesture"] + [t.name for t in self.templates]
        cats = [None] + [t.annotation_category for t in self.templates]
        return GestureDictionary(self.num_classes, names, cats, n_joints=self.j)

    def to_yaml(self):
        data = {
            "seed": self.seed,
            "j": self.j,
            "fps": self.fps,
            "sequence_length": list(self.sequence_length),
            "gestures_per_sequence": list(self.gestures_per_sequence),
            "margin": self.margin,
            "min_gap": self.min_gap,
            "blend_frames": self.blend_frames,
            "nongesture": {
                "step_std": self.nongesture.step_std,
                "smooth": self.nongesture.smooth,
                "pause_prob": self.nongesture.pause_prob,
                "pause_len": list(self.nongesture.pause_len),
                "finger_std": self.nongesture.finger_std,
                "curl_walk_std": self.nongesture.curl_walk_std,
                "curl_band": list(self.nongesture.curl_band),
            },
            "templates": [],
        }
        for t in self.templates:
            entry = {
                "label": t.label, "name": t.name, "category": t.category,
                "duration": list(t.duration), "jitter_std": t.jitter_std,
                "curl": list(t.curl) if isinstance(t.curl, (list, tuple)) else t.curl,
            }
            if t.category != "static":
                entry.update(shape=t.shape, amplitude=t.amplitude)
            if t.category == "periodic":
                entry["cycles"] = t.cycles
            data["templates"].append(entry)
        return yaml.safe_dump(data, sort_keys=False)

    @classmethod
    def from_yaml(cls, path_or_text, is_text=False):
        if is_text:
            data = yaml.safe_load(path_or_text)
        else:
            with open(path_or_text) as f:
                data = yaml.safe_load(f)
        if not isinstance(data, dict):
            raise ConfigError("synth config must be a mapping")
        try:
            templates = []
            for t in data["templates"]:
                templates.append(GestureTemplate(
                    label=int(t["label"]), name=str(t["name"]),
                    category=str(t["category"]),
                    duration=tuple(t["duration"]),
                    curl=t.get("curl", 0.3),
                    shape=t.get("shape"),
                    amplitude=float(t.get("amplitude", 0.1)),
                    jitter_std=float(t.get("jitter_std", 0.0015)),
                    cycles=int(t.get("cycles", 3)),
                ))
            ng = data.get("nongesture", {})
            cfg = cls(
                templates=templates,
                sequence_length=tuple(data.get("sequence_length", (320, 400))),
                gestures_per_sequence=tuple(data.get("gestures_per_sequence", (2, 3))),
                margin=int(data.get("margin", 24)),
                min_gap=int(data.get("min_gap", 24)),
                nongesture=NonGestureModel(
                    step_std=float(ng.get("step_std", 0.004)),
                    smooth=float(ng.get("smooth", 0.85)),
                    pause_prob=float(ng.get("pause_prob", 0.012)),
                    pause_len=tuple(ng.get("pause_len", (8, 40))),
                    finger_std=float(ng.get("finger_std", 0.0015)),
                    curl_walk_std=float(ng.get("curl_walk_std", 0.03)),
                    curl_band=tuple(ng.get("curl_band", (0.2, 0.65))),
                ),
                seed=int(data.get("seed", 0)),
                j=int(data.get("j", N_JOINTS)),
                fps=float(data.get("fps", 60.0)),
                blend_frames=int(data.get("blend_frames", 4)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad synth config: {e}") from None
        return cfg.validate()

    @classmethod
    def six_class(cls, seed=0, **overrides):
        """2 static + 3 dynamic trajectories + 1 periodic, the demo dictionary."""
        templates = [
            GestureTemplate(1, "fist", "static", (46, 70), curl=0.85),
            GestureTemplate(2, "open_palm", "static", (46, 70), curl=0.05),
            GestureTemplate(3, "circle", "dynamic", (46, 70), shape="circle",
                            amplitude=0.11, curl=0.45),
            GestureTemplate(4, "square", "dynamic", (46, 70), shape="square",
                            amplitude=0.10, curl=0.45),
            GestureTemplate(5, "caret", "dynamic", (46, 70), shape="caret",
                            amplitude=0.12, curl=0.45),
            GestureTemplate(6, "wave", "periodic", (46, 70), shape="line",
                            amplitude=0.06, cycles=3, curl=0.45),
        ]
        cfg = cls(templates=templates, seed=seed)
        if overrides:
            cfg = replace(cfg, **overrides)
        return cfg.validate()


def _layout_gestures(cfg, rng, seq_len, labels):
    """Pick (start, end, label) spans: margins at both ends, min_gap between."""
    durations = []
    for l in labels:
        lo, hi = cfg.template_for(l).duration
        durations.append(int(rng.integers(lo, hi + 1)))
    n = len(labels)
    need = 2 * cfg.margin + sum(durations) + max(n - 1, 0) * cfg.min_gap
    if need > seq_len:
        raise ConfigError(
            f"gesture durations exceed sequence length ({need} > {seq_len})"
        )
    slack = seq_len - need
    extra = rng.multinomial(slack, np.full(n + 1, 1.0 / (n + 1)))
    spans = []
    cursor = cfg.margin + int(extra[0])
    for i, (label, dur) in enumerate(zip(labels, durations)):
        spans.append((cursor, cursor + dur - 1, label))
        cursor += dur
        if i < n - 1:
            cursor += cfg.min_gap + int(extra[i + 1])
    return spans


def generate_sequence(cfg, index, labels=None):
    """Generate one annotated PoseSequence, deterministic in (cfg, index)."""
    cfg.validate()
    rng = sub_rng(cfg.seed, "synth", index)
    seq_len = int(rng.integers(cfg.sequence_length[0], cfg.sequence_length[1] + 1))
    if labels is None:
        n = int(rng.integers(cfg.gestures_per_sequence[0],
                             cfg.gestures_per_sequence[1] + 1))
        labels = [int(l) for l in rng.choice(
            [t.label for t in cfg.templates], size=n)]
    spans = _layout_gestures(cfg, rng, seq_len, list(labels))

    ng = cfg.nongesture
    positions = np.empty((seq_len, N_JOINTS, 3))
    pos = np.zeros(3)
    # start mid-motion: vel from the stationary OU distribution, so the
    # recording does not open with an artificial standstill
    vel_std = ng.step_std / math.sqrt(max(1.0 - ng.smooth ** 2, 1e-12))
    vel = vel_std * rng.standard_normal(3)
    curls = rng.uniform(ng.curl_band[0], ng.curl_band[1], size=5)
    pause_left = 0
    span_idx = 0
    gesture_anchor = None

    for t in range(seq_len):
        active = None
        if span_idx < len(spans):
            s, e, label = spans[span_idx]
            if s <= t <= e:
                active = (s, e, label)
        if active is None:
            gesture_anchor = None
            if pause_left > 0:
                pause_left -= 1
                vel *= 0.15
            else:
                if rng.random() < ng.pause_prob:
                    pause_left = int(rng.integers(ng.pause_len[0], ng.pause_len[1] + 1))
                vel = ng.smooth * vel + ng.step_std * rng.standard_normal(3)
                curls = np.clip(curls + ng.curl_walk_std * rng.standard_normal(5),
                                ng.curl_band[0], ng.curl_band[1])
            pos = pos + vel
            frame = build_hand(curls) + pos
            frame = frame + ng.finger_std * rng.standard_normal((N_JOINTS, 3))
        else:
            s, e, label = active
            tpl = cfg.template_for(label)
            if gesture_anchor is None:
                gesture_anchor = pos.copy()
                blend_from = curls.copy()
                vel = np.zeros(3)
            tgt_curl = np.broadcast_to(np.asarray(tpl.curl, dtype=np.float64), (5,))
            k = t - s
            dur = e - s + 1
            if cfg.blend_frames > 0 and k < cfg.blend_frames:
                a = (k + 1) / cfg.blend_frames
                curls = (1 - a) * blend_from + a * tgt_curl
            else:
                curls = np.array(tgt_curl)
            if tpl.category == "static":
                pos = gesture_anchor
            else:
                frac = k / max(dur - 1, 1)
                if tpl.category == "periodic":
                    u = 0.5 * (1.0 - math.cos(2.0 * math.pi * tpl.cycles * frac))
                else:
                    u = frac
                pos = gesture_anchor + trajectory_point(tpl.shape, u, tpl.amplitude)
            frame = build_hand(curls) + pos
            frame = frame + tpl.jitter_std * rng.standard_normal((N_JOINTS, 3))
            if t == e:
                span_idx += 1
        positions[t] = frame

    annotations = [
        GestureAnnotation(label, s, e, cfg.template_for(label).annotation_category)
        for (s, e, label) in spans
    ]
    seq = PoseSequence(
        positions=positions,
        annotations=annotations,
        fps=cfg.fps,
        source_id=f"synth_{index:04d}",
        num_classes=cfg.num_classes,
    )
    return seq.validate()


def generate_corpus(cfg, n_sequences, index_offset=0):
    """Generate n sequences with gesture occurrences class-balanced within +-1."""
    cfg.validate()
    if n_sequences < 1:
        raise ConfigError("n_sequences must be >= 1")
    rng = sub_rng(cfg.seed, "corpus", index_offset)
    counts = [int(rng.integers(cfg.gestures_per_sequence[0],
                               cfg.gestures_per_sequence[1] + 1))
              for _ in range(n_sequences)]
    total = sum(counts)
    class_labels = [t.label for t in cfg.templates]
    deck = [class_labels[i % len(class_labels)] for i in range(total)]
    deck = [deck[i] for i in rng.permutation(total)]
    corpus = []
    cursor = 0
    for i, c in enumerate(counts):
        dealt = deck[cursor:cursor + c]
        cursor += c
        corpus.append(generate_sequence(cfg, index_offset + i, labels=dealt))
    return corpus
