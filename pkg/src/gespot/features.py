"""Time-local views over pose windows and window-sample assembly.

A window of W frames ending at frame t yields three views:

  jcd     (C(J,2), W)      per-frame Euclidean distances between all joint
                           pairs, rows in lexicographic (i, j) order, i < j
  m_slow  (3J, W-1)        1-frame per-joint displacements, joint-major /
                           axis-minor rows
  m_fast  (3J, W/2-1)      2-frame displacements: column k is frame (2k+2)
                           minus frame (2k), window-local

Motion views come in a "magnitude" variant (J rows of per-joint speed norms)
behind a config switch. jcd is rigid-transform invariant; the motion views
are invariant to constant global translation.

Windows also carry training targets: a coarse static/dynamic/none class, the
fine gesture label by majority overlap, and window-local start/end indices
with a 4-bit task mask whose last two bits mirror index presence.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OutOfRangeError, ShapeError

# coarse 3-way classes: static gesture, dynamic (incl. periodic), none
SDN_S = 0
SDN_D = 1
SDN_N = 2

MOTION_MODES = ("per_axis", "magnitude")


@dataclass
class FeatureConfig:
    w: int = 16
    scale: float = 1.0  # device units -> meters
    motion_mode: str = "per_axis"
    overlap_threshold: float = 0.5

    def validate(self):
        if self.w < 4 or self.w % 2 != 0:
            raise ConfigError(f"window length must be even and >= 4, got {self.w}")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.motion_mode not in MOTION_MODES:
            raise ConfigError(f"motion_mode must be one of {MOTION_MODES}")
        if not (0.0 < self.overlap_threshold <= 1.0):
            raise ConfigError("overlap_threshold must be in (0, 1]")
        return self


def pair_order(j):
    """Lexicographic joint pairs (i, k), i < k; row order of the jcd view."""
    a, b = np.triu_indices(j, k=1)
    return a, b


def n_pairs(j):
    return j * (j - 1) // 2


@dataclass
class Window:
    """W consecutive frames [t-W+1, t] of one sequence."""

    end_frame: int
    positions: np.ndarray  # (W, J, 3)

    @property
    def w(self):
        return self.positions.shape[0]

    @property
    def n_joints(self):
        return self.positions.shape[1]

    def validate(self):
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ShapeError(f"window positions must be (W, J, 3), got {self.positions.shape}")
        w = self.positions.shape[0]
        if w < 4 or w % 2 != 0:
            raise ConfigError(f"window length must be even and >= 4, got {w}")
        if self.end_frame < w - 1:
            raise OutOfRangeError(f"end_frame {self.end_frame} < W-1")
        if not np.isfinite(self.positions).all():
            raise ShapeError("window contains non-finite positions")
        return self

    @classmethod
    def from_sequence(cls, seq, t, w):
        if t - w + 1 < 0 or t >= len(seq):
            raise OutOfRangeError(
                f"window [{t - w + 1}, {t}] out of range for {len(seq)}-frame sequence"
            )
        return cls(end_frame=t, positions=seq.positions[t - w + 1:t + 1]).validate()


def jcd(window, scale=1.0):
    """Pairwise joint distances per frame: (C(J,2), W)."""
    pos = np.asarray(window.positions if isinstance(window, Window) else window)
    if scale != 1.0:
        pos = pos * scale
    a, b = pair_order(pos.shape[1])
    diff = pos[:, a, :] - pos[:, b, :]
    return np.linalg.norm(diff, axis=2).T


def _displacements(pos, step):
    # (W - step, J, 3) forward differences at the given frame stride
    return pos[step:] - pos[:-step]


def _motion_rows(disp, mode):
    if mode == "magnitude":
        return np.linalg.norm(disp, axis=2).T
    n = disp.shape[0]
    return disp.reshape(n, -1).T  # joint-major, axis-minor


def m_slow(window, mode="per_axis", scale=1.0):
    """1-frame displacements: (3J, W-1), or (J, W-1) in magnitude mode."""
    pos = np.asarray(window.positions if isinstance(window, Window) else window)
    if scale != 1.0:
        pos = pos * scale
    return _motion_rows(_displacements(pos, 1), mode)


def m_fast(window, mode="per_axis", scale=1.0):
    """2-frame displacements over even offsets: (3J, W/2-1).

    Column k covers window-local frames (2k) -> (2k+2), so the view spans the
    same interval as m_slow at half the temporal rate.
    """
    pos = np.asarray(window.positions if isinstance(window, Window) else window)
    if scale != 1.0:
        pos = pos * scale
    disp = _displacements(pos, 2)[::2]
    return _motion_rows(disp, mode)


@dataclass
class ViewSet:
    jcd: np.ndarray
    m_slow: np.ndarray
    m_fast: np.ndarray

    def validate(self):
        for name, m in (("jcd", self.jcd), ("m_slow", self.m_slow),
                        ("m_fast", self.m_fast)):
            if m.ndim != 2:
                raise ShapeError(f"view {name} must be 2D, got shape {m.shape}")
            if not np.isfinite(m).all():
                raise ShapeError(f"view {name} contains non-finite entries")
        if (self.jcd < 0).any():
            raise ShapeError("jcd entries must be >= 0")
        w = self.jcd.shape[1]
        if self.m_slow.shape[1] != w - 1 or self.m_fast.shape[1] != w // 2 - 1:
            raise ShapeError(
                f"temporal extents disagree: jcd W={w}, m_slow {self.m_slow.shape[1]}, "
                f"m_fast {self.m_fast.shape[1]}"
            )
        return self

    @property
    def w(self):
        return self.jcd.shape[1]


def compute_views(window, cfg=None):
    cfg = (cfg or FeatureConfig()).validate()
    return ViewSet(
        jcd=jcd(window, cfg.scale),
        m_slow=m_slow(window, cfg.motion_mode, cfg.scale),
        m_fast=m_fast(window, cfg.motion_mode, cfg.scale),
    ).validate()


@dataclass
class TaskLabels:
    """Targets for one window: coarse class, fine class, boundary indices.

    start_index / end_index are window-local (in [0, W-1]) and present only
    when a gesture start / end falls inside the window.
    """

    sdn: int
    fine: int
    start_index: int = None
    end_index: int = None

    def validate(self, w=None, num_classes=None):
        if self.sdn not in (SDN_S, SDN_D, SDN_N):
            raise ConfigError(f"bad sdn class {self.sdn}")
        if (self.sdn == SDN_N) != (self.fine == 0):
            raise ConfigError(
                f"coarse/fine inconsistency: sdn={self.sdn}, fine={self.fine}"
            )
        if num_classes is not None and not (0 <= self.fine < num_classes):
            raise ConfigError(f"fine label {self.fine} outside [0, {num_classes})")
        for name, idx in (("start_index", self.start_index),
                          ("end_index", self.end_index)):
            if idx is not None:
                if idx < 0 or (w is not None and idx > w - 1):
                    raise ConfigError(f"{name}={idx} outside [0, {w - 1}]")
        return self


@dataclass
class WindowSample:
    views: ViewSet
    labels: TaskLabels
    mask: tuple  # c(1..4); c1=c2=1, c3/c4 mirror index presence

    def validate(self):
        if len(self.mask) != 4:
            raise ConfigError(f"mask must have 4 entries, got {len(self.mask)}")
        c1, c2, c3, c4 = (bool(b) for b in self.mask)
        if not (c1 and c2):
            raise ConfigError("classification tasks are always active")
        if c3 != (self.labels.start_index is not None):
            raise ConfigError("c(3) must mirror start_index presence")
        if c4 != (self.labels.end_index is not None):
            raise ConfigError("c(4) must mirror end_index presence")
        return self


def window_labels(seq, t, w, overlap_threshold=0.5, min_index_overlap=1):
    """Label the window [t-W+1, t] of an annotated sequence.

    Fine label: the annotation with maximal overlap, if that overlap reaches
    overlap_threshold * W; ties go to the annotation whose overlap ends later.
    Boundary indices: most recent gesture start / end inside the window, from
    any annotation.
    """
    lo = t - w + 1
    if lo < 0 or t >= len(seq):
        raise OutOfRangeError(
            f"window [{lo}, {t}] out of range for {len(seq)}-frame sequence"
        )
    best = None  # (overlap, overlap_end, annotation)
    start_index = None
    end_index = None
    for ann in seq.annotations:
        o_lo = max(lo, ann.start_frame)
        o_hi = min(t, ann.end_frame)
        if o_hi >= o_lo:
            key = (o_hi - o_lo + 1, o_hi)
            if best is None or key > best[:2]:
                best = (*key, ann)
        if lo <= ann.start_frame <= t:
            s = ann.start_frame - lo
            start_index = s if start_index is None else max(start_index, s)
        if lo <= ann.end_frame <= t:
            e = ann.end_frame - lo
            end_index = e if end_index is None else max(end_index, e)
    fine = 0
    sdn = SDN_N
    if best is not None and best[0] >= overlap_threshold * w:
        ann = best[2]
        fine = ann.label
        sdn = SDN_S if ann.category == "static" else SDN_D
    return TaskLabels(sdn=sdn, fine=fine, start_index=start_index,
                      end_index=end_index).validate(w=w)


def make_sample(seq, t, w, overlap_threshold=0.5, cfg=None):
    """Views + labels + task mask for the window of seq ending at frame t."""
    if cfg is None:
        cfg = FeatureConfig(w=w, overlap_threshold=overlap_threshold)
    cfg.validate()
    window = Window.from_sequence(seq, t, cfg.w)
    labels = window_labels(seq, t, cfg.w, cfg.overlap_threshold)
    mask = (True, True, labels.start_index is not None,
            labels.end_index is not None)
    return WindowSample(views=compute_views(window, cfg), labels=labels,
                        mask=mask).validate()


def normalize_index(idx, w):
    """Window-local frame index -> regression target in [0, 1]."""
    return idx / (w - 1)


def denormalize_index(pred, w):
    """Regression output -> frame index, clamped to [0, W-1]."""
    return float(np.clip(pred * (w - 1), 0.0, w - 1))


class SequenceFeatures:
    """Whole-sequence view tables sliced per window.

    Precomputes the pairwise-distance and displacement tables once so that
    extracting the views of every window costs a slice instead of a fresh
    O(J^2 W) computation. Slices are bitwise-identical to the direct
    per-window path because both subtract/measure the same frame arrays.
    """

    def __init__(self, seq, cfg=None):
        self.cfg = (cfg or FeatureConfig()).validate()
        pos = seq.positions
        if self.cfg.scale != 1.0:
            pos = pos * self.cfg.scale
        self.n_frames = pos.shape[0]
        a, b = pair_order(pos.shape[1])
        diff = pos[:, a, :] - pos[:, b, :]
        self.dist = np.linalg.norm(diff, axis=2).T  # (P, N)
        self.v1 = _motion_rows(_displacements(pos, 1), self.cfg.motion_mode)
        self.v2 = _motion_rows(_displacements(pos, 2), self.cfg.motion_mode)

    def views(self, t):
        w = self.cfg.w
        lo = t - w + 1
        if lo < 0 or t >= self.n_frames:
            raise OutOfRangeError(f"window ending at {t} out of range")
        return ViewSet(
            jcd=self.dist[:, lo:t + 1],
            m_slow=self.v1[:, lo:t],
            m_fast=self.v2[:, lo:lo + w - 2:2],
        )
