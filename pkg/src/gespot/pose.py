"""Domain types for pose streams and gesture annotations.

A pose sequence is a fixed-rate stream of per-frame 3D joint positions with
optional non-overlapping gesture annotations. Class 0 is reserved for
non-gesture everywhere; gesture classes are 1..L-1.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation

NON_GESTURE = 0

# Annotation categories. "static" maps to the S superclass, everything else
# (trajectory and oscillation gestures) to D.
CATEGORIES = ("static", "dynamic_coarse", "dynamic_fine", "periodic")


@dataclass
class PoseFrame:
    """One frame of J 3D joint positions (meters, device frame)."""

    joints: np.ndarray  # (J, 3)
    timestamp_index: int

    def validate(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise InvariantViolation(f"joints must be (J, 3), got {joints.shape}")
        if joints.shape[0] < 2:
            raise InvariantViolation("need at least 2 joints (one distance pair)")
        if not np.all(np.isfinite(joints)):
            raise InvariantViolation("non-finite joint coordinate")


@dataclass
class GestureAnnotation:
    """A labeled gesture occurrence, inclusive frame span [start_frame, end_frame]."""

    label: int
    start_frame: int
    end_frame: int
    category: str = "dynamic_coarse"

    def validate(self, n_frames=None, num_classes=None):
        if self.label == NON_GESTURE:
            raise InvariantViolation("annotation label 0 is reserved for non-gesture")
        if self.label < 0:
            raise InvariantViolation(f"negative label {self.label}")
        if num_classes is not None and self.label >= num_classes:
            raise InvariantViolation(
                f"label {self.label} out of range for {num_classes} classes"
            )
        if not (0 <= self.start_frame <= self.end_frame):
            raise InvariantViolation(
                f"bad span [{self.start_frame}, {self.end_frame}]"
            )
        if n_frames is not None and self.end_frame >= n_frames:
            raise InvariantViolation(
                f"annotation ends at {self.end_frame} but sequence has {n_frames} frames"
            )
        if self.category not in CATEGORIES:
            raise InvariantViolation(f"unknown category {self.category!r}")

    @property
    def n_frames(self):
        return self.end_frame - self.start_frame + 1


@dataclass
class PoseSequence:
    """A timed stream of pose frames plus its gesture annotations.

    positions holds the whole stream as one (N, J, 3) float64 array; the
    frame timestamp is the row index. num_classes is L including the
    non-gesture class 0. source_id doubles as the subject/grouping key for
    by-subject splits.
    """

    positions: np.ndarray  # (N, J, 3)
    annotations: list = field(default_factory=list)
    fps: float = 60.0
    source_id: str = ""
    num_classes: int = 2

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def n_joints(self):
        return self.positions.shape[1]

    def frame(self, t):
        return PoseFrame(joints=self.positions[t], timestamp_index=t)

    def frames(self):
        for t in range(len(self)):
            yield self.frame(t)

    def validate(self):
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise InvariantViolation(
                f"positions must be (N, J, 3), got {self.positions.shape}"
            )
        if self.positions.shape[0] == 0:
            raise InvariantViolation("sequence has no frames")
        if self.positions.shape[1] < 2:
            raise InvariantViolation("need at least 2 joints")
        if not np.all(np.isfinite(self.positions)):
            raise InvariantViolation("non-finite coordinate in sequence")
        if not (self.fps > 0):
            raise InvariantViolation(f"fps must be positive, got {self.fps}")
        if self.num_classes < 2:
            raise InvariantViolation("need at least 2 classes (non-gesture + 1)")
        prev_end = None
        prev_start = None
        for ann in self.annotations:
            ann.validate(n_frames=len(self), num_classes=self.num_classes)
            if prev_start is not None and ann.start_frame < prev_start:
                raise InvariantViolation("annotations not sorted by start frame")
            if prev_end is not None and ann.start_frame <= prev_end:
                raise InvariantViolation(
                    f"annotations overlap near frame {ann.start_frame}"
                )
            prev_start = ann.start_frame
            prev_end = ann.end_frame
        return self

    def __eq__(self, other):
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (
            self.positions.shape == other.positions.shape
            and np.array_equal(self.positions, other.positions)
            and self.annotations == other.annotations
            and self.fps == other.fps
            and self.num_classes == other.num_classes
            and self.source_id == other.source_id
        )


@dataclass
class GestureDictionary:
    """The class inventory: L classes (0 = non-gesture), names, categories, joints."""

    num_classes: int
    names: list  # length L, names[0] is the non-gesture name
    categories: list  # length L, categories[0] is None
    n_joints: int = 26
    joint_scheme: str = "wrist+5x5"

    def validate(self):
        if self.num_classes < 2:
            raise InvariantViolation("dictionary needs at least 2 classes")
        if len(self.names) != self.num_classes or len(self.categories) != self.num_classes:
            raise InvariantViolation("names/categories length must equal num_classes")
        for cat in self.categories[1:]:
            if cat not in CATEGORIES:
                raise InvariantViolation(f"unknown category {cat!r}")
        return self

    def category_of(self, label):
        if label == NON_GESTURE:
            return None
        return self.categories[label]

    def to_mapping(self):
        return {
            "num_classes": self.num_classes,
            "names": list(self.names),
            "categories": list(self.categories),
            "n_joints": self.n_joints,
            "joint_scheme": self.joint_scheme,
        }

    @classmethod
    def from_mapping(cls, data):
        return cls(
            num_classes=int(data["num_classes"]),
            names=list(data["names"]),
            categories=list(data["categories"]),
            n_joints=int(data.get("n_joints", 26)),
            joint_scheme=data.get("joint_scheme", "wrist+5x5"),
        ).validate()
