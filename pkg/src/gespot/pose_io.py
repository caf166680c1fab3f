"""Readers and writers for pose sequences.

Canonical on-disk format (line oriented, human diffable):

    J L fps                      header
    x1 y1 z1 ... xJ yJ zJ        one line per frame, 3J decimals
    ...
    #ANNOTATIONS
    label start end category     one line per annotation

Floats are written with shortest round-trip precision, so
parse(write(seq)) == seq bit-exactly. Adapters for SHREC'22- and
SHREC'19-style archive layouts convert external files into the same
PoseSequence type; their exact layouts are configured through a small
mapping file (see AdapterConfig) because the archives, not this package,
define them.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    EmptyCorpusError,
    InvariantViolation,
    ParseError,
    SingleSubjectError,
)
from .pose import CATEGORIES, GestureAnnotation, PoseSequence
from .util import fmt_float, sub_rng, write_text_atomic

ANNOTATION_MARKER = "#ANNOTATIONS"


def parse_sequence(path, format="canonical", adapter=None):
    """Parse one sequence file into a validated PoseSequence.

    format is one of canonical / shrec22 / shrec19; the latter two need an
    AdapterConfig (annotations usually live in a separate per-corpus file,
    see load_annotation_file / load_corpus).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such sequence file: {path}")
    text = path.read_text()
    if format == "canonical":
        seq = parse_canonical(text, source_id=path.stem)
    elif format == "shrec22":
        seq = _parse_shrec_table(text, adapter or AdapterConfig.shrec22(), path.stem)
    elif format == "shrec19":
        seq = _parse_shrec_table(text, adapter or AdapterConfig.shrec19(), path.stem)
    else:
        raise ValueError(f"unknown format {format!r}")
    seq.validate()
    return seq


def parse_canonical(text, source_id=""):
    """Parse the canonical text format. Raises ParseError / InvariantViolation."""
    lines = text.splitlines()
    if not lines or all(not ln.strip() for ln in lines):
        raise ParseError(0, "empty file")
    header = lines[0].split()
    if len(header) != 3:
        raise ParseError(1, f"header must be 'J L fps', got {lines[0]!r}")
    try:
        n_joints = int(header[0])
        num_classes = int(header[1])
        fps = float(header[2])
    except ValueError as e:
        raise ParseError(1, f"bad header value: {e}") from None
    if n_joints < 2:
        raise InvariantViolation(f"J must be >= 2, got {n_joints}")

    rows = []
    annotations = []
    in_annotations = False
    saw_marker = False
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line == ANNOTATION_MARKER:
            if saw_marker:
                raise ParseError(lineno, "duplicate annotation marker")
            saw_marker = True
            in_annotations = True
            continue
        if not in_annotations:
            tokens = line.split()
            if len(tokens) != 3 * n_joints:
                raise ParseError(
                    lineno,
                    f"frame line has {len(tokens)} values, expected {3 * n_joints}",
                )
            try:
                rows.append([float(t) for t in tokens])
            except ValueError as e:
                raise ParseError(lineno, f"bad coordinate: {e}") from None
        else:
            tokens = line.split()
            if len(tokens) != 4:
                raise ParseError(
                    lineno, f"annotation line needs 'label start end category', got {line!r}"
                )
            try:
                label, start, end = int(tokens[0]), int(tokens[1]), int(tokens[2])
            except ValueError as e:
                raise ParseError(lineno, f"bad annotation value: {e}") from None
            category = tokens[3]
            if category not in CATEGORIES:
                raise ParseError(lineno, f"unknown category {category!r}")
            annotations.append(GestureAnnotation(label, start, end, category))

    if not saw_marker:
        raise ParseError(len(lines), "missing #ANNOTATIONS block")
    if not rows:
        raise ParseError(1, "sequence has no frames")
    positions = np.asarray(rows, dtype=np.float64).reshape(len(rows), n_joints, 3)
    seq = PoseSequence(
        positions=positions,
        annotations=annotations,
        fps=fps,
        source_id=source_id,
        num_classes=num_classes,
    )
    try:
        seq.validate()
    except InvariantViolation as e:
        # annotations came from an untrusted file, so surface a parse failure
        raise ParseError(len(lines), str(e)) from None
    return seq


def format_canonical(seq):
    seq.validate()
    out = [f"{seq.n_joints} {seq.num_classes} {fmt_float(seq.fps)}"]
    flat = seq.positions.reshape(len(seq), -1)
    for row in flat:
        out.append(" ".join(fmt_float(v) for v in row))
    out.append(ANNOTATION_MARKER)
    for ann in seq.annotations:
        out.append(f"{ann.label} {ann.start_frame} {ann.end_frame} {ann.category}")
    return "\n".join(out) + "\n"


def write_sequence(seq, path):
    """Write seq in the canonical format (atomically). Raises OSError on IO failure."""
    write_text_atomic(path, format_canonical(seq))


# ---------------------------------------------------------------------------
# Benchmark-style adapters


@dataclass
class AdapterConfig:
    """Layout description for an external archive.

    label_map maps the archive's gesture names (or numeric ids, as strings)
    to {id, category}, or to a bare int meaning a dynamic_coarse gesture with
    that id; anything not in the map is a ParseError so silent label drift
    is impossible. values_per_joint lets SHREC'19-style rows
    carry orientation quaternions after the position triple; only the first
    3 values per joint are kept.
    """

    fps: float = 60.0
    separator: str = ";"
    values_per_joint: int = 3
    leading_index_column: bool = True
    label_map: dict = field(default_factory=dict)

    @classmethod
    def shrec22(cls, label_map=None):
        return cls(fps=60.0, separator=";", values_per_joint=3,
                   leading_index_column=True, label_map=label_map or {})

    @classmethod
    def shrec19(cls, label_map=None):
        return cls(fps=50.0, separator=";", values_per_joint=3,
                   leading_index_column=False, label_map=label_map or {})

    @classmethod
    def from_yaml(cls, path):
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        label_map = {}
        for name, entry in (data.get("labels") or {}).items():
            label_map[str(name)] = {
                "id": int(entry["id"]),
                "category": entry.get("category", "dynamic_coarse"),
            }
        return cls(
            fps=float(data.get("fps", 60.0)),
            separator=data.get("separator", ";"),
            values_per_joint=int(data.get("values_per_joint", 3)),
            leading_index_column=bool(data.get("leading_index_column", True)),
            label_map=label_map,
        )

    @staticmethod
    def _entry(value):
        # plain int is shorthand for {"id": int, "category": "dynamic_coarse"}
        if isinstance(value, dict):
            return int(value["id"]), value.get("category", "dynamic_coarse")
        return int(value), "dynamic_coarse"

    def num_classes(self):
        if not self.label_map:
            return 2
        return 1 + max(self._entry(v)[0] for v in self.label_map.values())

    def map_label(self, name, lineno=0):
        value = self.label_map.get(str(name))
        if value is None:
            raise ParseError(lineno, f"unmapped gesture label {name!r}")
        return self._entry(value)


def _parse_shrec_table(text, adapter, source_id):
    lines = [ln for ln in text.splitlines()]
    rows = []
    n_joints = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip().rstrip(adapter.separator).strip()
        if not line:
            continue
        if adapter.separator.strip():
            tokens = [t for t in line.split(adapter.separator) if t.strip()]
        else:
            tokens = line.split()
        if adapter.leading_index_column:
            tokens = tokens[1:]
        vpj = adapter.values_per_joint
        if len(tokens) % vpj != 0:
            raise ParseError(lineno, f"row has {len(tokens)} values, not a multiple of {vpj}")
        j = len(tokens) // vpj
        if n_joints is None:
            n_joints = j
        elif j != n_joints:
            raise ParseError(lineno, f"row has {j} joints, expected {n_joints}")
        try:
            vals = np.array([float(t) for t in tokens], dtype=np.float64)
        except ValueError as e:
            raise ParseError(lineno, f"bad value: {e}") from None
        rows.append(vals.reshape(j, vpj)[:, :3])
    if not rows:
        raise ParseError(0, "empty file")
    return PoseSequence(
        positions=np.stack(rows),
        annotations=[],
        fps=adapter.fps,
        source_id=source_id,
        num_classes=adapter.num_classes(),
    )


def load_annotation_file(path, adapter):
    """Parse a per-corpus annotation file into {sequence_id: [GestureAnnotation]}.

    Expected layout, one sequence per line:
        seq_id;label;start;end[;label;start;end...]
    """
    result = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip().rstrip(adapter.separator)
            if not line:
                continue
            tokens = [t.strip() for t in line.split(adapter.separator)]
            if (len(tokens) - 1) % 3 != 0 or len(tokens) < 4:
                raise ParseError(lineno, f"annotation row has {len(tokens)} fields")
            seq_id = tokens[0]
            anns = []
            for i in range(1, len(tokens), 3):
                label_id, category = adapter.map_label(tokens[i], lineno)
                try:
                    start, end = int(tokens[i + 1]), int(tokens[i + 2])
                except ValueError as e:
                    raise ParseError(lineno, f"bad annotation frame: {e}") from None
                anns.append(GestureAnnotation(label_id, start, end, category))
            anns.sort(key=lambda a: a.start_frame)
            result[seq_id] = anns
    return result


def load_corpus(data_dir, format="canonical", adapter=None, annotations_file=None,
                pattern="*.txt"):
    """Load every sequence file in a directory, sorted by name.

    For adapter formats, annotations_file attaches the per-corpus ground
    truth by sequence id (= file stem).
    """
    data_dir = Path(data_dir)
    if format == "canonical":
        paths = sorted(data_dir.glob("*.seq"))
    else:
        paths = sorted(data_dir.glob(pattern))
        if annotations_file is not None:
            # the ground-truth table often sits next to the recordings
            skip = Path(annotations_file).resolve()
            paths = [p for p in paths if p.resolve() != skip]
    corpus = [parse_sequence(p, format=format, adapter=adapter) for p in paths]
    if annotations_file is not None and format != "canonical":
        by_id = load_annotation_file(annotations_file, adapter)
        for seq in corpus:
            seq.annotations = by_id.get(seq.source_id, [])
            seq.validate()
    return corpus


# ---------------------------------------------------------------------------
# Train/test splitting


def split_train_test(corpus, policy="by_index", seed=0, test_fraction=0.5):
    """Deterministically partition a corpus into (train, test).

    by_index keeps corpus order and cuts at the test fraction (so a corpus
    already laid out as train-then-test is preserved). by_subject groups by
    source_id and never puts one subject on both sides.
    """
    if not corpus:
        raise EmptyCorpusError("cannot split an empty corpus")
    if not (0 < test_fraction < 1):
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if policy == "by_index":
        n_test = int(round(len(corpus) * test_fraction))
        n_test = min(max(n_test, 1), len(corpus) - 1)
        return list(corpus[: len(corpus) - n_test]), list(corpus[len(corpus) - n_test:])
    if policy == "by_subject":
        groups = {}
        for seq in corpus:
            groups.setdefault(seq.source_id, []).append(seq)
        if len(groups) < 2:
            raise SingleSubjectError(
                f"by_subject needs >= 2 subjects, found {len(groups)}"
            )
        order = sorted(groups)
        rng = sub_rng(seed, "split", "by_subject")
        rng.shuffle(order)
        target = len(corpus) * test_fraction
        test_ids, n_test = [], 0
        for sid in order:
            if n_test >= target or len(test_ids) == len(groups) - 1:
                break
            test_ids.append(sid)
            n_test += len(groups[sid])
        test_set = set(test_ids)
        train = [s for s in corpus if s.source_id not in test_set]
        test = [s for s in corpus if s.source_id in test_set]
        return train, test
    raise ValueError(f"unknown split policy {policy!r}")


def save_corpus(corpus, out_dir):
    """Write a corpus as canonical .seq files named after source_id."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for seq in corpus:
        p = out_dir / f"{seq.source_id}.seq"
        write_sequence(seq, p)
        paths.append(p)
    return paths
