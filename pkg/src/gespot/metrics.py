"""Continuous-recognition evaluation.

A detection matches a ground-truth gesture when labels agree, the temporal
intersection covers at least MOR (minimum overlap ratio) of the true span,
and the detection lasts at most twice the true duration. Matching is greedy
one-to-one in temporal order: earliest ground truth first, earliest-starting
qualifying detection wins. From the matching come the four benchmark
numbers: detection rate (matched / total gestures), false-positive score
(unmatched detections / total gestures, may exceed 1), Jaccard index (span
intersection over union, 0 for missed gestures, averaged per gesture then
per sequence), and delay.

The alternative protocol matches on label plus boundary distance within
2.5 seconds, with no overlap or duration constraint.

All spans are inclusive frame intervals; |[s, e]| = e - s + 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, InvalidFpsError, InvalidMorError,
                     NoGroundTruthError, NoMatchesError)

_BASE_MOR = 1e-9  # "any positive overlap" base matching for JI-MOR sweeps


def span_length(start, end):
    return end - start + 1


def intersection_length(a_start, a_end, b_start, b_end):
    return max(0, min(a_end, b_end) - max(a_start, b_start) + 1)


def jaccard_of_spans(a_start, a_end, b_start, b_end):
    inter = intersection_length(a_start, a_end, b_start, b_end)
    union = span_length(a_start, a_end) + span_length(b_start, b_end) - inter
    return inter / union


@dataclass
class MatchPair:
    gt_index: int
    det_index: int
    overlap_ratio: float  # |gt ∩ det| / |gt|
    jaccard: float
    delay: int


@dataclass
class MatchResult:
    n_gt: int
    n_det: int
    gt_match: list  # per GT: det index or None
    det_matched: list  # per detection: bool
    pairs: list  # MatchPair per matched pair

    @property
    def matched_count(self):
        return len(self.pairs)

    @property
    def fp_count(self):
        return sum(1 for m in self.det_matched if not m)

    def validate(self):
        dets = [p.det_index for p in self.pairs]
        gts = [p.gt_index for p in self.pairs]
        if len(set(dets)) != len(dets) or len(set(gts)) != len(gts):
            raise ConfigError("matching is not one-to-one")
        return self


def _sorted_gt(gt):
    order = sorted(range(len(gt)),
                   key=lambda i: (gt[i].start_frame, gt[i].end_frame))
    prev_end = None
    for i in order:
        if prev_end is not None and gt[i].start_frame <= prev_end:
            raise ConfigError("ground-truth annotations overlap")
        prev_end = gt[i].end_frame
    return order


def _greedy_match(gt, det, qualifies):
    """One-to-one matching: earliest GT first, earliest qualifying det wins."""
    order = _sorted_gt(gt)
    gt_match = [None] * len(gt)
    det_matched = [False] * len(det)
    pairs = []
    for gi in order:
        g = gt[gi]
        best = None
        for di, d in enumerate(det):
            if det_matched[di] or d.label != g.label:
                continue
            if not qualifies(g, d):
                continue
            key = (d.pred_start, d.pred_end, di)
            if best is None or key < best[0]:
                best = (key, di)
        if best is not None:
            di = best[1]
            d = det[di]
            gt_match[gi] = di
            det_matched[di] = True
            glen = span_length(g.start_frame, g.end_frame)
            inter = intersection_length(g.start_frame, g.end_frame,
                                        d.pred_start, d.pred_end)
            pairs.append(MatchPair(
                gt_index=gi, det_index=di,
                overlap_ratio=inter / glen,
                jaccard=jaccard_of_spans(g.start_frame, g.end_frame,
                                         d.pred_start, d.pred_end),
                delay=d.first_emit - d.pred_start,
            ))
    return MatchResult(n_gt=len(gt), n_det=len(det), gt_match=gt_match,
                       det_matched=det_matched, pairs=pairs).validate()


def match_detections(gt, det, mor=0.5):
    """Overlap-ratio protocol matching for one sequence."""
    if not (0.0 < mor <= 1.0):
        raise InvalidMorError(f"mor must be in (0, 1], got {mor}")

    def qualifies(g, d):
        glen = span_length(g.start_frame, g.end_frame)
        dlen = span_length(d.pred_start, d.pred_end)
        if dlen > 2 * glen:
            return False
        inter = intersection_length(g.start_frame, g.end_frame,
                                    d.pred_start, d.pred_end)
        return inter >= mor * glen

    return _greedy_match(gt, det, qualifies)


def match_shrec19(gt, det, fps):
    """Boundary-distance protocol: same label, span within 2.5 s of the GT."""
    if fps is None or fps <= 0:
        raise InvalidFpsError(f"fps must be positive, got {fps}")
    tol = 2.5 * fps

    def qualifies(g, d):
        if intersection_length(g.start_frame, g.end_frame,
                               d.pred_start, d.pred_end) > 0:
            return True
        gap = (g.start_frame - d.pred_end if d.pred_end < g.start_frame
               else d.pred_start - g.end_frame)
        return gap <= tol

    return _greedy_match(gt, det, qualifies)


def _as_match_list(matches):
    if isinstance(matches, MatchResult):
        return [matches]
    return list(matches)


def detection_rate(matches):
    """Matched gestures / total gestures, pooled over sequences."""
    ms = _as_match_list(matches)
    total = sum(m.n_gt for m in ms)
    if total == 0:
        raise NoGroundTruthError("no ground-truth gestures to evaluate")
    return sum(m.matched_count for m in ms) / total


def false_positive_score(matches):
    """Unmatched detections / total gestures; may exceed 1."""
    ms = _as_match_list(matches)
    total = sum(m.n_gt for m in ms)
    if total == 0:
        raise NoGroundTruthError("no ground-truth gestures to evaluate")
    return sum(m.fp_count for m in ms) / total


def delay_stats(matches):
    """Mean and median frame delay over all matched pairs."""
    delays = [p.delay for m in _as_match_list(matches) for p in m.pairs]
    if not delays:
        raise NoMatchesError("no matched pairs")
    arr = np.asarray(delays, dtype=np.float64)
    return {"mean": float(arr.mean()), "median": float(np.median(arr)),
            "count": len(delays)}


def _per_seq(gt, det):
    """Normalize inputs to parallel per-sequence lists."""
    single = not gt or hasattr(gt[0], "start_frame")
    if single:
        return [gt], [det]
    return list(gt), list(det)


def _seq_jaccard(gt, match_result, keep=None):
    """Mean per-gesture Jaccard for one sequence; missed gestures count 0."""
    if not gt:
        return None
    vals = np.zeros(len(gt))
    for p in match_result.pairs:
        if keep is None or keep(p):
            vals[p.gt_index] = p.jaccard
    return float(vals.mean())


def jaccard_index(gt, det, mor=0.5, mor_filter=None):
    """Corpus Jaccard index: mean over gestures, then over sequences.

    Without mor_filter, pairs come from matching at the given mor. With
    mor_filter, pairs come from a fixed any-overlap base matching and only
    pairs whose overlap ratio reaches the filter are kept; sweeping the
    filter over a fixed base matching is what makes the JI-vs-MOR curve
    non-increasing.
    """
    gts, dets = _per_seq(gt, det)
    vals = []
    for g, d in zip(gts, dets):
        if not g:
            continue
        if mor_filter is None:
            m = match_detections(g, d, mor)
            vals.append(_seq_jaccard(g, m))
        else:
            base = match_detections(g, d, _BASE_MOR)
            vals.append(_seq_jaccard(
                g, base, keep=lambda p: p.overlap_ratio >= mor_filter))
    if not vals:
        raise NoGroundTruthError("no ground-truth gestures to evaluate")
    return float(np.mean(vals))


def ji_mor_curve(gt, det, mors):
    """JI at each filter value over one fixed any-overlap base matching."""
    gts, dets = _per_seq(gt, det)
    bases = []
    for g, d in zip(gts, dets):
        bases.append(match_detections(g, d, _BASE_MOR) if g else None)
    curve = []
    for m in mors:
        if not (0.0 < m <= 1.0):
            raise InvalidMorError(f"mor must be in (0, 1], got {m}")
        vals = [_seq_jaccard(g, b, keep=lambda p: p.overlap_ratio >= m)
                for g, b in zip(gts, bases) if g]
        if not vals:
            raise NoGroundTruthError("no ground-truth gestures to evaluate")
        curve.append((float(m), float(np.mean(vals))))
    return curve


# ---------------------------------------------------------------------------
# corpus-level evaluation report

@dataclass
class SequenceEval:
    seq_id: str
    n_gt: int
    n_det: int
    matched: int
    dr: float
    fp: float
    ji: float


@dataclass
class EvalReport:
    protocol: str
    mor: float
    dr: float
    fp: float
    ji: float
    dr_std: float
    fp_std: float
    ji_std: float
    mean_delay: float
    median_delay: float
    per_class_dr: dict  # label -> (matched, total)
    fp_by_label: dict  # label -> count
    fp_by_category: dict  # category -> count (empty without a mapping)
    ji_mor: list  # (mor, ji) samples
    per_sequence: list  # SequenceEval rows

    def to_csv(self):
        lines = ["section,key,value"]
        agg = [("protocol", self.protocol), ("mor", self.mor),
               ("dr", self.dr), ("dr_std", self.dr_std),
               ("fp", self.fp), ("fp_std", self.fp_std),
               ("ji", self.ji), ("ji_std", self.ji_std),
               ("mean_delay", self.mean_delay),
               ("median_delay", self.median_delay)]
        for k, v in agg:
            lines.append(f"aggregate,{k},{v}")
        for label in sorted(self.per_class_dr):
            matched, total = self.per_class_dr[label]
            dr = matched / total if total else 0.0
            lines.append(f"per_class_dr,{label},{dr}")
        for label in sorted(self.fp_by_label):
            lines.append(f"fp_by_label,{label},{self.fp_by_label[label]}")
        for cat in sorted(self.fp_by_category):
            lines.append(f"fp_by_category,{cat},{self.fp_by_category[cat]}")
        for m, v in self.ji_mor:
            lines.append(f"ji_mor,{m},{v}")
        for row in self.per_sequence:
            lines.append(
                f"per_sequence,{row.seq_id},"
                f"dr={row.dr} fp={row.fp} ji={row.ji} "
                f"n_gt={row.n_gt} n_det={row.n_det}")
        return "\n".join(lines) + "\n"


def evaluate(gt_by_seq, det_by_seq, mor=0.5, protocol="shrec22", fps=None,
             ji_sweep=None, categories=None):
    """Full evaluation of detections against ground truth.

    gt_by_seq: dict sequence id -> annotations; det_by_seq: dict sequence
    id -> detections (missing ids mean no detections). categories maps
    label -> category name for the FP breakdown.
    """
    if protocol not in ("shrec22", "shrec19"):
        raise ConfigError(f"unknown protocol {protocol!r}")
    unknown = set(det_by_seq) - set(gt_by_seq)
    if unknown:
        raise ConfigError(
            f"detections reference unknown sequences: {sorted(unknown)[:5]}")
    total_gt = sum(len(v) for v in gt_by_seq.values())
    if total_gt == 0:
        raise NoGroundTruthError("no ground-truth gestures to evaluate")

    results = {}
    for seq_id, gt in gt_by_seq.items():
        det = det_by_seq.get(seq_id, [])
        if protocol == "shrec22":
            results[seq_id] = match_detections(gt, det, mor)
        else:
            results[seq_id] = match_shrec19(gt, det, fps)

    per_seq = []
    per_class = {}
    fp_by_label = {}
    delays = []
    for seq_id in sorted(gt_by_seq):
        gt = gt_by_seq[seq_id]
        det = det_by_seq.get(seq_id, [])
        m = results[seq_id]
        for g in gt:
            cnt = per_class.setdefault(g.label, [0, 0])
            cnt[1] += 1
        for p in m.pairs:
            per_class[gt[p.gt_index].label][0] += 1
            delays.append(p.delay)
        for di, used in enumerate(m.det_matched):
            if not used:
                fp_by_label[det[di].label] = fp_by_label.get(det[di].label, 0) + 1
        if m.n_gt:
            per_seq.append(SequenceEval(
                seq_id=seq_id, n_gt=m.n_gt, n_det=m.n_det,
                matched=m.matched_count,
                dr=m.matched_count / m.n_gt,
                fp=m.fp_count / m.n_gt,
                ji=_seq_jaccard(gt, m),
            ))

    ms = list(results.values())
    dr = detection_rate(ms)
    fp = false_positive_score(ms)
    ji = float(np.mean([row.ji for row in per_seq]))
    delay_arr = np.asarray(delays, dtype=np.float64)
    fp_by_cat = {}
    if categories:
        for label, n in fp_by_label.items():
            cat = categories.get(label, "unknown")
            fp_by_cat[cat] = fp_by_cat.get(cat, 0) + n
    curve = []
    if ji_sweep:
        gts = [gt_by_seq[s] for s in sorted(gt_by_seq)]
        dets = [det_by_seq.get(s, []) for s in sorted(gt_by_seq)]
        curve = ji_mor_curve(gts, dets, ji_sweep)

    def _std(vals):
        return float(np.std(vals)) if vals else 0.0

    return EvalReport(
        protocol=protocol, mor=mor, dr=dr, fp=fp, ji=ji,
        dr_std=_std([r.dr for r in per_seq]),
        fp_std=_std([r.fp for r in per_seq]),
        ji_std=_std([r.ji for r in per_seq]),
        mean_delay=float(delay_arr.mean()) if delays else float("nan"),
        median_delay=float(np.median(delay_arr)) if delays else float("nan"),
        per_class_dr={k: tuple(v) for k, v in per_class.items()},
        fp_by_label=fp_by_label,
        fp_by_category=fp_by_cat,
        ji_mor=curve,
        per_sequence=per_seq,
    )
