"""Continuous hand-gesture recognition from 3D pose streams.

Synthetic corpus generation, gated multi-view multi-task training, online
sliding-window inference with majority-vote smoothing, and the full
detection/segmentation evaluation protocol.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, EmptyCorpusError, GespotError,
                     InvalidFpsError, InvalidMorError, InvariantViolation,
                     NoGroundTruthError, NoMatchesError, OutOfRangeError,
                     ParseError, SequenceTooShortError, ShapeError,
                     SingleSubjectError, SpecError)
from .pose import (CATEGORIES, NON_GESTURE, GestureAnnotation,
                   GestureDictionary, PoseFrame, PoseSequence)
from .pose_io import (AdapterConfig, format_canonical, load_corpus,
                      parse_canonical, parse_sequence, save_corpus,
                      split_train_test, write_sequence)
from .synth import (GestureTemplate, NonGestureModel, SynthConfig,
                    build_hand, generate_corpus, generate_sequence)
from .features import (SDN_D, SDN_N, SDN_S, FeatureConfig, SequenceFeatures,
                       TaskLabels, ViewSet, Window, WindowSample,
                       compute_views, jcd, m_fast, m_slow, make_sample,
                       window_labels)
from .model import (EncoderSpec, ForwardOutput, HeadSpec, ModelParams,
                    ModelSpec, forward, forward_fine, init_params,
                    load_checkpoint, save_checkpoint)
from .train import (TrainConfig, TrainResult, WindowDataset,
                    apply_on_off_policy, build_window_dataset, loss, train)
from .infer import (DetectionEvent, StreamState, events_from_labels, flush,
                    load_detections, make_stream, measure_step_latency,
                    run_offline, run_offline_batched, step, vote_labels,
                    write_detections)
from .metrics import (EvalReport, MatchResult, delay_stats, detection_rate,
                      evaluate, false_positive_score, jaccard_index,
                      ji_mor_curve, match_detections, match_shrec19)
from .recognizer import GestureRecognizer

__all__ = [
    "__version__",
    # errors
    "GespotError", "ParseError", "ConfigError", "SpecError", "ShapeError",
    "InvariantViolation", "EmptyCorpusError", "SingleSubjectError",
    "SequenceTooShortError", "OutOfRangeError", "InvalidMorError",
    "InvalidFpsError", "NoGroundTruthError", "NoMatchesError",
    # domain types
    "PoseFrame", "PoseSequence", "GestureAnnotation", "GestureDictionary",
    "NON_GESTURE", "CATEGORIES",
    # io
    "parse_sequence", "parse_canonical", "format_canonical", "write_sequence",
    "load_corpus", "save_corpus", "split_train_test", "AdapterConfig",
    # synth
    "SynthConfig", "GestureTemplate", "NonGestureModel", "build_hand",
    "generate_sequence", "generate_corpus",
    # features
    "FeatureConfig", "Window", "ViewSet", "TaskLabels", "WindowSample",
    "SequenceFeatures", "jcd", "m_slow", "m_fast", "compute_views",
    "window_labels", "make_sample", "SDN_S", "SDN_D", "SDN_N",
    # model
    "ModelSpec", "EncoderSpec", "HeadSpec", "ModelParams", "ForwardOutput",
    "init_params", "forward", "forward_fine", "save_checkpoint",
    "load_checkpoint",
    # train
    "TrainConfig", "TrainResult", "WindowDataset", "build_window_dataset",
    "apply_on_off_policy", "loss", "train",
    # infer
    "StreamState", "DetectionEvent", "make_stream", "step", "flush",
    "vote_labels", "events_from_labels", "run_offline",
    "run_offline_batched", "measure_step_latency", "write_detections",
    "load_detections",
    # metrics
    "MatchResult", "EvalReport", "match_detections", "match_shrec19",
    "detection_rate", "false_positive_score", "jaccard_index",
    "ji_mor_curve", "delay_stats", "evaluate",
    # estimator
    "GestureRecognizer",
]
