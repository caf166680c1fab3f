"""Estimator-style wrapper over the train/infer/eval pipeline.

GestureRecognizer holds the training hyperparameters as constructor
arguments (so get_params/set_params/clone behave as usual), fits on a list
of annotated PoseSequences, and predicts per-frame label tracks or
detection events for new streams.
"""

from sklearn.base import BaseEstimator

from .errors import ConfigError
from .infer import run_offline_batched
from .metrics import evaluate
from .pose import PoseSequence
from .train import TrainConfig, train


def as_corpus(X):
    """Validate estimator input: one PoseSequence or a list of them."""
    if isinstance(X, PoseSequence):
        return [X], True
    if isinstance(X, (list, tuple)) and X and all(
            isinstance(s, PoseSequence) for s in X):
        return list(X), False
    raise ConfigError(
        "expected a PoseSequence or a non-empty list of PoseSequence, "
        f"got {type(X).__name__}")


class GestureRecognizer(BaseEstimator):
    """Continuous gesture recognizer with scikit-learn estimator manners.

    fit(X) trains on annotated sequences; predict(X) returns per-frame
    final labels (-1 during warm-up); detect(X) returns detection events;
    score(X) is the detection rate against X's own annotations at the
    configured minimum overlap ratio.
    """

    def __init__(self, w=16, epochs=100, stride=1, batch_size=256, lr=None,
                 optimizer="adafactor", head_set="full",
                 on_off_policy="exact", policy_p=0.5, overlap_threshold=0.5,
                 motion_mode="per_axis", scale=1.0, attribution="center",
                 mor=0.5, val_fraction=0.1, seed=0):
        self.w = w
        self.epochs = epochs
        self.stride = stride
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.head_set = head_set
        self.on_off_policy = on_off_policy
        self.policy_p = policy_p
        self.overlap_threshold = overlap_threshold
        self.motion_mode = motion_mode
        self.scale = scale
        self.attribution = attribution
        self.mor = mor
        self.val_fraction = val_fraction
        self.seed = seed

    def _train_config(self):
        return TrainConfig(
            w=self.w, epochs=self.epochs, stride=self.stride,
            batch_size=self.batch_size, lr=self.lr, optimizer=self.optimizer,
            head_set=self.head_set, on_off_policy=self.on_off_policy,
            policy_p=self.policy_p, overlap_threshold=self.overlap_threshold,
            motion_mode=self.motion_mode, scale=self.scale,
            val_fraction=self.val_fraction, seed=self.seed,
        ).validate()

    def fit(self, X, y=None):
        corpus, _ = as_corpus(X)
        for seq in corpus:
            seq.validate()
        result = train(corpus, self._train_config())
        self.params_ = result.best_params
        self.train_log_ = result.log
        self.feature_ = result.feature
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise ConfigError("recognizer is not fitted; call fit first")

    def predict(self, X):
        """Per-frame final labels for each sequence; -1 while warming up."""
        self._require_fitted()
        corpus, single = as_corpus(X)
        tracks = []
        for seq in corpus:
            _, track = run_offline_batched(seq, self.params_,
                                           feature=self.feature_,
                                           attribution=self.attribution)
            tracks.append(track)
        return tracks[0] if single else tracks

    def detect(self, X):
        """Detection events for each sequence."""
        self._require_fitted()
        corpus, single = as_corpus(X)
        out = []
        for seq in corpus:
            events, _ = run_offline_batched(seq, self.params_,
                                            feature=self.feature_,
                                            attribution=self.attribution)
            out.append(events)
        return out[0] if single else out

    def evaluate(self, X, mor=None, ji_sweep=None, categories=None):
        """Full evaluation report of self.detect(X) against X's annotations."""
        self._require_fitted()
        corpus, _ = as_corpus(X)
        gt = {}
        det = {}
        for i, seq in enumerate(corpus):
            sid = seq.source_id or f"seq_{i:04d}"
            gt[sid] = seq.annotations
            events, _ = run_offline_batched(seq, self.params_,
                                            feature=self.feature_,
                                            attribution=self.attribution)
            det[sid] = events
        return evaluate(gt, det, mor=mor if mor is not None else self.mor,
                        ji_sweep=ji_sweep, categories=categories)

    def score(self, X, y=None):
        """Detection rate at the configured minimum overlap ratio."""
        return self.evaluate(X).dr
