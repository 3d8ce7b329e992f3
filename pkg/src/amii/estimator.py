"""Scikit-learn style wrappers so the pipeline composes with that ecosystem.

``DyadPreprocessor`` is a transformer over lists of dyad recordings (gap
interpolation, median filtering, 25 fps resampling, standardization with
training statistics). ``AmiiGestureGenerator`` is the estimator: ``fit``
trains the network on recordings, ``predict`` rolls the trained model out
autoregressively over a session. Both expose ``get_params``/``set_params``
via BaseEstimator, so cloning and grid tooling work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import features, inference, model, training
from .errors import DataError
from .features import DyadRecording, FeatureStats

__all__ = ["DyadPreprocessor", "AmiiGestureGenerator", "validate_recordings"]


def validate_recordings(X, min_length: int = 1) -> list[DyadRecording]:
    """Check a recording list: type, non-empty, finite-or-gap values."""
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise DataError("expected a non-empty list of DyadRecording objects")
    for rec in X:
        if not isinstance(rec, DyadRecording):
            raise DataError(f"expected DyadRecording, got {type(rec).__name__}")
        if len(rec) < min_length:
            raise DataError(
                f"{rec.session_id}: needs >= {min_length} frames, has {len(rec)}")
        for track in (rec.p1, rec.p2):
            for arr in (track.speech, track.face):
                bad = ~(np.isfinite(arr) | np.isnan(arr))
                if bad.any():
                    raise DataError(f"{rec.session_id}: contains +-inf values")
    return list(X)


class DyadPreprocessor(TransformerMixin, BaseEstimator):
    """Clean raw recordings and map them into standardized feature space."""

    def __init__(self, filter_window: int = 5, standardize: bool = True):
        self.filter_window = filter_window
        self.standardize = standardize

    def fit(self, X, y=None):
        X = validate_recordings(X)
        cleaned = [features.clean_recording(r, self.filter_window) for r in X]
        self.stats_: FeatureStats = features.compute_stats(cleaned)
        return self

    def transform(self, X) -> list[DyadRecording]:
        check_is_fitted(self)
        X = validate_recordings(X)
        out = []
        for rec in X:
            cleaned = features.clean_recording(rec, self.filter_window)
            if self.standardize:
                cleaned = features.standardize_recording(cleaned, self.stats_)
            out.append(cleaned)
        return out


class AmiiGestureGenerator(BaseEstimator):
    """Fit the dyadic gesture network; predict agent face streams.

    Hyperparameters mirror the architecture and trainer knobs; ablation
    switches rewire the network as in the ablation studies. `window_stride`
    thins the training windows (stride in frames) to trade epoch cost for
    coverage.
    """

    def __init__(self, window: int = 100, heads: int = 2, cell: int = 16,
                 decoder_hidden: int = 20, pooling: str = "last",
                 use_memory_lstm: bool = True,
                 use_dual_cross_attention: bool = True,
                 use_inter_encoder: bool = True,
                 epochs: int = 5, batch_size: int = 32,
                 base_lr: float = 1e-7, max_lr: float = 1e-3,
                 step_size_factor: int = 10, grad_clip: float | None = None,
                 window_stride: int = 1, filter_window: int = 5, seed: int = 0):
        self.window = window
        self.heads = heads
        self.cell = cell
        self.decoder_hidden = decoder_hidden
        self.pooling = pooling
        self.use_memory_lstm = use_memory_lstm
        self.use_dual_cross_attention = use_dual_cross_attention
        self.use_inter_encoder = use_inter_encoder
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.max_lr = max_lr
        self.step_size_factor = step_size_factor
        self.grad_clip = grad_clip
        self.window_stride = window_stride
        self.filter_window = filter_window
        self.seed = seed

    # -- configuration ---------------------------------------------------

    def model_config(self) -> model.AmiiConfig:
        return model.AmiiConfig(
            window=self.window, heads=self.heads, cell=self.cell,
            decoder_hidden=self.decoder_hidden, pooling=self.pooling,
            use_memory_lstm=self.use_memory_lstm,
            use_dual_cross_attention=self.use_dual_cross_attention,
            use_inter_encoder=self.use_inter_encoder,
        )

    def _run_config(self) -> training.TrainRunConfig:
        return training.TrainRunConfig(
            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
            base_lr=self.base_lr, max_lr=self.max_lr,
            step_size_factor=self.step_size_factor, grad_clip=self.grad_clip,
        )

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y=None, val: list[DyadRecording] | None = None):
        """Train on raw recordings; statistics come from X only."""
        config = self.model_config()
        X = validate_recordings(X, min_length=2)
        pre = DyadPreprocessor(filter_window=self.filter_window).fit(X)
        self.stats_ = pre.stats_
        train_recs = pre.transform(X)
        val_samples = None
        if val:
            val_samples = self._window_samples(pre.transform(val), config)
        train_samples = self._window_samples(train_recs, config)
        result = training.train(config, self._run_config(), train_samples,
                                val_samples)
        self.params_ = result.params
        self.history_ = result
        return self

    def _window_samples(self, recordings, config):
        # make_windows cuts 100-frame windows; shrunken configs re-cut below.
        samples = []
        for rec in recordings:
            n = len(rec)
            if n < config.window + 1:
                raise DataError(
                    f"{rec.session_id}: need {config.window + 1} frames, have {n}")
            for t in range(config.window - 1, n - 1, self.window_stride):
                lo = t - config.window + 1
                for a, u in ((rec.p1, rec.p2), (rec.p2, rec.p1)):
                    samples.append(features.TrainingSample(
                        a_speech=a.speech[lo:t + 1], a_face=a.face[lo:t + 1],
                        u_speech=u.speech[lo:t + 1], u_face=u.face[lo:t + 1],
                        y_a=a.face[t + 1], y_u=u.face[t + 1]))
        return samples

    def predict(self, recording: DyadRecording, t_out: int | None = None,
                person: str = "p1") -> np.ndarray:
        """Roll the model out over a raw session; the chosen person is the
        agent, the other supplies ground-truth partner streams. Returns
        [t_out x 10] face frames in raw units, aligned to frames
        window..window+t_out-1 of the cleaned session."""
        check_is_fitted(self)
        config = self.model_config()
        cleaned = features.clean_recording(recording, self.filter_window)
        std = features.standardize_recording(cleaned, self.stats_)
        if person not in ("p1", "p2"):
            raise DataError(f"person must be p1 or p2, got {person!r}")
        agent = std.p1 if person == "p1" else std.p2
        partner = std.p2 if person == "p1" else std.p1
        if t_out is None:
            t_out = len(std) - config.window
        return inference.rollout(self.params_, config, self.stats_,
                                 agent.speech, partner,
                                 agent.face[:config.window], t_out)

    # -- persistence -------------------------------------------------------

    def save(self, path: str) -> None:
        check_is_fitted(self)
        training.save_checkpoint(path, self.params_, self.model_config(),
                                 self.stats_)

    def load_params(self, path: str) -> "AmiiGestureGenerator":
        """Load a checkpoint into this estimator; its config must match."""
        params, _, stats = training.load_checkpoint(
            path, expected_config=self.model_config())
        self.params_ = params
        self.stats_ = stats
        return self

    @classmethod
    def from_checkpoint(cls, path: str, **train_kwargs) -> "AmiiGestureGenerator":
        params, config, stats = training.load_checkpoint(path)
        init_keys = cls().get_params()
        arch = {k: v for k, v in config.to_dict().items() if k in init_keys}
        est = cls(**{**arch, **train_kwargs})
        est.params_ = params
        est.stats_ = stats
        return est
