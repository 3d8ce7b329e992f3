"""Autoregressive online prediction of the agent's facial stream.

Each step runs the trained network on four sliding 100-frame windows,
appends the predicted agent face frame to the agent-side face window, and
advances every other window on ground truth: the agent's own speech is a
known input (an agent knows its speech plan), the partner's streams are
observed. Only the agent-side prediction is kept; the partner-side output
of the shared decoder is discarded here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ParamSet, Tape
from .errors import TruncationError
from .features import FACE_DIM, FeatureStats, PersonTrack, destandardize_face
from .model import AmiiConfig, Batch, forward


@dataclass
class RolloutState:
    """Sliding windows plus provenance bookkeeping.

    `frame` indexes the newest frame currently inside the windows;
    `predicted` counts how many agent-face rows are model output (the
    window therefore holds max(0, T - predicted) seed frames followed by
    min(predicted, T) predictions, oldest first).
    """

    a_speech: np.ndarray
    a_face: np.ndarray
    u_speech: np.ndarray
    u_face: np.ndarray
    frame: int
    predicted: int = 0

    def step(self, params: ParamSet, config: AmiiConfig,
             next_a_speech: np.ndarray, next_u_speech: np.ndarray,
             next_u_face: np.ndarray) -> np.ndarray:
        """Predict the next agent face frame and slide every window."""
        batch = Batch(a_speech=self.a_speech[None], a_face=self.a_face[None],
                      u_speech=self.u_speech[None], u_face=self.u_face[None])
        acts = forward(Tape(grad=False), batch, params, config)
        y = acts.y_a.data[0]
        self.a_face = np.concatenate([self.a_face[1:], y[None]])
        self.a_speech = np.concatenate([self.a_speech[1:], next_a_speech[None]])
        self.u_speech = np.concatenate([self.u_speech[1:], next_u_speech[None]])
        self.u_face = np.concatenate([self.u_face[1:], next_u_face[None]])
        self.frame += 1
        self.predicted += 1
        return y


def rollout(params: ParamSet, config: AmiiConfig, stats: FeatureStats,
            a_speech: np.ndarray, u_track: PersonTrack,
            seed_window: np.ndarray, t_out: int) -> np.ndarray:
    """Generate `t_out` agent face frames starting after the seed window.

    `a_speech` [N x 16] and `u_track` must already be standardized and
    supply at least 100 + t_out frames; `seed_window` is the first 100
    ground-truth agent face frames (standardized). The return value is
    [t_out x 10] in destandardized feature units.
    """
    t_len = config.window
    if seed_window.shape != (t_len, FACE_DIM):
        raise TruncationError(
            f"seed window must be [{t_len} x {FACE_DIM}], got {seed_window.shape}")
    available = min(len(a_speech), len(u_track))
    producible = max(0, available - t_len)
    if producible < t_out:
        raise TruncationError(
            f"streams supply {available} frames: only {producible} of "
            f"{t_out} requested frames can be produced")

    state = RolloutState(
        a_speech=a_speech[:t_len].copy(),
        a_face=seed_window.copy(),
        u_speech=u_track.speech[:t_len].copy(),
        u_face=u_track.face[:t_len].copy(),
        frame=t_len - 1,
    )
    outputs = np.empty((t_out, FACE_DIM))
    for k in range(t_out):
        nxt = t_len + k
        outputs[k] = state.step(params, config,
                                a_speech[nxt], u_track.speech[nxt],
                                u_track.face[nxt])
    return destandardize_face(outputs, stats)


def continuity_ratio(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean per-step |delta| of the prediction over that of the truth.

    A divergence/oscillation guard for rollout output on one channel;
    values well above 1 flag jitter the ground truth does not have.
    """
    pred_delta = np.abs(np.diff(np.asarray(pred, dtype=np.float64)))
    truth_delta = np.abs(np.diff(np.asarray(truth, dtype=np.float64)))
    denom = truth_delta.mean() if len(truth_delta) else 0.0
    if denom == 0.0:
        return np.inf if pred_delta.size and pred_delta.mean() > 0 else 0.0
    return float(pred_delta.mean() / denom)
