"""Objective evaluation of generated facial streams.

Appropriateness metrics (MAE, RMSE, two-sample KS) compare the agent's
predictions against its own ground truth in standardized feature space.
Reciprocal-adaptation resemblance metrics (time-lagged cross-correlation,
chunked DTW, synchrony events, entrainment loops) compare the predicted
smile channel (AU12) against the partner's, and report the ground-truth
pair alongside: the closer a resemblance value sits to the ground-truth
pair's, the better.

Positive lags mean the first series leads (the second follows `lag`
frames later). Peak-lag ties go to the smallest |lag|, then negative
before positive. The synchrony/entrainment operationalization here is a
thresholded windowed peak-lagged-correlation event count and a
lead-sign-alternation count; window, stride, and threshold are parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DataError, ParameterError
from .features import AU12_INDEX, FACE_COLUMNS, FACE_DIM, FeatureStats

__all__ = [
    "ChunkSpec", "SyncEvent", "MetricsReport",
    "mae", "rmse", "ks_two_sample", "pcc",
    "tlcc", "dtw", "dtw_distance", "sync_score", "entrainment_loop",
    "evaluate",
]


@dataclass(frozen=True)
class ChunkSpec:
    """Chunking/windowing parameters for the resemblance metrics (25 fps)."""

    fps: float = 25.0
    tlcc_chunk_s: float = 8.0
    tlcc_max_lag_s: float = 2.0
    dtw_chunk_s: float = 60.0
    dtw_stride_s: float = 30.0
    sync_window_s: float = 8.0
    sync_stride_s: float = 2.0
    sync_threshold: float = 0.5
    min_overlap: int = 100

    def __post_init__(self):
        if self.tlcc_chunk_s <= 2 * self.tlcc_max_lag_s:
            raise ParameterError("tlcc chunk must exceed twice the max lag")
        if self.dtw_stride_s > self.dtw_chunk_s:
            raise ParameterError("dtw stride must not exceed the chunk length")

    @property
    def tlcc_chunk(self) -> int:
        return int(round(self.tlcc_chunk_s * self.fps))

    @property
    def tlcc_max_lag(self) -> int:
        return int(round(self.tlcc_max_lag_s * self.fps))

    @property
    def dtw_chunk(self) -> int:
        return int(round(self.dtw_chunk_s * self.fps))

    @property
    def dtw_stride(self) -> int:
        return int(round(self.dtw_stride_s * self.fps))

    @property
    def sync_window(self) -> int:
        return int(round(self.sync_window_s * self.fps))

    @property
    def sync_stride(self) -> int:
        return int(round(self.sync_stride_s * self.fps))


# ---------------------------------------------------------------------------
# appropriateness


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise DataError(f"length/shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def mae(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-feature mean absolute error and its mean across features."""
    pred, truth = _check_pair(pred, truth)
    per = np.abs(pred - truth).mean(axis=0)
    return per, float(per.mean())


def rmse(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-feature root-mean-square error and its mean across features."""
    pred, truth = _check_pair(pred, truth)
    per = np.sqrt(((pred - truth) ** 2).mean(axis=0))
    return per, float(per.mean())


def ks_two_sample(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |ECDF_x - ECDF_y|."""
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    y = np.sort(np.asarray(y, dtype=np.float64).ravel())
    if len(x) == 0 or len(y) == 0:
        raise DataError("KS statistic needs two non-empty samples")
    grid = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, grid, side="right") / len(x)
    cdf_y = np.searchsorted(y, grid, side="right") / len(y)
    return float(np.abs(cdf_x - cdf_y).max())


def ks_per_feature(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, float]:
    pred, truth = _check_pair(pred, truth)
    per = np.array([ks_two_sample(pred[:, j], truth[:, j])
                    for j in range(pred.shape[1])])
    return per, float(per.mean())


# ---------------------------------------------------------------------------
# correlation machinery


def pcc(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; raises on constant input."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y) or len(x) < 2:
        raise DataError(f"correlation needs equal lengths >= 2, got {len(x)}/{len(y)}")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DataError("correlation undefined for a constant series")
    return float(np.corrcoef(x, y)[0, 1])


def _safe_r(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation or NaN when undefined."""
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return math.nan
    return float(np.corrcoef(x, y)[0, 1])


def _lag_order(max_lag: int) -> list[int]:
    # Tie-break priority: smallest |lag| first, negative before positive.
    order = [0]
    for mag in range(1, max_lag + 1):
        order.extend([-mag, mag])
    return order


def _peak_lagged_r(a: np.ndarray, u: np.ndarray, max_lag: int, min_overlap: int,
                   by_magnitude: bool) -> tuple[float, int] | None:
    """Best (correlation, lag) over trimmed alignments; None if all undefined.

    Positive lag pairs a[t] with u[t + lag]; `by_magnitude` ranks by |r|
    (for synchrony events) instead of signed r.
    """
    n = len(a)
    best_r = math.nan
    best_lag = 0
    for lag in _lag_order(max_lag):
        if n - abs(lag) < max(min_overlap, 2):
            continue
        if lag >= 0:
            r = _safe_r(a[: n - lag], u[lag:])
        else:
            r = _safe_r(a[-lag:], u[: n + lag])
        if math.isnan(r):
            continue
        key = abs(r) if by_magnitude else r
        best_key = abs(best_r) if by_magnitude else best_r
        if math.isnan(best_r) or key > best_key:
            best_r, best_lag = r, lag
    if math.isnan(best_r):
        return None
    return best_r, best_lag


def tlcc(a: np.ndarray, u: np.ndarray, spec: ChunkSpec = ChunkSpec(),
         ) -> tuple[float, float]:
    """Chunked time-lagged cross-correlation.

    Cuts the pair into non-overlapping chunks, finds each chunk's peak
    Pearson correlation over integer lags within +-max_lag, and returns the
    means of (peak correlation, peak lag) over chunks.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    n = min(len(a), len(u))
    chunk = spec.tlcc_chunk
    if n < chunk:
        raise DataError(f"TLCC needs at least {chunk} frames, have {n}")
    peaks = []
    lags = []
    for lo in range(0, n - chunk + 1, chunk):
        found = _peak_lagged_r(a[lo:lo + chunk], u[lo:lo + chunk],
                               spec.tlcc_max_lag, spec.min_overlap,
                               by_magnitude=False)
        if found is None:
            continue
        peaks.append(found[0])
        lags.append(found[1])
    if not peaks:
        raise DataError("TLCC undefined: every chunk was constant")
    return float(np.mean(peaks)), float(np.mean(lags))


# ---------------------------------------------------------------------------
# dynamic time warping


def dtw_distance(a: np.ndarray, u: np.ndarray) -> float:
    """Unnormalized DTW alignment cost with local cost |a_i - u_j|.

    Classic dynamic program evaluated along antidiagonals so the inner
    recurrence vectorizes; endpoints are pinned (full alignment).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    m, n = len(a), len(u)
    if m == 0 or n == 0:
        raise DataError("DTW needs two non-empty sequences")
    prev2 = np.full(m, np.inf)
    prev = np.full(m, np.inf)
    for k in range(m + n - 1):
        i_lo, i_hi = max(0, k - n + 1), min(k, m - 1)
        ii = np.arange(i_lo, i_hi + 1)
        cost = np.abs(a[ii] - u[k - ii])
        cur = np.full(m, np.inf)
        if k == 0:
            cur[0] = cost[0]
        else:
            shifted = np.maximum(ii - 1, 0)
            up = np.where(ii >= 1, prev[shifted], np.inf)
            diag = np.where(ii >= 1, prev2[shifted], np.inf)
            left = prev[ii]
            cur[ii] = cost + np.minimum(np.minimum(up, left), diag)
        prev2, prev = prev, cur
    return float(prev[m - 1])


def dtw(a: np.ndarray, u: np.ndarray, spec: ChunkSpec = ChunkSpec()) -> float:
    """Mean DTW cost over strided chunks of the pair."""
    a = np.asarray(a, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    n = min(len(a), len(u))
    chunk, stride = spec.dtw_chunk, spec.dtw_stride
    if n < chunk:
        raise DataError(f"DTW needs at least {chunk} frames, have {n}")
    costs = [dtw_distance(a[lo:lo + chunk], u[lo:lo + chunk])
             for lo in range(0, n - chunk + 1, stride)]
    return float(np.mean(costs))


# ---------------------------------------------------------------------------
# synchrony and entrainment


@dataclass(frozen=True)
class SyncEvent:
    """One window whose peak lagged |correlation| cleared the threshold."""

    window: int
    peak: float
    lag: int

    @property
    def lag_sign(self) -> int:
        return (self.lag > 0) - (self.lag < 0)


def sync_score(a: np.ndarray, u: np.ndarray, spec: ChunkSpec = ChunkSpec(),
               ) -> tuple[int, list[SyncEvent]]:
    """Count sliding windows with peak lagged |Pearson| at or above the
    threshold; returns (event count, events). Windows whose correlations
    are all undefined (constant signals) produce no event."""
    a = np.asarray(a, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    n = min(len(a), len(u))
    window, stride = spec.sync_window, spec.sync_stride
    if n < window:
        raise DataError(f"synchrony needs at least {window} frames, have {n}")
    events = []
    for w, lo in enumerate(range(0, n - window + 1, stride)):
        found = _peak_lagged_r(a[lo:lo + window], u[lo:lo + window],
                               spec.tlcc_max_lag, spec.min_overlap,
                               by_magnitude=True)
        if found is None:
            continue
        r, lag = found
        if abs(r) >= spec.sync_threshold:
            events.append(SyncEvent(window=w, peak=abs(r), lag=lag))
    return len(events), events


def window_count(n: int, spec: ChunkSpec = ChunkSpec()) -> int:
    """How many sliding synchrony windows fit in n frames."""
    if n < spec.sync_window:
        return 0
    return (n - spec.sync_window) // spec.sync_stride + 1


def entrainment_loop(events: list[SyncEvent]) -> int:
    """Count lead-sign alternations between consecutive signed events.

    Zero-lag events are sign-neutral: they neither alternate nor break a
    chain, so signs are compared across them.
    """
    signed = [e.lag_sign for e in events if e.lag_sign != 0]
    return sum(1 for prev, cur in zip(signed, signed[1:]) if prev != cur)


# ---------------------------------------------------------------------------
# full report


@dataclass
class PairMetrics:
    tlcc_corr: float
    tlcc_lag: float
    dtw: float
    sync: float
    el: float


@dataclass
class MetricsReport:
    """Everything the evaluation emits for one generated interaction."""

    feature_names: list[str]
    mae_per_feature: np.ndarray
    rmse_per_feature: np.ndarray
    ks_per_feature: np.ndarray
    mae: float
    rmse: float
    ks: float
    pred_pair: PairMetrics
    gt_pair: PairMetrics
    spec: ChunkSpec
    extras: dict[str, float] = field(default_factory=dict)

    def deltas(self) -> PairMetrics:
        return PairMetrics(
            tlcc_corr=self.pred_pair.tlcc_corr - self.gt_pair.tlcc_corr,
            tlcc_lag=self.pred_pair.tlcc_lag - self.gt_pair.tlcc_lag,
            dtw=self.pred_pair.dtw - self.gt_pair.dtw,
            sync=self.pred_pair.sync - self.gt_pair.sync,
            el=self.pred_pair.el - self.gt_pair.el,
        )

    def rows(self) -> list[tuple[str, str, float]]:
        """(metric, scope, value) rows: per-feature appropriateness, means,
        resemblance for both pairs plus deltas, echoed chunk parameters."""
        out: list[tuple[str, str, float]] = []
        for j, name in enumerate(self.feature_names):
            out.append(("mae", name, float(self.mae_per_feature[j])))
            out.append(("rmse", name, float(self.rmse_per_feature[j])))
            out.append(("ks", name, float(self.ks_per_feature[j])))
        out.append(("mae", "mean", self.mae))
        out.append(("rmse", "mean", self.rmse))
        out.append(("ks", "mean", self.ks))
        deltas = self.deltas()
        for metric in ("tlcc_corr", "tlcc_lag", "dtw", "sync", "el"):
            out.append((metric, "pred_pair", getattr(self.pred_pair, metric)))
            out.append((metric, "gt_pair", getattr(self.gt_pair, metric)))
            out.append((metric, "delta", getattr(deltas, metric)))
        for name, value in self.extras.items():
            out.append((name, "extra", value))
        for f in fields(self.spec):
            out.append(("chunk_spec." + f.name, "param",
                        float(getattr(self.spec, f.name))))
        return out

    def summary(self) -> str:
        d = self.deltas()
        lines = [
            "appropriateness (standardized space, vs agent ground truth):",
            f"  mae   {self.mae:.6f}",
            f"  rmse  {self.rmse:.6f}",
            f"  ks    {self.ks:.6f}",
            "resemblance on AU12 (predicted-vs-partner | ground-truth pair | delta):",
            f"  tlcc  {self.pred_pair.tlcc_corr:.4f} | {self.gt_pair.tlcc_corr:.4f}"
            f" | {d.tlcc_corr:+.4f}",
            f"  dtw   {self.pred_pair.dtw:.2f} | {self.gt_pair.dtw:.2f}"
            f" | {d.dtw:+.2f}",
            f"  sync  {self.pred_pair.sync:.0f} | {self.gt_pair.sync:.0f}"
            f" | {d.sync:+.0f}",
            f"  el    {self.pred_pair.el:.0f} | {self.gt_pair.el:.0f}"
            f" | {d.el:+.0f}",
        ]
        return "\n".join(lines)


def _pair_metrics(a: np.ndarray, u: np.ndarray, spec: ChunkSpec) -> PairMetrics:
    corr, lag = tlcc(a, u, spec)
    cost = dtw(a, u, spec)
    count, events = sync_score(a, u, spec)
    return PairMetrics(tlcc_corr=corr, tlcc_lag=lag, dtw=cost,
                       sync=float(count), el=float(entrainment_loop(events)))


def evaluate(pred_face: np.ndarray, gt_a_face: np.ndarray, gt_u_face: np.ndarray,
             spec: ChunkSpec = ChunkSpec(),
             stats: FeatureStats | None = None) -> MetricsReport:
    """Score a generated agent face stream against the ground-truth dyad.

    All three inputs are [N x 10] in raw feature units and frame-aligned.
    Appropriateness compares pred vs gt_a in standardized space (statistics
    from `stats` or, by default, from gt_a itself). Resemblance compares
    the AU12 channels of (pred, gt_u) and of (gt_a, gt_u) in raw units.
    """
    pred_face, gt_a_face = _check_pair(pred_face, gt_a_face)
    _, gt_u_face = _check_pair(pred_face, gt_u_face)
    if pred_face.shape[1] != FACE_DIM:
        raise DataError(f"expected {FACE_DIM} facial features, got {pred_face.shape[1]}")

    if stats is None:
        mean = gt_a_face.mean(axis=0)
        std = gt_a_face.std(axis=0)
    else:
        mean, std = stats.face_mean, stats.face_std
    std = np.maximum(std, 1e-6)
    pred_z = (pred_face - mean) / std
    gt_z = (gt_a_face - mean) / std

    mae_per, mae_mean = mae(pred_z, gt_z)
    rmse_per, rmse_mean = rmse(pred_z, gt_z)
    ks_per, ks_mean = ks_per_feature(pred_z, gt_z)

    pred_pair = _pair_metrics(pred_face[:, AU12_INDEX], gt_u_face[:, AU12_INDEX], spec)
    gt_pair = _pair_metrics(gt_a_face[:, AU12_INDEX], gt_u_face[:, AU12_INDEX], spec)

    return MetricsReport(
        feature_names=list(FACE_COLUMNS),
        mae_per_feature=mae_per, rmse_per_feature=rmse_per, ks_per_feature=ks_per,
        mae=mae_mean, rmse=rmse_mean, ks=ks_mean,
        pred_pair=pred_pair, gt_pair=gt_pair, spec=spec,
    )
