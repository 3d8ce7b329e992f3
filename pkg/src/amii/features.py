"""Dyadic per-frame feature recordings: ingestion, cleaning, windowing.

A recording pairs two people filmed in conversation, each described per
frame by 16 speech features (f0, loudness, voicing probability, MFCC 0-12)
and 10 facial features (2 gaze angles, 3 Euler head rotations, 5 action-
unit intensities). Everything downstream assumes 25 fps.

Preprocessing order is fixed: fill gaps by linear interpolation, median-
filter each feature, resample to 25 fps, then standardize with statistics
computed on the training split only.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError, SchemaError, SplitError

SPEECH_COLUMNS = ["f0", "loudness", "voicing"] + [f"mfcc{i}" for i in range(13)]
FACE_COLUMNS = ["gaze_x", "gaze_y", "rot_x", "rot_y", "rot_z",
                "au1", "au2", "au4", "au6", "au12"]
CSV_COLUMNS = ["frame"] + SPEECH_COLUMNS + FACE_COLUMNS

SPEECH_DIM = len(SPEECH_COLUMNS)   # 16
FACE_DIM = len(FACE_COLUMNS)       # 10
AU12_INDEX = FACE_COLUMNS.index("au12")

TARGET_FPS = 25.0
WINDOW = 100          # frames of history per training input
STD_FLOOR = 1e-6


@dataclass
class PersonTrack:
    """One person's aligned speech [T x 16] and face [T x 10] series."""

    fps: float
    speech: np.ndarray
    face: np.ndarray

    def __post_init__(self):
        self.speech = np.asarray(self.speech, dtype=np.float64)
        self.face = np.asarray(self.face, dtype=np.float64)
        if len(self.speech) != len(self.face):
            raise DataError(
                f"speech/face lengths differ: {len(self.speech)} vs {len(self.face)}")

    def __len__(self) -> int:
        return len(self.speech)


@dataclass
class DyadRecording:
    """A session: two equal-length person tracks plus participant ids."""

    session_id: str
    p1: PersonTrack
    p2: PersonTrack
    participants: tuple[str, str] = ("", "")

    def __post_init__(self):
        if len(self.p1) != len(self.p2):
            raise DataError(
                f"{self.session_id}: person tracks differ in length: "
                f"{len(self.p1)} vs {len(self.p2)}")
        if self.p1.fps != self.p2.fps:
            raise DataError(f"{self.session_id}: person tracks differ in fps")
        if self.participants == ("", ""):
            self.participants = (f"{self.session_id}.p1", f"{self.session_id}.p2")

    def __len__(self) -> int:
        return len(self.p1)

    @property
    def fps(self) -> float:
        return self.p1.fps


@dataclass
class TrainingSample:
    """100-frame input windows for both people plus both next-frame targets."""

    a_speech: np.ndarray   # [100 x 16]
    a_face: np.ndarray     # [100 x 10]
    u_speech: np.ndarray
    u_face: np.ndarray
    y_a: np.ndarray        # [10]
    y_u: np.ndarray


@dataclass
class FeatureStats:
    """Per-feature mean/std for standardization; std floored at 1e-6."""

    speech_mean: np.ndarray
    speech_std: np.ndarray
    face_mean: np.ndarray
    face_std: np.ndarray

    def __post_init__(self):
        self.speech_mean = np.asarray(self.speech_mean, dtype=np.float64)
        self.speech_std = np.maximum(np.asarray(self.speech_std, np.float64), STD_FLOOR)
        self.face_mean = np.asarray(self.face_mean, dtype=np.float64)
        self.face_std = np.maximum(np.asarray(self.face_std, np.float64), STD_FLOOR)


# ---------------------------------------------------------------------------
# ingestion


def _parse_person_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read one person CSV into (speech [T x 16], face [T x 10]) arrays.

    Empty cells and the literal ``NaN`` (any case) mark gaps and come back
    as NaN values for the interpolation stage.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        idx = [header.index(c) for c in CSV_COLUMNS[1:]]   # skip frame counter

        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for col, j in zip(CSV_COLUMNS[1:], idx):
                cell = row[j].strip() if j < len(row) else ""
                if cell == "" or cell.lower() == "nan":
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}: non-numeric value {cell!r} "
                        f"in column {col!r}") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    return table[:, :SPEECH_DIM], table[:, SPEECH_DIM:]


def _read_meta(path: str) -> dict[str, str]:
    meta: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def load_recording(path_p1: str, path_p2: str,
                   meta_path: str | None = None) -> DyadRecording:
    """Load a session from two per-person CSVs plus an optional sidecar meta.

    The two tracks are truncated to the shorter one. The meta file supplies
    ``participant_p1``, ``participant_p2``, and ``fps`` (default 25).
    """
    s1, f1 = _parse_person_csv(path_p1)
    s2, f2 = _parse_person_csv(path_p2)
    n = min(len(s1), len(s2))

    fps = TARGET_FPS
    session = os.path.basename(path_p1)
    for suffix in (".p1.csv", ".csv"):
        if session.endswith(suffix):
            session = session[: -len(suffix)]
            break
    participants = ("", "")
    if meta_path is None:
        candidate = os.path.join(os.path.dirname(path_p1), session + ".meta")
        meta_path = candidate if os.path.exists(candidate) else None
    if meta_path is not None:
        meta = _read_meta(meta_path)
        if "fps" in meta:
            fps = float(meta["fps"])
        participants = (meta.get("participant_p1", ""), meta.get("participant_p2", ""))

    rec = DyadRecording(
        session_id=session,
        p1=PersonTrack(fps=fps, speech=s1[:n], face=f1[:n]),
        p2=PersonTrack(fps=fps, speech=s2[:n], face=f2[:n]),
    )
    if participants != ("", ""):
        rec.participants = participants
    return rec


def write_person_csv(path: str, speech: np.ndarray, face: np.ndarray,
                     start_frame: int = 0) -> None:
    """Emit the ingestion schema with 17-significant-digit floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(len(speech)):
            cells = [str(start_frame + i)]
            cells += ["%.17g" % v for v in speech[i]]
            cells += ["%.17g" % v for v in face[i]]
            fh.write(",".join(cells) + "\n")


def write_face_csv(path: str, face: np.ndarray, start_frame: int = 0) -> None:
    """Facial-features-only schema (frame column plus the 10 face columns),
    used for generated output; floats carry 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["frame"] + FACE_COLUMNS) + "\n")
        for i in range(len(face)):
            cells = [str(start_frame + i)] + ["%.17g" % v for v in face[i]]
            fh.write(",".join(cells) + "\n")


def read_face_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a face-only CSV back as (frame indices, [N x 10] values)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        wanted = ["frame"] + FACE_COLUMNS
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        idx = [header.index(c) for c in wanted]
        frames, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(row[j]) for j in idx]
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {lineno}: malformed values") from None
            frames.append(int(values[0]))
            rows.append(values[1:])
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(frames, dtype=np.int64), np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# cleaning


def interpolate_gaps(series: np.ndarray) -> np.ndarray:
    """Fill NaN gaps linearly; leading/trailing gaps hold the nearest value.

    Raises DataError when every value is missing.
    """
    series = np.asarray(series, dtype=np.float64)
    valid = ~np.isnan(series)
    if not valid.any():
        raise DataError("cannot interpolate an all-missing series")
    if valid.all():
        return series.copy()
    idx = np.flatnonzero(valid)
    return np.interp(np.arange(len(series)), idx, series[idx])


def median_filter(series: np.ndarray, window: int = 5) -> np.ndarray:
    """Centered running median; edges use the shrunken available window.

    The window must be odd. An even-count edge window takes the mean of the
    two central order statistics (numpy's median convention).
    """
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"median filter window must be odd and >= 1, got {window}")
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    if window == 1 or n == 0:
        return series.copy()
    k = window // 2
    out = np.empty(n)
    if n >= window:
        inner = np.lib.stride_tricks.sliding_window_view(series, window)
        out[k:n - k] = np.median(inner, axis=-1)
    for i in range(min(k, n)):
        out[i] = np.median(series[: i + k + 1])
    for i in range(max(n - k, 0), n):
        out[i] = np.median(series[i - k:])
    return out


def resample_to_fps(series: np.ndarray, src_fps: float,
                    target_fps: float = TARGET_FPS) -> np.ndarray:
    """Piecewise-linear resampling at timestamps k / target_fps."""
    if src_fps <= 0:
        raise ParameterError(f"source fps must be positive, got {src_fps}")
    series = np.asarray(series, dtype=np.float64)
    if len(series) == 0:
        return series.copy()
    duration = (len(series) - 1) / src_fps
    n_out = int(math.floor(duration * target_fps)) + 1
    t_out = np.arange(n_out) / target_fps
    t_src = np.arange(len(series)) / src_fps
    return np.interp(t_out, t_src, series)


def _clean_matrix(x: np.ndarray, filter_window: int) -> np.ndarray:
    cols = [median_filter(interpolate_gaps(x[:, j]), filter_window)
            for j in range(x.shape[1])]
    return np.column_stack(cols)


def _resample_matrix(x: np.ndarray, src_fps: float) -> np.ndarray:
    cols = [resample_to_fps(x[:, j], src_fps) for j in range(x.shape[1])]
    return np.column_stack(cols)


def clean_recording(rec: DyadRecording, filter_window: int = 5) -> DyadRecording:
    """Interpolate gaps, median-filter, and resample both tracks to 25 fps."""
    tracks = []
    for track in (rec.p1, rec.p2):
        speech = _clean_matrix(track.speech, filter_window)
        face = _clean_matrix(track.face, filter_window)
        if track.fps != TARGET_FPS:
            speech = _resample_matrix(speech, track.fps)
            face = _resample_matrix(face, track.fps)
        tracks.append(PersonTrack(fps=TARGET_FPS, speech=speech, face=face))
    n = min(len(tracks[0]), len(tracks[1]))
    for t in tracks:
        t.speech, t.face = t.speech[:n], t.face[:n]
    return DyadRecording(rec.session_id, tracks[0], tracks[1],
                         participants=rec.participants)


# ---------------------------------------------------------------------------
# standardization


def compute_stats(recordings: list[DyadRecording]) -> FeatureStats:
    """Pool both people of the given (training) recordings into one set of
    per-feature statistics, since the same encoder serves both people."""
    if not recordings:
        raise DataError("cannot compute statistics from zero recordings")
    speech = np.concatenate([t.speech for r in recordings for t in (r.p1, r.p2)])
    face = np.concatenate([t.face for r in recordings for t in (r.p1, r.p2)])
    return FeatureStats(
        speech_mean=speech.mean(axis=0), speech_std=speech.std(axis=0),
        face_mean=face.mean(axis=0), face_std=face.std(axis=0),
    )


def standardize_track(track: PersonTrack, stats: FeatureStats) -> PersonTrack:
    return PersonTrack(
        fps=track.fps,
        speech=(track.speech - stats.speech_mean) / stats.speech_std,
        face=(track.face - stats.face_mean) / stats.face_std,
    )


def destandardize_track(track: PersonTrack, stats: FeatureStats) -> PersonTrack:
    return PersonTrack(
        fps=track.fps,
        speech=track.speech * stats.speech_std + stats.speech_mean,
        face=track.face * stats.face_std + stats.face_mean,
    )


def standardize_recording(rec: DyadRecording, stats: FeatureStats) -> DyadRecording:
    return DyadRecording(rec.session_id,
                         standardize_track(rec.p1, stats),
                         standardize_track(rec.p2, stats),
                         participants=rec.participants)


def destandardize_face(face: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return np.asarray(face) * stats.face_std + stats.face_mean


def standardize_face(face: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return (np.asarray(face) - stats.face_mean) / stats.face_std


# ---------------------------------------------------------------------------
# windowing and splits


def make_windows(rec: DyadRecording, roles: str = "both",
                 stride: int = 1) -> list[TrainingSample]:
    """Cut sliding 100-frame windows with next-frame targets.

    One sample per position t in [99, len-2] (thinned by `stride`); inputs
    cover frames t-99..t and targets are frame t+1. With roles="both" each
    position is emitted twice, once per person-to-agent assignment.
    """
    if roles not in ("both", "p1", "p2"):
        raise ParameterError(f"roles must be both/p1/p2, got {roles!r}")
    n = len(rec)
    if n < WINDOW + 1:
        raise DataError(
            f"{rec.session_id}: need at least {WINDOW + 1} frames, have {n}")
    assignments = []
    if roles in ("both", "p1"):
        assignments.append((rec.p1, rec.p2))
    if roles in ("both", "p2"):
        assignments.append((rec.p2, rec.p1))

    samples = []
    for t in range(WINDOW - 1, n - 1, stride):
        lo = t - WINDOW + 1
        for a, u in assignments:
            samples.append(TrainingSample(
                a_speech=a.speech[lo:t + 1], a_face=a.face[lo:t + 1],
                u_speech=u.speech[lo:t + 1], u_face=u.face[lo:t + 1],
                y_a=a.face[t + 1], y_u=u.face[t + 1],
            ))
    return samples


def split_dataset(recordings: list[DyadRecording],
                  ratios: tuple[float, float, float] = (0.70, 0.10, 0.20),
                  seed: int = 0,
                  ) -> tuple[list[DyadRecording], list[DyadRecording], list[DyadRecording]]:
    """Split sessions into train/val/test with test participants unseen.

    Sessions sharing a participant form atomic groups; each group lands
    either in test or in train+val, so no participant in test ever appears
    in train or val. Frame counts steer a greedy fill toward the requested
    ratios. Raises SplitError when the sharing graph leaves one side empty.
    """
    if len(recordings) < 3:
        raise SplitError(f"need at least 3 recordings to split, have {len(recordings)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must sum to 1, got {ratios}")

    # Union participants into connected groups of recordings.
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for rec in recordings:
        a, b = rec.participants
        parent[find(a)] = find(b)

    groups: dict[str, list[DyadRecording]] = {}
    for rec in recordings:
        groups.setdefault(find(rec.participants[0]), []).append(rec)

    rng = np.random.default_rng(seed)
    keys = sorted(groups)
    order = [keys[i] for i in rng.permutation(len(keys))]

    total = sum(len(r) for r in recordings)
    test: list[DyadRecording] = []
    trainval: list[DyadRecording] = []
    test_frames = 0
    tv_frames = 0
    test_target = ratios[2]
    for key in order:
        members = groups[key]
        frames = sum(len(r) for r in members)
        # Send the group wherever the shortfall against target is larger.
        test_gap = test_target - test_frames / total
        tv_gap = (1.0 - test_target) - tv_frames / total
        if test_gap >= tv_gap:
            test.extend(members)
            test_frames += frames
        else:
            trainval.extend(members)
            tv_frames += frames
    if not test or not trainval:
        raise SplitError("participant overlap leaves train or test empty")

    train: list[DyadRecording] = []
    val: list[DyadRecording] = []
    train_frames = 0
    val_frames = 0
    train_share = ratios[0] / (ratios[0] + ratios[1])
    for rec in trainval:
        frames = len(rec)
        train_gap = train_share - train_frames / max(tv_frames, 1)
        val_gap = (1.0 - train_share) - val_frames / max(tv_frames, 1)
        if train_gap >= val_gap:
            train.append(rec)
            train_frames += frames
        else:
            val.append(rec)
            val_frames += frames
    if not train:
        raise SplitError("no recordings left for the training split")
    return train, val, test


# ---------------------------------------------------------------------------
# synthetic corpus


def _smooth_signal(rng: np.random.Generator, n: int, fps: float,
                   n_components: tuple[int, int] = (3, 5),
                   band: tuple[float, float] = (0.05, 1.0)) -> np.ndarray:
    """Zero-mean band-limited signal: a few random-phase sinusoids."""
    k = int(rng.integers(n_components[0], n_components[1] + 1))
    t = np.arange(n) / fps
    freqs = rng.uniform(band[0], band[1], size=k)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=k)
    amps = rng.uniform(0.5, 1.0, size=k)
    sig = np.zeros(n)
    for f, ph, a in zip(freqs, phases, amps):
        sig += a * np.sin(2.0 * math.pi * f * t + ph)
    return sig / math.sqrt(k)


def _person_features(rng: np.random.Generator, n: int,
                     noise: float) -> tuple[np.ndarray, np.ndarray]:
    """One person's speech/face series built from shared latent signals so
    the speech-face relation is learnable."""
    latents = np.stack([_smooth_signal(rng, n, TARGET_FPS) for _ in range(4)])

    def jitter(size):
        return rng.normal(0.0, noise, size=size) if noise > 0 else 0.0

    speech = np.empty((n, SPEECH_DIM))
    speech[:, 0] = np.maximum(120.0 + 40.0 * latents[0] + 10.0 * jitter(n), 0.0)
    speech[:, 1] = 0.5 + 0.3 * latents[1] + jitter(n)
    speech[:, 2] = 1.0 / (1.0 + np.exp(-(2.0 * latents[1] + jitter(n))))
    for j in range(13):
        mix = latents[j % 4] * (0.8 - 0.04 * j)
        speech[:, 3 + j] = mix + _smooth_signal(rng, n, TARGET_FPS) * 0.3 + jitter(n)

    face = np.empty((n, FACE_DIM))
    face[:, 0] = 0.15 * latents[2] + 0.05 * jitter(n)      # gaze_x
    face[:, 1] = 0.15 * latents[3] + 0.05 * jitter(n)      # gaze_y
    face[:, 2] = 0.2 * latents[0] + 0.05 * jitter(n)       # rot_x
    face[:, 3] = 0.2 * latents[1] + 0.05 * jitter(n)       # rot_y
    face[:, 4] = 0.2 * latents[2] + 0.05 * jitter(n)       # rot_z
    au_drivers = [latents[3], latents[0], latents[1], latents[2], latents[1]]
    for j, drv in enumerate(au_drivers):
        face[:, 5 + j] = np.maximum(1.5 + 1.2 * drv + jitter(n), 0.0)
    return speech, face


def synth_dyad(seed: int, duration_s: float = 120.0, lag_frames: int = 10,
               coupling: float = 1.0, noise: float = 0.05,
               session_id: str | None = None,
               participants: tuple[str, str] | None = None) -> DyadRecording:
    """Deterministic synthetic session with a known smile-coupling structure.

    Person 2's AU12 is a `coupling`-weighted copy of person 1's AU12 delayed
    by `lag_frames`; with coupling=1 and noise=0 the copy is exact for
    t >= lag. All other channels are smooth band-limited noise tied to each
    person's own latent signals.
    """
    if duration_s < 10.0:
        raise ParameterError(f"duration must be >= 10 s, got {duration_s}")
    if not (0 <= lag_frames <= 50):
        raise ParameterError(f"lag must lie in [0, 50] frames, got {lag_frames}")
    rng = np.random.default_rng(seed)
    n = int(math.floor(duration_s * TARGET_FPS)) + 1

    s1, f1 = _person_features(rng, n, noise)
    s2, f2 = _person_features(rng, n, noise)

    src = f1[:, AU12_INDEX]
    delayed = np.concatenate([np.full(lag_frames, src[0]), src[: n - lag_frames]])
    blended = coupling * delayed + (1.0 - coupling) * f2[:, AU12_INDEX]
    if noise > 0:
        blended = np.maximum(blended + rng.normal(0.0, noise, size=n), 0.0)
    f2[:, AU12_INDEX] = blended

    sid = session_id or f"synth{seed:03d}"
    rec = DyadRecording(
        session_id=sid,
        p1=PersonTrack(fps=TARGET_FPS, speech=s1, face=f1),
        p2=PersonTrack(fps=TARGET_FPS, speech=s2, face=f2),
    )
    if participants is not None:
        rec.participants = participants
    return rec
