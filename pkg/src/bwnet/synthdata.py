"""Deterministic synthetic speaker data.

Each speaker is a fixed smoothed-noise prototype pattern; an utterance is
that prototype, optionally time-shifted along the frame axis, plus Gaussian
jitter of scale sigma_within.  The smoothing extents differ per speaker
(spread over a grid of per-axis bandwidths), so speakers are distinguished
by local texture statistics, the kind of signal a convolutional frontend
with global average pooling can actually pick up.  The last
``holdout_fraction`` of every speaker's utterances is reserved for
verification trials (same-speaker pairs as targets, sampled cross-speaker
pairs as nontargets, balanced).  Generation is a pure function of the
config.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .metrics import Trial
from .seeding import stream_rng
from .tensor_ops import conv2d_reference

TENSOR_HEADER_MAX_RANK = 8

_KERNEL_RADIUS = 4           # 9-tap smoothing kernels, padding keeps extents
_BANDWIDTH_RANGE = (0.3, 2.6)  # per-axis smoothing bandwidths across speakers


@dataclass(frozen=True)
class SyntheticSpeakerConfig:
    """Dataset shape and difficulty dials; deterministic per seed.

    With sigma_within = 0 and time_shift_max = 0 (the default shift), every
    utterance of a speaker is identical.
    """

    num_speakers: int = 10
    utterances_per_speaker: int = 20
    feature_height: int = 32
    feature_width: int = 32
    sigma_within: float = 0.3
    separation: float = 1.0
    time_shift_max: int = 0
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_speakers < 2:
            raise ConfigError(f"need at least 2 speakers, got {self.num_speakers}")
        if self.utterances_per_speaker < 2:
            raise ConfigError(
                "need at least 2 utterances per speaker to form target trials, "
                f"got {self.utterances_per_speaker}"
            )
        if self.feature_height < 4 or self.feature_width < 4:
            raise ConfigError("feature maps must be at least 4x4")
        if self.sigma_within < 0:
            raise ConfigError(f"sigma_within must be >= 0, got {self.sigma_within}")
        if self.separation <= 0:
            raise ConfigError(f"separation must be > 0, got {self.separation}")
        if self.time_shift_max < 0:
            raise ConfigError(f"time_shift_max must be >= 0, got {self.time_shift_max}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(
                f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}"
            )
        held = _holdout_count(self.utterances_per_speaker, self.holdout_fraction)
        if held < 2:
            raise ConfigError(
                "need at least 2 held-out utterances per speaker to form target "
                "trials; increase utterances_per_speaker"
            )
        if self.utterances_per_speaker - held < 1:
            raise ConfigError("holdout_fraction leaves no training utterances")


def _holdout_count(utterances: int, fraction: float) -> int:
    # at least 2 so same-speaker (target) pairs exist, at most all-but-one
    return min(utterances - 1, max(2, int(round(utterances * fraction))))


@dataclass
class SpeakerDataset:
    features: np.ndarray          # [M, 1, H, W] float32
    speaker_ids: np.ndarray       # [M] int64
    utterance_ids: list[str]
    train_index: np.ndarray
    holdout_index: np.ndarray
    trials: list[Trial]

    def train_split(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.train_index], self.speaker_ids[self.train_index]

    def utterance_store(self) -> dict[str, np.ndarray]:
        return {uid: self.features[i] for i, uid in enumerate(self.utterance_ids)}


def _gaussian_taps(bandwidth: float) -> np.ndarray:
    offsets = np.arange(-_KERNEL_RADIUS, _KERNEL_RADIUS + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (offsets / bandwidth) ** 2)
    return taps / taps.sum()


def _speaker_bandwidths(num_speakers: int, rng) -> list[tuple[float, float]]:
    """Per-speaker (height, width) smoothing bandwidths on a shuffled spread
    grid, so every pair of speakers gets a distinct texture."""
    levels = int(np.ceil(np.sqrt(num_speakers)))
    cells = [(a, b) for a in range(levels) for b in range(levels)]
    rng.shuffle(cells)
    lo, hi = _BANDWIDTH_RANGE
    span = max(1, levels - 1)
    pairs = []
    for s in range(num_speakers):
        a, b = cells[s % len(cells)]
        pairs.append((
            (lo + (hi - lo) * a / span) * float(rng.uniform(0.95, 1.05)),
            (lo + (hi - lo) * b / span) * float(rng.uniform(0.95, 1.05)),
        ))
    return pairs


def _prototypes(config: SyntheticSpeakerConfig) -> np.ndarray:
    rng = stream_rng(config.seed, "data", 0)
    bandwidths = _speaker_bandwidths(config.num_speakers, rng)
    protos = np.empty(
        (config.num_speakers, 1, config.feature_height, config.feature_width),
        dtype=np.float32,
    )
    for s, (bw_h, bw_w) in enumerate(bandwidths):
        kernel = np.outer(_gaussian_taps(bw_h), _gaussian_taps(bw_w))[None, None]
        noise = rng.standard_normal((1, 1, config.feature_height, config.feature_width))
        smooth = conv2d_reference(noise, kernel, stride=1, padding=_KERNEL_RADIUS)[0, 0]
        smooth = (smooth - smooth.mean()) / max(float(smooth.std()), 1e-9)
        protos[s, 0] = config.separation * smooth
    return protos


def generate_dataset(config: SyntheticSpeakerConfig) -> SpeakerDataset:
    """Utterances with speaker labels plus a balanced held-out trial list."""
    protos = _prototypes(config)
    utt_rng = stream_rng(config.seed, "data", 1)
    spk = config.num_speakers
    upp = config.utterances_per_speaker

    features = np.empty(
        (spk * upp, 1, config.feature_height, config.feature_width), dtype=np.float32
    )
    speaker_ids = np.empty(spk * upp, dtype=np.int64)
    utterance_ids: list[str] = []
    for s in range(spk):
        for u in range(upp):
            base = protos[s]
            if config.time_shift_max > 0:
                shift = int(utt_rng.integers(-config.time_shift_max,
                                             config.time_shift_max + 1))
                base = np.roll(base, shift, axis=-1)
            jitter = 0.0
            if config.sigma_within > 0:
                jitter = config.sigma_within * utt_rng.standard_normal(base.shape)
            row = s * upp + u
            features[row] = (base + jitter).astype(np.float32)
            speaker_ids[row] = s
            utterance_ids.append(f"s{s:03d}u{u:03d}")

    held = _holdout_count(upp, config.holdout_fraction)
    train_index = []
    holdout_index = []
    for s in range(spk):
        rows = range(s * upp, (s + 1) * upp)
        train_index.extend(list(rows)[:upp - held])
        holdout_index.extend(list(rows)[upp - held:])

    trials = _build_trials(config, utterance_ids, speaker_ids, holdout_index)
    return SpeakerDataset(
        features=features,
        speaker_ids=speaker_ids,
        utterance_ids=utterance_ids,
        train_index=np.asarray(train_index, dtype=np.int64),
        holdout_index=np.asarray(holdout_index, dtype=np.int64),
        trials=trials,
    )


def _build_trials(config, utterance_ids, speaker_ids, holdout_index) -> list[Trial]:
    by_speaker: dict[int, list[int]] = {}
    for row in holdout_index:
        by_speaker.setdefault(int(speaker_ids[row]), []).append(row)

    targets = []
    for rows in by_speaker.values():
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                targets.append(Trial(utterance_ids[rows[i]], utterance_ids[rows[j]], 1))

    rng = stream_rng(config.seed, "data", 2)
    speakers = sorted(by_speaker)
    nontargets: list[Trial] = []
    seen: set[tuple[int, int]] = set()
    while len(nontargets) < len(targets):
        a, b = rng.choice(speakers, size=2, replace=False)
        ra = int(rng.choice(by_speaker[int(a)]))
        rb = int(rng.choice(by_speaker[int(b)]))
        if (ra, rb) in seen:
            continue
        seen.add((ra, rb))
        nontargets.append(Trial(utterance_ids[ra], utterance_ids[rb], 0))
    return targets + nontargets


def save_tensor_file(path: str, array: np.ndarray) -> None:
    """Flat binary tensor: u32 rank, u32 extents, float32 little-endian payload."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim > TENSOR_HEADER_MAX_RANK:
        raise ConfigError(f"tensor rank {arr.ndim} exceeds {TENSOR_HEADER_MAX_RANK}")
    with open(path, "wb") as handle:
        handle.write(struct.pack("<I", arr.ndim))
        handle.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        handle.write(arr.tobytes(order="C"))


def load_tensor_file(path: str) -> np.ndarray:
    with open(path, "rb") as handle:
        data = handle.read()
    if len(data) < 4:
        raise FormatError(f"tensor file '{path}' is too short for a header")
    (rank,) = struct.unpack_from("<I", data, 0)
    if rank > TENSOR_HEADER_MAX_RANK or len(data) < 4 + 4 * rank:
        raise FormatError(f"tensor file '{path}' has a malformed shape header")
    shape = struct.unpack_from(f"<{rank}I", data, 4)
    numel = int(np.prod(shape)) if shape else 1
    payload = data[4 + 4 * rank:]
    if len(payload) != 4 * numel:
        raise FormatError(
            f"tensor file '{path}' payload is {len(payload)} bytes, expected {4 * numel}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def export_dataset(dataset: SpeakerDataset, directory: str) -> dict[str, str]:
    """Write utterances.bin / utterances.idx / trials.txt into a directory."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        "utterances": os.path.join(directory, "utterances.bin"),
        "index": os.path.join(directory, "utterances.idx"),
        "trials": os.path.join(directory, "trials.txt"),
    }
    save_tensor_file(paths["utterances"], dataset.features)
    with open(paths["index"], "w", encoding="utf-8") as handle:
        for uid, speaker in zip(dataset.utterance_ids, dataset.speaker_ids):
            handle.write(f"{uid} {int(speaker)}\n")
    from .metrics import write_trial_file

    write_trial_file(paths["trials"], dataset.trials)
    return paths


def load_utterance_store(bin_path: str, idx_path: str | None = None) -> dict[str, np.ndarray]:
    """Rebuild an id -> feature map from an exported dataset."""
    if idx_path is None:
        stem, _ = os.path.splitext(bin_path)
        idx_path = stem + ".idx"
    features = load_tensor_file(bin_path)
    ids = []
    with open(idx_path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise FormatError(f"index line {lineno} must be 'utt_id speaker', got '{line}'")
            ids.append(tokens[0])
    if len(ids) != features.shape[0]:
        raise FormatError(
            f"index lists {len(ids)} utterances but the tensor file holds {features.shape[0]}"
        )
    return {uid: features[i] for i, uid in enumerate(ids)}
