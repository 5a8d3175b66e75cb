"""Verification-trial scoring: cosine similarity, EER and minDCF.

Both metrics sweep the operating points induced by the score values
themselves (accept when score >= threshold).  The equal error rate is
linearly interpolated between the two adjacent operating points where the
false-accept and false-reject rates cross, which matters in the third
decimal on small trial sets.  minDCF uses the NIST-style normalized
detection cost with defaults p_target=0.01, c_miss=1, c_fa=1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, FormatError, ShapeError
from .layers import MODE_BINARY, NetworkSpec, binarize_network, forward_network

LABEL_TARGET = 1
LABEL_NONTARGET = 0


@dataclass(frozen=True)
class Trial:
    enroll: str
    test: str
    label: int  # 1 target (same speaker), 0 nontarget

    def __post_init__(self):
        if self.label not in (LABEL_TARGET, LABEL_NONTARGET):
            raise DomainError(f"trial label must be 0 or 1, got {self.label}")


def parse_trial_lines(lines) -> list[Trial]:
    """Parse 'label enroll_id test_id' lines; '#' starts a comment."""
    trials = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise FormatError(
                f"trial line {lineno} must be 'label enroll_id test_id', got '{line}'"
            )
        if tokens[0] not in ("0", "1"):
            raise FormatError(f"trial line {lineno}: label must be 0 or 1, got '{tokens[0]}'")
        trials.append(Trial(enroll=tokens[1], test=tokens[2], label=int(tokens[0])))
    return trials


def load_trial_file(path: str) -> list[Trial]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_trial_lines(handle)


def write_trial_file(path: str, trials) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for trial in trials:
            handle.write(f"{trial.label} {trial.enroll} {trial.test}\n")


def cosine_score(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clipped into [-1, 1]."""
    a = np.asarray(emb_a, dtype=np.float64).ravel()
    b = np.asarray(emb_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"embedding sizes differ: {a.size} vs {b.size}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise DomainError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def _operating_points(target_scores, nontarget_scores):
    """Candidate thresholds (descending, with a reject-all sentinel first)
    and their false-accept / false-reject rates under accept-if >= t."""
    target = np.asarray(target_scores, dtype=np.float64).ravel()
    nontarget = np.asarray(nontarget_scores, dtype=np.float64).ravel()
    if target.size == 0 or nontarget.size == 0:
        raise DomainError("need at least one target and one nontarget score")
    uniq = np.unique(np.concatenate([target, nontarget]))
    thresholds = np.concatenate([[uniq[-1] + 1.0], uniq[::-1]])
    target_sorted = np.sort(target)
    nontarget_sorted = np.sort(nontarget)
    fa = (nontarget.size - np.searchsorted(nontarget_sorted, thresholds, side="left")) \
        / nontarget.size
    fr = np.searchsorted(target_sorted, thresholds, side="left") / target.size
    return thresholds, fa, fr


def compute_eer(target_scores, nontarget_scores) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps thresholds at the score values; where the false-accept and
    false-reject step functions cross between two adjacent operating
    points, the rate (and threshold) is linearly interpolated.
    """
    thresholds, fa, fr = _operating_points(target_scores, nontarget_scores)
    diff = fa - fr  # monotone nondecreasing as the threshold descends
    idx = int(np.argmax(diff >= 0.0))
    if diff[idx] == 0.0:
        return float(fa[idx]), float(thresholds[idx])
    fa1, fr1, t1 = fa[idx - 1], fr[idx - 1], thresholds[idx - 1]
    fa2, fr2, t2 = fa[idx], fr[idx], thresholds[idx]
    lam = (fr1 - fa1) / ((fa2 - fa1) - (fr2 - fr1))
    eer = fa1 + lam * (fa2 - fa1)
    threshold = t1 + lam * (t2 - t1)
    return float(eer), float(threshold)


def compute_min_dcf(target_scores, nontarget_scores, p_target: float = 0.01,
                    c_miss: float = 1.0, c_fa: float = 1.0) -> tuple[float, float]:
    """Minimum normalized detection cost and the minimizing threshold.

    Minimizes p_target*c_miss*P_miss + (1-p_target)*c_fa*P_fa over all
    thresholds, normalized by min(p_target*c_miss, (1-p_target)*c_fa).
    """
    if not 0.0 < p_target < 1.0:
        raise DomainError(f"p_target must lie in (0, 1), got {p_target}")
    if c_miss <= 0 or c_fa <= 0:
        raise DomainError("c_miss and c_fa must be positive")
    thresholds, fa, fr = _operating_points(target_scores, nontarget_scores)
    costs = p_target * c_miss * fr + (1.0 - p_target) * c_fa * fa
    idx = int(np.argmin(costs))
    norm = min(p_target * c_miss, (1.0 - p_target) * c_fa)
    return float(costs[idx] / norm), float(thresholds[idx])


@dataclass(frozen=True)
class EvalReport:
    eer: float
    eer_threshold: float
    min_dcf: float
    min_dcf_threshold: float
    num_target: int
    num_nontarget: int
    num_utterances: int
    p_target: float
    c_miss: float
    c_fa: float

    def __post_init__(self):
        if not 0.0 <= self.eer <= 1.0 or self.min_dcf < 0.0:
            raise DomainError("EER must lie in [0,1] and minDCF must be >= 0")


def format_report(report: EvalReport) -> str:
    return (
        f"trials: {report.num_target} target / {report.num_nontarget} nontarget "
        f"over {report.num_utterances} utterances\n"
        f"EER    : {100.0 * report.eer:.3f}% (threshold {report.eer_threshold:.6f})\n"
        f"minDCF : {report.min_dcf:.4f} (p_target={report.p_target}, "
        f"c_miss={report.c_miss}, c_fa={report.c_fa}, "
        f"threshold {report.min_dcf_threshold:.6f})"
    )


def report_key_values(report: EvalReport) -> str:
    pairs = [
        ("eer", repr(report.eer)),
        ("eer_threshold", repr(report.eer_threshold)),
        ("min_dcf", repr(report.min_dcf)),
        ("min_dcf_threshold", repr(report.min_dcf_threshold)),
        ("num_target", report.num_target),
        ("num_nontarget", report.num_nontarget),
        ("num_utterances", report.num_utterances),
        ("p_target", repr(report.p_target)),
        ("c_miss", repr(report.c_miss)),
        ("c_fa", repr(report.c_fa)),
    ]
    return "\n".join(f"{key}={value}" for key, value in pairs)


def embed_utterances(spec: NetworkSpec, params: dict, utterances: dict,
                     ids, batch_size: int = 64, mode: str = MODE_BINARY) -> dict:
    """Embed each unique utterance id once; returns id -> embedding row."""
    unique_ids = sorted(set(ids))
    missing = [uid for uid in unique_ids if uid not in utterances]
    if missing:
        raise DataError(f"unknown utterance id '{missing[0]}'")
    banks = binarize_network(spec, params) if mode == MODE_BINARY else None
    embeddings: dict[str, np.ndarray] = {}
    for start in range(0, len(unique_ids), batch_size):
        chunk = unique_ids[start:start + batch_size]
        batch = np.stack([np.asarray(utterances[uid]) for uid in chunk])
        result = forward_network(spec, params, batch, mode, banks=banks)
        for uid, row in zip(chunk, result.embedding):
            embeddings[uid] = row
    return embeddings


def evaluate(spec: NetworkSpec, params: dict, trials, utterances: dict,
             p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0,
             batch_size: int = 64, mode: str = MODE_BINARY) -> EvalReport:
    """Score a trial list with cosine similarity on binary-mode embeddings."""
    trials = list(trials)
    if not trials:
        raise DomainError("cannot evaluate an empty trial list")
    ids = [t.enroll for t in trials] + [t.test for t in trials]
    embeddings = embed_utterances(spec, params, utterances, ids,
                                  batch_size=batch_size, mode=mode)
    target_scores = []
    nontarget_scores = []
    for trial in trials:
        score = cosine_score(embeddings[trial.enroll], embeddings[trial.test])
        (target_scores if trial.label == LABEL_TARGET else nontarget_scores).append(score)
    eer, eer_threshold = compute_eer(target_scores, nontarget_scores)
    min_dcf, dcf_threshold = compute_min_dcf(
        target_scores, nontarget_scores, p_target=p_target, c_miss=c_miss, c_fa=c_fa
    )
    return EvalReport(
        eer=eer,
        eer_threshold=eer_threshold,
        min_dcf=min_dcf,
        min_dcf_threshold=dcf_threshold,
        num_target=len(target_scores),
        num_nontarget=len(nontarget_scores),
        num_utterances=len(embeddings),
        p_target=p_target,
        c_miss=c_miss,
        c_fa=c_fa,
    )
