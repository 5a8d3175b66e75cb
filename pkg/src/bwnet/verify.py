"""Self-verification suites: each check pits an engine code path against an
independently written oracle (exhaustive enumeration, reference-path
equivalence, central finite differences, threshold sweeps)."""

from __future__ import annotations

import time
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from . import metrics as M
from .binarize import BinaryFilterBank, binarize_filter, brute_force_optimum, \
    reconstruction_error
from .errors import ConfigError
from .layers import (
    MODE_TRAIN_FULLPREC,
    binarize_network,
    binary_conv2d_forward,
    build_micro_resnet,
    expand,
    forward_network,
    init_params,
)
from .opcount import count_operations
from .tensor_ops import conv2d_reference
from .training import TrainConfig, backward_network, cross_entropy_loss

SCOPES = ("binarize-oracle", "conv-equivalence", "gradcheck", "metrics-oracle", "all")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed_s: float


def relative_deviation(actual: np.ndarray, reference: np.ndarray,
                       floor_fraction: float = 0.01) -> float:
    """Max elementwise |actual - reference| / |reference| with a floor.

    Elements smaller than ``floor_fraction`` of the reference peak are
    measured against that floor: a reassociated float32 sum has unbounded
    pointwise relative error wherever the exact value nearly cancels, so a
    pure elementwise ratio would measure rounding noise, not kernel error.
    """
    actual = np.asarray(actual, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    floor = max(float(np.abs(reference).max()) * floor_fraction, 1e-12)
    return float(np.max(np.abs(actual - reference) / np.maximum(np.abs(reference), floor)))


# ---------------------------------------------------------------------------
# threshold-sweep oracles (pure python; counting via bisect on sorted copies)

def _count_below(sorted_scores, threshold) -> int:
    return bisect_left(sorted_scores, threshold)


def eer_sweep_oracle(target_scores, nontarget_scores) -> tuple[float, float]:
    """Sweep every candidate threshold (descending score values preceded by
    a reject-all sentinel); interpolate linearly at the FA/FR crossing."""
    targets = sorted(float(s) for s in target_scores)
    nontargets = sorted(float(s) for s in nontarget_scores)
    candidates = sorted(set(targets) | set(nontargets), reverse=True)
    candidates = [candidates[0] + 1.0] + candidates
    previous = None
    for threshold in candidates:
        fa = (len(nontargets) - _count_below(nontargets, threshold)) / len(nontargets)
        fr = _count_below(targets, threshold) / len(targets)
        if fa == fr:
            return fa, threshold
        if fa > fr:
            t1, fa1, fr1 = previous
            lam = (fr1 - fa1) / ((fa - fa1) - (fr - fr1))
            return fa1 + lam * (fa - fa1), t1 + lam * (threshold - t1)
        previous = (threshold, fa, fr)
    raise AssertionError("false-accept and false-reject rates never crossed")


def min_dcf_sweep_oracle(target_scores, nontarget_scores, p_target: float,
                         c_miss: float, c_fa: float) -> float:
    """Evaluate the detection cost at every score midpoint, every score
    value, and beyond both extremes; return the normalized minimum."""
    targets = sorted(float(s) for s in target_scores)
    nontargets = sorted(float(s) for s in nontarget_scores)
    scores = sorted(set(targets) | set(nontargets))
    candidates = [scores[0] - 1.0, scores[-1] + 1.0]
    candidates.extend(scores)
    candidates.extend((a + b) / 2.0 for a, b in zip(scores, scores[1:]))
    best = float("inf")
    for threshold in candidates:
        p_miss = _count_below(targets, threshold) / len(targets)
        p_fa = (len(nontargets) - _count_below(nontargets, threshold)) / len(nontargets)
        cost = p_target * c_miss * p_miss + (1.0 - p_target) * c_fa * p_fa
        best = min(best, cost)
    return best / min(p_target * c_miss, (1.0 - p_target) * c_fa)


# ---------------------------------------------------------------------------
# checks

def binarization_optimality_check(num_filters: int = 1000, n_low: int = 4,
                                  n_high: int = 12, seed: int = 20240811,
                                  tol: float = 1e-6) -> CheckResult:
    """Closed-form (sign, mean-abs) must attain the enumerated minimum."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    matched = 0
    max_scale_dev = 0.0
    max_err_dev = 0.0
    for _ in range(num_filters):
        n = int(rng.integers(n_low, n_high + 1))
        w = rng.standard_normal(n) * float(rng.uniform(0.1, 3.0))
        signs, scale = binarize_filter(w)
        err = reconstruction_error(w, signs, scale)
        best_signs, best_scale, best_err = brute_force_optimum(w)
        scale_dev = abs(scale - best_scale)
        err_dev = abs(err - best_err)
        nonzero = w != 0
        signs_ok = np.array_equal(signs[nonzero], best_signs[nonzero])
        max_scale_dev = max(max_scale_dev, scale_dev)
        max_err_dev = max(max_err_dev, err_dev)
        if signs_ok and scale_dev <= tol and err_dev <= tol and err <= best_err + tol:
            matched += 1
    elapsed = time.perf_counter() - start
    passed = matched == num_filters
    return CheckResult(
        name="binarize-oracle",
        passed=passed,
        detail=(f"{matched}/{num_filters} filters attain the enumerated minimum "
                f"(max scale dev {max_scale_dev:.2e}, max error dev {max_err_dev:.2e})"),
        elapsed_s=elapsed,
    )


def conv_equivalence_check(trials: int = 100, seed: int = 20240812,
                           tol: float = 1e-4) -> CheckResult:
    """Binary path vs reference conv on expanded weights, plus the
    zero-inner-multiplication accounting."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    max_dev = 0.0
    multiply_free = True
    scale_count_ok = True
    for _ in range(trials):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h = int(rng.integers(4, 9))
        w = int(rng.integers(4, 9))
        f = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        weights = rng.standard_normal((f, c, k, k)).astype(np.float32)
        bank = BinaryFilterBank.from_weights(weights)
        with count_operations() as counter:
            out_binary = binary_conv2d_forward(x, bank, stride, padding)
        out_reference = conv2d_reference(x, expand(bank), stride, padding)
        max_dev = max(max_dev, relative_deviation(out_binary, out_reference))
        multiply_free &= counter.inner_multiplies == 0
        scale_count_ok &= counter.scale_multiplies == out_binary.size
    elapsed = time.perf_counter() - start
    passed = max_dev <= tol and multiply_free and scale_count_ok
    return CheckResult(
        name="conv-equivalence",
        passed=passed,
        detail=(f"max relative deviation {max_dev:.3e} over {trials} trials; "
                f"inner multiplies zero: {multiply_free}; "
                f"one scale multiply per output element: {scale_count_ok}"),
        elapsed_s=elapsed,
    )


def _loss_value(spec, params, x, y) -> float:
    result = forward_network(spec, params, x, MODE_TRAIN_FULLPREC)
    loss, _ = cross_entropy_loss(result.logits, y)
    return loss


def _frozen_float64_net(activation: str, seed: int):
    """A micro net whose binary weights are exactly representable (scale*sign),
    so the forward is differentiable and FD-checkable in float64."""
    spec = build_micro_resnet(2, (4, 6), num_classes=4, embedding_dim=16,
                              activation=activation, input_channels=1)
    params32 = init_params(spec, seed)
    params = {name: value.astype(np.float64) for name, value in params32.items()}
    banks = binarize_network(spec, params)
    for name, bank in banks.items():
        params[name] = expand(bank).astype(np.float64)
    return spec, params


def gradient_check(min_params: int = 200, seed: int = 20240813, eps: float = 1e-5,
                   tol: float = 1e-3) -> CheckResult:
    """Analytic backward vs central finite differences on frozen binarized nets."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    config = TrainConfig(backward_rule="none", seed=seed)
    per_net = (min_params + 1) // 2 + 5
    max_rel = 0.0
    checked = 0
    for activation in ("relu", "prelu"):
        spec, params = _frozen_float64_net(activation, seed=int(rng.integers(2 ** 31)))
        x = rng.standard_normal((3, 1, 12, 12))
        y = rng.integers(0, 4, size=3).astype(np.int64)
        result = forward_network(spec, params, x, MODE_TRAIN_FULLPREC, collect_cache=True)
        _, grad_logits = cross_entropy_loss(result.logits, y)
        banks = binarize_network(spec, params)
        grads = backward_network(spec, params, banks, result.cache, grad_logits, config)

        coords = [(name, idx) for name, g in sorted(grads.items())
                  for idx in range(g.size)]
        take = min(per_net, len(coords))
        for pos in rng.choice(len(coords), size=take, replace=False):
            name, idx = coords[int(pos)]
            flat = params[name].reshape(-1)
            original = flat[idx]
            flat[idx] = original + eps
            loss_hi = _loss_value(spec, params, x, y)
            flat[idx] = original - eps
            loss_lo = _loss_value(spec, params, x, y)
            flat[idx] = original
            fd = (loss_hi - loss_lo) / (2.0 * eps)
            analytic = float(grads[name].reshape(-1)[idx])
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
            max_rel = max(max_rel, rel)
            checked += 1
    elapsed = time.perf_counter() - start
    passed = max_rel <= tol and checked >= min_params
    return CheckResult(
        name="gradcheck",
        passed=passed,
        detail=(f"max relative FD deviation {max_rel:.3e} over {checked} "
                f"sampled parameters (relu and prelu nets)"),
        elapsed_s=elapsed,
    )


def _random_score_sets(rng):
    n_target = int(rng.integers(1, 101))
    n_nontarget = int(rng.integers(1, 101))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        targets = rng.standard_normal(n_target) + 1.0
        nontargets = rng.standard_normal(n_nontarget)
    elif kind == 1:
        targets = rng.uniform(-1, 1, n_target)
        nontargets = rng.uniform(-1, 1, n_nontarget)
    else:
        # coarse grid to force score ties across and within the sets
        targets = np.round(rng.uniform(-1, 1, n_target), 1)
        nontargets = np.round(rng.uniform(-1, 1, n_nontarget), 1)
    return targets, nontargets


def metrics_oracle_check(num_sets: int = 1000, invariance_trials: int = 100,
                         seed: int = 20240814, tol: float = 1e-9) -> CheckResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    max_eer_dev = 0.0
    max_dcf_dev = 0.0
    for _ in range(num_sets):
        targets, nontargets = _random_score_sets(rng)
        eer, _ = M.compute_eer(targets, nontargets)
        oracle_eer, _ = eer_sweep_oracle(targets, nontargets)
        max_eer_dev = max(max_eer_dev, abs(eer - oracle_eer))
        dcf, _ = M.compute_min_dcf(targets, nontargets)
        oracle_dcf = min_dcf_sweep_oracle(targets, nontargets, 0.01, 1.0, 1.0)
        max_dcf_dev = max(max_dcf_dev, abs(dcf - oracle_dcf))

    transforms = (lambda s: 2.0 * s + 1.0, np.exp, np.tanh)
    max_invariance_dev = 0.0
    for i in range(invariance_trials):
        targets, nontargets = _random_score_sets(rng)
        eer, _ = M.compute_eer(targets, nontargets)
        dcf, _ = M.compute_min_dcf(targets, nontargets)
        f = transforms[i % len(transforms)]
        eer_f, _ = M.compute_eer(f(targets), f(nontargets))
        dcf_f, _ = M.compute_min_dcf(f(targets), f(nontargets))
        max_invariance_dev = max(max_invariance_dev, abs(eer - eer_f), abs(dcf - dcf_f))
    elapsed = time.perf_counter() - start
    passed = max(max_eer_dev, max_dcf_dev) <= tol and max_invariance_dev <= 1e-12
    return CheckResult(
        name="metrics-oracle",
        passed=passed,
        detail=(f"max EER dev {max_eer_dev:.2e}, max minDCF dev {max_dcf_dev:.2e} "
                f"over {num_sets} score sets; monotone-transform dev "
                f"{max_invariance_dev:.2e} over {invariance_trials} trials"),
        elapsed_s=elapsed,
    )


_CHECKS = {
    "binarize-oracle": binarization_optimality_check,
    "conv-equivalence": conv_equivalence_check,
    "gradcheck": gradient_check,
    "metrics-oracle": metrics_oracle_check,
}


def run_checks(scope: str = "all") -> list[CheckResult]:
    if scope not in SCOPES:
        raise ConfigError(f"unknown verify scope '{scope}' (choose from {SCOPES})")
    names = list(_CHECKS) if scope == "all" else [scope]
    return [_CHECKS[name]() for name in names]
