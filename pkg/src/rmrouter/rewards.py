"""Loss-to-reward conversion for the online router.

The default pipeline centers each pair's training loss against the batch
mean, then rescales that centered value into [0, 1] against the 20th/80th
percentiles of all previously seen centered values.  Two comparison-based
variants return a binary advantage of the chosen model against the average
loss of all models, or of a random subset of them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InputError

QUANTILE_LO = 20.0
QUANTILE_HI = 80.0
DEFAULT_WARMUP_MIN = 32
DEFAULT_DPO_BETA = 1.0
DEFAULT_LIGHT_COMPARATORS = 3

# synthetic per-pair losses used by the replay harness in place of a live
# policy: correct annotations land low, incorrect ones high
SURROGATE_CORRECT_MEAN = 0.4
SURROGATE_INCORRECT_MEAN = 0.9
SURROGATE_STD = 0.05


class DegenerateQuantilesWarning(RuntimeWarning):
    """Raised as a warning when the two scaling percentiles coincide."""


def dpo_loss(
    logp_policy_w: float,
    logp_ref_w: float,
    logp_policy_l: float,
    logp_ref_l: float,
    beta: float = DEFAULT_DPO_BETA,
) -> float:
    """-log sigmoid of the scaled policy/reference log-ratio margin."""
    if beta <= 0.0:
        raise ConfigError(f"beta must be positive, got {beta}")
    margin = beta * (logp_policy_w - logp_ref_w) - beta * (logp_policy_l - logp_ref_l)
    return float(np.logaddexp(0.0, -margin))


@dataclass
class PairLoss:
    pair_id: str
    loss: float

    def __post_init__(self) -> None:
        self.loss = float(self.loss)
        if not np.isfinite(self.loss):
            raise InputError(f"loss for {self.pair_id!r} is not finite")


def batch_baseline_rewards(losses: Sequence[PairLoss]) -> dict[str, float]:
    """Centered rewards: batch mean loss minus each pair's own loss (sum ~ 0)."""
    if len(losses) == 0:
        raise InputError("cannot compute a batch baseline over an empty batch")
    mean = sum(pl.loss for pl in losses) / len(losses)
    return {pl.pair_id: mean - pl.loss for pl in losses}


@dataclass
class RewardHistory:
    """Append-only record of past centered rewards used for quantile scaling.

    Single writer: within a step, quantile reads must happen before the
    step's own rewards are appended (see :func:`normalize_step_rewards`).
    """

    values: list[float] = field(default_factory=list)
    capacity: int | None = None
    degenerate_events: int = 0

    def append(self, value: float) -> None:
        value = float(value)
        if not np.isfinite(value):
            raise InputError("reward history values must be finite")
        self.values.append(value)
        if self.capacity is not None and len(self.values) > self.capacity:
            del self.values[: len(self.values) - self.capacity]

    def extend(self, values) -> None:
        for value in values:
            self.append(value)

    def __len__(self) -> int:
        return len(self.values)

    def quantile_bounds(self) -> tuple[float, float]:
        """(20th, 80th) percentiles by linear interpolation of order statistics."""
        if not self.values:
            raise InputError("reward history is empty")
        ordered = np.sort(np.asarray(self.values, dtype=np.float64))
        return (
            _percentile_sorted(ordered, QUANTILE_LO),
            _percentile_sorted(ordered, QUANTILE_HI),
        )


def _percentile_sorted(ordered: np.ndarray, q: float) -> float:
    # canonical linear interpolation: pos = (n - 1) * q / 100, left to right
    pos = (ordered.shape[0] - 1) * q / 100.0
    lo = int(np.floor(pos))
    hi = min(lo + 1, ordered.shape[0] - 1)
    frac = pos - lo
    return float(ordered[lo] + (ordered[hi] - ordered[lo]) * frac)


def quantile_normalize(
    r: float, history: RewardHistory, warmup_min: int = DEFAULT_WARMUP_MIN
) -> float:
    """Rescale a centered reward into [0, 1] against historical percentiles.

    With fewer than ``warmup_min`` historical values the percentiles are not
    trusted yet and the reward passes through clamp((r + 1) / 2, 0, 1).
    """
    r = float(r)
    if len(history) < warmup_min:
        return min(1.0, max(0.0, (r + 1.0) / 2.0))
    q_lo, q_hi = history.quantile_bounds()
    if q_hi == q_lo:
        history.degenerate_events += 1
        warnings.warn(
            "degenerate reward quantiles (q_lo == q_hi); returning 0.5",
            DegenerateQuantilesWarning,
            stacklevel=2,
        )
        return 0.5
    if r < q_lo:
        return 0.0
    if r > q_hi:
        return 1.0
    return (r - q_lo) / (q_hi - q_lo)


def normalize_step_rewards(
    raw: Mapping[str, float],
    history: RewardHistory,
    warmup_min: int = DEFAULT_WARMUP_MIN,
) -> tuple[dict[str, float], tuple[float, float] | None]:
    """Normalize one step's rewards against strictly-past history, then record them.

    Every reward in ``raw`` is scaled with the history as it stood before this
    step; only afterwards are the raw values appended.  Returns the normalized
    map and the (q_lo, q_hi) bounds used, or None while warming up.
    """
    bounds: tuple[float, float] | None = None
    if len(history) >= warmup_min:
        bounds = history.quantile_bounds()
    normalized = {
        pair_id: quantile_normalize(value, history, warmup_min=warmup_min)
        for pair_id, value in raw.items()
    }
    history.extend(raw.values())
    return normalized, bounds


def full_advantage_reward(all_rm_losses: Sequence[float], chosen: int) -> int:
    """1 if the chosen model's loss is no greater than the mean over all models."""
    losses = np.asarray(all_rm_losses, dtype=np.float64)
    if losses.ndim != 1 or losses.shape[0] == 0:
        raise InputError("all_rm_losses must be a non-empty vector")
    if not 0 <= chosen < losses.shape[0]:
        raise InputError(f"chosen index {chosen} out of range for {losses.shape[0]} models")
    return int(losses[chosen] <= float(losses.mean()))


def light_advantage_reward(comparator_losses: Sequence[float], chosen_loss: float) -> int:
    """Same rule as the full advantage, against a sampled comparator subset."""
    comparators = np.asarray(comparator_losses, dtype=np.float64)
    if comparators.ndim != 1 or comparators.shape[0] == 0:
        raise ConfigError("need at least one comparator loss")
    return int(float(chosen_loss) <= float(comparators.mean()))


def sample_comparators(
    n_arms: int, chosen: int, c: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample c distinct comparator arms, excluding the chosen one."""
    if c < 1 or c > n_arms - 1:
        raise ConfigError(f"comparator count {c} must be in [1, {n_arms - 1}]")
    others = np.array([n for n in range(n_arms) if n != chosen])
    return np.sort(rng.choice(others, size=c, replace=False))


def surrogate_pair_loss(correct: bool, rng: np.random.Generator) -> float:
    """Synthetic stand-in for a per-pair training loss in the replay harness."""
    mean = SURROGATE_CORRECT_MEAN if correct else SURROGATE_INCORRECT_MEAN
    return float(rng.normal(mean, SURROGATE_STD))


def reward_log_row(
    step: int,
    pair_id: str,
    raw_reward: float,
    normalized_reward: float,
    bounds: tuple[float, float] | None,
) -> dict:
    return {
        "step": step,
        "pair_id": pair_id,
        "raw_reward": float(raw_reward),
        "normalized_reward": float(normalized_reward),
        "q_lo": None if bounds is None else float(bounds[0]),
        "q_hi": None if bounds is None else float(bounds[1]),
    }
