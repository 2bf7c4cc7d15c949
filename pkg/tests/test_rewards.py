import itertools
import math

import numpy as np
import pytest

from rmrouter.errors import ConfigError, InputError
from rmrouter.rewards import (
    DegenerateQuantilesWarning,
    PairLoss,
    RewardHistory,
    batch_baseline_rewards,
    dpo_loss,
    full_advantage_reward,
    light_advantage_reward,
    normalize_step_rewards,
    quantile_normalize,
    sample_comparators,
)

LOG2 = math.log(2.0)


def sort_oracle_percentile(values, q):
    """Independent sort-based percentile with linear interpolation."""
    ordered = sorted(values)
    pos = (len(ordered) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(ordered) - 1)
    return ordered[lo] + (ordered[hi] - ordered[lo]) * (pos - lo)


def sort_oracle_normalize(r, values):
    q_lo = sort_oracle_percentile(values, 20.0)
    q_hi = sort_oracle_percentile(values, 80.0)
    if q_hi == q_lo:
        return 0.5
    if r < q_lo:
        return 0.0
    if r > q_hi:
        return 1.0
    return (r - q_lo) / (q_hi - q_lo)


class TestDpoLoss:
    def test_zero_margin_gives_log2(self):
        assert abs(dpo_loss(-1.0, -1.0, -2.0, -2.0, beta=1.0) - LOG2) < 1e-12

    def test_unit_margin(self):
        # logp gap of 1 for the winner, 0 for the loser
        loss = dpo_loss(-1.0, -2.0, -2.0, -2.0, beta=1.0)
        assert abs(loss - 0.31326168751822286) < 1e-12

    def test_beta_scales_margin(self):
        assert dpo_loss(-1.0, -2.0, -2.0, -2.0, beta=2.0) == dpo_loss(
            0.0, -2.0, -2.0, -2.0, beta=1.0
        )

    def test_beta_must_be_positive(self):
        with pytest.raises(ConfigError):
            dpo_loss(0.0, 0.0, 0.0, 0.0, beta=0.0)


class TestBatchBaseline:
    def test_arithmetic_case(self):
        rewards = batch_baseline_rewards(
            [PairLoss("a", 1.0), PairLoss("b", 2.0), PairLoss("c", 3.0)]
        )
        assert rewards == {"a": 1.0, "b": 0.0, "c": -1.0}

    def test_equal_losses_all_zero(self):
        rewards = batch_baseline_rewards([PairLoss(str(i), 0.7) for i in range(5)])
        assert all(v == 0.0 for v in rewards.values())

    def test_single_pair_zero(self):
        assert batch_baseline_rewards([PairLoss("only", 2.5)]) == {"only": 0.0}

    def test_empty_batch_rejected(self):
        with pytest.raises(InputError):
            batch_baseline_rewards([])

    def test_rewards_sum_to_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            size = int(rng.integers(1, 65))
            losses = [PairLoss(str(i), float(rng.normal(0.6, 0.3))) for i in range(size)]
            total = sum(batch_baseline_rewards(losses).values())
            assert abs(total) < 1e-9 * size


class TestQuantileNormalize:
    def make_history(self):
        # 41 evenly spaced values: 20th pct = 0.2, 80th pct = 0.8 exactly
        return RewardHistory(values=list(np.linspace(0.0, 1.0, 41)))

    def test_midpoint(self):
        # 0.2/0.8 are not exact binary, so compare at tight tolerance
        assert abs(quantile_normalize(0.5, self.make_history()) - 0.5) < 1e-12

    def test_below_low_quantile_clamps_to_zero(self):
        assert quantile_normalize(0.1, self.make_history()) == 0.0

    def test_above_high_quantile_clamps_to_one(self):
        assert quantile_normalize(0.95, self.make_history()) == 1.0

    def test_degenerate_quantiles_return_half(self):
        history = RewardHistory(values=[1.0] * 40)
        with pytest.warns(DegenerateQuantilesWarning):
            assert quantile_normalize(3.0, history) == 0.5
        assert history.degenerate_events == 1

    def test_warmup_passthrough(self):
        history = RewardHistory(values=[0.0] * 10)
        assert quantile_normalize(0.0, history) == 0.5
        assert quantile_normalize(1.5, history) == 1.0
        assert quantile_normalize(-9.0, history) == 0.0

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(1)
        history = RewardHistory(values=list(rng.normal(0, 1, size=100)))
        points = np.sort(rng.normal(0, 2, size=50))
        outputs = [quantile_normalize(float(r), history) for r in points]
        assert all(0.0 <= v <= 1.0 for v in outputs)
        assert all(b >= a for a, b in zip(outputs, outputs[1:]))

    def test_matches_sort_oracle_exactly(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            size = int(rng.integers(32, 200))
            values = list(rng.normal(0, 1, size=size))
            history = RewardHistory(values=values)
            r = float(rng.normal(0, 1.5))
            assert quantile_normalize(r, history) == sort_oracle_normalize(r, values)

    def test_close_to_numpy_percentile(self):
        rng = np.random.default_rng(3)
        values = rng.normal(0, 1, size=500)
        history = RewardHistory(values=list(values))
        q_lo, q_hi = history.quantile_bounds()
        assert abs(q_lo - np.percentile(values, 20)) < 1e-12
        assert abs(q_hi - np.percentile(values, 80)) < 1e-12

    def test_capacity_ring_buffer(self):
        history = RewardHistory(capacity=3)
        history.extend([1.0, 2.0, 3.0, 4.0])
        assert history.values == [2.0, 3.0, 4.0]


class TestStepNormalization:
    def test_strictly_past_history(self):
        """A step's own rewards must not influence their normalization."""
        history = RewardHistory(values=list(np.linspace(0.0, 1.0, 41)))
        raw = {"x": 0.5, "y": 100.0}  # the huge y would shift the quantiles if included
        normalized, bounds = normalize_step_rewards(raw, history)
        assert bounds == (0.2, 0.8)
        assert abs(normalized["x"] - 0.5) < 1e-12
        assert normalized["y"] == 1.0
        assert len(history) == 43  # appended after normalization

    def test_warmup_reports_no_bounds(self):
        history = RewardHistory()
        normalized, bounds = normalize_step_rewards({"x": 0.0}, history)
        assert bounds is None
        assert normalized["x"] == 0.5


class TestAdvantageRewards:
    def test_equal_losses_reward_one(self):
        assert full_advantage_reward([1.0, 1.0, 1.0, 1.0], 2) == 1

    def test_above_mean_reward_zero(self):
        assert full_advantage_reward([2.0, 1.0, 1.0, 1.0], 0) == 0

    def test_below_mean_reward_one(self):
        assert full_advantage_reward([0.5, 1.0, 1.0, 1.0], 0) == 1

    def test_full_rule_matches_enumeration(self):
        base = [0.2, 0.5, 0.8, 1.1]
        for perm in itertools.permutations(base):
            mean = sum(perm) / 4.0
            for chosen in range(4):
                expected = 1 if perm[chosen] <= mean else 0
                assert full_advantage_reward(list(perm), chosen) == expected

    def test_light_rule_matches_enumeration(self):
        base = [0.2, 0.5, 0.8, 1.1]
        for perm in itertools.permutations(base):
            for chosen in range(4):
                others = [perm[i] for i in range(4) if i != chosen]
                for comb in itertools.combinations(others, 3):
                    expected = 1 if perm[chosen] <= sum(comb) / 3.0 else 0
                    assert light_advantage_reward(list(comb), perm[chosen]) == expected

    def test_light_all_comparators_worse(self):
        assert light_advantage_reward([0.9, 0.8, 0.95], 0.4) == 1

    def test_light_all_comparators_better(self):
        assert light_advantage_reward([0.2, 0.3, 0.25], 0.9) == 0

    def test_comparator_sampling(self):
        rng = np.random.default_rng(0)
        picks = sample_comparators(4, 1, 3, rng)
        assert sorted(picks) == [0, 2, 3]
        with pytest.raises(ConfigError):
            sample_comparators(4, 0, 4, rng)
