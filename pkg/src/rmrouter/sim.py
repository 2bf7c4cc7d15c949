"""Desk-scale routing experiments on synthetic reward-model pools.

A scenario places preference-pair contexts in clusters on the unit sphere and
gives every synthetic reward model a per-cluster probability of labelling a
pair correctly.  Each model's answer to each pair is drawn once from that
profile and frozen, so a whole experiment is replayable bit for bit.  The
replay loop feeds the labelled stream through a routing strategy step by
step: route a batch, query the chosen model(s), convert surrogate losses into
rewards, feed the bandit, and record annotation accuracy, regret against the
per-cluster oracle arm, arm usage, and reward-model call counts.

Strategies: per-pair Thompson sampling (zero or injected prior), the frozen
offline router, batch-level LinUCB, uniform random, any fixed single model,
majority voting, consensus-weighted majority (all-model ensembles), a
fixed-weight offline/online score mix, and a profile-oracle upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, InvariantError
from .features import PairEmbedding, PreferencePair
from .gaussian import ObservationBatch, posterior_update
from .offline import (
    OfflineRouterModel,
    TrainConfig,
    TrainResult,
    collect_behavior,
    train_offline,
)
from .online import (
    OnlineRouterState,
    RoutingDecision,
    decision_record,
    init_linucb,
    init_router,
    observe_feedback,
    route_batch,
    route_linucb,
    route_weighted_score,
    update_linucb,
)
from .rewards import (
    DEFAULT_LIGHT_COMPARATORS,
    DEFAULT_WARMUP_MIN,
    PairLoss,
    RewardHistory,
    batch_baseline_rewards,
    full_advantage_reward,
    light_advantage_reward,
    normalize_step_rewards,
    reward_log_row,
    sample_comparators,
    surrogate_pair_loss,
)

SCENARIO_FORMAT_VERSION = 1

ROUTER_KINDS = (
    "thompson",
    "offline",
    "linucb",
    "random",
    "single",
    "majority",
    "uwo",
    "weighted",
    "oracle",
)
ROUTER_SYNTAX = (
    "thompson",
    "offline",
    "linucb",
    "random",
    "single:<arm>",
    "majority",
    "uwo",
    "weighted:<alpha>",
    "oracle",
)
BANDIT_KINDS = ("thompson", "linucb", "weighted")
ENSEMBLE_KINDS = ("majority", "uwo")

REWARD_VARIANTS = ("batch_quantile", "neg_loss", "full_advantage", "light_advantage")

# replay-time offline training defaults: same lam / weight decay as the
# reference recipe, with step size and epoch count sized for the synthetic
# sets and the identity (no fusion) context path
SIM_TRAIN_LR = 0.5
SIM_TRAIN_EPOCHS = 40
SIM_TRAIN_BATCH = 64


# ---------------------------------------------------------------------------
# scenario definition


@dataclass
class Cluster:
    cluster_id: int
    center: np.ndarray
    spread: float

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.center.ndim != 1:
            raise ConfigError("cluster center must be a vector")
        if self.spread < 0:
            raise ConfigError("cluster spread must be >= 0")


@dataclass
class SyntheticRm:
    """A pretend reward model: per-cluster accuracy plus its own answer stream."""

    rm_id: int
    accuracy_profile: dict[int, float]
    seed: int

    def __post_init__(self) -> None:
        for cluster_id, prob in self.accuracy_profile.items():
            if not 0.0 <= prob <= 1.0:
                raise ConfigError(
                    f"accuracy for rm {self.rm_id}, cluster {cluster_id} not in [0, 1]: {prob}"
                )


@dataclass
class SimScenario:
    n_arms: int
    clusters: list[Cluster]
    arm_profiles: list[dict[int, float]]
    pairs_per_step: int
    n_steps: int
    seeds: list[int]
    offline_pairs: int = 0
    mixture_before: list[float] | None = None
    mixture_after: list[float] | None = None
    drift_step: int | None = None

    def __post_init__(self) -> None:
        if self.n_arms < 2:
            raise ConfigError("need at least two candidate models")
        if self.pairs_per_step < 1 or self.n_steps < 1:
            raise ConfigError("pairs_per_step and n_steps must be >= 1")
        if not self.seeds:
            raise ConfigError("scenario needs at least one seed")
        if len(self.arm_profiles) != self.n_arms:
            raise ConfigError("arm_profiles must have one entry per arm")
        if not self.clusters:
            raise ConfigError("scenario needs at least one cluster")
        d = self.clusters[0].center.shape[0]
        for pos, cluster in enumerate(self.clusters):
            if cluster.cluster_id != pos:
                raise ConfigError("cluster_id values must be 0..C-1 in order")
            if cluster.center.shape[0] != d:
                raise ConfigError("all cluster centers must share one dimension")
        for a, ca in enumerate(self.clusters):
            for cb in self.clusters[a + 1 :]:
                if np.array_equal(ca.center, cb.center):
                    raise ConfigError("cluster centers must be pairwise distinct")
        for n, profile in enumerate(self.arm_profiles):
            for cluster in self.clusters:
                if cluster.cluster_id not in profile:
                    raise ConfigError(
                        f"arm {n} has no accuracy for cluster {cluster.cluster_id}"
                    )
        for name in ("mixture_before", "mixture_after"):
            mix = getattr(self, name)
            if mix is None:
                continue
            if len(mix) != len(self.clusters):
                raise ConfigError(f"{name} must have one weight per cluster")
            if any(w < 0 for w in mix) or abs(sum(mix) - 1.0) > 1e-9:
                raise ConfigError(f"{name} must be a probability vector")
        if self.mixture_after is not None and self.drift_step is None:
            raise ConfigError("mixture_after requires drift_step")
        if self.drift_step is not None and not 0 < self.drift_step < self.n_steps:
            raise ConfigError("drift_step must lie strictly inside the run")

    @property
    def d(self) -> int:
        return self.clusters[0].center.shape[0]

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def profile_matrix(self) -> np.ndarray:
        """(n_arms, n_clusters) accuracy table."""
        out = np.empty((self.n_arms, self.n_clusters))
        for n, profile in enumerate(self.arm_profiles):
            for c in range(self.n_clusters):
                out[n, c] = profile[c]
        return out

    def mixture_at(self, step: int) -> np.ndarray:
        uniform = np.full(self.n_clusters, 1.0 / self.n_clusters)
        before = np.asarray(self.mixture_before) if self.mixture_before else uniform
        if self.drift_step is not None and step >= self.drift_step:
            return np.asarray(self.mixture_after) if self.mixture_after else before
        return before


_SCENARIO_KEYS = {
    "version",
    "n_arms",
    "clusters",
    "arm_profiles",
    "pairs_per_step",
    "n_steps",
    "seeds",
    "offline_pairs",
    "mixture_before",
    "mixture_after",
    "drift_step",
}


def scenario_to_dict(scenario: SimScenario) -> dict:
    return {
        "version": SCENARIO_FORMAT_VERSION,
        "n_arms": scenario.n_arms,
        "clusters": [
            {
                "cluster_id": c.cluster_id,
                "center": [float(x) for x in c.center],
                "spread": float(c.spread),
            }
            for c in scenario.clusters
        ],
        "arm_profiles": [
            {str(k): float(v) for k, v in profile.items()}
            for profile in scenario.arm_profiles
        ],
        "pairs_per_step": scenario.pairs_per_step,
        "n_steps": scenario.n_steps,
        "seeds": list(scenario.seeds),
        "offline_pairs": scenario.offline_pairs,
        "mixture_before": scenario.mixture_before,
        "mixture_after": scenario.mixture_after,
        "drift_step": scenario.drift_step,
    }


def scenario_from_dict(doc: dict) -> SimScenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be an object")
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario key(s): {sorted(unknown)}")
    version = doc.get("version")
    if version != SCENARIO_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported scenario version {version!r}; supported: {SCENARIO_FORMAT_VERSION}"
        )
    try:
        clusters = [
            Cluster(int(c["cluster_id"]), np.asarray(c["center"], dtype=np.float64), float(c["spread"]))
            for c in doc["clusters"]
        ]
        profiles = [
            {int(k): float(v) for k, v in profile.items()} for profile in doc["arm_profiles"]
        ]
        return SimScenario(
            n_arms=int(doc["n_arms"]),
            clusters=clusters,
            arm_profiles=profiles,
            pairs_per_step=int(doc["pairs_per_step"]),
            n_steps=int(doc["n_steps"]),
            seeds=[int(s) for s in doc["seeds"]],
            offline_pairs=int(doc.get("offline_pairs", 0)),
            mixture_before=doc.get("mixture_before"),
            mixture_after=doc.get("mixture_after"),
            drift_step=doc.get("drift_step"),
        )
    except KeyError as exc:
        raise ConfigError(f"scenario document missing key {exc}") from exc


# ---------------------------------------------------------------------------
# generated data


@dataclass
class SimSplit:
    """A materialized set of pairs: contexts, labels, and frozen model answers."""

    pairs: list[PreferencePair]
    embeddings: dict[str, PairEmbedding]
    clusters: np.ndarray  # (n,) cluster index per pair
    answers: np.ndarray  # (n, n_arms) "A"/"B" per model
    correct: np.ndarray  # (n, n_arms) answer == label

    @property
    def n(self) -> int:
        return len(self.pairs)

    def pool(self) -> "SyntheticRmPool":
        return SyntheticRmPool(self)


class SyntheticRmPool:
    """Answer oracle over a split's frozen truth table."""

    def __init__(self, split: SimSplit):
        self._split = split
        self._row_of = {pair.pair_id: i for i, pair in enumerate(split.pairs)}
        self.n_arms = split.answers.shape[1]

    def preference(self, rm_index: int, pair: PreferencePair) -> str:
        if not 0 <= rm_index < self.n_arms:
            raise InputError(f"rm_index {rm_index} out of range")
        try:
            row = self._row_of[pair.pair_id]
        except KeyError:
            raise InputError(f"unknown pair {pair.pair_id!r}") from None
        return str(self._split.answers[row, rm_index])


@dataclass
class SimDataset:
    scenario: SimScenario
    offline: SimSplit
    stream: SimSplit
    rms: list[SyntheticRm]
    profiles: np.ndarray  # (n_arms, n_clusters)


def _draw_split(
    scenario: SimScenario,
    prefix: str,
    cluster_ids: np.ndarray,
    rng: np.random.Generator,
    rm_rngs: list[np.random.Generator],
    profiles: np.ndarray,
) -> SimSplit:
    n = len(cluster_ids)
    pairs: list[PreferencePair] = []
    embeddings: dict[str, PairEmbedding] = {}
    labels = np.where(rng.random(n) < 0.5, "A", "B")
    answers = np.empty((n, scenario.n_arms), dtype="<U1")
    for i, c in enumerate(cluster_ids):
        cluster = scenario.clusters[int(c)]
        vec = cluster.center + cluster.spread * rng.standard_normal(scenario.d)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec = cluster.center.copy()
            norm = np.linalg.norm(vec) or 1.0
        pair_id = f"{prefix}-{i:06d}"
        pair = PreferencePair(
            pair_id=pair_id,
            prompt=f"prompt {pair_id} topic {int(c)}",
            response_a=f"candidate answer one for {pair_id}",
            response_b=f"candidate answer two for {pair_id}",
            label=str(labels[i]),
        )
        pairs.append(pair)
        embeddings[pair_id] = PairEmbedding.of(vec / norm)
    flipped = np.where(labels == "A", "B", "A")
    for arm in range(scenario.n_arms):
        hit = rm_rngs[arm].random(n) < profiles[arm, cluster_ids]
        answers[:, arm] = np.where(hit, labels, flipped)
    correct = (answers == labels[:, None]).astype(np.uint8)
    return SimSplit(
        pairs=pairs,
        embeddings=embeddings,
        clusters=cluster_ids.astype(np.int64),
        answers=answers,
        correct=correct,
    )


def generate_scenario(scenario: SimScenario, rng: np.random.Generator | int) -> SimDataset:
    """Materialize the offline corpus and the online stream for one run seed.

    The offline corpus is drawn from the pre-drift cluster mixture; the stream
    follows the scheduled mixture step by step.  Each model's answers come
    from its own seeded generator, so regenerating with the same seed gives a
    bitwise-identical truth table.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    profiles = scenario.profile_matrix()
    rms = [
        SyntheticRm(
            rm_id=n,
            accuracy_profile=dict(scenario.arm_profiles[n]),
            seed=int(rng.integers(2**63)),
        )
        for n in range(scenario.n_arms)
    ]
    rm_rngs = [np.random.default_rng(rm.seed) for rm in rms]

    offline_clusters = rng.choice(
        scenario.n_clusters, size=scenario.offline_pairs, p=scenario.mixture_at(0)
    ).astype(np.int64)
    offline = _draw_split(scenario, "off", offline_clusters, rng, rm_rngs, profiles)

    stream_clusters = np.concatenate(
        [
            rng.choice(scenario.n_clusters, size=scenario.pairs_per_step, p=scenario.mixture_at(t))
            for t in range(scenario.n_steps)
        ]
    ).astype(np.int64)
    stream = _draw_split(scenario, "str", stream_clusters, rng, rm_rngs, profiles)
    return SimDataset(scenario=scenario, offline=offline, stream=stream, rms=rms, profiles=profiles)


def fit_offline_router(
    dataset: SimDataset, config: TrainConfig | None = None, seed: int = 0
) -> TrainResult:
    """Train the offline router on the dataset's offline corpus (identity contexts)."""
    if dataset.offline.n == 0:
        raise InputError("scenario has no offline corpus (offline_pairs == 0)")
    if config is None:
        config = TrainConfig(
            lr=SIM_TRAIN_LR, epochs=SIM_TRAIN_EPOCHS, batch_size=SIM_TRAIN_BATCH, seed=seed
        )
    records = collect_behavior(dataset.offline.pairs, dataset.offline.pool())
    return train_offline(
        dataset.offline.pairs, records, config, embeddings=dataset.offline.embeddings
    )


# ---------------------------------------------------------------------------
# replay


@dataclass
class ReplayConfig:
    seed: int = 0
    sigma_sq: float = 1.0
    prior_mode: str = "zero"
    prior_variance: float | None = None
    offline_prior: np.ndarray | None = None
    linucb_alpha: float = 1.0
    linucb_per_pair: bool = False
    reward_variant: str = "batch_quantile"
    light_c: int = DEFAULT_LIGHT_COMPARATORS
    warmup_min: int = DEFAULT_WARMUP_MIN
    resample_per_pair: bool = True
    history_capacity: int | None = None

    def __post_init__(self) -> None:
        if self.reward_variant not in REWARD_VARIANTS:
            raise ConfigError(
                f"reward_variant must be one of {REWARD_VARIANTS}, got {self.reward_variant!r}"
            )
        if self.offline_prior is not None:
            self.offline_prior = np.asarray(self.offline_prior, dtype=np.float64)


@dataclass
class RunMetrics:
    """Everything a replay records; validate() enforces the bookkeeping invariants."""

    router: str
    seed: int
    routing_accuracy_per_step: list[float]
    cumulative_regret: list[float]
    arm_selection_counts: np.ndarray
    final_annotation_accuracy: float
    rm_calls_per_step: list[int]
    mean_uwo_weight: float | None = None

    def validate(self, pairs_per_step: int, n_steps: int) -> None:
        if len(self.routing_accuracy_per_step) != n_steps:
            raise InvariantError("accuracy trace length does not match n_steps")
        if len(self.cumulative_regret) != n_steps or len(self.rm_calls_per_step) != n_steps:
            raise InvariantError("metric trace lengths do not match n_steps")
        acc = np.asarray(self.routing_accuracy_per_step)
        if np.any(acc < 0) or np.any(acc > 1):
            raise InvariantError("per-step accuracies must lie in [0, 1]")
        if not 0.0 <= self.final_annotation_accuracy <= 1.0:
            raise InvariantError("final annotation accuracy must lie in [0, 1]")
        if int(self.arm_selection_counts.sum()) != pairs_per_step * n_steps:
            raise InvariantError("arm selection counts must sum to pairs_per_step * n_steps")
        if np.any(np.diff(self.cumulative_regret) < -1e-12):
            raise InvariantError("cumulative regret must be non-decreasing")


def parse_router(name: str) -> tuple[str, float | int | None]:
    """Parse a router spec string into (kind, parameter)."""
    kind, sep, arg = name.partition(":")
    if kind not in ROUTER_KINDS:
        raise ConfigError(f"unknown router {name!r}; valid: {', '.join(ROUTER_SYNTAX)}")
    if kind == "single":
        if not sep:
            raise ConfigError("single router needs an arm index, e.g. single:0")
        return kind, int(arg)
    if kind == "weighted":
        if not sep:
            raise ConfigError("weighted router needs a mixing weight, e.g. weighted:0.5")
        alpha = float(arg)
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"weighted alpha must be in [0, 1], got {alpha}")
        return kind, alpha
    if sep:
        raise ConfigError(f"router {kind!r} takes no parameter")
    return kind, None


def _majority_labels(answers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(majority label, consensus rate, attributed arm) per pair.

    Ties go to the lowest-index model's label; the attributed arm is the
    lowest-index model that voted for the winning label.
    """
    n_pairs, n_arms = answers.shape
    labels = np.empty(n_pairs, dtype="<U1")
    consensus = np.empty(n_pairs)
    attributed = np.empty(n_pairs, dtype=np.int64)
    for i in range(n_pairs):
        votes_a = int(np.sum(answers[i] == "A"))
        votes_b = n_arms - votes_a
        if votes_a > votes_b:
            label = "A"
        elif votes_b > votes_a:
            label = "B"
        else:
            label = str(answers[i, 0])
        labels[i] = label
        consensus[i] = max(votes_a, votes_b) / n_arms
        attributed[i] = int(np.argmax(answers[i] == label))
    return labels, consensus, attributed


def majority_correct_prob(probs: Sequence[float]) -> float:
    """Exact accuracy of majority voting given per-model correctness rates.

    Enumerates correctness outcomes; a tie is resolved by model 0's vote,
    matching the replay rule.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    total = 0.0
    for mask in range(1 << n):
        bits = [(mask >> i) & 1 for i in range(n)]
        weight = 1.0
        for b, q in zip(bits, probs):
            weight *= q if b else (1.0 - q)
        hits = sum(bits)
        if 2 * hits > n or (2 * hits == n and bits[0] == 1):
            total += weight
    return total


def run_replay(
    router: str,
    dataset: SimDataset,
    config: ReplayConfig | None = None,
    decision_log: list | None = None,
    reward_log: list | None = None,
    final_state_out: list | None = None,
) -> RunMetrics:
    """Replay the labelled stream through one routing strategy.

    Bandit strategies receive per-pair rewards built from surrogate losses of
    their chosen annotations; all strategies share the same frozen dataset, so
    runs with equal seeds are paired across strategies.
    """
    config = config or ReplayConfig()
    kind, param = parse_router(router)
    scenario = dataset.scenario
    stream = dataset.stream
    n_arms, d = scenario.n_arms, scenario.d
    batch_size, n_steps = scenario.pairs_per_step, scenario.n_steps
    if stream.n != batch_size * n_steps:
        raise ConfigError("stream size does not match pairs_per_step * n_steps")

    needs_prior = kind in ("offline", "weighted") or (
        kind == "thompson" and config.prior_mode == "injected"
    )
    prior = config.offline_prior
    if needs_prior:
        if prior is None:
            raise ConfigError(f"router {router!r} needs an offline prior matrix")
        if prior.shape != (n_arms, d):
            raise ConfigError(
                f"offline prior shape {prior.shape} does not match ({n_arms}, {d})"
            )
    if kind == "single" and not 0 <= int(param) < n_arms:
        raise ConfigError(f"single arm index {param} out of range for {n_arms} models")

    offline_model = None
    if needs_prior:
        offline_model = OfflineRouterModel(
            fusion=None,
            bt_embeddings=prior,
            cls_embeddings=np.zeros_like(prior),
            lam=0.0,
            n_arms=n_arms,
        )

    seed_rng = np.random.default_rng(config.seed)
    route_rng = np.random.default_rng(seed_rng.integers(2**63))
    loss_rng = np.random.default_rng(seed_rng.integers(2**63))
    comp_rng = np.random.default_rng(seed_rng.integers(2**63))

    ts_state = None
    ucb_state = None
    if kind == "thompson":
        ts_state = init_router(
            n_arms,
            d,
            prior_mode=config.prior_mode,
            offline_prior=prior if config.prior_mode == "injected" else None,
            sigma_sq=config.sigma_sq,
            prior_variance=config.prior_variance,
            resample_per_pair=config.resample_per_pair,
        )
    elif kind == "weighted":
        ts_state = init_router(n_arms, d, prior_mode="zero", sigma_sq=config.sigma_sq)
    elif kind == "linucb":
        ucb_state = init_linucb(n_arms, d)

    history = RewardHistory(capacity=config.history_capacity)
    oracle_best = dataset.profiles.max(axis=0)  # per cluster
    ensemble_prob = np.array(
        [majority_correct_prob(dataset.profiles[:, c]) for c in range(scenario.n_clusters)]
    )

    accuracy_per_step: list[float] = []
    regret_trace: list[float] = []
    calls_per_step: list[int] = []
    selection_counts = np.zeros(n_arms, dtype=np.int64)
    total_hits = 0
    cum_regret = 0.0
    uwo_weight_sum = 0.0

    for step in range(n_steps):
        lo = step * batch_size
        rows = slice(lo, lo + batch_size)
        batch_pairs = stream.pairs[rows]
        clusters = stream.clusters[rows]
        correct = stream.correct[rows]
        answers = stream.answers[rows]
        batch = [(p.pair_id, stream.embeddings[p.pair_id]) for p in batch_pairs]
        contexts = np.stack([stream.embeddings[p.pair_id].vector for p in batch_pairs])

        calls = 0
        decisions: list[RoutingDecision] = []
        if kind in ENSEMBLE_KINDS:
            maj_labels, consensus, attributed = _majority_labels(answers)
            bits = (maj_labels == np.array([p.label for p in batch_pairs])).astype(np.uint8)
            chosen = attributed
            expected = ensemble_prob[clusters]
            calls += n_arms * batch_size
            if kind == "uwo":
                uwo_weight_sum += float(consensus.sum())
        else:
            if kind == "thompson":
                decisions = route_batch(ts_state, batch, route_rng)
                chosen = np.array([dec.chosen_arm for dec in decisions], dtype=np.int64)
            elif kind == "linucb":
                decisions = route_linucb(
                    ucb_state, batch, config.linucb_alpha, per_pair=config.linucb_per_pair
                )
                chosen = np.array([dec.chosen_arm for dec in decisions], dtype=np.int64)
            elif kind == "random":
                chosen = route_rng.integers(0, n_arms, size=batch_size)
            elif kind == "single":
                chosen = np.full(batch_size, int(param), dtype=np.int64)
            elif kind == "oracle":
                chosen = np.argmax(dataset.profiles[:, clusters], axis=0)
            elif kind == "offline":
                chosen = np.argmax(contexts @ offline_model.bt_embeddings.T, axis=1)
            elif kind == "weighted":
                chosen = np.array(
                    [
                        route_weighted_score(
                            offline_model, ts_state, contexts[i], float(param), route_rng
                        )
                        for i in range(batch_size)
                    ],
                    dtype=np.int64,
                )
            else:  # pragma: no cover
                raise ConfigError(f"unhandled router kind {kind!r}")
            bits = correct[np.arange(batch_size), chosen]
            expected = dataset.profiles[chosen, clusters]
            calls += batch_size

        selection_counts += np.bincount(chosen, minlength=n_arms)
        step_hits = int(bits.sum())
        total_hits += step_hits
        accuracy_per_step.append(step_hits / batch_size)
        cum_regret += float(np.sum(oracle_best[clusters] - expected))
        regret_trace.append(cum_regret)

        if kind in BANDIT_KINDS:
            pair_ids = [p.pair_id for p in batch_pairs]
            losses = {
                pid: surrogate_pair_loss(bool(bits[i]), loss_rng)
                for i, pid in enumerate(pair_ids)
            }
            rewards_map: dict[str, float] = {}
            raw_map: dict[str, float] = {}
            bounds = None
            if config.reward_variant == "batch_quantile":
                raw_map = batch_baseline_rewards(
                    [PairLoss(pid, losses[pid]) for pid in pair_ids]
                )
                rewards_map, bounds = normalize_step_rewards(
                    raw_map, history, warmup_min=config.warmup_min
                )
            elif config.reward_variant == "neg_loss":
                raw_map = {pid: -losses[pid] for pid in pair_ids}
                rewards_map = dict(raw_map)
            elif config.reward_variant == "full_advantage":
                for i, pid in enumerate(pair_ids):
                    all_losses = [
                        losses[pid]
                        if n == chosen[i]
                        else surrogate_pair_loss(bool(correct[i, n]), loss_rng)
                        for n in range(n_arms)
                    ]
                    calls += n_arms - 1
                    value = float(full_advantage_reward(all_losses, int(chosen[i])))
                    raw_map[pid] = value
                    rewards_map[pid] = value
            else:  # light_advantage
                for i, pid in enumerate(pair_ids):
                    comparators = sample_comparators(n_arms, int(chosen[i]), config.light_c, comp_rng)
                    comp_losses = [
                        surrogate_pair_loss(bool(correct[i, n]), loss_rng) for n in comparators
                    ]
                    calls += len(comparators)
                    value = float(light_advantage_reward(comp_losses, losses[pid]))
                    raw_map[pid] = value
                    rewards_map[pid] = value

            if kind == "thompson":
                ts_state = observe_feedback(ts_state, decisions, rewards_map)
            elif kind == "linucb":
                ucb_state = update_linucb(ucb_state, decisions, rewards_map)
            else:  # weighted: update its internal zero-prior sampler directly
                ts_state = _update_weighted_state(ts_state, contexts, chosen, pair_ids, rewards_map)

            if decision_log is not None and decisions:
                decision_log.extend(decision_record(step, dec) for dec in decisions)
            if reward_log is not None:
                for pid in pair_ids:
                    reward_log.append(
                        reward_log_row(step, pid, raw_map[pid], rewards_map[pid], bounds)
                    )

        calls_per_step.append(calls)

    metrics = RunMetrics(
        router=router,
        seed=config.seed,
        routing_accuracy_per_step=accuracy_per_step,
        cumulative_regret=regret_trace,
        arm_selection_counts=selection_counts,
        final_annotation_accuracy=total_hits / (batch_size * n_steps),
        rm_calls_per_step=calls_per_step,
        mean_uwo_weight=(
            uwo_weight_sum / (batch_size * n_steps) if kind == "uwo" else None
        ),
    )
    metrics.validate(batch_size, n_steps)
    if final_state_out is not None and ts_state is not None:
        final_state_out.append(ts_state)
    return metrics


def _update_weighted_state(
    state: OnlineRouterState,
    contexts: np.ndarray,
    chosen: np.ndarray,
    pair_ids: list[str],
    rewards: dict[str, float],
) -> OnlineRouterState:
    grouped: dict[int, list[int]] = {}
    for i, pid in enumerate(pair_ids):
        if pid in rewards:
            grouped.setdefault(int(chosen[i]), []).append(i)
    new_arms = []
    for n, arm in enumerate(state.arms):
        idx = grouped.get(n)
        if not idx:
            new_arms.append(arm)
            continue
        batch = ObservationBatch(
            contexts=contexts[idx],
            rewards=np.array([rewards[pair_ids[i]] for i in idx]),
        )
        new_arms.append(posterior_update(arm, batch))
    counts = state.selection_counts.copy()
    counts += np.bincount(chosen, minlength=state.n_arms)
    return OnlineRouterState(
        arms=new_arms, config=state.config, step=state.step + 1, selection_counts=counts
    )


# ---------------------------------------------------------------------------
# cross-run comparison


@dataclass
class ComparisonReport:
    baseline: str
    methods: list[str]
    seeds: list[int]
    accuracies: dict[str, np.ndarray]  # per method, aligned with seeds
    deltas: dict[str, np.ndarray]
    summary: list[dict]

    def to_csv(self) -> str:
        lines = [
            f"# baseline={self.baseline} seeds={len(self.seeds)}",
            "router,seed,final_annotation_accuracy,delta_vs_baseline",
        ]
        for method in self.methods:
            for j, seed in enumerate(self.seeds):
                lines.append(
                    f"{method},{seed},{self.accuracies[method][j]!r},{self.deltas[method][j]!r}"
                )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(m) for m in self.methods)
        header = (
            f"{'router'.ljust(width)}  mean_acc   mean_delta  ci95_lo    ci95_hi"
        )
        rows = [header, "-" * len(header)]
        for entry in self.summary:
            rows.append(
                f"{entry['router'].ljust(width)}  "
                f"{entry['mean_accuracy']:+.4f}    {entry['mean_delta']:+.4f}     "
                f"{entry['ci_lo']:+.4f}    {entry['ci_hi']:+.4f}"
            )
        return "\n".join(rows) + "\n"


def compare_runs(
    metrics: Sequence,
    baseline_index: int,
    n_boot: int = 10000,
    seed: int = 0,
) -> ComparisonReport:
    """Paired per-seed comparison of final annotation accuracies.

    ``metrics`` may be RunMetrics or any objects carrying router, seed and
    final_annotation_accuracy.  All routers must cover the same seed set.
    Bootstrap confidence intervals resample seeds with replacement.
    """
    if len(metrics) < 2:
        raise InputError("need at least two runs to compare")
    methods: list[str] = []
    by_method: dict[str, dict[int, float]] = {}
    for m in metrics:
        if m.router not in by_method:
            methods.append(m.router)
            by_method[m.router] = {}
        if m.seed in by_method[m.router]:
            raise InputError(f"duplicate run for router {m.router!r}, seed {m.seed}")
        by_method[m.router][m.seed] = float(m.final_annotation_accuracy)
    if not 0 <= baseline_index < len(methods):
        raise InputError(f"baseline index {baseline_index} out of range")
    baseline = methods[baseline_index]
    seed_set = set(by_method[baseline])
    for method in methods:
        if set(by_method[method]) != seed_set:
            raise InputError(f"router {method!r} does not cover the same seeds as {baseline!r}")
    seeds = sorted(seed_set)
    accuracies = {
        method: np.array([by_method[method][s] for s in seeds]) for method in methods
    }
    deltas = {method: accuracies[method] - accuracies[baseline] for method in methods}

    rng = np.random.default_rng(seed)
    n_seeds = len(seeds)
    summary = []
    for method in methods:
        delta = deltas[method]
        if method == baseline:
            ci_lo = ci_hi = 0.0
        else:
            idx = rng.integers(0, n_seeds, size=(n_boot, n_seeds))
            boot_means = delta[idx].mean(axis=1)
            ci_lo = float(np.percentile(boot_means, 2.5))
            ci_hi = float(np.percentile(boot_means, 97.5))
        summary.append(
            {
                "router": method,
                "mean_accuracy": float(accuracies[method].mean()),
                "mean_delta": float(delta.mean()),
                "ci_lo": ci_lo,
                "ci_hi": ci_hi,
            }
        )
    return ComparisonReport(
        baseline=baseline,
        methods=methods,
        seeds=seeds,
        accuracies=accuracies,
        deltas=deltas,
        summary=summary,
    )
