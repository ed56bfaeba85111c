"""Partially observable slate recommendation with a trainable policy.

Users carry a latent topic-interest vector that drifts toward the topics
of high-quality consumed items and away from low-quality ones.  The
recommender sees only a finite history of consumed items and their
engagement; it embeds that history, maps it through one hidden layer to
a belief state, scores the current corpus, and emits a Plackett-Luce
slate whose log-probability drives REINFORCE training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..behaviors import (AffinityModel, ChoiceModel,
                         ControlledLinearGaussianStateModel,
                         FiniteHistoryEstimator, ParameterRegistry,
                         story_with_trainable_variables)
from ..core import FieldSpec, Network, Value, ValueSpec, Variable
from ..dist import Categorical, Deterministic, Normal, PlackettLuce
from ..tensor import Tensor


@dataclass(frozen=True)
class PorlConfig:
    population: int = 100          # users simulated in parallel (= trajectories)
    interest_dim: int = 20         # number of topics, d
    corpus_size: int = 50          # items resampled each period
    slate_size: int = 2
    horizon: int = 20
    history_length: int = 15
    sensitivity: float = 0.05      # pull of consumed items on interest
    noise_scale: float = 0.03      # interest dynamics noise
    choice_sharpness: float = 0.7  # affinity scale inside the user choice model
    feature_scale: float = 4.0     # magnitude of topic feature vectors
    quality_spread: float = 0.5    # per-topic quality means span [-spread, +spread]
    quality_scale: float = 0.3     # per-item quality noise around the topic mean
    reward_base: float = 4.0
    reward_quality_gain: float = 2.0
    reward_affinity_gain: float = 2.0   # engagement lift for well-matched items
    affinity_offset: float | None = None  # None: sqrt(d + feature_scale^2)
    reward_noise: float = 1.0
    record_scale: float = 0.5      # history records: features * centered engagement
    embed_dim: int | None = None   # None: interest_dim, with near-identity init
    hidden_width: int = 32
    param_seed: int = 0

    def __post_init__(self):
        if self.interest_dim < 1:
            raise ValueError("interest_dim must be >= 1")
        if not 1 <= self.slate_size <= self.corpus_size:
            raise ValueError("slate_size must be in [1, corpus_size]")
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.history_length < 1:
            raise ValueError("history_length must be >= 1")


METRIC_PATHS = {
    "reward": "metrics.cumulative_reward",
    "policy_log_prob": "slate.doc_ranks",
}


def _topic_quality_means(cfg: PorlConfig) -> np.ndarray:
    # Two topic groups: the first half skews high quality, the rest low.
    means = np.full(cfg.interest_dim, -cfg.quality_spread)
    means[: cfg.interest_dim // 2] = cfg.quality_spread
    return means


def build_porl_story(cfg: PorlConfig, policy: str = "learned"):
    """Returns (network, parameter registry, metric paths).

    ``policy`` selects the recommender: "learned" (trainable), "random"
    (uniform slates), or "oracle" (cheats: top-k by affinity-plus-quality
    against the latent interest; a dominance baseline, no learning).
    """
    if policy not in ("learned", "random", "oracle"):
        raise ValueError(f"unknown policy {policy!r}")

    def story(registry: ParameterRegistry):
        B, d, n, k = cfg.population, cfg.interest_dim, cfg.corpus_size, cfg.slate_size
        e = cfg.interest_dim if cfg.embed_dim is None else cfg.embed_dim
        hidden = cfg.hidden_width
        prng = np.random.default_rng(cfg.param_seed)
        if policy == "learned":
            if hidden < e:
                raise ValueError("hidden_width must be >= embedding dim")
            # Identity-pathway initialization: the tanh layer starts in its
            # near-linear regime with proj(h) ~ pooled history embedding, so
            # consumption histograms influence scores from the first step.
            emb_init = prng.normal(0, 0.1, (d, e))
            if e == d:
                emb_init += np.eye(d) / max(cfg.feature_scale, 1.0)
            w1_init = prng.normal(0, 0.05, (e + 1, hidden))
            w1_init[:e, :e] += 0.5 * np.eye(e)
            w2_init = prng.normal(0, 0.05, (hidden, e))
            w2_init[:e, :e] += 2.0 * np.eye(e)
            registry.create("item_embedding", emb_init)
            registry.create("policy_w1", w1_init)
            registry.create("policy_b1", np.zeros(hidden))
            registry.create("policy_w2", w2_init)
            registry.create("policy_b2", np.zeros(e))

        topic_means = _topic_quality_means(cfg)
        affinity = AffinityModel("negative_euclidean")
        choice_affinity = AffinityModel("negative_euclidean",
                                        scale=cfg.choice_sharpness)
        user_choice = ChoiceModel("multinomial_logit")
        interest_model = ControlledLinearGaussianStateModel(
            d, sensitivity=cfg.sensitivity, noise_scale=cfg.noise_scale)
        history_buf = FiniteHistoryEstimator(cfg.history_length)

        corpus_topics = Variable("corpus_topics", ValueSpec(
            topic=FieldSpec((n,), "integer")))
        corpus = Variable("corpus", ValueSpec(
            features=FieldSpec((n, d)), quality=FieldSpec((n,))))
        user_state = Variable("user_state", ValueSpec(interest=FieldSpec((d,))))
        history = Variable("history", ValueSpec(
            records=FieldSpec((cfg.history_length, d + 1)),
            mask=FieldSpec((cfg.history_length,))))
        slate = Variable("slate", ValueSpec(doc_ranks=FieldSpec((k,), "integer")))
        choice = Variable("choice", ValueSpec(choice=FieldSpec((), "integer")))
        engagement = Variable("engagement", ValueSpec(value=FieldSpec(())))
        consumed = Variable("consumed", ValueSpec(
            features=FieldSpec((d,)), engagement=FieldSpec(())))
        metrics = Variable("metrics", ValueSpec(cumulative_reward=FieldSpec(())))

        def sample_topics():
            return Value(topic=Categorical(Tensor(np.zeros((B, n, d)))))

        def build_corpus(topics_v):
            t = np.asarray(topics_v.get("topic"))
            return Value(features=Tensor(cfg.feature_scale * np.eye(d)[t]),
                         quality=Normal(Tensor(topic_means[t]), cfg.quality_scale))

        def initial_interest():
            return Value(interest=Normal(Tensor(np.zeros((B, d))), 1.0))

        def learned_slate(history_v, corpus_v):
            records = history_v.get("records").data
            mask = history_v.get("mask").data
            denom = np.maximum(mask.sum(axis=1), 1.0)
            pooled_feats = T.div(
                T.reduce_sum(T.matmul(Tensor(records[:, :, :d] * mask[:, :, None]),
                                      registry.get("item_embedding")), axis=1),
                Tensor(denom[:, None]))
            pooled_eng = (records[:, :, d] * mask).sum(axis=1) / denom
            policy_in = T.concat([pooled_feats, Tensor(pooled_eng[:, None])], axis=-1)
            belief = T.tanh(T.add(T.matmul(policy_in, registry.get("policy_w1")),
                                  registry.get("policy_b1")))
            projection = T.add(T.matmul(belief, registry.get("policy_w2")),
                               registry.get("policy_b2"))
            item_emb = T.matmul(corpus_v.get("features"), registry.get("item_embedding"))
            scores = T.reduce_sum(T.mul(item_emb, T.expand_dims(projection, 1)), axis=-1)
            return Value(doc_ranks=PlackettLuce(scores, k))

        def random_slate(history_v, corpus_v):
            return Value(doc_ranks=PlackettLuce(Tensor(np.zeros((B, n))), k))

        def oracle_slate_from(interest_v, corpus_v):
            dist = np.linalg.norm(corpus_v.get("features").data
                                  - interest_v.get("interest").data[:, None, :], axis=-1)
            score = -dist + corpus_v.get("quality").data
            ranks = np.argsort(-score, axis=-1, kind="stable")[:, :k].astype(np.int64)
            return Value(doc_ranks=ranks)

        def make_choice(state_v, slate_v, corpus_v):
            ranks = np.asarray(slate_v.get("doc_ranks"))
            slate_feats = T.take_along(corpus_v.get("features"),
                                       ranks[:, :, None], axis=1)
            aff = choice_affinity.affinities(state_v.get("interest"), slate_feats)
            return Value(choice=user_choice.choice(aff))

        def _chosen_doc(choice_v, slate_v):
            ranks = np.asarray(slate_v.get("doc_ranks"))
            return np.take_along_axis(ranks, np.asarray(choice_v.get("choice"))[:, None],
                                      axis=1)[:, 0]

        offset = (np.sqrt(d + cfg.feature_scale**2) if cfg.affinity_offset is None
                  else cfg.affinity_offset)

        def engage(choice_v, slate_v, corpus_v, state_v):
            doc = _chosen_doc(choice_v, slate_v)
            q = T.squeeze(T.take_along(corpus_v.get("quality"), doc[:, None], 1), 1)
            feats = T.squeeze(T.take_along(corpus_v.get("features"),
                                           doc[:, None, None], 1), 1)
            match = T.add(T.squeeze(affinity.affinities(
                state_v.get("interest"), T.expand_dims(feats, 1)), 1), offset)
            mean = T.add(T.add(T.mul(q, cfg.reward_quality_gain),
                               T.mul(match, cfg.reward_affinity_gain)),
                         cfg.reward_base)
            return Value(value=Normal(mean, cfg.reward_noise))

        def consume(choice_v, slate_v, corpus_v, engagement_v):
            # records carry the consumed item's features scaled by how much
            # the consumption paid off, so pooled history estimates per-topic
            # engagement rather than a bare consumption histogram
            doc = _chosen_doc(choice_v, slate_v)
            feats = T.squeeze(T.take_along(corpus_v.get("features"),
                                           doc[:, None, None], 1), 1)
            eng = engagement_v.get("value")
            weight = T.mul(T.sub(eng, cfg.reward_base), cfg.record_scale)
            return Value(features=T.mul(feats, T.expand_dims(weight, -1)),
                         engagement=eng)

        def next_interest(state_v, choice_v, slate_v, corpus_v):
            doc = _chosen_doc(choice_v, slate_v)
            feats = T.squeeze(T.take_along(corpus_v.get("features"),
                                           doc[:, None, None], 1), 1)
            q = T.squeeze(T.take_along(corpus_v.get("quality"), doc[:, None], 1), 1)
            prev = state_v.get("interest")
            control = T.mul(T.expand_dims(q, -1), T.sub(feats, prev))
            return Value(interest=interest_model.next_state(prev, control))

        def initial_history():
            return history_buf.initial_state(B, d + 1)

        def push_history(history_v, consumed_v):
            record = np.concatenate(
                [consumed_v.get("features").data,
                 consumed_v.get("engagement").data[:, None]], axis=1)
            return history_buf.push(history_v, record)

        def initial_metric(engagement_v):
            return Value(cumulative_reward=T.relu(engagement_v.get("value")))

        def accumulate_metric(metrics_v, engagement_v):
            return Value(cumulative_reward=T.add(metrics_v.get("cumulative_reward"),
                                                 T.relu(engagement_v.get("value"))))

        corpus_topics.bind_initial(sample_topics)
        corpus_topics.bind_kernel(sample_topics)
        corpus.bind_initial(build_corpus, deps=(corpus_topics,))
        corpus.bind_kernel(build_corpus, deps=(corpus_topics,))
        user_state.bind_initial(initial_interest)
        user_state.bind_kernel(next_interest,
                               deps=(user_state.previous, choice, slate, corpus))
        history.bind_initial(initial_history)
        history.bind_kernel(push_history, deps=(history.previous, consumed.previous))
        if policy == "learned":
            slate.bind_initial(learned_slate, deps=(history, corpus))
            slate.bind_kernel(learned_slate, deps=(history, corpus))
        elif policy == "random":
            slate.bind_initial(random_slate, deps=(history, corpus))
            slate.bind_kernel(random_slate, deps=(history, corpus))
        else:
            slate.bind_initial(oracle_slate_from, deps=(user_state, corpus))
            slate.bind_kernel(
                lambda prev_state, corpus_v: oracle_slate_from(prev_state, corpus_v),
                deps=(user_state.previous, corpus))
        choice.bind_initial(make_choice, deps=(user_state, slate, corpus))
        choice.bind_kernel(make_choice, deps=(user_state.previous, slate, corpus))
        engagement.bind_initial(engage, deps=(choice, slate, corpus, user_state))
        engagement.bind_kernel(engage, deps=(choice, slate, corpus,
                                             user_state.previous))
        consumed.bind_initial(consume, deps=(choice, slate, corpus, engagement))
        consumed.bind_kernel(consume, deps=(choice, slate, corpus, engagement))
        metrics.bind_initial(initial_metric, deps=(engagement,))
        metrics.bind_kernel(accumulate_metric, deps=(metrics.previous, engagement))

        return [corpus_topics, corpus, user_state, history, slate, choice,
                engagement, consumed, metrics]

    variables, registry = story_with_trainable_variables(story)
    return Network(variables), registry, dict(METRIC_PATHS)
