"""Probability transforms for diversified token sampling.

This module holds the pure math used by the generation loop: temperature
scaling of a token distribution, logit-bias application, nucleus (top-p)
truncation, seeded sampling, and the frequency-ledger bookkeeping that turns
token usage statistics into suppression bias weights.

The generation loop applies transforms in a fixed order:
temperature -> bias -> top-p -> sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "BiasMap",
    "FrequencyLedger",
    "SamplingParams",
    "DEFAULT_SUPPRESSION_SCALE",
    "DEFAULT_SUPPRESSION_FLOOR",
    "MAX_BIAS_ENTRIES",
    "validate_distribution",
    "apply_temperature",
    "compute_suppression_bias",
    "apply_bias",
    "apply_top_p",
    "sample_token",
    "update_ledger",
    "entropy",
]

# Hosted completion APIs accept at most 100 logit-bias entries; suppression
# weights are ratio-proportional with a hard floor.
MAX_BIAS_ENTRIES = 100
DEFAULT_SUPPRESSION_SCALE = -7.5
DEFAULT_SUPPRESSION_FLOOR = -7.5

BiasMap = dict[int, float]


@dataclass
class SamplingParams:
    """Knobs controlling one completion request.

    temperature flattens (>1) or sharpens (<1) the token distribution,
    top_p keeps the smallest high-probability prefix with at least that
    much mass, frequency_penalty is a per-completion additive logit
    penalty proportional to how often a token already occurred in the
    completion being generated.
    """

    temperature: float = 1.0
    top_p: float = 1.0
    frequency_penalty: float = 0.02
    max_tokens: int = 100
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass
class FrequencyLedger:
    """Cumulative counts of tokens generated so far in a run.

    Only generated tokens are counted, never prompt tokens. The generation
    loop is the single writer; reads are safe from anywhere.
    """

    counts: dict[int, int] = field(default_factory=dict)
    total: int = 0

    def update(self, tokens: Iterable[int]) -> "FrequencyLedger":
        for tok in tokens:
            self.counts[tok] = self.counts.get(tok, 0) + 1
            self.total += 1
        return self

    def copy(self) -> "FrequencyLedger":
        return FrequencyLedger(counts=dict(self.counts), total=self.total)


def validate_distribution(probs: np.ndarray | Iterable[float], atol: float = 1e-9) -> np.ndarray:
    """Check that ``probs`` is a valid probability vector and return it as float64."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty 1-D vector")
    if np.any(p < -atol):
        raise ValueError("distribution has negative entries")
    total = p.sum()
    if total <= 0:
        raise ValueError("distribution is all zero")
    if abs(total - 1.0) > atol:
        raise ValueError(f"distribution sums to {total!r}, expected 1")
    return p


def apply_temperature(probs: np.ndarray | Iterable[float], temperature: float) -> np.ndarray:
    """Rescale a distribution by sampling temperature.

    Each probability is raised to the power 1/temperature and the vector is
    renormalized, so temperatures above 1 flatten the distribution and
    temperatures below 1 sharpen it. Computed in log space so extreme
    temperatures do not underflow.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    p = validate_distribution(probs)
    out = np.zeros_like(p)
    support = p > 0
    logp = np.log(p[support]) / temperature
    logp -= logp.max()
    weights = np.exp(logp)
    out[support] = weights / weights.sum()
    return out


def compute_suppression_bias(
    ledger: FrequencyLedger,
    max_entries: int = MAX_BIAS_ENTRIES,
    scale: float = DEFAULT_SUPPRESSION_SCALE,
    floor: float = DEFAULT_SUPPRESSION_FLOOR,
) -> BiasMap:
    """Turn cumulative token counts into suppression bias weights.

    The ``max_entries`` most frequent tokens (ties broken by lower token id)
    each get weight ``scale`` times their appearance ratio in percent, floored
    at ``floor``. An empty ledger yields an empty map.
    """
    if ledger.total <= 0:
        return {}
    ranked = sorted(ledger.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    bias: BiasMap = {}
    for token_id, count in ranked[:max_entries]:
        ratio_percent = 100.0 * count / ledger.total
        bias[token_id] = max(floor, scale * ratio_percent)
    return bias


def apply_bias(probs: np.ndarray | Iterable[float], bias: Mapping[int, float]) -> np.ndarray:
    """Apply additive log-probability bias weights and renormalize.

    Biased tokens are reweighted by exp(weight) before renormalization,
    mirroring server-side logit addition. A guard keeps suppression honest:
    a token with a negative weight is never left with a higher probability
    than it had before the bias, even when renormalization alone would lift
    it (which happens when heavily suppressed tokens carry much of the mass).
    """
    p = validate_distribution(probs)
    if not bias:
        return p.copy()
    weights = np.zeros_like(p)
    for token_id, weight in bias.items():
        if not 0 <= token_id < p.size:
            raise ValueError(f"bias token id {token_id} outside distribution of size {p.size}")
        weights[token_id] = weight
    scaled = p * np.exp(weights)
    if scaled.sum() <= 0:
        raise ValueError("bias drove the whole distribution to zero")
    out = scaled / scaled.sum()

    suppressed = weights < 0
    capped = np.zeros(p.size, dtype=bool)
    for _ in range(p.size):
        over = suppressed & ~capped & (out > p * (1 + 1e-12) + 1e-15)
        if not over.any():
            break
        capped |= over
        free_mass = 1.0 - p[capped].sum()
        rest = scaled[~capped].sum()
        if rest <= 0:
            # everything suppressed and capped: nothing left to absorb mass
            out = p.copy()
            break
        out = np.where(capped, p, scaled * (free_mass / rest))
    return out


def apply_top_p(probs: np.ndarray | Iterable[float], top_p: float) -> np.ndarray:
    """Keep the smallest probability-descending prefix with mass >= top_p.

    Ties are broken toward lower token ids. ``top_p=1`` is the identity.
    """
    if not 0 < top_p <= 1:
        raise ValueError(f"top_p must be in (0, 1], got {top_p}")
    p = validate_distribution(probs)
    order = np.argsort(-p, kind="stable")
    csum = np.cumsum(p[order])
    k = int(np.searchsorted(csum, top_p - 1e-12, side="left")) + 1
    k = min(k, p.size)
    out = np.zeros_like(p)
    keep = order[:k]
    out[keep] = p[keep]
    return out / out.sum()


def sample_token(probs: np.ndarray | Iterable[float], rng: np.random.Generator) -> int:
    """Draw one token id from the distribution using the given generator."""
    p = validate_distribution(probs)
    return int(rng.choice(p.size, p=p / p.sum()))


def update_ledger(ledger: FrequencyLedger, tokens: Iterable[int]) -> FrequencyLedger:
    """Record generated tokens in the ledger (mutates and returns it)."""
    return ledger.update(tokens)


def entropy(probs: np.ndarray | Iterable[float]) -> float:
    """Shannon entropy in nats; zero-probability terms contribute nothing."""
    p = validate_distribution(probs)
    support = p > 0
    return float(-(p[support] * np.log(p[support])).sum())
