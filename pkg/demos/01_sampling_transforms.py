"""Walk through the sampling transforms on a tiny hand-made distribution.

Shows how temperature reshapes token probabilities, how the frequency ledger
turns into suppression bias weights, and what applying those weights does.
"""

import numpy as np

from divgen.sampling import (
    FrequencyLedger,
    apply_bias,
    apply_temperature,
    apply_top_p,
    compute_suppression_bias,
    entropy,
)

dist = np.array([0.55, 0.25, 0.12, 0.05, 0.03])
print("base distribution:", dist, f"(entropy {entropy(dist):.3f} nats)")

print("\ntemperature sweep over the standard grid:")
for t in (0.3, 0.7, 0.9, 1.3):
    out = apply_temperature(dist, t)
    print(f"  T={t:>3}: {np.round(out, 4)}  entropy {entropy(out):.3f}")

print("\nfrequency ledger -> suppression weights (-7.5 x ratio%, floored at -7.5):")
ledger = FrequencyLedger()
ledger.update([0] * 120 + [1] * 60 + [2] * 15 + [3] * 5)
bias = compute_suppression_bias(ledger)
for token, weight in sorted(bias.items()):
    ratio = 100 * ledger.counts[token] / ledger.total
    print(f"  token {token}: {ratio:5.1f}% of generations -> weight {weight:.3f}")

print("\napplying the bias (suppressed tokens lose, never gain):")
biased = apply_bias(dist, bias)
for i, (before, after) in enumerate(zip(dist, biased)):
    print(f"  token {i}: {before:.3f} -> {after:.3f}")

print("\nnucleus truncation: top_p=0.8 on the base distribution:")
print(" ", np.round(apply_top_p(dist, 0.8), 4))
