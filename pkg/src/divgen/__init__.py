"""divgen: diversified text-dataset generation with human-in-the-loop curation.

A toolkit for generating text-classification datasets from a language model
with diversification (logit suppression, temperature sampling), measuring
dataset quality (remote-clique diversity, cross-set distance, label accuracy),
and repairing datasets through label replacement and out-of-scope filtering,
either programmatically or through an annotation HTTP service and web console.
"""

__version__ = "0.1.0"

from divgen.sampling import (
    BiasMap,
    FrequencyLedger,
    SamplingParams,
    apply_bias,
    apply_temperature,
    apply_top_p,
    compute_suppression_bias,
    sample_token,
    update_ledger,
)

__all__ = [
    "BiasMap",
    "FrequencyLedger",
    "SamplingParams",
    "apply_bias",
    "apply_temperature",
    "apply_top_p",
    "compute_suppression_bias",
    "sample_token",
    "update_ledger",
    "__version__",
]
