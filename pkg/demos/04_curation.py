"""Repair a diversified dataset: proxy label replacement, then OOS filtering.

Inspecting 90/180/270 instances trains per-label proxies whose blended
scores relabel the rest; a separate binary model filters texts that fit no
label. Accuracy is judged against the keyword labeler.
"""

import numpy as np

from divgen.curation import replace_labels, train_oos_model, filter_oos
from divgen.demo import build_demo_corpus, build_demo_task, build_mock_backend
from divgen.metrics import HashedNGramEmbedder, label_accuracy
from divgen.mocklm import OOS, KeywordLabeler, keyword_oracle
from divgen.pipeline import run_generation

synthetic = build_demo_corpus(seed=0)
embedder = HashedNGramEmbedder()
labeler = KeywordLabeler(synthetic)

task = build_demo_task(target_count=400, temperature=1.3, logit_suppression=True)
dataset = run_generation(task, build_mock_backend(task, synthetic), rng_seed=3)
print("label accuracy as generated:", round(label_accuracy(dataset, labeler), 3))

for budget in (90, 180, 270):
    repaired = replace_labels(dataset, "proxy", labeler, embedder=embedder,
                              n_inspected=budget, rng_seed=0)
    print(f"after proxy LR with {budget:>3} inspected:",
          round(label_accuracy(repaired, labeler), 3))

full = replace_labels(dataset, "oracle_all", labeler)
print("after full oracle LR:            ", round(label_accuracy(full, labeler), 3))

# out-of-scope filtering from a 360-instance annotated sample
rng = np.random.default_rng(0)
sample = [dataset.instances[int(i)]
          for i in rng.choice(len(dataset.instances), size=360, replace=True)]
annotations = [(inst.text, keyword_oracle(synthetic, inst.text) == OOS) for inst in sample]
print("\nannotated OOS ratio in the sample:",
      round(float(np.mean([flag for _, flag in annotations])), 3))
model = train_oos_model(annotations, embedder)
filtered, report = filter_oos(full, model, embedder)
print(f"OOS filter removed {report['removed']} of {len(full.instances)} "
      f"({report['ratio']:.1%}); {len(filtered.instances)} remain")
