"""Generate a small dataset from the bundled mock LM, with and without
logit suppression, and peek at what the ledger learned.
"""

from collections import Counter

from divgen.demo import build_demo_corpus, build_demo_task, build_mock_backend
from divgen.pipeline import render_prompt, run_generation

synthetic = build_demo_corpus(seed=0)

task = build_demo_task(target_count=80, temperature=0.9)
print("prompt sent for the first joy batch:\n")
print(render_prompt(task, "joy"))
print()

for suppression in (False, True):
    task = build_demo_task(target_count=80, temperature=0.9, logit_suppression=suppression)
    backend = build_mock_backend(task, synthetic)
    dataset = run_generation(task, backend, rng_seed=42)
    texts = [inst.text for inst in dataset.instances]
    words = Counter(w for t in texts for w in t.split())
    print(f"--- logit suppression {'ON' if suppression else 'OFF'} ---")
    for inst in dataset.instances[:4]:
        print(f"  [{inst.specified_label:>7}] {inst.text}")
    print("  distinct texts:", len(set(texts)), "/", len(texts))
    print("  top words:", words.most_common(6))
    print()
