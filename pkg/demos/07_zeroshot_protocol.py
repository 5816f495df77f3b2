"""The hierarchical zero-shot protocol against a scripted mock client.

Three rounds narrow the taxonomy (families, then the genera under the
accepted families, then species), every response is validated by
normalized edit distance against the candidate list, and all usage is
priced into a ledger. The mock below imitates a model that knows the
answer but misspells ~20% of its output.
"""

import json

import numpy as np

from mycoprobe import (
    ObservationQuery,
    ScriptedClient,
    SyntheticSpec,
    UsageLedger,
    build_label_space,
    build_taxonomy,
    classify_observation,
    generate_synthetic,
    species_frequencies,
)

spec = SyntheticSpec(num_classes=27, dim=8, head_count=8, tail_count=1, cluster_spread=0.0, seed=41)
_, records = generate_synthetic(spec)
labels = build_label_space(records)
tree = build_taxonomy(records, labels)
counts = species_frequencies(tree, labels)

print(f"taxonomy: {len(tree.families)} families, {sum(len(g) for g in tree.genera_of.values())} genera, {len(tree.all_species)} species")

mock_rng = np.random.default_rng(7)


def sloppy_expert(request, attempt):
    """Rank candidates in order but typo one character 20% of the time."""
    items = []
    for name in request.candidate_list[:20]:
        if mock_rng.random() < 0.2 and len(name) >= 10:
            pos = int(mock_rng.integers(len(name)))
            name = name[:pos] + "?" + name[pos + 1 :]
        items.append({"name": name, "confidence": int(mock_rng.integers(3, 6)), "reason": "demo"})
    return json.dumps({"candidates": items})


client = ScriptedClient(sloppy_expert, model="sloppy-expert")
ledger = UsageLedger()
obs = ObservationQuery(
    observation_id="demo-obs",
    image_refs=("demo-obs#0", "demo-obs#1"),
    location="copenhagen",
    substrate="dead wood",
    season="autumn",
)
result = classify_observation(obs, tree, client, species_counts=counts, ledger=ledger)

print()
for round_name in ("family", "genus", "species"):
    accepted = result.accepted[round_name]
    print(f"{round_name}: accepted {len(accepted)}, first three {accepted[:3]}")
print()
print(f"final top-{len(result.species)} species (typos canonicalized, every name from the taxonomy):")
for rank, name in enumerate(result.species, start=1):
    print(f"  {rank:>2}. {name}")
print()
usage = ledger.per_model["sloppy-expert"]
print(f"ledger: {usage.requests} requests, {usage.tokens_in + usage.tokens_out} tokens, ${usage.cost:.4f}")
print(f"fallback used: {result.fallback}")
