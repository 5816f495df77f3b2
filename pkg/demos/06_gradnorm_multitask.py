"""Multi-objective training with GradNorm loss balancing.

One shared 256-wide trunk feeds four heads: category, poisonous, genus,
species. Cross-entropy drives the three taxonomic heads and binary
cross-entropy the poisonous flag. GradNorm learns one weight per
objective by pulling each task's shared-trunk gradient norm toward a
common target; weights stay positive and renormalize to sum to the task
count after every step.
"""

from mycoprobe import (
    SyntheticSpec,
    TrainConfig,
    build_label_space,
    generate_eval_split,
    generate_synthetic,
    make_bundle,
    train,
)

spec = SyntheticSpec(num_classes=18, dim=48, head_count=14, tail_count=2, cluster_spread=0.7, seed=23)
table, records = generate_synthetic(spec)
labels = build_label_space(records)
val_table, val_records = generate_eval_split(spec, per_class=6)
bundle = make_bundle(labels, table, records, val_table, val_records)

config = TrainConfig(
    seed=23,
    max_epochs=15,
    objectives=("category", "poisonous", "genus", "species"),
    weighted_sampling=True,
    gradnorm_gamma=1.5,
)
result = train(bundle, config)

print(f"trained a {result.kind} head for {len(result.log)} epochs")
print(f"best validation top-5 (category objective): {result.best_val_top5:.3f}")
print()
print("epoch  w_category  w_poisonous  w_genus  w_species   sum")
for rec in result.log.records:
    w = rec.task_weights
    total = sum(w.values())
    print(
        f"{rec.epoch:>5}  {w['category']:>10.3f}  {w['poisonous']:>11.3f}"
        f"  {w['genus']:>7.3f}  {w['species']:>9.3f}  {total:>5.2f}"
    )
