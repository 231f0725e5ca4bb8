"""Show the label-sorted non-iid partition and test-set skew injection.

Each node gets four of the ten classes (150 examples each), split 80/20 into
train/test. Skew then appends foreign-class examples to the test sets only,
which is how evaluation-time distribution shift enters the experiments.
"""

import numpy as np

from scei import PartitionSpec, generate_synthetic, inject_skew, partition_non_iid

ds = generate_synthetic(num_classes=10, per_class=1500, input_dim=20, separation=4.0, seed=42)
spec = PartitionSpec(
    num_nodes=10, samples_per_node=600, labels_per_node=4, skew_ratio=0.20, rng_seed=42
)

splits = partition_non_iid(ds, spec)
print("node | assigned labels | train | test")
for node_id, split in enumerate(splits):
    print(
        f"  {node_id}  | {sorted(split.assigned_labels)} | {len(split.train):5d} | {len(split.test):4d}"
    )

overlap = set()
seen = set()
for split in splits:
    dup = seen & set(split.base_indices.tolist())
    overlap |= dup
    seen |= set(split.base_indices.tolist())
print(f"\nexamples shared between nodes: {len(overlap)} (sampling is without replacement)")

skewed = inject_skew(splits, ds, spec)
print("\nafter 20% skew injection (test sets only):")
for node_id, split in enumerate(skewed):
    foreign = ~np.isin(split.test.labels, sorted(split.assigned_labels))
    print(
        f"  node {node_id}: test {len(split.test)} examples, "
        f"{foreign.sum()} foreign ({100 * foreign.mean():.1f}%), train still {len(split.train)}"
    )
