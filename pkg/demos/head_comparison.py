# %% [markdown]
# # Verification accuracy under label noise
#
# Train ArcFace and BoundaryFace on data with 20% flipped labels, plus
# ArcFace on the clean labels, and score each on unseen identities.

# %%
import numpy as np

from marginlab import (
    DatasetSpec,
    EmbeddingModel,
    TrainConfig,
    aggregate,
    generate,
    inject_closed_noise,
    make_head,
    make_verification_pairs,
    train,
    verification_accuracy,
)

g = generate(DatasetSpec(100, 40, 64, concentration=4.0, num_holdout_classes=50, seed=0))
noisy, ledger = inject_closed_noise(g.train, 0.2, seed=1)
pairs = make_verification_pairs(g.holdout, 1000, seed=2)

# %%
runs = {
    "ArcFace clean": (make_head("ArcFace"), g.train),
    "ArcFace noisy": (make_head("ArcFace"), noisy),
    "BoundaryFace noisy": (make_head("BoundaryFace"), noisy),
}
for name, (head, data) in runs.items():
    accs = []
    for seed in range(3):
        model, _ = train(EmbeddingModel.init(64, 32, 100, seed=seed), data, None, TrainConfig(head, seed=seed))
        accs.append(verification_accuracy(model, pairs, g.holdout).accuracy)
    mean, std = aggregate(accs)
    print(f"{name:20s} {mean:.4f} +- {std:.4f}")

# %% Raw inputs as a reference point
raw = verification_accuracy(lambda x: np.asarray(x), pairs, g.holdout)
print(f"{'raw inputs':20s} {raw.accuracy:.4f}")
