# %% [markdown]
# # Loss curves on clean and noisy labels
#
# Writes per-iteration metrics CSVs that any plotting tool can read, and
# prints the per-epoch means.

# %%
import sys
from pathlib import Path

from marginlab import DatasetSpec, EmbeddingModel, TrainConfig, generate, inject_closed_noise, make_head, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "loss_curves")
out.mkdir(parents=True, exist_ok=True)

g = generate(DatasetSpec(20, 200, 64, concentration=4.0, seed=0))
noisy, ledger = inject_closed_noise(g.train, 0.2, seed=1)

# %%
curves = {}
for data_name, data in (("clean", g.train), ("noisy", noisy)):
    for head in ("ArcFace", "BoundaryFace"):
        _, log = train(EmbeddingModel.init(64, 32, 20, seed=0), data, None, TrainConfig(make_head(head), seed=0))
        (out / f"{head}_{data_name}.metrics.csv").write_text(log.to_csv())
        curves[f"{head}/{data_name}"] = [e.loss for e in log.epochs()]

# %%
names = list(curves)
print("epoch " + " ".join(f"{n:>20s}" for n in names))
for ep in range(len(curves[names[0]])):
    print(f"{ep:5d} " + " ".join(f"{curves[n][ep]:20.3f}" for n in names))
