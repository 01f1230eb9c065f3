# %% [markdown]
# # Margin geometry on the unit sphere
#
# How an additive angular margin reshapes the positive cosine, and when
# the relabel rule and the boundary regularizer fire for a single sample.

# %%
import numpy as np

from marginlab import angular_add, boundary_regularizer, correction_check, margin_cos

# %% The positive score shrinks with the margin
for c in (0.9, 0.6, 0.3, 0.0):
    shifted = [angular_add(c, m) for m in (0.0, 0.3, 0.5)]
    print(f"cos={c:+.1f}  ->  " + "  ".join(f"m={m}: {v:+.4f}" for m, v in zip((0.0, 0.3, 0.5), shifted)))

# %% Past theta + m = pi the raw form turns upward; margin_cos keeps going down
for c in np.linspace(-0.80, -1.0, 5):
    print(f"cos={c:+.3f}  raw={angular_add(c, 0.5):+.4f}  continued={margin_cos(c, 0.5):+.4f}")

# %% Three samples labelled class 0
rows = {
    "easy": [0.9, 0.2, 0.1],
    "hard (in the margin)": [0.9, 0.7, 0.1],
    "mislabelled": [0.3, 0.9, 0.1],
}
for name, row in rows.items():
    f = boundary_regularizer(row, 0, 0.5)
    k = correction_check(row, 0, 0.5)
    print(f"{name:22s} f={f:.4f}  relabel -> {k}")
