# %% [markdown]
# Training the small segmentation network
#
# Trains on a few dozen synthetic 64x64 images and reports per-class IoU on
# held-out images. Takes about a minute on one core.

# %%
import numpy as np

from framescope.core import ClassId
from framescope.dataio import SynthSpec, generate_synthetic, split
from framescope.segnet import SegConfig, TrainConfig, build_model, train
from framescope.sweep import evaluate_split

ds = generate_synthetic(SynthSpec(count=48, seed=3))
train_set, val_set, test_set = split(ds, (32, 8, 8), seed=0)
model = build_model(SegConfig(input_side=64, base_channels=8, depth=3, seed=0))
print(f"{model.num_parameters()} parameters")

# %%
tc = TrainConfig(learning_rate=0.1, momentum=0.9, steps=240, batch_size=4, seed=0, grad_clip=1.0)
best, history = train(model, train_set.pairs(), val_set.pairs(), tc)
print(f"mean loss over the first 8 steps {np.mean(history.losses[:8]):.3f}, last 8 {np.mean(history.losses[-8:]):.3f}")
print("best validation mean IoU", round(history.best_val, 3), "after epoch", history.best_epoch)

# %%
for cls_id, value in evaluate_split(best, test_set).items():
    print(f"{ClassId(cls_id).name:<13}", "n/a" if value is None else f"{value:.3f}")
