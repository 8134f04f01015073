# %% [markdown]
# Preprocessing stages on a synthetic frame image
#
# Generates one low-contrast, shadowed image, runs each stage alone and the
# full chain, and prints how each one moves a few simple statistics.

# %%
import sys
from pathlib import Path

import numpy as np

from framescope import parse_strategy, apply_strategy, write_png
from framescope.dataio import SynthSpec, synth_sample

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/preprocessing")
out.mkdir(parents=True, exist_ok=True)

spec = SynthSpec(side=128, shadow_probability=1.0, contrast=(0.35, 0.35), seed=5)
sample = synth_sample(spec, 0)
img = sample.image


def describe(name, x):
    lum = x.mean(axis=2)
    means = x.reshape(-1, 3).mean(axis=0)
    print(f"{name:<14} lum std {lum.std():.3f}  range [{lum.min():.2f}, {lum.max():.2f}]  "
          f"channel means {np.round(means, 3)}")


# %%
describe("input", img)
write_png(out / "input.png", img)
for text in ("SR", "CN", "IN", "CE", "SR+CN+IN+CE"):
    result = apply_strategy(parse_strategy(text), img, sample.image_id)
    describe(text, result)
    write_png(out / f"{text.replace('+', '_')}.png", result)

# %% [markdown]
# Shadow removal (SR) flattens slow luminance changes, colour neutralisation
# (CN) pulls the channel means together, retinex (IN) stretches local
# contrast, and equalisation (CE) spreads each channel over the full range.
