# %% [markdown]
# A reduced strategy sweep
#
# Trains one model per preprocessing subset on a small synthetic corpus
# (short schedule, so the numbers are noisy), then prints the per-class
# change against the unprocessed baseline and writes report files.
# ``framescope sweep --out DIR`` runs the full desk-scale version.

# %%
import dataclasses
import sys

from framescope.core import ClassId
from framescope.sweep import desk_config, impact_table, run_sweep, write_outputs

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/sweep"
cfg = desk_config()
cfg = dataclasses.replace(
    cfg,
    synth=dataclasses.replace(cfg.synth, count=40),
    split=(24, 8, 8),
    train=dataclasses.replace(cfg.train, steps=60),
)
report = run_sweep(cfg)

# %%
for cls_id, rows in impact_table(report).items():
    best = ", ".join(f"{s or 'none'} {d:+.3f}" for s, d in rows[:3])
    print(f"{ClassId(cls_id).name:<13} top: {best}")
for path in write_outputs(report, out):
    print("wrote", path)
