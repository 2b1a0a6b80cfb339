"""Sweep the candidate count, progressive freezing, loss terms and codebook sources on MLP-2x32.

Run: python3 demos/04_ablations.py   (about a minute on one core)
"""
from uvq import experiments as ex

zoo = ex.train_zoo(seed=0)
for preset in ("n-sweep", "pnc-onoff", "loss-knockout", "alpha-sweep", "codebook-source-sweep"):
    rows = ex.run_ablation(preset, zoo, target="mlp-2x32", seed=0)
    print(f"== {preset} ==")
    print(ex.format_table(rows, ["arm", "metric", "leftovers", "mse"]))
    print()
