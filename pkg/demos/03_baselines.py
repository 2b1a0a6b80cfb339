"""Weight MSE of a uniform quantizer, per-layer k-means and the shared codebook at 2 bits/weight.

Run: python3 demos/03_baselines.py
"""
from uvq import experiments as ex

nets = [v[0] for v in ex.train_zoo(seed=0).values()]
rows = ex.baseline_table(nets, bits=2, k=ex.DESK_K, d=ex.DESK_D, seed=0)
print(ex.format_table(rows))
print("\nper-layer k-means needs one codebook load per layer; the shared codebook needs one in total.")
