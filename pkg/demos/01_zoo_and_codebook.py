"""Train the toy zoo, fit one shared codebook and inspect where its codewords came from.

Run: python3 demos/01_zoo_and_codebook.py
"""
import numpy as np

from uvq import experiments as ex
from uvq.codebook import fit_universal_codebook, nearest_codeword, net_subvectors

zoo = ex.train_zoo(seed=0)
for name, (net, _, metric) in zoo.items():
    print(f"{name:10s} float metric {metric:.4f}")

nets = [v[0] for v in zoo.values()]
cb = fit_universal_codebook(nets, ex.DESK_K, ex.DESK_D, seed=0)
print(f"\ncodebook: {cb.k} codewords of length {cb.d}, bandwidth {cb.bandwidth}")

# how well does one codebook cover every network's sub-vectors?
for net in nets:
    svs = net_subvectors(net, cb.d)
    err = np.mean(np.sum((svs - cb.codewords[nearest_codeword(svs, cb.codewords)]) ** 2, axis=1))
    print(f"{net.name:10s} {len(svs):5d} sub-vectors, nearest-codeword MSE per sub-vector {err:.4g}")
