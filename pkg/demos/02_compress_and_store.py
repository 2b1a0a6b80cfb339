"""Compress one network against the shared codebook, write it to bytes and run it from the bytes.

Run: python3 demos/02_compress_and_store.py
"""
from uvq import experiments as ex
from uvq import pnc, storage
from uvq.codebook import fit_universal_codebook

zoo = ex.train_zoo(seed=0)
cb = fit_universal_codebook([v[0] for v in zoo.values()], ex.DESK_K, ex.DESK_D, seed=0)
net, ds, float_metric = zoo["mlp-2x32"]

model, trace = pnc.compress(net, cb, ds, ex.desk_config(), eval_data=ds.split("test"))
frozen = trace.frozen_counts
print(f"frozen sub-vectors: step 1 {frozen[0]}, halfway {frozen[len(frozen) // 2]}, end {frozen[-1]} "
      f"of {trace.total_subvectors}; {trace.leftovers} hardened at the end")
print(f"accuracy float {float_metric:.4f} -> compressed {trace.final_metric:.4f}")

blob = storage.encode_compressed(model)
x, _ = ds.split("test")
same = storage.decode_and_run(blob, x).tobytes() == storage.decode_model(model).predict(x).tobytes()
print(f"{len(blob)} bytes on disk; decoded inference bit-identical: {same}")

rep = storage.account(model)
print(f"{rep.bits_per_weight} bits/weight, weights-only ratio {rep.ratio_weights_only:.2f}x")
