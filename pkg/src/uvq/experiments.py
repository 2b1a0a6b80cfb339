"""Baseline comparison and ablation presets over the toy zoo.

Everything here composes the library modules; the CLI and the demos call
these functions so the tables they print come from one code path.
"""
import logging
from dataclasses import replace

import numpy as np

from . import pnc
from .codebook import (fit_universal_codebook, kmeans_codebook, layer_subvectors, nearest_codeword,
                       uniform_quantize)
from .nn import zoo
from .nn.train import train_float
from .storage import index_bits

log = logging.getLogger(__name__)

ABLATION_PRESETS = ("n-sweep", "alpha-sweep", "pnc-onoff", "loss-knockout",
                    "codebook-source-sweep", "init-sweep")
ALPHA_SWEEP = (0.9, 0.95, 0.99, 0.999, 0.9999)
N_SWEEP = (1, 8, 64)
INIT_SWEEP = ("random", "cosine", "euclidean", "euclidean+init")

# desk-scale stand-in for the 2-bit setting: 8-bit indices over 4-d sub-vectors
DESK_K, DESK_D = 256, 4
DESK_EPOCHS = 30


def train_zoo(seed=0, epochs=None, names=zoo.NET_NAMES):
    """Train the float zoo. Returns ``{name: (net, dataset, test_metric)}``."""
    out = {}
    for name in names:
        ds = zoo.dataset_for(name, seed)
        e = zoo.DEFAULT_EPOCHS[name] if epochs is None else epochs
        net, metric = train_float(zoo.build_net(name, seed), ds, e, seed=seed)
        log.info("%s: float metric %.4f", name, metric)
        out[name] = (net, ds, metric)
    return out


def quantized_layers(net):
    """Compressible layers that enter the codebook pool (the input layer is kept raw)."""
    return net.compressible_layers()[1:]


# ---------------------------------------------------------------------------
# baselines

def _pooled(nets, d):
    for net in nets:
        for i in quantized_layers(net):
            yield net, i, layer_subvectors(net.weight_matrix(i), d)


def uq_mse(nets, bits, d=DESK_D):
    """Per-tensor uniform quantization MSE over the pooled sub-vectors."""
    err, count = 0.0, 0
    for _, _, sv in _pooled(nets, d):
        q, _ = uniform_quantize(sv, bits)
        err += float(np.sum((q - sv) ** 2))
        count += sv.size
    return err / count


def pvq_mse(nets, k=DESK_K, d=DESK_D, seed=0, n_init=3):
    """Per-layer k-means VQ MSE; k is capped at each layer's sub-vector count."""
    err, count, layers = 0.0, 0, 0
    for _, _, sv in _pooled(nets, d):
        res = kmeans_codebook(sv, min(k, len(sv)), seed=seed, n_init=n_init)
        err += res.sse
        count += sv.size
        layers += 1
    return err / count, layers


def uvq_mse(nets, codebook):
    """Nearest-codeword MSE against one shared codebook."""
    cw = codebook.codewords
    err, count = 0.0, 0
    for _, _, sv in _pooled(nets, codebook.d):
        q = cw[nearest_codeword(sv, cw)]
        err += float(np.sum((q - sv) ** 2))
        count += sv.size
    return err / count


def baseline_table(nets, bits=2, k=DESK_K, d=DESK_D, codebook=None, seed=0, methods=("uq", "pvq", "uvq")):
    """Rows shaped like the method comparison: bits/weight, ratio, MSE, codebook loads."""
    rows = []
    if "uq" in methods:
        rows.append({"method": "UQ", "k": None, "d": None, "bits_per_weight": float(bits),
                     "ratio": 32.0 / bits, "mse": uq_mse(nets, bits, d), "codebook_loads": 0})
    vq_bits = index_bits(k) / d
    if "pvq" in methods:
        mse, layers = pvq_mse(nets, k, d, seed)
        rows.append({"method": "P-VQ", "k": k, "d": d, "bits_per_weight": vq_bits,
                     "ratio": 32.0 / vq_bits, "mse": mse, "codebook_loads": layers})
    if "uvq" in methods:
        cb = codebook if codebook is not None else fit_universal_codebook(nets, k, d, seed=seed)
        rows.append({"method": "U-VQ", "k": cb.k, "d": cb.d, "bits_per_weight": index_bits(cb.k) / cb.d,
                     "ratio": 32.0 * cb.d / index_bits(cb.k), "mse": uvq_mse(nets, cb), "codebook_loads": 1})
    return rows


# ---------------------------------------------------------------------------
# ablations

def desk_config(**overrides):
    base = pnc.PncConfig(candidates=8, max_epochs=DESK_EPOCHS)
    return replace(base, **overrides)


def _arm(label, net, ds, codebook, config):
    model, trace = pnc.compress(net, codebook, ds, config, eval_data=ds.split("test"))
    hist = pnc.assignment_histogram(trace)
    return {"arm": label, "metric": trace.final_metric, "leftovers": trace.leftovers,
            "subvectors": trace.total_subvectors, "mse": trace.final_mse, "steps": len(trace.steps),
            "rank0": float(hist[0]) if len(hist) else None}


def preset_arms(preset, base=None):
    """``[(label, config)]`` for the presets that only vary the compression config."""
    base = base or desk_config()
    if preset == "n-sweep":
        return [(f"n={n}", replace(base, candidates=n)) for n in N_SWEEP]
    if preset == "alpha-sweep":
        return [(f"alpha={a}", replace(base, alpha=a)) for a in ALPHA_SWEEP]
    if preset == "pnc-onoff":
        return [("pnc", base), ("no-pnc", replace(base, progressive=False))]
    if preset == "loss-knockout":
        wt, wk, wr = base.loss_weights
        return [("full", base), ("no-task", replace(base, loss_weights=(0.0, wk, wr))),
                ("no-kd", replace(base, loss_weights=(wt, 0.0, wr))),
                ("no-reg", replace(base, loss_weights=(wt, wk, 0.0)))]
    if preset == "init-sweep":
        return [(m, replace(base, init=m)) for m in INIT_SWEEP]
    raise ValueError(f"unknown preset {preset!r}; choose from {ABLATION_PRESETS}")


def source_subsets(target, names=zoo.NET_NAMES):
    """Cumulative source subsets starting at ``target``, plus all-but-target."""
    order = [target] + [n for n in names if n != target]
    subsets = [tuple(order[:j]) for j in range(1, len(order) + 1)]
    subsets.append(tuple(order[1:]))
    return subsets


def run_ablation(preset, nets, target="mlp-2x32", codebook=None, base=None, seed=0, k=DESK_K, d=DESK_D,
                 bandwidth=None):
    """Run one preset sequentially with a shared seed; returns a list of row dicts.

    ``nets`` maps name to ``(net, dataset)`` (extra tuple items are ignored).
    """
    base = base or desk_config(seed=seed)
    net, ds = nets[target][:2]
    kw = {} if bandwidth is None else {"bandwidth": bandwidth}
    if preset == "codebook-source-sweep":
        rows = []
        for subset in source_subsets(target, tuple(nets)):
            cb = fit_universal_codebook([nets[n][0] for n in subset], k, d, seed=seed, **kw)
            rows.append(_arm("+".join(subset), net, ds, cb, base))
        return rows
    if codebook is None:
        codebook = fit_universal_codebook([v[0] for v in nets.values()], k, d, seed=seed, **kw)
    return [_arm(label, net, ds, codebook, cfg) for label, cfg in preset_arms(preset, base)]


def format_table(rows, columns=None):
    """Plain-text table with right-aligned numeric columns."""
    if not rows:
        return ""
    columns = columns or list(rows[0])

    def cell(v):
        if isinstance(v, float):
            return f"{v:.4g}" if abs(v) < 1e-2 and v != 0 else f"{v:.4f}"
        return "-" if v is None else str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[j]) for b in body)) for j, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
