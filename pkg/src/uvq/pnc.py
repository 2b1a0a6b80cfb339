"""Progressive network construction: the compression loop.

Candidate logits (and the biases / normalization parameters) are optimized on
the calibration data with the soft-reconstructed network. After every update
each sub-vector whose largest ratio exceeds ``alpha`` is frozen to a one-hot
assignment and leaves the optimization for good.
"""
import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import objective as obj
from . import storage
from .assignment import DEFAULT_CANDIDATES, build_assignment, decompose, ratios, reconstruct_hard, reconstruct_soft
from .codebook import fp32_round, kmeans_codebook
from .errors import ContractError, ParameterError, TrainingError
from .nn.optim import Adam, cosine_lr
from .nn.train import evaluate

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.9999


@dataclass
class PncConfig:
    alpha: float = DEFAULT_ALPHA
    max_epochs: int = 20
    harden_leftovers: bool = True
    eval_cadence: int = 0  # steps between hard-accuracy probes, 0 disables
    candidates: int = DEFAULT_CANDIDATES
    batch: int = 64
    lr_ratios: float = 0.3
    lr_params: float = 1e-3
    cosine: bool = True
    loss_weights: tuple = (1.0, 1.0, 1.0)  # task, kd, reg
    progressive: bool = True  # False: train soft, harden everything at the end
    init: str = "euclidean+init"
    head_policy: str = "per-layer"  # "per-layer" | "universal" | "raw"
    head_k: int = 256
    compress_input: bool = False
    kd_exclude: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.5 < self.alpha < 1:
            raise ParameterError(f"alpha must lie in (0.5, 1), got {self.alpha}")
        if self.head_policy not in ("per-layer", "universal", "raw"):
            raise ParameterError(f"unknown head policy {self.head_policy!r}")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)


@dataclass
class PncTrace:
    steps: list = field(default_factory=list)  # one record per optimizer step
    probes: list = field(default_factory=list)  # (step, hard metric)
    leftovers: int = 0
    total_subvectors: int = 0
    final_slots: dict = field(default_factory=dict)  # layer -> winning slot per sub-vector
    candidates: int = 0
    final_mse: float = None
    final_metric: float = None

    @property
    def frozen_counts(self):
        return [s["frozen"] for s in self.steps]

    def records(self):
        """Line-delimited log records."""
        for s in self.steps:
            yield {"event": "step", **s}
        for step, metric in self.probes:
            yield {"event": "probe", "step": step, "metric": metric}
        yield {"event": "final", "leftovers": self.leftovers, "subvectors": self.total_subvectors,
               "mse": self.final_mse, "metric": self.final_metric,
               "histogram": assignment_histogram(self).tolist()}


def freeze_pass(assignments, alpha):
    """Freeze every unfrozen sub-vector whose largest ratio exceeds ``alpha``."""
    newly = 0
    for la in _iter(assignments):
        r = ratios(la)
        slot = np.argmax(r, axis=1)
        hit = la.unfrozen & (r[np.arange(len(r)), slot] > alpha)
        la.frozen[hit] = slot[hit]
        newly += int(hit.sum())
    return newly


def harden_all(assignments):
    """Freeze every remaining sub-vector at its argmax slot; return how many."""
    count = 0
    for la in _iter(assignments):
        open_ = la.unfrozen
        la.frozen[open_] = la.hard_slots()[open_]
        count += int(open_.sum())
    return count


def discrepancy(assignments):
    """Squared Frobenius distance between soft and hard reconstructions, summed over layers."""
    total = 0.0
    for la in _iter(assignments):
        diff = reconstruct_soft(la) - reconstruct_hard(la)
        total += float(np.sum(diff * diff))
    return total


def assignment_histogram(trace_or_slots, n=None):
    """Frequency of each winning candidate rank (0 = nearest codeword)."""
    if isinstance(trace_or_slots, PncTrace):
        slots = list(trace_or_slots.final_slots.values())
        n = n or trace_or_slots.candidates
    else:
        slots = list(trace_or_slots)
    allslots = np.concatenate(slots) if slots else np.zeros(0, dtype=np.int64)
    n = n or (int(allslots.max()) + 1 if allslots.size else 1)
    counts = np.bincount(allslots, minlength=n).astype(np.float64)
    return counts / counts.sum() if counts.sum() else counts


def bucket_histogram(hist, buckets=5):
    """Collapse a per-rank histogram into ``buckets`` equal-width rank ranges."""
    edges = np.linspace(0, len(hist), buckets + 1).round().astype(int)
    return np.array([hist[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])


def _iter(assignments):
    return assignments.values() if isinstance(assignments, dict) else assignments


def _codebook_fingerprint(cb):
    return hashlib.sha256(np.ascontiguousarray(cb.codewords).tobytes()).hexdigest()


def _head_codebook(w, d, k_max, seed):
    grid, _ = decompose(w, d)
    svs = grid.reshape(-1, d)
    k = 1
    while k * 2 <= min(k_max, max(1, len(svs) // 2)):
        k *= 2
    res = kmeans_codebook(svs, k, seed=seed, n_init=3)
    return fp32_round(res.centroids)


def build_assignments(net, codebook, config):
    """Candidate assignments for every layer the config compresses."""
    layers = net.compressible_layers()
    if not config.compress_input:
        layers = layers[1:]
    head = net.compressible_layers()[-1]
    rng = np.random.default_rng(config.seed)
    out = []
    for i in layers:
        w = net.weight_matrix(i)
        shape = net.layers[i].params["weight"].shape
        if i == head and config.head_policy == "raw":
            continue
        if i == head and config.head_policy == "per-layer":
            book = _head_codebook(w, codebook.d, config.head_k, config.seed)
            n = min(config.candidates, len(book))
            out.append(build_assignment(i, w, book, n, f"layer{i}", config.init, rng, shape))
        else:
            out.append(build_assignment(i, w, codebook.codewords, config.candidates, "universal",
                                        config.init, rng, shape))
    return out


def _as_xy(ds):
    return ds.split("calib") if hasattr(ds, "split") else ds


def _probe(qnet, eval_xy):
    snap = qnet.net.copy()
    for layer, la in qnet.assignments.items():
        snap.set_weight_matrix(layer, reconstruct_hard(la))
    return evaluate(snap, *eval_xy)


def compress(net_fp, codebook, ds_calib, config=None, eval_data=None):
    """Compress ``net_fp`` against the frozen ``codebook``.

    Returns ``(CompressedModel, PncTrace)``. ``eval_data`` (x, y) enables
    periodic hard-accuracy probes and the final metric.
    """
    config = config or PncConfig()
    fingerprint = _codebook_fingerprint(codebook)
    cb = codebook.at_storage_precision()
    x_cal, y_cal = _as_xy(ds_calib)
    if len(x_cal) == 0:
        raise ParameterError("calibration split is empty")

    net_fp = net_fp.copy()
    net_q = net_fp.copy()
    assignments = build_assignments(net_q, cb, config)
    qnet = obj.QuantizedNet(net_q, assignments)
    aux_names = qnet.aux_parameter_names()
    taps = [b for b in net_q.block_names() if b not in config.kd_exclude]
    w_task, w_kd, w_reg = config.loss_weights

    ratio_opt = obj.make_ratio_optimizer(config.lr_ratios)
    param_opt = Adam(config.lr_params)
    rng = np.random.default_rng(config.seed)
    batches_per_epoch = -(-len(x_cal) // config.batch)
    total_steps = config.max_epochs * batches_per_epoch
    trace = PncTrace(total_subvectors=sum(la.num_subvectors for la in assignments),
                     candidates=max((la.n for la in assignments), default=0))

    step = 0
    done = not assignments
    for epoch in range(config.max_epochs):
        if done:
            break
        order = rng.permutation(len(x_cal))
        for start in range(0, len(x_cal), config.batch):
            idx = order[start:start + config.batch]
            x, y = x_cal[idx], y_cal[idx]
            out_fp, feats_fp = net_fp.forward(x, taps=taps)
            net_fp.clear()
            qnet.load_soft()
            out_q, feats_q = qnet.forward(x, taps=taps)
            losses = obj.total_loss(obj.task_loss(out_q, y), obj.kd_loss(feats_fp, feats_q),
                                    obj.reg_loss(assignments), config.loss_weights)
            if not np.isfinite(losses.total):
                raise TrainingError(f"non-finite loss at step {step}", epoch=epoch)
            tap_grads = ({b: w_kd * g for b, g in obj.kd_loss_grads(feats_fp, feats_q).items()}
                         if w_kd else None)
            logit_grads, param_grads = obj.backward_to_logits(
                qnet, w_task * obj.task_loss_grad(out_q, y), tap_grads, reg_weight=w_reg)
            new_logits = obj.step(ratio_opt, {la.layer: la.logits for la in assignments}, logit_grads)
            for la in assignments:
                la.logits = new_logits[la.layer]
            lr = cosine_lr(config.lr_params, step, total_steps) if config.cosine else config.lr_params
            params = net_q.parameters()
            aux = {k: params[k] for k in aux_names}
            net_q.load_state(param_opt.update(aux, {k: param_grads[k] for k in aux_names}, lr=lr))
            newly = freeze_pass(assignments, config.alpha) if config.progressive else 0
            step += 1
            frozen = sum(int((~la.unfrozen).sum()) for la in assignments)
            trace.steps.append({"step": step, "epoch": epoch, "frozen": frozen, "newly_frozen": newly,
                                **losses.as_dict()})
            if config.eval_cadence and eval_data is not None and step % config.eval_cadence == 0:
                trace.probes.append((step, _probe(qnet, eval_data)))
            if frozen == trace.total_subvectors:
                done = True
                break

    trace.leftovers = sum(int(la.unfrozen.sum()) for la in assignments)
    if trace.leftovers:
        log.info("%s: %d of %d sub-vectors still unfrozen after %d steps",
                 net_fp.name, trace.leftovers, trace.total_subvectors, step)
        if config.harden_leftovers:
            harden_all(assignments)
    if _codebook_fingerprint(codebook) != fingerprint:
        raise ContractError("universal codebook was modified during compression")

    trace.final_slots = {la.layer: la.hard_slots() for la in assignments}
    qnet.load_hard()
    # residual tensors are stored as fp32; round now so decoding is bit-identical
    net_q.load_state({k: fp32_round(v) for k, v in net_q.state().items()})
    model = storage.from_assignments(net_q, assignments, cb, meta={
        "network": net_fp.name, "config": _config_dict(config), "leftovers": trace.leftovers})
    trace.final_mse = storage.hard_weight_mse(model, net_fp)
    if eval_data is not None:
        trace.final_metric = evaluate(net_q, *eval_data)
    return model, trace


def _config_dict(config):
    d = asdict(config)
    d["loss_weights"] = list(d["loss_weights"])
    return d
