"""``uvq`` command line: zoo, fit-codebook, compress, eval, baseline, report, ablate, replay.

Every command appends line-delimited JSON records to a run log. The first
record holds the fully resolved configuration, so ``uvq replay LOG`` can
re-execute the command and reproduce its artifacts.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import pnc, storage
from .codebook import CODEBOOK_MENU, DEFAULT_BANDWIDTH, fit_universal_codebook
from .errors import (ContractError, DecodeError, EncodingError, ParameterError, SamplingError, ShapeError,
                     TrainingError)
from .nn import zoo
from .nn.train import evaluate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ZOO_INDEX = "zoo.json"

log = logging.getLogger("uvq")


class UsageError(Exception):
    pass


class RunLog:
    """Line-delimited JSON records; one file per run."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record):
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not serializable: {type(v)}")


# ---------------------------------------------------------------------------
# helpers

def _read(path, what):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p.read_bytes()


def _write(path, data):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)


def _load_zoo_dir(path):
    """``{name: (net, dataset)}`` from a directory written by ``uvq zoo``."""
    d = Path(path)
    index_file = d / ZOO_INDEX
    if not index_file.is_file():
        raise UsageError(f"{d} is not a zoo directory (missing {ZOO_INDEX}); run `uvq zoo` first")
    index = json.loads(index_file.read_text())
    nets = {}
    for row in index["networks"]:
        net = storage.decode_bundle(_read(d / row["file"], "weight bundle"))
        nets[row["network"]] = (net, zoo.dataset_for(row["network"], index["seed"]))
    return nets


def _data_seed(model_path, explicit, fallback):
    """Dataset seed for a bundle: explicit flag, else the zoo index next to it, else ``fallback``."""
    if explicit is not None:
        return explicit
    index_file = Path(model_path).parent / ZOO_INDEX
    if index_file.is_file():
        return json.loads(index_file.read_text())["seed"]
    return fallback


def _resolve_kd(args):
    if args.bits is not None:
        if args.bits not in CODEBOOK_MENU:
            raise UsageError(f"--bits must be one of {sorted(CODEBOOK_MENU)}")
        return CODEBOOK_MENU[args.bits]
    return args.k, args.d


def _emit(rows, fmt, out=None, columns=None):
    if fmt == "json":
        text = json.dumps(rows, indent=2, sort_keys=True, default=_jsonable)
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=columns or list(rows[0]), extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue().rstrip("\n")
    else:
        text = ex.format_table(rows, columns)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")


def _pnc_config(args, **extra):
    return pnc.PncConfig(alpha=args.alpha, candidates=args.candidates, max_epochs=args.epochs,
                         batch=args.batch, lr_ratios=args.lr_ratios, lr_params=args.lr_params,
                         seed=args.seed, harden_leftovers=not args.no_harden,
                         progressive=not args.no_pnc, init=args.init, **extra)


# ---------------------------------------------------------------------------
# commands

def cmd_zoo(args, runlog):
    out = Path(args.out)
    rows = []
    trained = ex.train_zoo(seed=args.seed, epochs=args.epochs)
    out.mkdir(parents=True, exist_ok=True)
    for name, (net, _, metric) in trained.items():
        fname = f"{name}.uvqw"
        _write(out / fname, storage.encode_bundle(net))
        metric_name = "accuracy" if net.task == "classification" else "r2"
        rows.append({"network": name, "file": fname, "metric": metric_name, "value": metric})
        runlog.write({"event": "trained", "network": name, metric_name: metric})
    (out / ZOO_INDEX).write_text(json.dumps({"seed": args.seed, "networks": rows}, indent=2, sort_keys=True)
                                 + "\n")
    _emit(rows, "table", columns=["network", "metric", "value"])
    return {"networks": rows}


def cmd_fit_codebook(args, runlog):
    k, d = _resolve_kd(args)
    if args.zoo:
        nets = _load_zoo_dir(args.zoo)
        if args.sources:
            missing = set(args.sources) - set(nets)
            if missing:
                raise UsageError(f"unknown source networks: {sorted(missing)}")
            nets = {n: nets[n] for n in args.sources}
        sources = [v[0] for v in nets.values()]
    elif args.model:
        sources = [storage.decode_bundle(_read(p, "weight bundle")) for p in args.model]
    else:
        raise UsageError("fit-codebook needs --zoo DIR or one or more --model bundles")
    cb = fit_universal_codebook(sources, k, d, bandwidth=args.bandwidth, quota=args.quota, seed=args.seed)
    _write(args.out, storage.encode_codebook(cb))
    result = {"k": cb.k, "d": cb.d, "sources": list(cb.sources), "bandwidth": cb.bandwidth,
              "digest": storage.codebook_digest(cb.codewords).hex()}
    print(f"codebook {cb.k}x{cb.d} from {', '.join(cb.sources)} -> {args.out}")
    return result


def cmd_compress(args, runlog):
    cb = storage.decode_codebook(_read(args.codebook, "codebook"))
    net = storage.decode_bundle(_read(args.model, "weight bundle"))
    seed = _data_seed(args.model, args.data_seed, args.seed)
    ds = zoo.dataset_for(net.name, seed)
    config = _pnc_config(args)
    model, trace = pnc.compress(net, cb, ds, config, eval_data=ds.split("test"))
    model.meta["data_seed"] = seed
    _write(args.out, storage.encode_compressed(model, embed_codebook=not args.reference_codebook))
    for rec in trace.records():
        runlog.write(rec)
    result = {"network": net.name, "metric": trace.final_metric, "mse": trace.final_mse,
              "leftovers": trace.leftovers, "subvectors": trace.total_subvectors, "steps": len(trace.steps)}
    print(f"{net.name}: hard metric {trace.final_metric:.4f}, weight MSE {trace.final_mse:.3g}, "
          f"{trace.leftovers}/{trace.total_subvectors} hardened at budget end -> {args.out}")
    return result


def _load_compressed(path, codebook_path=None):
    cb = storage.decode_codebook(_read(codebook_path, "codebook")) if codebook_path else None
    return storage.decode_compressed(_read(path, "compressed model"), codebook=cb)


def cmd_eval(args, runlog):
    data = _read(args.model, "model")
    if data[:4] == storage.MAGIC_BUNDLE:
        net = storage.decode_bundle(data)
        seed = _data_seed(args.model, args.data_seed, args.seed)
        kind = "float"
    else:
        model = _load_compressed(args.model, args.codebook)
        net = storage.decode_model(model)
        seed = args.data_seed if args.data_seed is not None else model.meta.get("data_seed", args.seed)
        kind = "compressed"
    ds = zoo.dataset_for(net.name, seed)
    metric = evaluate(net, *ds.split(args.split))
    print(f"{net.name} ({kind}) {args.split}: {metric:.4f}")
    return {"network": net.name, "kind": kind, "split": args.split, "metric": metric}


def cmd_baseline(args, runlog):
    nets = _load_zoo_dir(args.zoo)
    sources = [v[0] for v in nets.values()]
    cb = storage.decode_codebook(_read(args.codebook, "codebook")) if args.codebook else None
    methods = ("uq", "pvq", "uvq") if args.type == "all" else (args.type,)
    rows = ex.baseline_table(sources, bits=args.bits or 2, k=args.k, d=args.d, codebook=cb, seed=args.seed,
                             methods=methods)
    _emit(rows, args.format, args.table)
    return {"rows": rows}


def cmd_report(args, runlog):
    rows = []
    for path in args.model:
        model = _load_compressed(path, args.codebook)
        ref = None
        if args.reference:
            ref = storage.decode_bundle(_read(args.reference, "reference bundle"))
        elif args.zoo:
            ref = _load_zoo_dir(args.zoo)[model.topology["name"]][0]
        for sharing in args.sharing:
            rep = storage.account(model, sharing, layer_count_across_tasks=args.layer_count,
                                  networks_sharing=len(args.model), reference_net=ref)
            rows.append(rep.row())
    cols = ["network", "sharing", "bits_per_weight", "ratio_weights_only", "ratio_rounded", "ratio_amortized",
            "ratio_total", "codebook_bytes", "codebook_loads", "mse"]
    _emit(rows, args.format, args.table, columns=cols if args.format != "json" else None)
    return {"rows": rows}


def cmd_ablate(args, runlog):
    nets = _load_zoo_dir(args.zoo)
    if args.target not in nets:
        raise UsageError(f"target {args.target!r} not in zoo")
    cb = storage.decode_codebook(_read(args.codebook, "codebook")) if args.codebook else None
    base = _pnc_config(args)
    k, d = (cb.k, cb.d) if cb is not None else (args.k, args.d)
    all_rows = {}
    for preset in args.preset:
        rows = ex.run_ablation(preset, nets, target=args.target, codebook=cb, base=base, seed=args.seed,
                               k=k, d=d, bandwidth=args.bandwidth)
        print(f"== {preset} ==")
        _emit(rows, args.format)
        for r in rows:
            runlog.write({"event": "arm", "preset": preset, **r})
        all_rows[preset] = rows
    if args.table:
        Path(args.table).write_text(json.dumps(all_rows, indent=2, sort_keys=True) + "\n")
    return {"presets": all_rows}


def cmd_replay(args, runlog):
    lines = Path(_read_path(args.run_log)).read_text().splitlines()
    if not lines:
        raise UsageError(f"empty run log: {args.run_log}")
    first = json.loads(lines[0])
    if first.get("event") != "config":
        raise UsageError("run log does not start with a config record")
    argv = list(first["argv"])
    if args.out:
        argv = _override(argv, "--out", args.out)
    if args.new_log:
        argv = _override(argv, "--log", args.new_log)
    return {"replayed": argv, "exit": main(argv)}


def _read_path(p):
    if not Path(p).is_file():
        raise UsageError(f"run log not found: {p}")
    return p


def _override(argv, flag, value):
    argv = list(argv)
    if flag in argv:
        argv[argv.index(flag) + 1] = value
    else:
        argv += [flag, value]
    return argv


# ---------------------------------------------------------------------------
# parser

def _env_seed():
    raw = os.environ.get("UVQ_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"UVQ_SEED must be an integer, got {raw!r}") from None


def _add_codebook_flags(p):
    p.add_argument("--k", type=int, default=ex.DESK_K, help="codewords (default %(default)s)")
    p.add_argument("--d", type=int, default=ex.DESK_D, help="sub-vector length (default %(default)s)")
    p.add_argument("--bits", type=float, default=None,
                   help="pick (k, d) from the bit-width menu 3 / 2 / 1 / 0.5 instead of --k/--d")
    p.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH)
    p.add_argument("--quota", type=int, default=None, help="sub-vectors drawn per network")


def _add_pnc_flags(p):
    p.add_argument("--alpha", type=float, default=pnc.DEFAULT_ALPHA)
    p.add_argument("--candidates", type=int, default=pnc.DEFAULT_CANDIDATES)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr-ratios", type=float, default=0.3)
    p.add_argument("--lr-params", type=float, default=1e-3)
    p.add_argument("--init", choices=ex.INIT_SWEEP, default="euclidean+init")
    p.add_argument("--no-pnc", action="store_true", help="train soft, harden everything at the end")
    p.add_argument("--no-harden", action="store_true", help=argparse.SUPPRESS)


def build_parser():
    parser = argparse.ArgumentParser(prog="uvq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None, help="global seed (falls back to $UVQ_SEED, then 0)")
        p.add_argument("--log", default=None, help="run log path (line-delimited JSON)")
        return p

    p = add("zoo", cmd_zoo, "train the four toy networks and write weight bundles")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=None, help="override per-network epochs")

    p = add("fit-codebook", cmd_fit_codebook, "fit the universal codebook")
    _add_codebook_flags(p)
    p.add_argument("--zoo", help="zoo directory")
    p.add_argument("--model", action="append", help="weight bundle (repeatable)")
    p.add_argument("--sources", nargs="+", help="restrict to these zoo networks")
    p.add_argument("--out", required=True)

    p = add("compress", cmd_compress, "compress one network against a codebook")
    _add_pnc_flags(p)
    p.add_argument("--codebook", required=True)
    p.add_argument("--model", required=True, help="float weight bundle")
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--reference-codebook", action="store_true",
                   help="store a digest reference instead of embedding the codebook")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate a weight bundle or compressed model")
    p.add_argument("--model", required=True)
    p.add_argument("--codebook", help="external codebook for models that reference one")
    p.add_argument("--split", choices=("train", "calib", "test"), default="test")
    p.add_argument("--data-seed", type=int, default=None)

    p = add("baseline", cmd_baseline, "UQ / per-layer VQ / universal VQ weight-MSE table")
    p.add_argument("--zoo", required=True)
    p.add_argument("--type", choices=("uq", "pvq", "uvq", "all"), default="all")
    p.add_argument("--bits", type=int, default=None, help="UQ bit-width (default 2)")
    p.add_argument("--k", type=int, default=ex.DESK_K)
    p.add_argument("--d", type=int, default=ex.DESK_D)
    p.add_argument("--codebook", help="universal codebook for the U-VQ row (fitted if absent)")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--table", help="also write the table here")

    p = add("report", cmd_report, "storage, ratio and codebook-I/O accounting")
    p.add_argument("--model", required=True, action="append", help="compressed model (repeatable)")
    p.add_argument("--codebook")
    p.add_argument("--reference", help="float bundle for the MSE column")
    p.add_argument("--zoo", help="zoo directory to find the float reference by name")
    p.add_argument("--sharing", nargs="+", choices=("universal", "per-layer"),
                   default=["universal", "per-layer"])
    p.add_argument("--layer-count", type=int, default=None,
                   help="compressed layers across all resident networks (per-layer I/O)")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--table")

    p = add("ablate", cmd_ablate, "run ablation presets")
    _add_pnc_flags(p)
    p.set_defaults(candidates=8, epochs=ex.DESK_EPOCHS)
    p.add_argument("--zoo", required=True)
    p.add_argument("--preset", nargs="+", choices=ex.ABLATION_PRESETS, required=True)
    p.add_argument("--target", default="mlp-2x32")
    p.add_argument("--codebook")
    p.add_argument("--k", type=int, default=ex.DESK_K)
    p.add_argument("--d", type=int, default=ex.DESK_D)
    p.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--table", help="write all preset rows as JSON here")

    p = add("replay", cmd_replay, "re-run the command recorded in a run log")
    p.add_argument("run_log", metavar="LOG", help="run log to replay")
    p.add_argument("--out", help="redirect the replayed command's --out")
    p.add_argument("--new-log", help="log path for the replayed run")
    return parser


def _default_log(args):
    if args.log:
        return args.log
    out = getattr(args, "out", None)
    if args.command == "replay" or not out:
        return None
    return str(Path(out)) + (".log.jsonl" if not Path(out).suffix == "" else "/run.log.jsonl")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _env_seed()
        resolved = [a for a in argv if a not in ("-v", "--verbose")]
        if "--seed" not in resolved and args.command != "replay":
            resolved = [resolved[0], "--seed", str(args.seed)] + resolved[1:]
        runlog = RunLog(_default_log(args))
        config = {k: v for k, v in vars(args).items() if k != "func"}
        runlog.write({"event": "config", "command": args.command, "argv": resolved, "config": config})
        t0 = time.perf_counter()
        result = args.func(args, runlog)
        runlog.write({"event": "result", "command": args.command, "seconds": time.perf_counter() - t0,
                      **(result or {})})
        if args.command == "replay":
            return result["exit"]
        return EXIT_OK
    except UsageError as e:
        print(f"uvq: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DecodeError, EncodingError, SamplingError, ShapeError, ContractError) as e:
        print(f"uvq: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as e:
        print(f"uvq: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as e:
        print(f"uvq: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
