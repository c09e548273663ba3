"""``xbarprune`` command line.

Subcommands::

    train     config -> model.xbwt, history.csv
    prune     checkpoint -> pruned.xbwt, plan.json
    finetune  masked checkpoint -> finetuned.xbwt, finetune_history.csv
    analyze   checkpoint -> histogram.csv, energy.json, energy_tiles.csv
    simulate  checkpoint -> simulate.json (tiled MVM equivalence, ADC bound)
    report    several checkpoints / energy.json files -> report.csv, report.json

Exit status: 0 ok, 1 usage or config error, 2 data error (missing or
malformed files), 3 numerical failure. Artifacts are byte-identical for a
fixed config and seed; timestamps go to ``meta_<command>.json`` only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from . import config as C
from . import pipeline as PL
from .data import DataError, Dataset, load_idx, read_idx_images, split, synth_data
from .energy import EnergyReport, assign_bits, compare, full_precision, write_rows_csv
from .nnet import Network, NumericalError, finetune, train
from .prune import PrunePlan, SparsityLevelSet
from .simcheck import check_adc_bound, tiled_mvm

log = logging.getLogger("xbarprune")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def load_data(cfg) -> Dataset:
    d = cfg["data"]
    if d["source"] == "synthetic":
        x, y = synth_data(d["classes"], tuple(d["dims"]), d["count"], seed=d["seed"],
                          separation=d["separation"], noise=d["noise"], smooth=d["smooth"])
        return split(x, y, d["classes"], d["test_fraction"])
    if not d["train_images"] or not d["train_labels"]:
        raise C.ConfigError("data.train_images and data.train_labels are required for idx data")
    x, y = load_idx(d["train_images"], d["train_labels"], d["limit"])
    if d["test_images"]:
        xt, yt = load_idx(d["test_images"], d["test_labels"], d["limit"])
        return Dataset(x, y, xt, yt, d["classes"])
    return split(x, y, d["classes"], d["test_fraction"])


def input_shape(cfg) -> tuple:
    d = cfg["data"]
    if d["source"] == "synthetic":
        return tuple(d["dims"])
    _, rows, cols = read_idx_images(d["train_images"]).shape
    return (1, rows, cols)


def build_net(cfg, seed=None) -> Network:
    try:
        return Network.from_spec(cfg["arch"], input_shape(cfg),
                                 seed=cfg["train"]["seed"] if seed is None else seed)
    except (KeyError, TypeError) as e:
        raise C.ConfigError(f"arch: malformed layer description ({e})") from e


def load_net(cfg, path) -> Network:
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return checkpoint.load_into(build_net(cfg), path)


def _write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out: Path, args, t0: float, extra=None):
    meta = {
        "command": args.command,
        "argv": sys.argv[1:],
        "version": __version__,
        "created_unix": time.time(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "seconds": time.time() - t0,
    }
    meta.update(extra or {})
    _write_json(meta, out / f"meta_{args.command}.json")


# ------------------------------------------------------------ subcommands


def cmd_train(args, cfg, out):
    data = load_data(cfg)
    method = cfg["method"]
    spec = C.train_spec(cfg)
    masks = None
    if method == "sdub":
        stage1 = build_net(cfg)
        train(stage1, data, C.train_spec(cfg, "structured-tile"))
        masks = PL.sdub_stage1(stage1, spec.tile_size, cfg["tile_ratio"], spec.tile_scope)
    elif method == "structured+pertile":
        spec = C.train_spec(cfg, "structured-tile")
    net = build_net(cfg)
    hist = train(net, data, spec, masks=masks)
    checkpoint.save(net, out / "model.xbwt")
    hist.to_csv(out / "history.csv")
    (out / "config.json").write_text(C.dumps(cfg) + "\n")
    acc = net.accuracy(data.x_test, data.y_test)
    print(f"trained {method}: test accuracy {acc:.4f} -> {out / 'model.xbwt'}")


def prune_net(net, cfg):
    method, n, ratio = cfg["method"], int(cfg["tile_size"]), float(cfg["ratio"])
    names = net.tiled_layers(cfg["tile_scope"])
    if method == "baseline":
        return {k: PL.current_mask(net, k) for k in names}, PrunePlan("baseline", n)
    if method == "unstructured":
        return PL.prune_unstructured_net(net, ratio, names)
    if method.startswith("structured-"):
        return PL.prune_structured_net(net, n, C.grouping(method), ratio, names)
    return PL.prune_pertile_net(net, n, ratio, names, method)


def cmd_prune(args, cfg, out):
    net = load_net(cfg, args.checkpoint)
    masks, plan = prune_net(net, cfg)
    for name, m in masks.items():
        if name in net.masks:
            masks[name] = m & net.masks[name]
    net.set_masks({**net.masks, **masks})
    checkpoint.save(net, out / "pruned.xbwt")
    d = plan.to_dict()
    d["allowed_ratio"] = cfg["ratio"]
    _write_json(d, out / "plan.json")
    print(f"pruned with {cfg['method']} at ratio {cfg['ratio']} -> {out / 'pruned.xbwt'}")


def cmd_finetune(args, cfg, out):
    net = load_net(cfg, args.checkpoint)
    data = load_data(cfg)
    masks = dict(net.masks)
    for l in net.param_layers():
        masks.setdefault(l.name, np.ones(l.W.shape, dtype=bool))
    hist = finetune(net, data, C.train_spec(cfg), masks)
    checkpoint.save(net, out / "finetuned.xbwt")
    hist.to_csv(out / "finetune_history.csv")
    print(f"fine-tuned: test accuracy {net.accuracy(data.x_test, data.y_test):.4f}")


def cmd_analyze(args, cfg, out):
    net = load_net(cfg, args.checkpoint)
    report, hist = PL.analyze(net, int(cfg["tile_size"]), cfg["tile_scope"], cfg["full_bits"])
    hist.to_csv(out / "histogram.csv")
    report.to_json(out / "energy.json")
    report.to_csv(out / "energy_tiles.csv")
    print(f"normalized ADC energy {report.normalized_energy:.4f} over {report.n_tiles} tiles")


def cmd_simulate(args, cfg, out):
    net = load_net(cfg, args.checkpoint)
    n = int(cfg["tile_size"])
    grids = PL.tile_grids(net, n, scope=cfg["tile_scope"])
    plan = None
    if args.plan:
        with open(args.plan) as f:
            plan = json.load(f)
    rng = np.random.default_rng(args.seed)
    levels = SparsityLevelSet(n)
    result = {"tile_size": n, "layers": {}, "passed": True}
    for name, g in grids.items():
        worst = 0.0
        dense = net._effective(net.layer(name)).astype(np.float64)
        for trial in range(args.trials):
            x = rng.standard_normal(g.height)
            y, trace = tiled_mvm(g, x)
            ref = dense.T @ x
            worst = max(worst, float(np.max(np.abs(y - ref)) / max(np.max(np.abs(ref)), 1e-30)))
            if args.trace and trial == 0:
                trace.to_json(out / f"trace_{name}.json")
        if plan is not None and plan["layers"].get(name, {}).get("level_index"):
            x_t = np.minimum(plan["layers"][name]["level_index"], levels.max_reduction)
            source = "plan"
        else:
            x_t = full_precision(n) - assign_bits(g.masked().flat())
            source = "measured"
        bound = check_adc_bound(g, x_t)
        ok = bool(worst <= 1e-5 and bound.passed)
        result["passed"] &= ok
        result["layers"][name] = {
            "max_relative_error": worst,
            "equivalent": bool(worst <= 1e-5),
            "bound_source": source,
            "bound": bound.to_dict(),
        }
    _write_json(result, out / "simulate.json")
    print("simulation " + ("passed" if result["passed"] else "FAILED"))
    if not result["passed"]:
        raise NumericalError("tiled simulation or ADC bound check failed; see simulate.json")


def _parse_inputs(items):
    out = {}
    for item in items:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = Path(item).stem, item
        if name in out:
            raise UsageError(f"duplicate report input name {name!r}")
        out[name] = Path(path)
    return out


def cmd_report(args, cfg, out):
    inputs = _parse_inputs(args.inputs)
    reports, acc = {}, {}
    data = load_data(cfg) if args.accuracy else None
    for name, path in inputs.items():
        if not path.is_file():
            raise FileNotFoundError(f"report input not found: {path}")
        if path.suffix == ".json":
            try:
                reports[name] = EnergyReport.from_dict(json.loads(path.read_text()))
            except (KeyError, json.JSONDecodeError) as e:
                raise DataError(f"{path}: not an energy report ({e})") from e
        else:
            net = load_net(cfg, path)
            reports[name], _ = PL.analyze(net, int(cfg["tile_size"]), cfg["tile_scope"], cfg["full_bits"])
            if data is not None:
                acc[name] = net.accuracy(data.x_test, data.y_test)
    baseline = args.baseline or next(iter(reports))
    if baseline not in reports:
        raise UsageError(f"baseline {baseline!r} is not one of the inputs")
    try:
        rows = compare(reports, baseline, acc or None)
    except ValueError as e:
        raise DataError(str(e)) from e
    write_rows_csv(rows, out / "report.csv")
    _write_json({"baseline": baseline, "rows": rows}, out / "report.json")
    for r in rows:
        print(f"{r['method']:>20}  energy {r['normalized_energy']:.4f}  savings {r['energy_savings']}")


COMMANDS = {
    "train": cmd_train, "prune": cmd_prune, "finetune": cmd_finetune,
    "analyze": cmd_analyze, "simulate": cmd_simulate, "report": cmd_report,
}


def make_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (dotted path, JSON value)")
    common.add_argument("--out", help="output directory (overrides config 'out')")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="xbarprune", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train a network")
    for name in ("prune", "finetune", "analyze"):
        sp = sub.add_parser(name, parents=[common], help=f"{name} a checkpoint")
        sp.add_argument("checkpoint")
    sp = sub.add_parser("simulate", parents=[common], help="functional crossbar simulation")
    sp.add_argument("checkpoint")
    sp.add_argument("--plan", help="plan.json from prune; checks its levels instead of measured ones")
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trace", action="store_true", help="dump per-tile partial sums as JSON")
    sp = sub.add_parser("report", parents=[common], help="compare checkpoints or energy reports")
    sp.add_argument("inputs", nargs="+", metavar="[NAME=]PATH")
    sp.add_argument("--baseline", help="input name the savings are relative to (default: first)")
    sp.add_argument("--accuracy", action="store_true", help="evaluate test accuracy of checkpoints")
    return p


def main(argv=None) -> int:
    t0 = time.time()
    try:
        args = make_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_config(args.config, args.set)
        out = _out_dir(args, cfg)
        COMMANDS[args.command](args, cfg, out)
        _write_meta(out, args, t0)
        return EXIT_OK
    except (UsageError, C.ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError, checkpoint.CheckpointError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
