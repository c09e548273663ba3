"""Desk-scale method comparison: dense baseline, unstructured, DUB,
structured tile pruning and S-DUB on a small conv net.

The protocol per seed:

1. Train the dense baseline.
2. Sweep layer-wise magnitude pruning over ``ratios``; the matched allowed
   ratio is the largest one whose accuracy stays within ``budget`` of the
   baseline.
3. DUB at the matched ratio, one run per ``lambda_var`` candidate.
4. Structured tile pruning, one run per ``lambda_group`` candidate and per
   allowed ratio in ``structured_scales`` x matched ratio.
5. S-DUB on top of the chosen structured-tile network and its removed tiles.

Each method keeps its lowest-energy candidate within the accuracy budget.

Run ``python -m xbarprune.experiment --seeds 0 1 2 3 4 --out results/``.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pipeline as PL
from .data import split, synth_data
from .energy import compare, write_rows_csv
from .nnet import TrainSpec
from .regularize import RegCoefficients

log = logging.getLogger(__name__)

DESK_ARCH = [
    {"type": "conv", "out": 96, "k": 4},
    {"type": "relu"},
    {"type": "maxpool", "size": 2},
    {"type": "conv", "out": 64, "k": 2},
    {"type": "relu"},
    {"type": "flatten"},
    {"type": "dense", "out": 10},
]


@dataclass
class Protocol:
    arch: list = field(default_factory=lambda: [dict(d) for d in DESK_ARCH])
    classes: int = 10
    input_shape: tuple = (2, 12, 12)
    count: int = 3000
    test_fraction: float = 1 / 3
    separation: float = 0.3
    noise: float = 1.0
    smooth: int = 2
    tile_size: int = 32
    lr: float = 0.02
    epochs: int = 10
    lr_step: int = 7
    batch_size: int = 64
    lambda_mean: float = 1e-4
    finetune_epochs: int = 4
    finetune_lr: float = 0.005
    budget: float = 0.01
    ratios: tuple = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
    lambda_var: tuple = (1e-3, 3e-3)
    lambda_group: tuple = (1e-3, 3e-3)
    structured_scales: tuple = (1.0, 0.5, 0.25)

    def data(self, seed):
        x, y = synth_data(self.classes, self.input_shape, self.count, seed=seed,
                          separation=self.separation, noise=self.noise, smooth=self.smooth)
        return split(x, y, self.classes, self.test_fraction)

    def spec(self, seed):
        return TrainSpec(
            lr=self.lr, epochs=self.epochs, lr_step=self.lr_step, batch_size=self.batch_size,
            coeffs=RegCoefficients(lambda_mean=self.lambda_mean), tile_size=self.tile_size,
            seed=seed, finetune_epochs=self.finetune_epochs, finetune_lr=self.finetune_lr,
        )


@dataclass
class SeedOutcome:
    seed: int
    matched_ratio: float
    results: dict  # method -> MethodResult
    seconds: float
    stage_seconds: dict = field(default_factory=dict)  # stage -> wall time

    def row(self, method):
        r = self.results[method]
        return {
            "seed": self.seed,
            "method": method,
            "accuracy": r.accuracy,
            "normalized_energy": r.energy,
            "tiles_ge_75": r.hist.fraction_at_least(0.75),
            "final_pruning_ratio": r.report.final_pruning_ratio,
            "hyper": json.dumps(r.hyper, sort_keys=True),
        }


def run_seed(seed: int, proto: Protocol | None = None, methods=("unstructured", "dub", "structured-tile", "sdub")):
    proto = proto or Protocol()
    t0 = time.time()
    stages = {}
    data = proto.data(seed)
    spec = proto.spec(seed)
    arch = proto.arch
    base = PL.run_baseline(arch, data, spec)
    floor = base.accuracy
    out = {"baseline": base}

    sweep = [PL.run_unstructured(base, data, spec, r) for r in proto.ratios]
    ok = [u for u in sweep if u.accuracy >= floor - proto.budget - 1e-12]
    unstr = ok[-1] if ok else sweep[0]
    ratio = unstr.hyper["allowed_ratio"]
    out["unstructured"] = unstr
    log.info("seed %d: baseline %.3f, matched ratio %.2f", seed, floor, ratio)
    stages["baseline+unstructured"] = time.time() - t0

    if "dub" in methods:
        t = time.time()
        cands = [PL.run_dub(arch, data, spec, ratio, lv) for lv in proto.lambda_var]
        out["dub"] = PL.pick(cands, floor, proto.budget)
        stages["dub"] = time.time() - t

    if "structured-tile" in methods or "sdub" in methods:
        t = time.time()
        cands, nets = [], {}
        for lg in proto.lambda_group:
            nets[lg] = PL.train_group(arch, data, spec, "tile", lg)
            for scale in proto.structured_scales:
                cands.append(PL.run_structured(arch, data, spec, ratio * scale, "tile", lg,
                                               trained=nets[lg]))
        stile = PL.pick(cands, floor, proto.budget)
        out["structured-tile"] = stile
        stages["structured-tile"] = time.time() - t
        if "sdub" in methods:
            t = time.time()
            stage1 = nets[stile.hyper["lambda_group"]]
            cands = [
                PL.run_sdub(arch, data, spec, ratio, lv, stage1, stile.hyper["allowed_ratio"])
                for lv in proto.lambda_var
            ]
            out["sdub"] = PL.pick(cands, floor, proto.budget)
            out["sdub"].hyper["lambda_group"] = stile.hyper["lambda_group"]
            stages["sdub"] = time.time() - t
    return SeedOutcome(seed, ratio, out, time.time() - t0, stages)


def summarize(outcomes: list[SeedOutcome]) -> dict:
    methods = [m for m in outcomes[0].results if m != "baseline"]
    med = {}
    for m in methods:
        med[m] = {
            "energy": float(np.median([o.results[m].energy for o in outcomes])),
            "tiles_ge_75": float(np.median([o.results[m].hist.fraction_at_least(0.75) for o in outcomes])),
            "accuracy_drop": float(np.median(
                [o.results["baseline"].accuracy - o.results[m].accuracy for o in outcomes])),
        }
    return med


def write_outputs(outcomes: list[SeedOutcome], out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [o.row(m) for o in outcomes for m in o.results]
    write_rows_csv(rows, out / "runs.csv")
    for o in outcomes:
        reports = {m: r.report for m, r in o.results.items()}
        acc = {m: r.accuracy for m, r in o.results.items()}
        allowed = {m: r.hyper.get("allowed_ratio") for m, r in o.results.items()}
        write_rows_csv(compare(reports, "baseline", acc, allowed), out / f"table_seed{o.seed}.csv")
        for m, r in o.results.items():
            r.hist.to_csv(out / f"hist_seed{o.seed}_{m}.csv")
    with open(out / "summary.json", "w") as f:
        json.dump(summarize(outcomes), f, indent=2)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="results")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    outcomes = []
    for s in args.seeds:
        o = run_seed(s)
        outcomes.append(o)
        for m in o.results:
            print(o.row(m))
    write_outputs(outcomes, args.out)
    print(json.dumps(summarize(outcomes), indent=2))


if __name__ == "__main__":
    main()
