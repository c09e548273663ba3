"""Network-level training and pruning flows for every compared method.

Methods::

    baseline            weight decay only, no pruning
    unstructured        baseline + layer-wise magnitude pruning
    dub                 gated-variance training + per-tile discretized pruning
    structured-<g>      group-lasso training + removal of crossbar groups g
    structured+pertile  group-lasso training + per-tile discretized pruning
    sdub                structured tile removal, then dub on surviving tiles

Every pruned model is fine-tuned with its masks frozen.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import prune as P
from .energy import EnergyReport, energy_report
from .nnet import Network, TrainSpec, finetune, train
from .regularize import RegCoefficients
from .sparsity import TileHistogram, histogram
from .tiling import partition

log = logging.getLogger(__name__)

METHODS = (
    "baseline", "unstructured", "dub", "structured-column", "structured-row",
    "structured-tile", "structured+pertile", "sdub",
)


def tile_grids(net: Network, n: int, names=None, scope="auto"):
    names = net.tiled_layers(scope) if names is None else names
    out = {}
    for name in names:
        layer = net.layer(name)
        out[name] = partition(layer.W, n, net.masks.get(name))
        out[name].layer_name = name
        out[name].shape = layer.shape
    return out


def analyze(net: Network, n: int, scope="auto", full_bits=None):
    grids = tile_grids(net, n, scope=scope)
    return energy_report(grids, full_bits), histogram(list(grids.values()), n)


def current_mask(net, name):
    m = net.masks.get(name)
    return np.ones(net.layer(name).W.shape, dtype=bool) if m is None else m


def prune_unstructured_net(net: Network, ratio: float, names):
    masks, plan = {}, P.PrunePlan("unstructured", 0)
    for name in names:
        W = net.layer(name).W
        mask = current_mask(net, name)
        tau = P.layer_threshold(W, ratio, mask)
        masks[name] = P.prune_unstructured(W, ratio, mask)
        plan.layers[name] = P.LayerPlan(ratio, tau)
    return masks, plan


def survivor_ratio(ratio: float, mask: np.ndarray) -> float:
    """Share of the still-unmasked weights to identify so that ``ratio`` of
    the whole layer ends up identified."""
    total = mask.size
    alive = int(mask.sum())
    if alive == 0:
        return 0.0
    need = ratio * total - (total - alive)
    return float(min(max(need / alive, 0.0), 1.0 - 1.0 / (alive + 1)))


def prune_pertile_net(net: Network, n: int, ratio: float, names, method="dub"):
    levels = P.SparsityLevelSet(n)
    masks, plan = {}, P.PrunePlan(method, n)
    for name in names:
        W = net.layer(name).W
        mask = current_mask(net, name)
        r = survivor_ratio(ratio, mask)
        if mask.any():
            tau = P.layer_threshold(W, r, mask)
        else:
            tau = 0.0
        grid = partition(W, n, mask)
        new_mask, idx = P.prune_grid(grid, tau, levels)
        masks[name] = new_mask & mask
        plan.layers[name] = P.LayerPlan(
            r, tau, [int(i) for i in idx], [int(levels.keep_counts[i]) for i in idx]
        )
    return masks, plan


def prune_structured_net(net: Network, n: int, grouping: str, ratio: float, names):
    masks, plan = {}, P.PrunePlan(f"structured-{grouping}", n)
    for name in names:
        grid = partition(net.layer(name).W, n, net.masks.get(name))
        masks[name] = P.prune_structured(grid, grouping, ratio)
        plan.layers[name] = P.LayerPlan(ratio, None)
    return masks, plan


@dataclass
class MethodResult:
    method: str
    net: Network
    accuracy: float
    report: EnergyReport
    hist: TileHistogram
    plan: P.PrunePlan | None = None
    hyper: dict = field(default_factory=dict)
    pre_finetune_accuracy: float | None = None

    @property
    def energy(self) -> float:
        return self.report.normalized_energy


def _spec(spec: TrainSpec, **coeffs):
    return replace(spec, coeffs=RegCoefficients(**coeffs))


def train_fresh(arch, data, spec: TrainSpec, masks=None):
    net = Network.from_spec(arch, data.input_shape, seed=spec.seed)
    train(net, data, spec, masks=masks)
    return net


def _finish(method, net, data, spec, masks, plan, hyper, scope):
    net.set_masks(masks)
    before = net.accuracy(data.x_test, data.y_test)
    if spec.finetune_epochs:
        finetune(net, data, spec, net.masks)
    report, hist = analyze(net, spec.tile_size, scope)
    return MethodResult(method, net, net.accuracy(data.x_test, data.y_test), report, hist,
                        plan, hyper, before)


def run_baseline(arch, data, spec: TrainSpec):
    net = train_fresh(arch, data, _spec(spec, lambda_mean=spec.coeffs.lambda_mean))
    report, hist = analyze(net, spec.tile_size, spec.tile_scope)
    return MethodResult("baseline", net, net.accuracy(data.x_test, data.y_test), report, hist,
                        hyper={"lambda_mean": spec.coeffs.lambda_mean})


def run_unstructured(baseline: MethodResult, data, spec: TrainSpec, ratio: float):
    net = baseline.net.copy()
    names = net.tiled_layers(spec.tile_scope)
    masks, plan = prune_unstructured_net(net, ratio, names)
    return _finish("unstructured", net, data, spec, masks, plan, {"allowed_ratio": ratio},
                   spec.tile_scope)


def train_dub(arch, data, spec: TrainSpec, lambda_var: float, masks=None):
    return train_fresh(arch, data, _spec(spec, lambda_mean=spec.coeffs.lambda_mean,
                                          lambda_var=lambda_var), masks)


def run_dub(arch, data, spec: TrainSpec, ratio: float, lambda_var: float, trained=None):
    net = trained.copy() if trained is not None else train_dub(arch, data, spec, lambda_var)
    names = net.tiled_layers(spec.tile_scope)
    masks, plan = prune_pertile_net(net, spec.tile_size, ratio, names)
    return _finish("dub", net, data, spec, masks, plan,
                   {"allowed_ratio": ratio, "lambda_var": lambda_var}, spec.tile_scope)


def train_group(arch, data, spec: TrainSpec, grouping: str, lambda_group: float):
    return train_fresh(arch, data, replace(
        spec, grouping=grouping,
        coeffs=RegCoefficients(lambda_mean=spec.coeffs.lambda_mean, lambda_group=lambda_group),
    ))


def run_structured(arch, data, spec, ratio, grouping, lambda_group, pertile=False, trained=None):
    net = trained.copy() if trained is not None else train_group(arch, data, spec, grouping, lambda_group)
    names = net.tiled_layers(spec.tile_scope)
    if pertile:
        masks, plan = prune_pertile_net(net, spec.tile_size, ratio, names, "structured+pertile")
        method = "structured+pertile"
    else:
        masks, plan = prune_structured_net(net, spec.tile_size, grouping, ratio, names)
        method = f"structured-{grouping}"
    return _finish(method, net, data, spec, masks, plan,
                   {"allowed_ratio": ratio, "grouping": grouping, "lambda_group": lambda_group},
                   spec.tile_scope)


def sdub_stage1(net: Network, n: int, tile_ratio: float, scope="auto"):
    """Structured tile removal on a group-lasso-trained network."""
    masks, _ = prune_structured_net(net, n, "tile", tile_ratio, net.tiled_layers(scope))
    return masks


def run_sdub(arch, data, spec, ratio, lambda_var, stage1_net, tile_ratio):
    """Stage 1 removes whole tiles; stage 2 retrains from the seeded
    initialisation with those tiles frozen at zero, then prunes per tile."""
    removed = sdub_stage1(stage1_net, spec.tile_size, tile_ratio, spec.tile_scope)
    net = train_dub(arch, data, spec, lambda_var, masks=removed)
    names = net.tiled_layers(spec.tile_scope)
    masks, plan = prune_pertile_net(net, spec.tile_size, ratio, names, "sdub")
    plan.method = "sdub"
    return _finish("sdub", net, data, spec, masks, plan,
                   {"allowed_ratio": ratio, "lambda_var": lambda_var, "tile_ratio": tile_ratio},
                   spec.tile_scope)


def pick(results: list[MethodResult], base_acc: float, budget: float = 0.01):
    """Lowest energy among candidates within ``budget`` of ``base_acc``;
    the most accurate candidate when none qualifies."""
    ok = [r for r in results if r.accuracy >= base_acc - budget - 1e-12]
    if ok:
        return min(ok, key=lambda r: (r.energy, -r.accuracy))
    return max(results, key=lambda r: (r.accuracy, -r.energy))
