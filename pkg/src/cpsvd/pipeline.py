"""End-to-end compression: layer ratios, module ratios, per-module hybrid factorization."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import allocation
from .columns import HybridFactorization, build_hybrid
from .tensor_io import REPORT_VERSION, ModelManifest, read_tensor, write_report, write_tensor
from .whiten import GramMatrix, output_norm, svd_whitened, truncate

log = logging.getLogger(__name__)

VARIANTS = {
    "plain": (False, False, False),
    "+LW": (True, False, False),
    "+LW+MW": (True, True, False),
    "+LW+MW+CP": (True, True, True),
}


@dataclass
class ModuleData:
    name: str
    weight: np.ndarray
    gram: GramMatrix

    @property
    def params(self) -> int:
        return self.weight.size


@dataclass
class LayerData:
    name: str
    modules: list[ModuleData]
    x_in: np.ndarray
    x_out: np.ndarray


@dataclass
class CalibratedModel:
    """Weights, Gram matrices and layer activations held in memory."""

    layers: list[LayerData]
    target_ratio: float = 0.2
    temperature: float = 0.1

    @classmethod
    def from_manifest(cls, manifest: ModelManifest) -> "CalibratedModel":
        layers = []
        for lspec in manifest.layers:
            modules = []
            for mspec in lspec.modules:
                if mspec.gram_path is not None:
                    h = read_tensor(mspec.gram_path)
                    gram = GramMatrix(0.5 * (h + h.T), 0)
                else:
                    gram = GramMatrix.from_activations(*(read_tensor(p) for p in mspec.activation_paths))
                modules.append(ModuleData(mspec.name, read_tensor(mspec.weight_path), gram))
            layers.append(LayerData(lspec.name, modules, read_tensor(lspec.x_in_path), read_tensor(lspec.x_out_path)))
        return cls(layers, manifest.target_ratio, manifest.temperature)

    @property
    def total_params(self) -> int:
        return sum(md.params for layer in self.layers for md in layer.modules)


@dataclass
class ModulePlan:
    name: str
    m: int
    n: int
    params: int
    relative_error: float
    error_rank: float
    weight: float
    removed: int
    ratio: float
    budget: int


@dataclass
class LayerPlan:
    name: str
    importance: float
    ratio: float
    modules: list[ModulePlan] = field(default_factory=list)


@dataclass
class CompressionPlan:
    global_ratio: float
    temperature: float
    layers: list[LayerPlan]
    layer_wise: bool = True
    module_wise: bool = True

    @property
    def total_budget(self) -> int:
        return sum(mp.budget for lp in self.layers for mp in lp.modules)


def uniform_rank(m: int, n: int, ratio: float) -> int:
    budget = m * n - allocation.round_half_up(ratio * m * n)
    return min(budget // (m + n), m, n)


def profile_error(md: ModuleData, ratio: float) -> float:
    """Relative output error of plain whitened truncation at a uniform ratio."""
    m, n = md.weight.shape
    k = uniform_rank(m, n, ratio)
    approx = truncate(svd_whitened(md.weight, md.gram), k) if k else np.zeros_like(md.weight)
    return allocation.module_relative_error(md.weight, md.gram, approx)


def plan(model: CalibratedModel, ratio: float | None = None, temperature: float | None = None,
         layer_wise: bool = True, module_wise: bool = True) -> CompressionPlan:
    r = model.target_ratio if ratio is None else ratio
    t = model.temperature if temperature is None else temperature
    if not 0.0 <= r < 1.0:
        raise ValueError(f"target ratio {r} outside [0, 1)")

    importances = [allocation.layer_importance(layer.x_in, layer.x_out) for layer in model.layers]
    if layer_wise:
        ratios = allocation.layer_ratios(importances, r, t)
    else:
        ratios = np.full(len(model.layers), r)

    layer_plans = []
    for layer, s, r_l in zip(model.layers, importances, ratios):
        r_l = float(r_l)
        errors = [profile_error(md, r_l) for md in layer.modules]
        params = [md.params for md in layer.modules]
        alloc = allocation.module_ratios(errors, params, r_l)
        lp = LayerPlan(layer.name, s, r_l)
        for i, md in enumerate(layer.modules):
            m, n = md.weight.shape
            removed = int(alloc.removed[i]) if module_wise else allocation.round_half_up(r_l * md.params)
            lp.modules.append(ModulePlan(
                md.name, m, n, md.params, errors[i], float(alloc.error_rank[i]),
                float(alloc.weight[i]), removed, removed / md.params, md.params - removed,
            ))
        layer_plans.append(lp)
        log.debug("layer %s: s=%.4g ratio=%.4g", layer.name, s, r_l)
    return CompressionPlan(r, t, layer_plans, layer_wise, module_wise)


def _compress_one(md: ModuleData, mp: ModulePlan, column_preserve: bool):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return build_hybrid(md.weight, md.gram, mp.budget, preserve=column_preserve), None
    except Exception as exc:  # isolated per module, reported at the end
        log.error("module %s failed: %s", md.name, exc)
        return None, f"{type(exc).__name__}: {exc}"


def execute(plan_: CompressionPlan, model: CalibratedModel, column_preserve: bool = True,
            jobs: int = 1) -> tuple[dict, dict]:
    """Compress every module under its planned budget.

    Returns ``(factors, report)`` where ``factors`` maps ``(layer, module)``
    to a :class:`HybridFactorization` (missing for failed modules).
    """
    pairs = [
        (layer, md, mp)
        for layer, lp in zip(model.layers, plan_.layers)
        for md, mp in zip(layer.modules, lp.modules)
    ]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda t: _compress_one(t[1], t[2], column_preserve), pairs))

    factors = {}
    outcome = {}
    for (layer, md, _), (hyb, err) in zip(pairs, results):
        outcome[(layer.name, md.name)] = (hyb, err)
        if hyb is not None:
            factors[(layer.name, md.name)] = hyb
    report = build_report(plan_, model, outcome, column_preserve)
    return factors, report


def variant_name(layer_wise: bool, module_wise: bool, column_preserve: bool) -> str:
    for name, flags in VARIANTS.items():
        if flags == (layer_wise, module_wise, column_preserve):
            return name
    return f"LW={int(layer_wise)},MW={int(module_wise)},CP={int(column_preserve)}"


def build_report(plan_: CompressionPlan, model: CalibratedModel, outcome: dict, column_preserve: bool) -> dict:
    layers = []
    failures = []
    tot = dict(params_before=0, params_after=0, budget=0, loss=0.0, loss_before=0.0)
    for layer, lp in zip(model.layers, plan_.layers):
        entries = []
        lt = dict(params_before=0, params_after=0, budget=0, loss=0.0, loss_before=0.0)
        for md, mp in zip(layer.modules, lp.modules):
            hyb, err = outcome[(layer.name, md.name)]
            entry = {
                "name": mp.name, "m": mp.m, "n": mp.n,
                "relative_error": mp.relative_error, "error_rank": mp.error_rank,
                "weight": mp.weight, "removed": mp.removed, "ratio": mp.ratio,
                "budget": mp.budget, "params_before": mp.params,
            }
            if hyb is None:
                entry.update(status="failed", error=err)
                failures.append(f"{layer.name}.{md.name}")
            else:
                norm = output_norm(md.weight, md.gram)
                entry.update(
                    status="ok", rank=hyb.rank, preserved=hyb.c,
                    preserved_indices=hyb.preserved_indices.tolist(), delta_r=hyb.delta_r,
                    loss_before=hyb.plain_loss, loss_after=hyb.loss,
                    relative_error_after=hyb.loss / norm if norm > 0 else 0.0,
                    params_after=hyb.params, degenerate=hyb.degenerate,
                )
                lt["params_after"] += hyb.params
                lt["loss"] += hyb.loss
                lt["loss_before"] += hyb.plain_loss
            lt["params_before"] += mp.params
            lt["budget"] += mp.budget
            entries.append(entry)
        layers.append({"name": lp.name, "importance": lp.importance, "ratio": lp.ratio, "modules": entries, **lt})
        for k in tot:
            tot[k] += lt[k]
    return {
        "report_version": REPORT_VERSION,
        "variant": variant_name(plan_.layer_wise, plan_.module_wise, column_preserve),
        "target_ratio": plan_.global_ratio,
        "temperature": plan_.temperature,
        "layers": layers,
        "totals": tot,
        "failures": failures,
    }


def ablation_run(model: CalibratedModel, variant: str, ratio: float | None = None, jobs: int = 1) -> dict:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    lw, mw, cp = VARIANTS[variant]
    p = plan(model, ratio=ratio, layer_wise=lw, module_wise=mw)
    return execute(p, model, column_preserve=cp, jobs=jobs)[1]


def write_factors(factors: dict, out_dir) -> list[Path]:
    """One tensor file per non-empty factor, named ``<layer>.<module>.{u,vt,cols,idx}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (lname, mname), hyb in factors.items():
        stem = f"{lname}.{mname}"
        parts = {}
        if hyb.rank:
            parts["u"] = hyb.factor_u
            parts["vt"] = hyb.factor_vt
        if hyb.c:
            parts["cols"] = hyb.preserved_columns
            parts["idx"] = hyb.preserved_indices[None, :].astype(np.float64)
        for suffix, arr in parts.items():
            path = out / f"{stem}.{suffix}"
            write_tensor(arr, path)
            written.append(path)
    return written


def compress(model: CalibratedModel, out_dir=None, ratio: float | None = None,
             temperature: float | None = None, jobs: int = 1) -> tuple[dict, dict]:
    """Plan, execute and (optionally) write factors plus ``report.json``."""
    p = plan(model, ratio=ratio, temperature=temperature)
    factors, report = execute(p, model, jobs=jobs)
    if out_dir is not None:
        write_factors(factors, out_dir)
        write_report(report, Path(out_dir) / "report.json")
    return factors, report
