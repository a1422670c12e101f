#!/usr/bin/env python3
"""End to end on a seeded toy stack, then the ablation ladder.

Files go to a temporary directory; the same flow is available as
``cpsvd compress`` and ``cpsvd ablate``.
"""
import tempfile
from pathlib import Path

import numpy as np

from cpsvd.fixtures import toy_model, write_model
from cpsvd.pipeline import VARIANTS, CalibratedModel, ablation_run, compress
from cpsvd.tensor_io import load_manifest

model = toy_model(seed=0)
print("modules:", [md.name for md in model.layers[0].modules], "params", model.total_params)

with tempfile.TemporaryDirectory() as tmp:
    manifest = write_model(model, Path(tmp) / "model")
    reloaded = CalibratedModel.from_manifest(load_manifest(manifest))
    factors, report = compress(reloaded, Path(tmp) / "out", ratio=0.2)
    print("files written:", len(list((Path(tmp) / "out").iterdir())))

for layer in report["layers"]:
    print(f"{layer['name']}: ratio {layer['ratio']:.3f}, loss {layer['loss']:.2f}")
    for e in layer["modules"][:2]:
        print(f"    {e['name']:<9} budget {e['budget']:>4} rank {e['rank']:>2} kept cols {e['preserved']:>2}")
tot = report["totals"]
print(f"params {tot['params_before']} -> {tot['params_after']} (budget {tot['budget']})")

# Each strategy added in turn, medians over a few seeds.
losses = {v: [] for v in VARIANTS}
for seed in range(5):
    m = toy_model(seed)
    for v in VARIANTS:
        losses[v].append(ablation_run(m, v, ratio=0.2)["totals"]["loss"])
for v, vals in losses.items():
    print(f"{v:<11} median loss {np.median(vals):.2f}")
