"""Seeded synthetic transformer-like stacks for demos and the ablation harness.

Randomness comes only from ``numpy.random.Generator(PCG64(seed))``.

Each layer has attention-shaped modules (q, k, v, o: hidden x hidden) and
MLP-shaped modules (gate, up: mlp x hidden; down: hidden x mlp).  The planted
structure is

* activations = low-rank signal + noise + a few high-magnitude outlier
  channels, so a handful of weight columns dominate the output error;
* module weights with different spectral decay, so modules differ in how
  well they survive truncation;
* a per-layer residual gain: layers that barely change their input also
  carry smaller weights.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .pipeline import CalibratedModel, LayerData, ModuleData
from .tensor_io import write_tensor
from .whiten import GramMatrix

ATTENTION = ("q_proj", "k_proj", "v_proj", "o_proj")
MLP = ("gate_proj", "up_proj", "down_proj")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def planted_activations(rng, n: int, d: int, rank: int = 6, outliers: int = 2,
                        outlier_scale: float = 8.0, noise: float = 0.3) -> np.ndarray:
    x = rng.standard_normal((n, rank)) @ rng.standard_normal((rank, d))
    x /= np.sqrt(rank)
    x += noise * rng.standard_normal((n, d))
    rows = rng.choice(n, size=outliers, replace=False)
    x[rows] *= outlier_scale
    return x


def spectral_weight(rng, m: int, n: int, decay: float, scale: float = 1.0) -> np.ndarray:
    k = min(m, n)
    u, _ = np.linalg.qr(rng.standard_normal((m, k)))
    v, _ = np.linalg.qr(rng.standard_normal((n, k)))
    s = np.exp(-decay * np.arange(k) / k)
    return scale * (u * s) @ v.T / np.sqrt(np.sum(s**2) / k)


def toy_model(seed: int = 0, layers: int = 4, hidden: int = 32, mlp: int = 48,
              tokens: int = 128, ratio: float = 0.2, temperature: float = 0.1) -> CalibratedModel:
    rng = make_rng(seed)
    gains = np.sort(rng.uniform(0.15, 0.6, size=layers))
    gains = gains[rng.permutation(layers)]
    out = []
    for li in range(layers):
        g = gains[li]
        x_in = planted_activations(rng, hidden, tokens)
        attn_out = planted_activations(rng, hidden, tokens)
        mlp_mid = planted_activations(rng, mlp, tokens)
        mods = []
        for name in ATTENTION + MLP:
            m, n = (mlp, hidden) if name in ("gate_proj", "up_proj") else (hidden, hidden)
            if name == "down_proj":
                m, n = hidden, mlp
            x = {"o_proj": attn_out, "down_proj": mlp_mid}.get(name, x_in)
            decay = rng.uniform(0.5, 6.0)
            w = spectral_weight(rng, m, n, decay, scale=g)
            mods.append(ModuleData(name, w, GramMatrix.from_activations(x)))
        mix = rng.standard_normal((hidden, hidden)) / np.sqrt(hidden)
        x_out = x_in + g * mix @ x_in
        out.append(LayerData(f"layer{li}", mods, x_in, x_out))
    return CalibratedModel(out, ratio, temperature)


def write_model(model: CalibratedModel, directory) -> Path:
    """Write tensors plus ``manifest.json`` for ``model``; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    layers = []
    for layer in model.layers:
        write_tensor(layer.x_in, d / f"{layer.name}.x_in.cpsv")
        write_tensor(layer.x_out, d / f"{layer.name}.x_out.cpsv")
        mods = []
        for md in layer.modules:
            stem = f"{layer.name}.{md.name}"
            write_tensor(md.weight, d / f"{stem}.weight.cpsv")
            write_tensor(md.gram.h, d / f"{stem}.gram.cpsv")
            m, n = md.weight.shape
            mods.append({"name": md.name, "weight": f"{stem}.weight.cpsv",
                         "gram": f"{stem}.gram.cpsv", "m": m, "n": n})
        layers.append({"name": layer.name, "x_in": f"{layer.name}.x_in.cpsv",
                       "x_out": f"{layer.name}.x_out.cpsv", "modules": mods})
    doc = {"target_ratio": model.target_ratio, "temperature": model.temperature,
           "backend": "whitened_svd", "layers": layers}
    path = d / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
