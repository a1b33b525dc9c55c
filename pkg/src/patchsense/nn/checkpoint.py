"""JSON checkpoints: architecture, hyperparameters and float32 parameter arrays."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..fileio import atomic_write_text, decode_f32, encode_f32
from .layers import LayerGraph, layer_from_config

FORMAT = "patchsense-checkpoint/1"


def checkpoint_dict(
    graph: LayerGraph,
    *,
    seed: Optional[int] = None,
    training_config: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> dict:
    layers = []
    for layer in graph.layers:
        params = {
            name: {"shape": list(arr.shape), "data": encode_f32(arr)} for name, arr in layer.params.items()
        }
        layers.append({"kind": layer.kind, "config": layer.config(), "params": params})
    doc = {
        "format": FORMAT,
        "architecture": graph.name,
        "input_shape": list(graph.input_shape),
        "layers": layers,
        "seed": seed,
        "training_config": training_config or {},
    }
    if extra:
        doc["extra"] = extra
    return doc


def dumps_checkpoint(graph: LayerGraph, **kwargs) -> str:
    return json.dumps(checkpoint_dict(graph, **kwargs), sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(path, graph: LayerGraph, **kwargs) -> None:
    atomic_write_text(path, dumps_checkpoint(graph, **kwargs))


def graph_from_dict(doc: dict) -> LayerGraph:
    if doc.get("format") != FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    layers = [layer_from_config(entry["kind"], entry["config"]) for entry in doc["layers"]]
    graph = LayerGraph(layers, tuple(doc["input_shape"]), name=doc.get("architecture", "custom"))
    for layer, entry in zip(graph.layers, doc["layers"]):
        if set(entry["params"]) != set(layer.params):
            raise ValueError(f"{layer.kind}: checkpoint parameters {sorted(entry['params'])} do not match")
        for name, blob in entry["params"].items():
            arr = decode_f32(blob["data"], tuple(blob["shape"]))
            if arr.shape != layer.params[name].shape:
                raise ValueError(f"{layer.kind}.{name}: shape {arr.shape} != {layer.params[name].shape}")
            layer.params[name][...] = arr.astype(np.float64)
    return graph


def load_checkpoint(path) -> tuple[LayerGraph, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return graph_from_dict(doc), doc
