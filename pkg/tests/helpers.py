"""Shared builders and a finite-difference gradient checker."""
from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np

from patchsense.domain import CveLink, EventKind, RepoEvent, Source, Timeline
from patchsense.nn import LayerGraph

T0 = datetime(2021, 1, 4, 10, 0, tzinfo=timezone.utc)  # a Monday


def sha(i: int) -> str:
    return f"{i:040x}"


def event(kind=EventKind.Fork, seconds=0, repo="a/b", source=Source.gharchive, commit=None, adds=0, dels=0, files=0):
    return RepoEvent(repo, kind, T0 + timedelta(seconds=seconds), source, adds, dels, files, commit)


def commit(i, seconds, repo="a/b", adds=3, dels=1, files=1):
    return event(EventKind.Push, seconds, repo, Source.git, sha(i), adds, dels, files)


def timeline(kinds_or_events, repo="a/b") -> Timeline:
    evs = []
    for i, k in enumerate(kinds_or_events):
        if isinstance(k, RepoEvent):
            evs.append(k)
        elif k == "C":
            evs.append(commit(i, i, repo))
        else:
            evs.append(event(EventKind.Fork, i, repo))
    return Timeline(repo, tuple(evs))


def link(i, repo="a/b", cve=None) -> CveLink:
    owner, name = repo.split("/")
    return CveLink(cve or f"CVE-2021-{10000 + i}", owner, name, sha(i))


def rel_error(a, b) -> float:
    """Max-norm relative error between two arrays."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def gradient_check(layer, input_shape, batch=2, seed=0, h=1e-6, training=False):
    """Analytic vs central-difference gradients of sum(R * layer(x)).

    Returns {name: relative error} for the input and every parameter.
    """
    rng = np.random.default_rng(seed)
    graph = LayerGraph([layer], input_shape)
    graph.initialize(seed)
    for p in layer.params.values():
        p += rng.normal(0, 0.1, p.shape)  # non-zero biases too
    x = rng.normal(0, 1, (batch,) + tuple(input_shape))
    mask_seed = int(rng.integers(1 << 30))

    def f(xx):
        return graph.forward(xx, training=training, rng=np.random.default_rng(mask_seed))

    r = rng.normal(0, 1, f(x).shape)

    def loss(xx):
        return float(np.sum(r * f(xx)))

    graph.zero_grads()
    f(x)
    dx = graph.backward(r)
    errors = {"input": rel_error(dx, _numeric(loss, x, h))}
    for name, p in layer.params.items():
        analytic = layer.grads[name].copy()
        errors[name] = rel_error(analytic, _numeric(lambda _: loss(x), p, h))
    return errors


def _numeric(fn, arr, h):
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        up = fn(arr)
        arr[idx] = old - h
        down = fn(arr)
        arr[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad
