"""Kernel backend selection.

The compiled module is used when it imports; set ``PATCHSENSE_KERNELS=numpy``
to force the pure NumPy path (``cython`` makes a missing build an error).
"""
import contextlib
import importlib
import os

from . import _pykernels


def _load_compiled():
    try:
        return importlib.import_module(f"{__package__}._ckernels")
    except ImportError:
        return None


def available_backends() -> dict:
    out = {"numpy": _pykernels}
    compiled = _load_compiled()
    if compiled is not None:
        out["cython"] = compiled
    return out


def _select(choice: str):
    choice = choice.lower()
    if choice not in ("auto", "numpy", "cython"):
        raise ValueError(f"unknown kernel backend {choice!r}; use auto, numpy or cython")
    if choice == "numpy":
        return _pykernels
    compiled = _load_compiled()
    if compiled is None:
        if choice == "cython":
            raise ImportError("compiled kernels requested but patchsense.nn._ckernels is not built")
        return _pykernels
    return compiled


kernels = _select(os.environ.get("PATCHSENSE_KERNELS", "auto"))


def backend_name() -> str:
    return kernels.NAME


def set_backend(choice: str) -> str:
    global kernels
    kernels = _select(choice)
    return kernels.NAME


@contextlib.contextmanager
def use_backend(choice: str):
    global kernels
    previous = kernels
    set_backend(choice)
    try:
        yield kernels
    finally:
        kernels = previous
