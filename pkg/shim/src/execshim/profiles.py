"""SUT profiles the shim can serve.

A profile knows the code markers a test must contain, where the SUT's source
lives (the coverage roots), and how to run a test namespace on each backend.
The toy profile is hermetic; the torch profile is a thin adapter over the
real framework's compile entry point and is exercised only when installed.
"""

from __future__ import annotations

import os

import numpy as np


class UnknownProfileError(Exception):
    pass


class ToyProfile:
    name = "toy"
    markers = ("toyfw.Module", "get_inputs")
    backends = ("eager", "compiled")

    def coverage_roots(self) -> list[str]:
        import toyfw

        return [os.path.dirname(os.path.abspath(toyfw.__file__))]

    def run_model(self, backend: str, namespace: dict, seed: int) -> list[np.ndarray]:
        import toyfw

        rng = np.random.default_rng(seed)
        inputs = namespace["get_inputs"](rng)
        model = namespace["Model"]()
        fn = model if backend == "eager" else toyfw.compile(model)
        result = fn(*inputs)
        outputs = result if isinstance(result, (list, tuple)) else [result]
        return [np.asarray(t.array) for t in outputs]


class TorchProfile:
    name = "torch"
    markers = ("nn.Module", "get_inputs")
    backends = ("eager", "compiled")

    def coverage_roots(self) -> list[str]:
        import torch

        return [os.path.dirname(os.path.abspath(torch.__file__))]

    def run_model(self, backend: str, namespace: dict, seed: int) -> list[np.ndarray]:
        import torch

        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        inputs = namespace["get_inputs"](rng)
        model = namespace["Model"]().eval()
        fn = model if backend == "eager" else torch.compile(model)
        with torch.no_grad():
            result = fn(*inputs)
        outputs = result if isinstance(result, (list, tuple)) else [result]
        return [t.detach().cpu().numpy() for t in outputs]


_PROFILES = {"toy": ToyProfile, "torch": TorchProfile}


def get_profile(name: str):
    if name not in _PROFILES:
        raise UnknownProfileError(f"unknown profile {name!r}; known: {sorted(_PROFILES)}")
    return _PROFILES[name]()
