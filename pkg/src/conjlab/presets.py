"""Benchmark system pairs and the default Hartman problem."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynsys import SystemSpec

LORENZ_X0 = (0.0, 1.0, 0.0)
CHUA_X0 = (0.1, 0.3, -0.6)
CHEN_X0 = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class PairSetup:
    label: str
    x_spec: SystemSpec
    x0: tuple
    y_spec: SystemSpec
    y0: tuple


def lorenz1() -> SystemSpec:
    return SystemSpec.lorenz(10.0, 28.0, 8.0 / 3.0, name="lorenz1")


def lorenz2() -> SystemSpec:
    return SystemSpec.lorenz(10.0, 28.0, 3.0, name="lorenz2")


def table1_pairs() -> list[PairSetup]:
    """The three pairs compared against Lorenz1, in table order."""
    x = lorenz1()
    return [
        PairSetup("lorenz1&lorenz2", x, LORENZ_X0, lorenz2(), LORENZ_X0),
        PairSetup("lorenz&chua", x, LORENZ_X0, SystemSpec.chua(), CHUA_X0),
        PairSetup("lorenz&chen", x, LORENZ_X0, SystemSpec.chen(), CHEN_X0),
    ]


PERTURBATIONS = {
    "zero": (lambda s: (lambda y: np.zeros_like(y))),
    "sin": (lambda s: (lambda y: s * np.sin(y))),
    "tanh": (lambda s: (lambda y: s * np.tanh(y))),
}


def perturbation(kind: str, scale: float):
    """``(r, lip, sup, grad_r0_factor)`` for a named componentwise perturbation."""
    if kind not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {kind!r}")
    r = PERTURBATIONS[kind](scale)
    if kind == "zero":
        return r, 0.0, 0.0, 0.0
    return r, abs(scale), abs(scale), scale
