"""Scenario configuration (YAML or JSON)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .decomposition import GeneratorSet
from .mesh import bundled_mesh, load_mesh


@dataclass
class ScenarioConfig:
    # world
    mesh: str = "bundled:holes6"
    generators: list = field(default_factory=list)
    obstacle_assignment: dict = field(default_factory=dict)
    star_shaped: dict = field(default_factory=dict)
    density: dict = field(default_factory=lambda: {"kind": "polar_exp", "scale": 1.0})
    # team and gains
    N: int = 6
    K_star: int = 30
    T_eps: float = 40.0
    dt: float = 0.1
    k_psi: float = 0.2
    k_p: float = 0.12
    beta: float = 0.005
    mu: float = 10.0
    r_a: float = 0.02
    v_max: float = 0.05
    performance: str = "square"
    # events, randomness and bookkeeping
    faults: dict = field(default_factory=dict)  # iteration -> agent ids (1-based)
    seed: int = 0
    snapshot_every: int = 50
    freeze_partition: bool = False
    pin_anchor: bool = False  # hold the anchor phase for the whole run, not just at start
    conv_tol: float = 1e-4
    conv_window: int = 10
    settle_steps: int = 500  # the chosen run may keep settling up to here
    mass_tol: float = 0.01
    weld_threshold: float = float("inf")
    chain_threshold: float = float("inf")

    def __post_init__(self):
        self.faults = {int(k): [int(i) for i in v] for k, v in (self.faults or {}).items()}
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.K_star < 1:
            raise ValueError("K_star must be at least 1")
        if not (self.dt > 0 and self.T_eps > 0):
            raise ValueError("dt and T_eps must be positive")

    @property
    def max_steps(self):
        return int(round(self.T_eps / self.dt))

    def generator_set(self):
        return GeneratorSet(self.generators, self.obstacle_assignment, self.star_shaped)

    def load_mesh(self, base=None):
        if self.mesh.startswith("bundled:"):
            return bundled_mesh(self.mesh.split(":", 1)[1])
        p = Path(self.mesh)
        if not p.is_absolute() and base is not None:
            p = Path(base) / p
        return load_mesh(p)

    def to_dict(self):
        d = asdict(self)
        base = getattr(self, "_base", None)
        if base is not None and not self.mesh.startswith("bundled:") and not Path(self.mesh).is_absolute():
            d["mesh"] = str((Path(base) / self.mesh).resolve())
        d["faults"] = {str(k): v for k, v in self.faults.items()}
        return d

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def parse_faults(text):
    """'200:4,5,6;300:2' -> {200: [4, 5, 6], 300: [2]}."""
    out = {}
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        t, ids = chunk.split(":")
        out.setdefault(int(t), []).extend(int(i) for i in ids.split(",") if i.strip())
    return out


def load_config(path, **overrides):
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    data = dict(data or {})
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    for k in ("weld_threshold", "chain_threshold"):
        if isinstance(data.get(k), str):
            data[k] = float(data[k])
    cfg = ScenarioConfig(**data)
    cfg._base = path.parent
    return cfg
