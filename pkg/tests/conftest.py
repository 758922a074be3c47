from pathlib import Path

import pytest

from poriferous.config import load_config
from poriferous.conformal import build_mapping
from poriferous.decomposition import gvt_partition
from poriferous.sim import build_world

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "data" / "configs"


def config(name="holes6", **over):
    return load_config(CONFIGS / f"{name}.yaml", **over)


def _mapped(name):
    cfg = config(name)
    mesh = cfg.load_mesh(cfg._base)
    gens = cfg.generator_set()
    return build_mapping(mesh, gvt_partition(mesh, gens), gens)


@pytest.fixture(scope="session")
def holes3_mapped():
    return _mapped("holes3")


@pytest.fixture(scope="session")
def holes6_world():
    return build_world(config("holes6"))
