import copy
import json
import os
import tempfile

import pytest

# Keep service-layer log files out of the repository during tests
os.environ.setdefault("DGPROTECT_LOG_DIR", tempfile.mkdtemp(prefix="dgprotect-logs-"))

from dgprotect.coordination import enumerate_pairs, read_settings  # noqa: E402
from dgprotect.faulttable import read_fault_tables  # noqa: E402
from dgprotect.netmodel import load_network, read_network  # noqa: E402
from dgprotect.shortcircuit import run_fault_study  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
EXAMPLE_DIR = os.path.join(ROOT, "documents", "example11bus")
EXAMPLE_NETWORK = os.path.join(EXAMPLE_DIR, "network.json")
EXAMPLE_FAULT_TABLES = os.path.join(EXAMPLE_DIR, "fault_tables.json")
EXAMPLE_SETTINGS = os.path.join(EXAMPLE_DIR, "settings_baseline.json")


# --- Example inputs ---

@pytest.fixture(scope="session")
def example_network():
    return read_network(EXAMPLE_NETWORK)


@pytest.fixture(scope="session")
def example_tables():
    return read_fault_tables(EXAMPLE_FAULT_TABLES)


@pytest.fixture(scope="session")
def example_studies(example_tables):
    return example_tables["off"], example_tables["dg-at-8"]


@pytest.fixture(scope="session")
def example_settings():
    return read_settings(EXAMPLE_SETTINGS)


@pytest.fixture(scope="session")
def example_pairs(example_network):
    return enumerate_pairs(example_network)


@pytest.fixture(scope="session")
def computed_studies(example_network, example_pairs):
    """Zbus studies of the example network, without and with the DG, at every pair fault bus."""
    buses = sorted({p.fault_bus for p in example_pairs})
    return tuple(run_fault_study(example_network, name, buses) for name in ("off", "dg-at-8"))


@pytest.fixture
def example_document():
    with open(EXAMPLE_NETWORK, "r", encoding="utf-8") as f:
        return json.load(f)


# --- Synthetic networks ---

def _grid(bus=1, sc_mva=200.0, x_over_r=10.0):
    return {"id": 1, "bus": bus, "kind": "grid", "sc_capacity_mva": sc_mva, "x_over_r": x_over_r}


def _cable(branch_id, from_bus, to_bus, length_km, r=0.1, x=0.2):
    return {"id": branch_id, "from_bus": from_bus, "to_bus": to_bus, "kind": "cable",
            "length_km": length_km, "r_ohm_per_km": r, "x_ohm_per_km": x}


@pytest.fixture
def single_bus_document():
    """One 30 kV bus behind a 200 MVA grid: bolted fault current 3849 A."""
    return {"schema": 1, "name": "single", "buses": [{"id": 1, "nominal_kv": 30.0}], "sources": [_grid()]}


@pytest.fixture
def chain_document():
    """
    Radial 30 kV feeder 1 - 2 - 3 - 4 with the grid at bus 1, 5 MVA loads at
    buses 2-4 and one relay at the upstream end of every cable. No declared
    pairs, so they are derived from the topology.
    """
    return {
        "schema": 1,
        "name": "chain",
        "buses": [{"id": i, "nominal_kv": 30.0} for i in (1, 2, 3, 4)],
        "branches": [_cable(1, 1, 2, 2.0), _cable(2, 2, 3, 3.0), _cable(3, 3, 4, 4.0)],
        "sources": [_grid()],
        "loads": [{"bus": b, "name": f"L{b}", "apparent_power_mva": 5.0} for b in (2, 3, 4)],
        "relays": [
            {"id": 1, "branch": 1, "located_at_bus": 1, "ct_ratio": 400},
            {"id": 2, "branch": 2, "located_at_bus": 2, "ct_ratio": 400},
            {"id": 3, "branch": 3, "located_at_bus": 3, "ct_ratio": 400},
        ],
    }


@pytest.fixture
def chain_network(chain_document):
    return load_network(json.dumps(chain_document))


@pytest.fixture
def build_network():
    """Factory: network from a document dict, with optional top-level overrides."""
    def build(document, **overrides):
        data = copy.deepcopy(document)
        data.update(overrides)
        return load_network(json.dumps(data))
    return build


@pytest.fixture
def write_json(tmp_path):
    def write(name, document):
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return str(path)
    return write
