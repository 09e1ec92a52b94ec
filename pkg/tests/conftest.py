from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cogrec.agent import SessionConfig, bootstrap
from cogrec.data import load, schema_from_items, split_leave_one_out
from cogrec.gateway import CallLedger, Gateway, OracleProvider, ProviderConfig


@pytest.fixture(scope="session")
def demo_dataset():
    root = Path(str(resources.files("cogrec").joinpath("demo_data")))
    loaded = load(root, "csv")
    schema = schema_from_items(loaded.items, name="demo")
    splits = split_leave_one_out(loaded.interactions)
    return loaded, schema, splits


@pytest.fixture()
def demo_gateway(demo_dataset):
    loaded, schema, _ = demo_dataset
    return Gateway(OracleProvider(loaded.items, schema),
                   ProviderConfig(), ledger=CallLedger())


def run_case_study(demo_dataset, k: int = 3):
    """The tie-impasse walkthrough session on the demo catalog."""
    from cogrec.agent import run_session

    loaded, schema, splits = demo_dataset
    gateway = Gateway(OracleProvider(loaded.items, schema),
                      ProviderConfig(), ledger=CallLedger())
    config = SessionConfig(k=k, bootstrap=False)
    pm = bootstrap(gateway, schema, config, items=loaded.items)
    result = run_session(splits["u-case"], loaded.items, schema, pm, gateway, config)
    return result, pm, gateway
