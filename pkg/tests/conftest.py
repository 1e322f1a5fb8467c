import json
from pathlib import Path

import pytest

from tddbench.agents import load_template_set
from tddbench.engine import CompletionEngine, ReplayStore, RequestSettings, StoreMode
from tddbench.problems import load_dataset_path
from tddbench.verifier import ExecutionLimits

FIXTURES = Path(__file__).parent / "fixtures"

FIXTURE_SETTINGS = RequestSettings(model_id="fixture-model")


@pytest.fixture(scope="session")
def mini_dir():
    return FIXTURES / "mini"


@pytest.fixture(scope="session")
def mini_dataset(mini_dir):
    return load_dataset_path(mini_dir / "mini.jsonl")


@pytest.fixture(scope="session")
def mini_manifest(mini_dir):
    return json.loads((mini_dir / "manifest.json").read_text(encoding="utf-8"))


@pytest.fixture()
def replay_engine(mini_dir):
    store = ReplayStore(mini_dir / "replay_store.jsonl", StoreMode.REPLAY)
    return CompletionEngine(store=store, settings=FIXTURE_SETTINGS)


@pytest.fixture(scope="session")
def default_template():
    return load_template_set("default")


@pytest.fixture(scope="session")
def fast_limits():
    return ExecutionLimits(per_test_timeout=5.0, total_suite_timeout=30.0)
