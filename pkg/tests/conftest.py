import json
from pathlib import Path

import pytest

from ctrlcap.core import TrainingConfig
from ctrlcap.datasets import SyntheticSpec, generate_synthetic_corpus
from ctrlcap.modeling.train import train_controller, train_weight_predictor

FIXTURES = Path(__file__).parent / "fixtures"

# small corpus + configs used by unit tests; big enough to memorize, small
# enough to train in seconds
TOY_SPEC = SyntheticSpec(num_contexts=6, facts_per_context=3, seed=3, eval_fraction=0.17)
TOY_SEED = 2


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_synthetic_corpus(TOY_SPEC)


@pytest.fixture(scope="session")
def toy_checkpoints(toy_corpus):
    train_set, _ = toy_corpus
    pctrl_cfg = TrainingConfig(learning_rate=8e-3, batch_size=8, total_steps=700,
                               rng_seed=TOY_SEED, model_dim=32, weight_decay=0.01,
                               output_token_budget=192)
    rctrl_cfg = TrainingConfig(learning_rate=8e-3, batch_size=8, total_steps=900,
                               rng_seed=TOY_SEED, model_dim=32, weight_decay=0.01)
    predictor_cfg = TrainingConfig(learning_rate=1e-2, batch_size=8, total_steps=400,
                                   rng_seed=TOY_SEED, model_dim=24)
    return {
        "prompting": train_controller(train_set, "prompting", pctrl_cfg),
        "recalibration": train_controller(train_set, "recalibration", rctrl_cfg),
        "weight_predictor": train_weight_predictor(train_set, predictor_cfg),
    }


@pytest.fixture(scope="session")
def pages_fixture_path() -> Path:
    return FIXTURES / "pages_fixture.json"


# --- acceptance criterion reporting ------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    def _record(name: str, passed: bool, detail: str = ""):
        line = f"[{name}] {'PASS' if passed else 'FAIL'}" + (f" - {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
