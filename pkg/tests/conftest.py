import numpy as np
import pytest
from hypothesis import settings

from advdialog.agent import AgentConfig, Generator
from advdialog.corpus import generate_corpus
from advdialog.domain import ActionInventory, toy_profile
from advdialog.simulator import SimulatorConfig, UserSimulator

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def toy():
    return toy_profile()


@pytest.fixture(scope="session")
def ontology(toy):
    return toy[0]


@pytest.fixture(scope="session")
def kb(toy):
    return toy[1]


@pytest.fixture(scope="session")
def inventory(ontology):
    return ActionInventory(ontology)


@pytest.fixture(scope="session")
def simulator(ontology, kb):
    return UserSimulator(ontology, kb, SimulatorConfig())


@pytest.fixture(scope="session")
def quiet_simulator(ontology, kb):
    return UserSimulator(ontology, kb, SimulatorConfig(epsilon=0.0, unsatisfiable_fraction=0.0))


@pytest.fixture(scope="session")
def corpus(ontology, kb, simulator):
    return generate_corpus(ontology, kb, 60, simulator, np.random.default_rng(0))


@pytest.fixture
def small_generator(ontology, inventory):
    cfg = AgentConfig(embed_dim=4, hidden=8, policy_hidden=6, belief_hidden=5, dropout=0.0)
    return Generator(ontology, inventory, cfg, np.random.default_rng(3))


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""
    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
