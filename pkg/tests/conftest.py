import pytest
from hypothesis import settings

from slowmit.attack_synth import attack_scenario

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def slowloris_mix():
    return attack_scenario("slowloris", benign_clients=500, attack_clients=50, duration=600, seed=0)


@pytest.fixture(scope="session")
def scenarios(slowloris_mix):
    """One 600 s mixed trace per attack tool, all over the same benign background."""
    return {
        "slowloris": slowloris_mix,
        "slowhttptest": attack_scenario("slowhttptest", benign_clients=500, attack_clients=50, duration=600, seed=0),
        "slowloris-ng": attack_scenario("slowloris-ng", benign_clients=500, attack_clients=50, duration=600, seed=0),
    }


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, text in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {cid}: {text}")
