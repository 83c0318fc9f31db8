import pytest

from evgaze import runs, sim


@pytest.fixture(scope="session")
def small_rec():
    """Three fixations joined by two saccades, with events and ground truth."""
    scene = sim.SceneConfig()
    traj = sim.saccade_experiment(n_targets=3, seed=1)
    return runs.simulate(scene, traj, seed=1)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def report(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config._acceptance_lines

    def emit(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {name}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
