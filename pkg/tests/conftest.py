import csv
from pathlib import Path

import pytest

from ehrprep.synth import SynthSpec, generate
from ehrprep.timeseries import kernels


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """A small synthetic dataset shared by the integration tests."""
    out = tmp_path_factory.mktemp("synth")
    generate(SynthSpec(seed=7, n_patients=300), out)
    return out


@pytest.fixture(scope="session")
def synth_1000(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth1000")
    generate(SynthSpec(seed=42, n_patients=1000), out)
    return out


def _backends():
    names = ["python"]
    try:
        kernels.get_backend("compiled")
        names.append("compiled")
    except ImportError:
        pass
    return names


BACKENDS = _backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.get_backend(request.param)


def dir_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# acceptance criteria report: one line per criterion, repeated in the terminal summary

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def report(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        results[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
