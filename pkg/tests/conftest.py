from pathlib import Path

import pytest

from cvlattice.grid import GridSpec
from cvlattice.synth import SynthConfig, generate_day

SAMPLE_HEADER = "Journey Id,Timestamp,Latitude,Longitude,Postal Code,Speed,Heading"
SAMPLE_ROWS = [
    "33456rd,2021-05-09 03:48:42,37.664087,-92.6546,65536,105.98,33",
    "31224tf,2021-05-09 03:49:42,37.667707,-92.6490,65536,0,53",
    "22124fs,2021-05-09 03:49:49,37.690978,-92.6490,65536,48.38,33",
    "33456rd,2021-05-09 03:48:42,37.664087,-92.6546,65536,105.98,33",
]

# every sample row lands in the single spatial cell of this grid
ONE_CELL_GRID = GridSpec(37.0, 38.0, -93.0, -92.0, 1.0, 1.0)
SMALL_GRID = GridSpec(36.0, 40.6, -95.8, -89.1, 0.25, 0.25)


def write_shard(path: Path, rows, header=SAMPLE_HEADER):
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def sample_dir(tmp_path):
    write_shard(tmp_path / "day.csv", SAMPLE_ROWS)
    return tmp_path


@pytest.fixture(scope="session")
def synth_day(tmp_path_factory):
    cfg = SynthConfig(seed=3, n_journeys=25, mean_duration=400.0, n_shards=3)
    out = tmp_path_factory.mktemp("synth")
    generate_day(cfg, out)
    return out, cfg


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
