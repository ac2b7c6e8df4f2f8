from __future__ import annotations

import numpy as np
import pytest

from diseasenet.infonet import MiNetwork
from diseasenet.ingest import Column, DataTable, Group, Kind, VariableMeta


def make_table(columns: dict, ids=None, id_column: str = "id") -> DataTable:
    """columns: name -> (group, kind, values)."""
    cols = []
    n = None
    for name, (group, kind, values) in columns.items():
        kind = Kind(kind)
        if kind is Kind.CATEGORICAL:
            arr = np.array([None if v is None else str(v) for v in values], dtype=object)
        else:
            arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
        n = len(arr)
        cols.append(Column(VariableMeta(name, Group(group), kind), arr))
    ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(1, (n or 0) + 1))
    return DataTable(ids, tuple(cols), id_column)


def random_network(rng: np.random.Generator, n_met: int = 5, n_lip: int = 5, n_cvd: int = 3, n_dep: int = 3,
                   n_rf: int = 2, density: float = 0.4, within_layer: bool = False, integer_weights: bool = False,
                   ) -> MiNetwork:
    """Random tripartite network with edges only where the network type allows them."""
    nodes = (
        [VariableMeta(f"m{i}", Group.METABOLOME, Kind.CONTINUOUS) for i in range(n_met)]
        + [VariableMeta(f"l{i}", Group.LIPIDOME, Kind.CONTINUOUS) for i in range(n_lip)]
        + [VariableMeta(f"c{i}", Group.CVD_PHENOTYPE, Kind.CONTINUOUS) for i in range(n_cvd)]
        + [VariableMeta(f"d{i}", Group.DEPRESSIVE_SYMPTOM, Kind.DISCRETE_ORDINAL) for i in range(n_dep)]
        + [VariableMeta(f"r{i}", Group.RISK_FACTOR, Kind.CONTINUOUS) for i in range(n_rf)]
    )
    bio = {Group.METABOLOME, Group.LIPIDOME}
    ei, ej, w = [], [], []
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            gi, gj = nodes[i].group, nodes[j].group
            allowed = (gi in bio) != (gj in bio) or (within_layer and gi is gj and gi in bio)
            if allowed and rng.random() < density:
                ei.append(i)
                ej.append(j)
                w.append(float(rng.integers(1, 50)) / 64 if integer_weights else float(rng.uniform(0.001, 1.0)))
    return MiNetwork(tuple(nodes), ei, ej, w, [0.0] * len(w), 0.01, 0, within_layer)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
