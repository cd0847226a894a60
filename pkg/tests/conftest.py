import json
import os

import pytest

from ctxkg.io import read_edges, read_nodes

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


@pytest.fixture(scope="session")
def toy_records():
    nodes = read_nodes(os.path.join(FIXTURES, "toy_kg_nodes.tsv"))
    edges = read_edges(os.path.join(FIXTURES, "toy_kg_edges.tsv"))
    return nodes, edges


@pytest.fixture(scope="session")
def toy_manifest():
    with open(os.path.join(FIXTURES, "toy_kg_manifest.json")) as fh:
        return json.load(fh)
