"""Shared fixtures and oracle helpers for the test suite."""
import importlib.resources as resources
import json
from pathlib import Path

import numpy as np
import pytest

from amrgen import amr, tensor as T, transforms
from amrgen.encoders import GcnEncoder, StackEncoder
from amrgen.vocab import Vocab

GOLDEN_DIR = Path(__file__).parent / "golden"

FIGURE_GRAPH = (
    "(e / eat-01 :arg0 (h / he) :arg1 (p / pizza) "
    ":instrument (f / finger :part-of h))"
)


@pytest.fixture(scope="session")
def figure_graph():
    return amr.parse_penman(FIGURE_GRAPH)


@pytest.fixture(scope="session")
def figure_example(figure_graph):
    return transforms.prepare_example(figure_graph)


@pytest.fixture(scope="session")
def toy_corpus():
    text = (resources.files("amrgen") / "data" / "toy_corpus.txt").read_text()
    return amr.read_corpus_text(text)


@pytest.fixture(scope="session")
def toy_annotations():
    text = (resources.files("amrgen") / "data" / "toy_annotations.jsonl").read_text()
    from amrgen.evaluation import PronounAnnotation

    return [PronounAnnotation(**json.loads(l)) for l in text.splitlines() if l.strip()]


@pytest.fixture(scope="session")
def golden_cases():
    expected = json.loads((GOLDEN_DIR / "expected.json").read_text())
    cases = []
    for name, fields in sorted(expected.items()):
        if name.startswith("_"):
            continue
        text = (GOLDEN_DIR / f"{name}.amr").read_text()
        cases.append((name, text, fields))
    return cases


# --------------------------------------------------------------------------
# Random graph generators used by property tests


def random_tree_graph(rng, max_nodes=8, label_pool=20, relation_pool=5):
    """Random reentrancy-free AMR: every non-root node has exactly one parent."""
    n = int(rng.integers(2, max_nodes))
    nodes = tuple((f"n{i}", f"c{int(rng.integers(0, label_pool))}") for i in range(n))
    edges = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        edges.append((f"n{parent}", f":r{int(rng.integers(0, relation_pool))}", f"n{i}"))
    return amr.AmrGraph(nodes=nodes, edges=tuple(edges), root="n0")


def random_dag_graph(rng, max_nodes=8, extra_edges=3):
    """Random rooted DAG (tree plus forward/cross edges), possibly reentrant."""
    g = random_tree_graph(rng, max_nodes=max_nodes)
    ids = [nid for nid, _ in g.nodes]
    edges = list(g.edges)
    existing = {(p, c) for p, _, c in edges}
    for _ in range(int(rng.integers(0, extra_edges + 1))):
        u = int(rng.integers(0, len(ids)))
        v = int(rng.integers(0, len(ids)))
        if u >= v:  # only forward edges keep the graph acyclic
            continue
        if (ids[u], ids[v]) in existing:
            continue
        existing.add((ids[u], ids[v]))
        edges.append((ids[u], f":x{int(rng.integers(0, 3))}", ids[v]))
    return amr.AmrGraph(nodes=g.nodes, edges=tuple(edges), root=g.root)


# --------------------------------------------------------------------------
# Gradient checking


def finite_difference_check(params, loss_fn, eps=1e-5, floor=1e-4):
    """Worst relative error between analytic gradients and central differences.

    loss_fn() must rebuild the forward pass from the current parameter values
    and return a scalar Tensor. Returns (worst, (name, index, analytic, fd)).
    """
    with T.Tape() as tape:
        loss = loss_fn()
        T.backward(tape, loss)
    grads = {}
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached parameter {name}"
        grads[name] = p.grad.copy()
        p.grad = None
    worst, where = 0.0, None
    for name, p in params.items():
        it = np.nditer(p.data, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + eps
            hi = loss_fn().data.item()
            p.data[idx] = orig - eps
            lo = loss_fn().data.item()
            p.data[idx] = orig
            fd = (hi - lo) / (2.0 * eps)
            analytic = grads[name][idx]
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), floor)
            if rel > worst:
                worst, where = rel, (name, idx, analytic, fd)
            it.iternext()
    return worst, where


def min_relu_margin(encoder: StackEncoder, example) -> float:
    """Smallest |pre-activation| seen by any relu in the encoder's GCN.

    Central finite differences are only valid where the network is smooth, so
    gradient checks require this margin to clear the probe step by a wide
    factor. Returns +inf when the stack contains no relu.
    """
    struct = encoder.struct
    if not isinstance(struct, GcnEncoder) or struct.activation is not T.relu:
        return np.inf
    margins = []
    real = struct.activation

    def spy(x):
        margins.append(float(np.abs(x.data).min()))
        return real(x)

    struct.activation = spy
    try:
        encoder.encode(example)
    finally:
        struct.activation = real
    return min(margins) if margins else np.inf


def build_sequence_vocab(example) -> Vocab:
    return Vocab.build([example.sequence.tokens])
