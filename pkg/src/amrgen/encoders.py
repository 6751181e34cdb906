"""Sequential, tree and graph encoders plus their stackings.

Seven configurations: Seq, SeqGCN, GCNSeq, SeqTreeLSTM, TreeLSTMSeq, GCN,
TreeLSTM. The structural encoders operate over the Levi form of the input
(edge labels are first-class nodes), so every linearization position has a
structure node and the stacked output is always N rows in linearization
order, whatever the configuration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    concat,
    dropout,
    embedding_lookup,
    matmul,
    mul,
    relu,
    sigmoid,
    slice_cols,
    slice_rows,
    sub,
    sum_rows,
    tanh,
    uniform_param,
    zeros_param,
)
from .transforms import AmrTree, ExampleRepr, LeviGraph

KINDS = ("Seq", "SeqGCN", "GCNSeq", "SeqTreeLSTM", "TreeLSTMSeq", "GCN", "TreeLSTM")
_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "Seq"
    input_repr: str = "sequence"
    embedding_dim: int = 64
    hidden_dim: int = 64
    gcn_layers: int = 2
    gcn_activation: str = "relu"
    highway: bool = True
    dropout: float = 0.3
    edge_dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "Seq":
            allowed = ("sequence",)
        elif "TreeLSTM" in self.kind:
            allowed = ("tree",)
        else:
            allowed = ("tree", "graph")
        if self.input_repr not in allowed:
            raise ValueError(
                f"kind {self.kind} requires input_repr in {allowed}, got {self.input_repr!r}"
            )
        if self.hidden_dim % 2:
            raise ValueError("hidden_dim must be even (split across directions)")
        if self.gcn_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.gcn_activation!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_repr": self.input_repr,
            "embedding_dim": self.embedding_dim,
            "hidden_dim": self.hidden_dim,
            "gcn_layers": self.gcn_layers,
            "gcn_activation": self.gcn_activation,
            "highway": self.highway,
            "dropout": self.dropout,
            "edge_dropout": self.edge_dropout,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


class LstmCell:
    """Single LSTM step; gate order i, f, o, g."""

    def __init__(self, in_dim: int, hidden: int, rng, name: str):
        self.hidden = hidden
        self.name = name
        self.W = uniform_param((in_dim, 4 * hidden), rng)
        self.U = uniform_param((hidden, 4 * hidden), rng)
        self.b = zeros_param((1, 4 * hidden))

    def step(self, x: Tensor, h: Tensor, c: Tensor):
        z = add(add(matmul(x, self.W), matmul(h, self.U)), self.b)
        n = self.hidden
        i = sigmoid(slice_cols(z, 0, n))
        f = sigmoid(slice_cols(z, n, 2 * n))
        o = sigmoid(slice_cols(z, 2 * n, 3 * n))
        g = tanh(slice_cols(z, 3 * n, 4 * n))
        c_next = add(mul(f, c), mul(i, g))
        h_next = mul(o, tanh(c_next))
        return h_next, c_next

    def params(self) -> dict:
        return {f"{self.name}.W": self.W, f"{self.name}.U": self.U, f"{self.name}.b": self.b}


class BiLstmEncoder:
    """Single-layer BiLSTM; each direction gets hidden_dim / 2."""

    def __init__(self, in_dim: int, hidden_dim: int, rng, name: str = "bilstm"):
        self.half = hidden_dim // 2
        self.fwd = LstmCell(in_dim, self.half, rng, f"{name}.fwd")
        self.bwd = LstmCell(in_dim, self.half, rng, f"{name}.bwd")

    def _run(self, cell, rows):
        h = Tensor(np.zeros((1, self.half)))
        c = Tensor(np.zeros((1, self.half)))
        states = []
        for x in rows:
            h, c = cell.step(x, h, c)
            states.append(h)
        return states

    def encode(self, inputs: Tensor) -> Tensor:
        n = inputs.shape[0]
        rows = [slice_rows(inputs, i, i + 1) for i in range(n)]
        forward = self._run(self.fwd, rows)
        backward = list(reversed(self._run(self.bwd, list(reversed(rows)))))
        joined = [concat([f, b], axis=1) for f, b in zip(forward, backward)]
        return concat(joined, axis=0)

    def params(self) -> dict:
        return {**self.fwd.params(), **self.bwd.params()}


def _tree_topology(node_count: int, edges):
    """children lists and parent indices; raises if any node has indegree > 1."""
    children = [[] for _ in range(node_count)]
    parent = [None] * node_count
    for u, v in edges:
        if parent[v] is not None:
            raise ValueError(
                "input is not a tree (a node has multiple parents); "
                "convert the graph with to_tree first"
            )
        parent[v] = u
        children[u].append(v)
    return children, parent


def tree_indices(tree: AmrTree):
    """Index an AmrTree for the raw TreeLSTM entry point."""
    index = {nid: i for i, (nid, _) in enumerate(tree.nodes)}
    edges = [(index[u], index[v]) for u, _, v in tree.edges]
    return len(tree.nodes), edges, index[tree.root]


class ChildSumTreeLstm:
    """Bidirectional Child-Sum TreeLSTM.

    Bottom-up pass sums the children's hidden states into the gates; the
    top-down pass is seeded at the root by a feed-forward transform and
    descends with an LSTM step that reads the parent's bottom-up state as its
    hidden input and the parent's top-down cell as its cell input. Output per
    node is [h_down ; h_up], so each pass gets hidden_dim / 2.
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng, name: str = "treelstm"):
        half = hidden_dim // 2
        self.half = half
        self.name = name
        self.W = uniform_param((in_dim, 4 * half), rng)  # x -> i,o,u,f blocks
        self.U = uniform_param((half, 3 * half), rng)  # child sum -> i,o,u
        self.Uf = uniform_param((half, half), rng)  # per-child forget
        self.b = zeros_param((1, 4 * half))
        self.Wr = uniform_param((half, half), rng)
        self.br = zeros_param((1, half))
        self.down = LstmCell(half, half, rng, f"{name}.down")

    def _bottom_up(self, x, children_states):
        n = self.half
        wx = add(matmul(x, self.W), self.b)
        if children_states:
            h_sum = sum_rows(concat([h for h, _ in children_states], axis=0))
        else:
            h_sum = Tensor(np.zeros((1, n)))
        uz = matmul(h_sum, self.U)
        i = sigmoid(add(slice_cols(wx, 0, n), slice_cols(uz, 0, n)))
        o = sigmoid(add(slice_cols(wx, n, 2 * n), slice_cols(uz, n, 2 * n)))
        u = tanh(add(slice_cols(wx, 2 * n, 3 * n), slice_cols(uz, 2 * n, 3 * n)))
        c = mul(i, u)
        fx = slice_cols(wx, 3 * n, 4 * n)
        for h_k, c_k in children_states:
            f_k = sigmoid(add(fx, matmul(h_k, self.Uf)))
            c = add(c, mul(f_k, c_k))
        h = mul(o, tanh(c))
        return h, c

    def encode(self, node_count: int, edges, root: int, inputs: Tensor) -> Tensor:
        children, parent = _tree_topology(node_count, edges)
        rows = [slice_rows(inputs, i, i + 1) for i in range(node_count)]

        up_h = [None] * node_count
        up_c = [None] * node_count
        order = []
        stack = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if ready:
                order.append(node)
            else:
                stack.append((node, True))
                stack.extend((child, False) for child in children[node])
        for node in order:  # children before parents
            states = [(up_h[c], up_c[c]) for c in children[node]]
            up_h[node], up_c[node] = self._bottom_up(rows[node], states)

        down_h = [None] * node_count
        down_c = [None] * node_count
        down_h[root] = tanh(add(matmul(up_h[root], self.Wr), self.br))
        down_c[root] = Tensor(np.zeros((1, self.half)))
        stack = [root]
        while stack:
            node = stack.pop()
            for child in children[node]:
                down_h[child], down_c[child] = self.down.step(
                    up_h[child], up_h[node], down_c[node]
                )
                stack.append(child)

        return concat(
            [concat([down_h[i], up_h[i]], axis=1) for i in range(node_count)], axis=0
        )

    def params(self) -> dict:
        p = {
            f"{self.name}.W": self.W,
            f"{self.name}.U": self.U,
            f"{self.name}.Uf": self.Uf,
            f"{self.name}.b": self.b,
            f"{self.name}.Wr": self.Wr,
            f"{self.name}.br": self.br,
        }
        p.update(self.down.params())
        return p


class GcnEncoder:
    """Direction-aware GCN with edge dropout and tanh highway gates.

    Layer rule: h_i' = act(sum_in W_in h_j + sum_out W_out h_j + b), then
    out = t * tanh(h') + (1 - t) * h with t = sigmoid(h W_t + b_t).
    Self-information flows only through the highway path. An input projection
    is added when the input width differs from hidden_dim.
    """

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        layers: int,
        rng,
        activation: str = "relu",
        highway: bool = True,
        edge_dropout: float = 0.1,
        name: str = "gcn",
    ):
        self.hidden = hidden_dim
        self.activation = _ACTIVATIONS[activation]
        self.highway = highway
        self.edge_dropout = edge_dropout
        self.name = name
        self.proj = None
        if in_dim != hidden_dim:
            self.proj = uniform_param((in_dim, hidden_dim), rng)
        self.layers = []
        for k in range(layers):
            layer = {
                "W_in": uniform_param((hidden_dim, hidden_dim), rng),
                "W_out": uniform_param((hidden_dim, hidden_dim), rng),
                "b": zeros_param((1, hidden_dim)),
            }
            if highway:
                layer["W_t"] = uniform_param((hidden_dim, hidden_dim), rng)
                layer["b_t"] = zeros_param((1, hidden_dim))
            self.layers.append(layer)

    def encode(self, levi: LeviGraph, inputs: Tensor, training: bool = False, rng=None) -> Tensor:
        n = levi.node_count
        h = matmul(inputs, self.proj) if self.proj is not None else inputs
        for layer in self.layers:
            edges = levi.edges
            if training and self.edge_dropout > 0.0 and edges:
                keep = rng.random(len(edges)) >= self.edge_dropout
                edges = tuple(e for e, k in zip(edges, keep) if k)
            a_in = np.zeros((n, n))
            a_out = np.zeros((n, n))
            for u, v in edges:
                a_in[v, u] += 1.0
                a_out[u, v] += 1.0
            messages = add(
                add(
                    matmul(Tensor(a_in), matmul(h, layer["W_in"])),
                    matmul(Tensor(a_out), matmul(h, layer["W_out"])),
                ),
                layer["b"],
            )
            out = self.activation(messages)
            if self.highway:
                t = sigmoid(add(matmul(h, layer["W_t"]), layer["b_t"]))
                one_minus = sub(Tensor(np.ones(t.shape)), t)
                h = add(mul(t, tanh(out)), mul(one_minus, h))
            else:
                h = out
        return h

    def params(self) -> dict:
        p = {}
        if self.proj is not None:
            p[f"{self.name}.proj"] = self.proj
        for k, layer in enumerate(self.layers):
            for key, value in layer.items():
                p[f"{self.name}.{k}.{key}"] = value
        return p


class StackEncoder:
    """Dispatches one of the seven configurations over an ExampleRepr.

    Output is always an N x hidden matrix in linearization order.
    """

    def __init__(self, config: EncoderConfig, src_vocab, rng):
        self.config = config
        self.vocab = src_vocab
        d, h = config.embedding_dim, config.hidden_dim
        self.embedding = uniform_param((len(src_vocab), d), rng)
        kind = config.kind
        self.seq_first = kind in ("Seq", "SeqGCN", "SeqTreeLSTM")
        self.struct_kind = "GCN" if "GCN" in kind else ("TreeLSTM" if "TreeLSTM" in kind else None)
        self.has_bilstm = kind not in ("GCN", "TreeLSTM")

        struct_in = h if self.seq_first and self.struct_kind else d
        self.bilstm = None
        self.struct = None
        if self.has_bilstm:
            bilstm_in = d if self.seq_first else h
            self.bilstm = BiLstmEncoder(bilstm_in, h, rng)
        if self.struct_kind == "GCN":
            self.struct = GcnEncoder(
                struct_in,
                h,
                config.gcn_layers,
                rng,
                activation=config.gcn_activation,
                highway=config.highway,
                edge_dropout=config.edge_dropout,
            )
        elif self.struct_kind == "TreeLSTM":
            self.struct = ChildSumTreeLstm(struct_in, h, rng)

    def _structure(self, ex: ExampleRepr):
        if self.config.input_repr == "graph":
            return ex.levi, ex.pos_to_levi, ex.levi_init_pos
        return ex.tree_levi, ex.pos_to_tree_levi, ex.tree_levi_init_pos

    def _run_struct(self, levi, inputs, training, rng):
        if self.struct_kind == "GCN":
            return self.struct.encode(levi, inputs, training=training, rng=rng)
        node_count, edges, root = levi.node_count, levi.edges, levi.root
        return self.struct.encode(node_count, edges, root, inputs)

    def encode(
        self,
        ex: ExampleRepr,
        training: bool = False,
        rng=None,
        token_embeddings: Tensor = None,
        node_embeddings: Tensor = None,
    ) -> Tensor:
        """token_embeddings / node_embeddings override the lookup, which lets
        callers probe sensitivity of outputs to individual input rows."""
        if training and rng is None:
            raise ValueError("training-mode encoding needs an RNG stream")
        keep = 1.0 - self.config.dropout

        def maybe_drop(x):
            return dropout(x, keep, rng, training) if training else x

        if self.config.kind == "Seq":
            tokens = token_embeddings
            if tokens is None:
                ids = self.vocab.indices(ex.sequence.tokens)
                tokens = embedding_lookup(self.embedding, ids)
            out = self.bilstm.encode(maybe_drop(tokens))
            return maybe_drop(out)

        levi, pos_map, init_pos = self._structure(ex)
        if self.seq_first:
            tokens = token_embeddings
            if tokens is None:
                ids = self.vocab.indices(ex.sequence.tokens)
                tokens = embedding_lookup(self.embedding, ids)
            hidden = self.bilstm.encode(maybe_drop(tokens))
            struct_in = embedding_lookup(hidden, init_pos)
            states = self._run_struct(levi, struct_in, training, rng)
            out = embedding_lookup(states, pos_map)
        else:
            nodes = node_embeddings
            if nodes is None:
                ids = self.vocab.indices([tok for _, tok, _ in levi.nodes])
                nodes = embedding_lookup(self.embedding, ids)
            states = self._run_struct(levi, maybe_drop(nodes), training, rng)
            arranged = embedding_lookup(states, pos_map)
            out = self.bilstm.encode(arranged) if self.bilstm else arranged
        return maybe_drop(out)

    def params(self) -> dict:
        p = {"embedding": self.embedding}
        if self.bilstm is not None:
            p.update(self.bilstm.params())
        if self.struct is not None:
            p.update(self.struct.params())
        return p
