"""Random valid pathways and models shared by the test modules."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from kfptools.compiler import ScaledModel
from kfptools.graph import build_graph


def random_scaled_model(rng: np.random.Generator, n_max: int = 8, k_ratio: float = 10.0,
                        p_extra_edge: float = 0.3) -> ScaledModel:
    """A valid ScaledModel on a random reachable graph.

    Node 0 always receives labeled input, other nodes do with probability 0.2.
    A random spanning tree from node 0 guarantees reachability; extra internal
    edges are added with probability ``p_extra_edge``. Turnover rates are
    log-uniform over a span of ``k_ratio``.
    """
    n = int(rng.integers(1, n_max + 1))
    labeled = {0} | {i for i in range(1, n) if rng.random() < 0.2}
    upstream = [set() for _ in range(n)]
    order = rng.permutation(np.arange(1, n))
    placed = [0]
    for i in order:
        upstream[i].add(int(rng.choice(placed)))
        placed.append(int(i))
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p_extra_edge:
                upstream[i].add(j)
    B = np.zeros((n, n))
    alpha = np.zeros(n)
    for i in range(n):
        has_alpha = rng.random() < 0.7 or (not upstream[i] and i not in labeled)
        sources = sorted(upstream[i])
        slots = len(sources) + int(has_alpha) + int(i in labeled)
        if slots == 0:
            continue
        w = rng.dirichlet(np.ones(slots))
        for s, j in enumerate(sources):
            B[i, j] = w[s]
        if has_alpha:
            alpha[i] = w[len(sources)]
    k = np.exp(rng.uniform(0.0, np.log(k_ratio), n)) * 0.05
    nodes = tuple(f"M{i + 1}" for i in range(n))
    return ScaledModel(nodes, B, alpha, labeled, k).validate(atol=1e-12)


def random_arborescence(rng: np.random.Generator, n_max: int = 10):
    """A fluxed, balanced arborescence and its exact proportions.

    Returns ``(graph, alpha)`` where ``alpha[i]`` is the unlabeled share of
    node i's influx. Every node gets an exit edge carrying whatever flux its
    children leave behind.
    """
    n = int(rng.integers(1, n_max + 1))
    parent = {0: None}
    for i in range(1, n):
        parent[i] = int(rng.integers(0, i))
    children = {i: [c for c, p in parent.items() if p == i] for i in range(n)}
    F = {0: Fraction(int(rng.integers(50, 200)), 100)}
    alpha = {0: Fraction(int(rng.integers(0, 95)), 100)}
    for i in range(n):
        kids = children[i]
        # children may draw on at most F_i / (len(kids) + 1) each
        for c in kids:
            beta = Fraction(int(rng.integers(1, 101)), 100)
            alpha[c] = 1 - beta
            budget = F[i] / (len(kids) + 1)
            F[c] = budget / beta * Fraction(int(rng.integers(20, 101)), 100)
    nodes = [f"N{i + 1}" for i in range(n)]
    edges = [("in_L", "labeled_in", None, nodes[0], (1 - alpha[0]) * F[0])]
    for i in range(n):
        if alpha[i]:
            edges.append((f"in_U{i + 1}", "unlabeled_in", None, nodes[i], alpha[i] * F[i]))
        out = sum(((1 - alpha[c]) * F[c] for c in children[i]), Fraction(0))
        edges.append((f"out{i + 1}", "exit", nodes[i], None, F[i] - out))
        for c in children[i]:
            edges.append((f"w{i + 1}_{c + 1}", "internal", nodes[i], nodes[c], (1 - alpha[c]) * F[c]))
    g = build_graph(nodes, edges)
    return g, np.array([float(alpha[i]) for i in range(n)])


def random_fluxed_graph(rng: np.random.Generator, n_max: int = 8, p_edge: float = 0.3):
    """A balanced, fully fluxed graph with rational fluxes and an exit on every node.

    Internal fluxes are drawn first; external inflow is then chosen to exceed
    each node's internal deficit, and the exit takes up the surplus.
    """
    n = int(rng.integers(1, n_max + 1))
    labeled = {0} | {i for i in range(1, n) if rng.random() < 0.3}
    W = {}
    for i in range(1, n):
        W[(int(rng.integers(0, i)), i)] = None
    for i in range(n):
        for j in range(n):
            if i != j and (i, j) not in W and rng.random() < p_edge:
                W[(i, j)] = None
    for key in W:
        W[key] = Fraction(int(rng.integers(1, 1000)), 100)
    d_in = [sum((f for (s, t), f in W.items() if t == i), Fraction(0)) for i in range(n)]
    d_out = [sum((f for (s, t), f in W.items() if s == i), Fraction(0)) for i in range(n)]
    nodes = [f"M{i + 1}" for i in range(n)]
    edges = []
    for i in range(n):
        ext = max(Fraction(0), d_out[i] - d_in[i]) + Fraction(int(rng.integers(1, 500)), 100)
        if i in labeled:
            share = Fraction(int(rng.integers(1, 100)), 100)
            edges.append((f"L{i + 1}", "labeled_in", None, nodes[i], ext * share))
            if share < 1 and rng.random() < 0.8:
                edges.append((f"U{i + 1}", "unlabeled_in", None, nodes[i], ext * (1 - share)))
            else:
                edges[-1] = (f"L{i + 1}", "labeled_in", None, nodes[i], ext)
        else:
            edges.append((f"U{i + 1}", "unlabeled_in", None, nodes[i], ext))
        edges.append((f"V{i + 1}", "exit", nodes[i], None, d_in[i] + ext - d_out[i]))
    for (s, t), f in W.items():
        edges.append((f"W{s + 1}_{t + 1}", "internal", nodes[s], nodes[t], f))
    return build_graph(nodes, edges)
