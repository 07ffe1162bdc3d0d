"""Chest abnormality knowledge graph: finding categories grouped by organ,
a global node connected to everything, and the normalized propagation matrix
used by the graph convolution layers."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

import numpy as np
import yaml

GRAPH_ENV_VAR = "RADGRAPH_EVAL_GRAPH"

DEFAULT_CATEGORY_NAMES = (
    "normal", "cardiomegaly", "scoliosis", "fractures bone", "effusion",
    "thickening", "pneumothorax", "hernia", "calcinosis", "emphysema",
    "pneumonia", "edema", "atelectasis", "cicatrix", "opacity", "lesion",
    "airspace disease", "hypoinflation", "medical device", "other",
)

GLOBAL_NODE_NAME = "<global>"


class GraphValidationError(ValueError):
    """Raised when a graph definition violates a structural invariant."""


@dataclass(frozen=True)
class FindingCategory:
    id: int
    name: str
    group: str


@dataclass(frozen=True)
class ChestGraph:
    """Immutable finding graph: category nodes plus one global node.

    ``adjacency`` covers all nodes (categories first, global node last);
    it is symmetric 0/1 with a zero diagonal.
    """

    categories: tuple[FindingCategory, ...]
    adjacency: np.ndarray
    groups: dict[str, tuple[int, ...]] = field(default_factory=dict)

    @property
    def global_node_index(self) -> int:
        return len(self.categories)

    @property
    def node_count(self) -> int:
        return len(self.categories) + 1

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def index_of(self, name: str) -> int:
        for cat in self.categories:
            if cat.name == name:
                return cat.id
        raise KeyError(name)

    def has_category(self, name: str) -> bool:
        return any(c.name == name for c in self.categories)

    def node_name(self, index: int) -> str:
        if index == self.global_node_index:
            return GLOBAL_NODE_NAME
        return self.categories[index].name


@dataclass(frozen=True)
class PropagationMatrix:
    """Dense symmetric matrix that mixes node features during convolution."""

    values: np.ndarray

    @property
    def node_count(self) -> int:
        return self.values.shape[0]


def _validate(graph: ChestGraph) -> None:
    a = graph.adjacency
    n = graph.node_count
    if a.shape != (n, n):
        raise GraphValidationError(f"adjacency shape {a.shape} != ({n}, {n})")
    if not np.array_equal(a, a.T):
        raise GraphValidationError("adjacency is not symmetric")
    if np.any(np.diag(a) != 0):
        raise GraphValidationError("adjacency has nonzero diagonal")
    g = graph.global_node_index
    if not np.all(a[g, :g] == 1):
        raise GraphValidationError("global node is not adjacent to every category")
    for group, members in graph.groups.items():
        for i in members:
            for j in members:
                if i != j and a[i, j] != 1:
                    raise GraphValidationError(
                        f"group '{group}' members {i} and {j} are not connected")


def build_graph(entries: Iterable[tuple[str, str]],
                extra_edges: Iterable[tuple[str, str]] = ()) -> ChestGraph:
    """Build a graph from (name, group) pairs plus optional extra edges.

    Edge set = within-group cliques + global-node star + extra_edges.
    """
    categories: list[FindingCategory] = []
    seen: dict[str, int] = {}
    for name, group in entries:
        name = str(name).strip().lower()
        group = str(group).strip().lower()
        if not name:
            raise GraphValidationError("empty category name")
        if not group:
            raise GraphValidationError(f"category '{name}' has an empty group")
        if name in seen:
            raise GraphValidationError(f"duplicate category name '{name}'")
        seen[name] = len(categories)
        categories.append(FindingCategory(id=len(categories), name=name, group=group))
    if not categories:
        raise GraphValidationError("empty category list")

    n = len(categories) + 1
    adjacency = np.zeros((n, n), dtype=np.int64)
    groups: dict[str, list[int]] = {}
    for cat in categories:
        groups.setdefault(cat.group, []).append(cat.id)
    for members in groups.values():
        for i in members:
            for j in members:
                if i != j:
                    adjacency[i, j] = 1
    g = n - 1
    adjacency[g, :g] = 1
    adjacency[:g, g] = 1
    for pair in extra_edges:
        if len(pair) != 2:
            raise GraphValidationError(f"extra edge {pair!r} is not a pair")
        a_name, b_name = (str(x).strip().lower() for x in pair)
        for nm in (a_name, b_name):
            if nm not in seen:
                raise GraphValidationError(f"extra edge references unknown category '{nm}'")
        if a_name == b_name:
            raise GraphValidationError(f"extra edge joins '{a_name}' to itself")
        adjacency[seen[a_name], seen[b_name]] = 1
        adjacency[seen[b_name], seen[a_name]] = 1

    graph = ChestGraph(
        categories=tuple(categories),
        adjacency=adjacency,
        groups={k: tuple(v) for k, v in sorted(groups.items())},
    )
    _validate(graph)
    return graph


def load_graph(path: str | os.PathLike | None = None) -> ChestGraph:
    """Load a graph definition file (YAML with `categories` + `extra_edges`).

    With no path: honors the RADGRAPH_EVAL_GRAPH environment variable, then
    falls back to the packaged default (20 categories, 21 nodes).
    """
    if path is None:
        path = os.environ.get(GRAPH_ENV_VAR)
    if path is None:
        text = resources.files("radgraph_eval.data").joinpath("chest_graph.yaml").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return parse_graph_spec(text)


def parse_graph_spec(text: str) -> ChestGraph:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or "categories" not in doc:
        raise GraphValidationError("graph spec must be a mapping with a 'categories' key")
    raw = doc["categories"]
    if not isinstance(raw, list) or not raw:
        raise GraphValidationError("empty category list")
    entries = []
    for item in raw:
        if not isinstance(item, dict) or "name" not in item or "group" not in item:
            raise GraphValidationError(f"category entry {item!r} needs 'name' and 'group'")
        entries.append((item["name"], item["group"]))
    extra = doc.get("extra_edges") or []
    return build_graph(entries, extra)


def dump_graph_spec(graph: ChestGraph) -> str:
    """Serialize a graph back to the definition format (round-trips edges
    that came from groups; extra edges are recovered by difference)."""
    base = build_graph([(c.name, c.group) for c in graph.categories])
    extra = []
    diff = np.argwhere((graph.adjacency == 1) & (base.adjacency == 0))
    for i, j in diff:
        if i < j:
            extra.append([graph.node_name(int(i)), graph.node_name(int(j))])
    doc = {
        "categories": [{"name": c.name, "group": c.group} for c in graph.categories],
        "extra_edges": extra,
    }
    return yaml.safe_dump(doc, sort_keys=False)


def neighbors(graph: ChestGraph, node: int) -> set[int]:
    """Indices adjacent to `node` per the adjacency matrix."""
    if not 0 <= node < graph.node_count:
        raise IndexError(f"node index {node} out of range for {graph.node_count} nodes")
    return set(int(i) for i in np.nonzero(graph.adjacency[node])[0])


def normalized_propagation(graph: ChestGraph, mode: str = "renormalized") -> PropagationMatrix:
    """Propagation matrix over the graph's nodes.

    mode="renormalized" (default): D̃^(-1/2) (A+I) D̃^(-1/2) with D̃ the degree
    matrix of A+I — aggregates neighbor features with self-loops.
    mode="laplacian": literal symmetric normalized Laplacian
    I - D^(-1/2) A D^(-1/2) (zero-degree rows get D^(-1/2)=0).
    """
    a = graph.adjacency.astype(np.float64)
    if mode == "renormalized":
        a_hat = a + np.eye(a.shape[0])
        deg = a_hat.sum(axis=1)
        d_inv_sqrt = 1.0 / np.sqrt(deg)
        values = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    elif mode == "laplacian":
        deg = a.sum(axis=1)
        with np.errstate(divide="ignore"):
            d_inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
        values = np.eye(a.shape[0]) - a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    else:
        raise ValueError(f"unknown propagation mode '{mode}'")
    return PropagationMatrix(values=values)


def spectral_radius(matrix: np.ndarray, iterations: int = 200, seed: int = 0) -> float:
    """Largest absolute eigenvalue estimated by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(matrix.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = float(v @ (matrix @ v))
    return abs(lam)
