"""Typed pathology knowledge graph: load, align, fuse, prune, summarise."""

from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

from .errors import (
    ConflictingKinds,
    DanglingEdge,
    DuplicateNodeId,
    EmptyGraph,
    IoFailure,
    MalformedFile,
    ValidationError,
)
from .services import EmbeddingProvider, cosine_similarity, embed_all

DEFAULT_ALIGN_THRESHOLD = 0.85

# Published scale of the full fused PrimeKG + PathoGraph graph.  The data is
# not bundled; these are kept only as reference figures.
REFERENCE_GRAPH_SCALE = {
    "histological_entities": 120,
    "visual_phenotypes": 85,
    "diseases": 1500,
    "genes_proteins": 3200,
    "clinical_phenotypes": 2500,
    "total_nodes": 7405,
    "total_edges": 45200,
    "relation_types": 25,
}


class NodeKind(str, Enum):
    PHYSICAL_ENTITY = "PhysicalEntity"
    PHENOTYPE = "Phenotype"
    DIAGNOSIS = "Diagnosis"
    DISEASE = "Disease"
    GENE_PROTEIN = "GeneProtein"
    CLINICAL_PHENOTYPE = "ClinicalPhenotype"


class Source(str, Enum):
    GRAPH_A = "GraphA"
    GRAPH_B = "GraphB"
    FUSED = "Fused"


# Cross-kind pairs allowed to merge into one node.
KIND_BRIDGES: frozenset[frozenset[NodeKind]] = frozenset(
    {
        frozenset({NodeKind.DIAGNOSIS, NodeKind.DISEASE}),
        frozenset({NodeKind.PHENOTYPE, NodeKind.CLINICAL_PHENOTYPE}),
    }
)


def is_bridge(k1: NodeKind, k2: NodeKind) -> bool:
    return frozenset({k1, k2}) in KIND_BRIDGES


def kinds_compatible(k1: NodeKind, k2: NodeKind) -> bool:
    return k1 == k2 or is_bridge(k1, k2)


@dataclass(frozen=True)
class Node:
    id: str
    name: str
    kind: NodeKind
    source: Source = Source.GRAPH_A
    external_ids: frozenset[str] = frozenset()
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "external_ids", frozenset(self.external_ids))
        object.__setattr__(self, "aliases", tuple(self.aliases))

    @property
    def surface_forms(self) -> tuple[str, ...]:
        """Name followed by any aliases, without repeats."""
        seen = [self.name]
        for a in self.aliases:
            if a not in seen:
                seen.append(a)
        return tuple(seen)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "name": self.name,
            "kind": self.kind.value,
            "source": self.source.value,
            "external_ids": sorted(self.external_ids),
        }
        if self.aliases:
            d["aliases"] = list(self.aliases)
        return d


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    dst: str
    relation: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise ValidationError(f"edge {self.src}-{self.relation}->{self.dst} has non-positive weight {self.weight}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.relation)

    def to_dict(self) -> dict[str, Any]:
        return {"src": self.src, "dst": self.dst, "relation": self.relation, "weight": self.weight}


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable graph.  Edges are kept sorted so equality ignores input order."""

    nodes: Mapping[str, Node] = field(default_factory=dict)
    edges: tuple[Edge, ...] = ()
    relation_vocab: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        nodes = dict(sorted(self.nodes.items()))
        for nid, n in nodes.items():
            if n.id != nid:
                raise ValidationError(f"node keyed {nid!r} carries id {n.id!r}")
        edges = tuple(sorted(self.edges))
        for e in edges:
            for end in (e.src, e.dst):
                if end not in nodes:
                    raise DanglingEdge(f"edge {e.src}-{e.relation}->{e.dst} references unknown node {end!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "relation_vocab", frozenset(self.relation_vocab) | {e.relation for e in edges})

    def __hash__(self) -> int:
        return hash((tuple(self.nodes), self.edges))

    @cached_property
    def out_edges(self) -> dict[str, list[Edge]]:
        out: dict[str, list[Edge]] = defaultdict(list)
        for e in self.edges:
            out[e.src].append(e)
        return out

    @cached_property
    def in_edges(self) -> dict[str, list[Edge]]:
        inc: dict[str, list[Edge]] = defaultdict(list)
        for e in self.edges:
            inc[e.dst].append(e)
        return inc

    def degree(self, node_id: str) -> int:
        return len(self.out_edges.get(node_id, ())) + len(self.in_edges.get(node_id, ()))

    def undirected_neighbors(self, node_id: str) -> set[str]:
        return {e.dst for e in self.out_edges.get(node_id, ())} | {e.src for e in self.in_edges.get(node_id, ())}

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [n.to_dict() for n in self.nodes.values()],
            "edges": [e.to_dict() for e in self.edges],
            "relations": sorted(self.relation_vocab),
        }


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _node_from_dict(d: Any) -> Node:
    if not isinstance(d, dict):
        raise MalformedFile(f"node entry must be an object, got {type(d).__name__}")
    try:
        ext = d.get("external_ids", [])
        if not isinstance(ext, list):
            raise MalformedFile(f"external_ids of node {d.get('id')!r} must be a list")
        return Node(
            id=str(d["id"]),
            name=str(d["name"]),
            kind=NodeKind(d["kind"]),
            source=Source(d.get("source", Source.GRAPH_A.value)),
            external_ids=frozenset(map(str, ext)),
            aliases=tuple(map(str, d.get("aliases", []))),
        )
    except KeyError as exc:
        raise MalformedFile(f"node entry missing field {exc}") from exc
    except ValueError as exc:
        raise MalformedFile(f"bad node entry {d!r}: {exc}") from exc


def _edge_from_dict(d: Any) -> Edge:
    if not isinstance(d, dict):
        raise MalformedFile(f"edge entry must be an object, got {type(d).__name__}")
    try:
        w = d.get("weight", 1.0)
        if isinstance(w, bool) or not isinstance(w, (int, float)):
            raise MalformedFile(f"edge weight must be a number, got {w!r}")
        return Edge(src=str(d["src"]), dst=str(d["dst"]), relation=str(d["relation"]), weight=float(w))
    except KeyError as exc:
        raise MalformedFile(f"edge entry missing field {exc}") from exc
    except ValidationError as exc:
        raise MalformedFile(str(exc)) from exc


def graph_from_dict(doc: Any) -> KnowledgeGraph:
    if not isinstance(doc, dict):
        raise MalformedFile("graph document must be a JSON object")
    raw_nodes = doc.get("nodes", [])
    raw_edges = doc.get("edges", [])
    relations = doc.get("relations")
    if not isinstance(raw_nodes, list) or not isinstance(raw_edges, list):
        raise MalformedFile("'nodes' and 'edges' must be lists")
    nodes: dict[str, Node] = {}
    for d in raw_nodes:
        n = _node_from_dict(d)
        if n.id in nodes:
            raise MalformedFile(f"duplicate node id {n.id!r}")
        nodes[n.id] = n
    edges = [_edge_from_dict(d) for d in raw_edges]
    if relations is not None:
        if not isinstance(relations, list):
            raise MalformedFile("'relations' must be a list")
        vocab = frozenset(map(str, relations))
        undeclared = sorted({e.relation for e in edges} - vocab)
        if undeclared:
            raise MalformedFile(f"edges use undeclared relations {undeclared}")
    else:
        vocab = frozenset()
    return KnowledgeGraph(nodes=nodes, edges=tuple(edges), relation_vocab=vocab)


def load_graph(path: str | Path, format: str = "json") -> KnowledgeGraph:
    if format != "json":
        raise MalformedFile(f"unsupported graph format {format!r}")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: not valid JSON ({exc})") from exc
    return graph_from_dict(doc)


def emit_graph(g: KnowledgeGraph, path: str | Path) -> None:
    try:
        Path(path).write_text(json.dumps(g.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# alignment and fusion
# ---------------------------------------------------------------------------


class AlignMethod(str, Enum):
    EXACT_ID = "ExactId"
    EMBEDDING = "Embedding"


@dataclass(frozen=True)
class AlignedPair:
    a_id: str
    b_id: str
    method: AlignMethod
    score: float


@dataclass(frozen=True)
class AlignmentMap:
    pairs: tuple[AlignedPair, ...] = ()

    def __len__(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> dict[str, Any]:
        return {"pairs": [{"a": p.a_id, "b": p.b_id, "method": p.method.value, "score": p.score} for p in self.pairs]}


def align_nodes(
    a: KnowledgeGraph,
    b: KnowledgeGraph,
    embedder: EmbeddingProvider,
    threshold: float = DEFAULT_ALIGN_THRESHOLD,
) -> AlignmentMap:
    """Match nodes of ``a`` to nodes of ``b``.

    Shared external identifiers win outright.  Whatever remains is matched by
    name-embedding cosine, but only across the Diagnosis/Disease and
    Phenotype/ClinicalPhenotype bridges, greedily from the most similar pair
    down, and only when the cosine strictly exceeds ``threshold``.  Ties fall
    back to lexicographic id order, so the result is deterministic.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValidationError(f"threshold must lie in (0, 1], got {threshold}")

    used_a: set[str] = set()
    used_b: set[str] = set()
    pairs: list[AlignedPair] = []

    by_ext: dict[str, list[str]] = defaultdict(list)
    for nb in b.nodes.values():
        for x in nb.external_ids:
            by_ext[x].append(nb.id)
    exact: set[tuple[str, str]] = set()
    for na in a.nodes.values():
        for x in na.external_ids:
            for bid in by_ext.get(x, ()):
                exact.add((na.id, bid))
    for aid, bid in sorted(exact):
        if aid in used_a or bid in used_b:
            continue
        pairs.append(AlignedPair(aid, bid, AlignMethod.EXACT_ID, 1.0))
        used_a.add(aid)
        used_b.add(bid)

    cand_a = [n for n in a.nodes.values() if n.id not in used_a and any(n.kind in br for br in KIND_BRIDGES)]
    cand_b = [n for n in b.nodes.values() if n.id not in used_b and any(n.kind in br for br in KIND_BRIDGES)]
    if cand_a and cand_b:
        vecs = embed_all(embedder, [n.name for n in cand_a] + [n.name for n in cand_b])
        scored: list[tuple[float, str, str]] = []
        for na in cand_a:
            for nb in cand_b:
                if not is_bridge(na.kind, nb.kind):
                    continue
                sim = cosine_similarity(vecs[na.name], vecs[nb.name])
                if sim > threshold:
                    scored.append((-sim, na.id, nb.id))
        for neg, aid, bid in sorted(scored):
            if aid in used_a or bid in used_b:
                continue
            pairs.append(AlignedPair(aid, bid, AlignMethod.EMBEDDING, -neg))
            used_a.add(aid)
            used_b.add(bid)
    return AlignmentMap(tuple(pairs))


def fuse_graphs(a: KnowledgeGraph, b: KnowledgeGraph, alignment: AlignmentMap) -> KnowledgeGraph:
    """Merge ``b`` into ``a``, collapsing each aligned pair into one node.

    The fused node keeps ``a``'s id and kind, takes the union of external ids
    and lists both names as aliases; every edge touching the ``b`` side is
    re-pointed at it.
    """
    remap: dict[str, str] = {}
    fused: dict[str, Node] = {}
    seen_a: set[str] = set()
    for p in alignment.pairs:
        if p.a_id not in a.nodes or p.b_id not in b.nodes:
            raise ValidationError(f"alignment pair ({p.a_id}, {p.b_id}) references unknown nodes")
        if p.a_id in seen_a or p.b_id in remap:
            raise ValidationError(f"node aligned twice in pair ({p.a_id}, {p.b_id})")
        na, nb = a.nodes[p.a_id], b.nodes[p.b_id]
        if not kinds_compatible(na.kind, nb.kind):
            raise ConflictingKinds(f"cannot fuse {na.id} ({na.kind.value}) with {nb.id} ({nb.kind.value})")
        aliases: list[str] = []
        for s in (*na.surface_forms, *nb.surface_forms):
            if s not in aliases:
                aliases.append(s)
        fused[na.id] = Node(
            id=na.id,
            name=na.name,
            kind=na.kind,
            source=Source.FUSED,
            external_ids=na.external_ids | nb.external_ids,
            aliases=tuple(aliases),
        )
        remap[nb.id] = na.id
        seen_a.add(na.id)

    nodes: dict[str, Node] = dict(a.nodes)
    nodes.update(fused)
    for nb in b.nodes.values():
        if nb.id in remap:
            continue
        if nb.id in nodes:
            raise DuplicateNodeId(f"unaligned node id {nb.id!r} exists in both graphs")
        nodes[nb.id] = nb

    edges = list(a.edges)
    for e in b.edges:
        edges.append(Edge(remap.get(e.src, e.src), remap.get(e.dst, e.dst), e.relation, e.weight))
    return KnowledgeGraph(nodes=nodes, edges=tuple(edges), relation_vocab=a.relation_vocab | b.relation_vocab)


# ---------------------------------------------------------------------------
# pruning and statistics
# ---------------------------------------------------------------------------


def connected_components(g: KnowledgeGraph) -> list[set[str]]:
    """Undirected components, largest first, ties by smallest member id."""
    seen: set[str] = set()
    comps: list[set[str]] = []
    for start in g.nodes:
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in g.undirected_neighbors(u):
                if v not in comp:
                    comp.add(v)
                    queue.append(v)
        seen |= comp
        comps.append(comp)
    comps.sort(key=lambda c: (-len(c), min(c)))
    return comps


def prune_graph(g: KnowledgeGraph) -> KnowledgeGraph:
    """Drop duplicate (src, dst, relation) edges and every component but the largest.

    Among duplicates the cheapest weight survives.
    """
    if not g.nodes:
        raise EmptyGraph("cannot prune an empty graph")
    best: dict[tuple[str, str, str], Edge] = {}
    for e in g.edges:
        cur = best.get(e.key)
        if cur is None or e.weight < cur.weight:
            best[e.key] = e
    keep = connected_components(g)[0]
    nodes = {nid: n for nid, n in g.nodes.items() if nid in keep}
    edges = tuple(e for e in best.values() if e.src in keep)
    return KnowledgeGraph(nodes=nodes, edges=edges, relation_vocab=g.relation_vocab)


def graph_stats(g: KnowledgeGraph) -> dict[str, Any]:
    by_kind = {k.value: 0 for k in NodeKind}
    for n in g.nodes.values():
        by_kind[n.kind.value] += 1
    return {
        "nodes_by_kind": by_kind,
        "total_nodes": len(g.nodes),
        "total_edges": len(g.edges),
        "relation_types": len(g.relation_vocab),
    }

