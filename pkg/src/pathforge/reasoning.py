"""Entity anchoring and priority-weighted reasoning-path retrieval."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .errors import MalformedJson, NoEnds, NoStarts, UnknownSchemaKind, ValidationError
from .kg import KnowledgeGraph, NodeKind
from .services import EmbeddingProvider, cosine_similarity, embed_all

DEFAULT_ANCHOR_THRESHOLD = 0.85
DEFAULT_MAX_COST = 6.0
REVERSE_COST_FACTOR = 2.0

SUPPORT_RELATION = "hasSupportEvidence"
CONTRADICT_RELATION = "hasContradictEvidence"
EXCLUDES_RELATION = "excludes"

DEFAULT_PRIORITY: dict[str, float] = {SUPPORT_RELATION: 0.5, CONTRADICT_RELATION: 0.5}

# Extraction "type" labels -> schema kind.
SCHEMA_TYPES: dict[str, NodeKind] = {
    "Structure": NodeKind.PHYSICAL_ENTITY,
    "Physical_Entity": NodeKind.PHYSICAL_ENTITY,
    "PhysicalEntity": NodeKind.PHYSICAL_ENTITY,
    "Phenotype": NodeKind.PHENOTYPE,
    "Diagnosis": NodeKind.DIAGNOSIS,
}

# Graph node kinds a mention of each schema kind may anchor to.
COMPATIBLE_KINDS: dict[NodeKind, frozenset[NodeKind]] = {
    NodeKind.PHYSICAL_ENTITY: frozenset({NodeKind.PHYSICAL_ENTITY}),
    NodeKind.PHENOTYPE: frozenset({NodeKind.PHENOTYPE, NodeKind.CLINICAL_PHENOTYPE}),
    NodeKind.DIAGNOSIS: frozenset({NodeKind.DIAGNOSIS, NodeKind.DISEASE}),
}

FINDING_KINDS = frozenset({NodeKind.PHYSICAL_ENTITY, NodeKind.PHENOTYPE})


@dataclass(frozen=True)
class EntityMention:
    label: str
    text: str
    schema_kind: NodeKind

    def to_dict(self) -> dict[str, str]:
        return {"label": self.label, "text": self.text, "schema_kind": self.schema_kind.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EntityMention":
        return cls(d["label"], d["text"], NodeKind(d["schema_kind"]))


class AnchorMethod(str, Enum):
    EXACT = "Exact"
    NORMALIZED = "Normalized"
    EMBEDDING = "Embedding"
    UNANCHORED = "Unanchored"


@dataclass(frozen=True)
class AnchoredEntity:
    mention: EntityMention
    node_id: str | None
    method: AnchorMethod
    score: float

    def __post_init__(self) -> None:
        if (self.method is AnchorMethod.UNANCHORED) != (self.node_id is None):
            raise ValidationError("node_id must be absent exactly when the mention is unanchored")

    def to_dict(self) -> dict[str, Any]:
        return {"mention": self.mention.to_dict(), "node_id": self.node_id, "method": self.method.value, "score": self.score}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AnchoredEntity":
        return cls(EntityMention.from_dict(d["mention"]), d.get("node_id"), AnchorMethod(d["method"]), float(d["score"]))


class PathRole(str, Enum):
    SUPPORT = "Support"
    CONTRAST = "Contrast"
    EXCLUSION = "Exclusion"
    CONTEXT = "Context"


@dataclass(frozen=True)
class ReasoningPath:
    """A walk through the graph.

    ``forward[i]`` records whether hop ``i`` follows its edge in the stored
    direction; ``names`` are display names captured at retrieval time.
    """

    nodes: tuple[str, ...]
    relations: tuple[str, ...]
    role: PathRole
    cost: float
    forward: tuple[bool, ...] = ()
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "role", PathRole(self.role))
        if not self.forward:
            object.__setattr__(self, "forward", (True,) * len(self.relations))
        object.__setattr__(self, "forward", tuple(self.forward))
        object.__setattr__(self, "names", tuple(self.names) or self.nodes)
        if len(self.relations) != len(self.nodes) - 1 or len(self.forward) != len(self.relations):
            raise ValidationError("a path with n nodes needs n-1 relations and n-1 direction flags")
        if self.cost < 0:
            raise ValidationError("path cost must be nonnegative")

    @property
    def start(self) -> str:
        return self.nodes[0]

    @property
    def end(self) -> str:
        return self.nodes[-1]

    def render(self) -> str:
        """``[A] --rel--> [B] <--rel2-- [C]`` using display names."""
        parts = [f"[{self.names[0]}]"]
        for rel, fwd, name in zip(self.relations, self.forward, self.names[1:]):
            parts.append(f"--{rel}-->" if fwd else f"<--{rel}--")
            parts.append(f"[{name}]")
        return " ".join(parts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": list(self.nodes),
            "names": list(self.names),
            "relations": list(self.relations),
            "forward": list(self.forward),
            "role": self.role.value,
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ReasoningPath":
        return cls(
            nodes=tuple(d["nodes"]),
            relations=tuple(d["relations"]),
            role=PathRole(d["role"]),
            cost=float(d["cost"]),
            forward=tuple(d.get("forward", ())),
            names=tuple(d.get("names", ())),
        )


# ---------------------------------------------------------------------------
# extraction + anchoring
# ---------------------------------------------------------------------------


def parse_extraction(doc: str) -> list[EntityMention]:
    """Read an ``{"extracted_entities": [...]}`` document into mentions."""
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"extraction is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("extracted_entities"), list):
        raise MalformedJson("expected an object with an 'extracted_entities' list")
    out: list[EntityMention] = []
    labels: set[str] = set()
    for entry in data["extracted_entities"]:
        if not isinstance(entry, dict) or not {"id", "name", "type"} <= entry.keys():
            raise MalformedJson(f"entity entry needs id, name and type: {entry!r}")
        kind = SCHEMA_TYPES.get(entry["type"])
        if kind is None:
            raise UnknownSchemaKind(f"entity {entry['id']!r} has unknown type {entry['type']!r}")
        label = str(entry["id"])
        if label in labels:
            raise MalformedJson(f"duplicate entity label {label!r}")
        labels.add(label)
        out.append(EntityMention(label, str(entry["name"]), kind))
    return out


def normalize_surface(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass
class _AnchorIndex:
    exact: dict[str, list[str]] = field(default_factory=dict)
    normalized: dict[str, list[str]] = field(default_factory=dict)


def _index(g: KnowledgeGraph) -> _AnchorIndex:
    idx = _AnchorIndex()
    for n in g.nodes.values():
        for s in n.surface_forms:
            idx.exact.setdefault(s, []).append(n.id)
            idx.normalized.setdefault(normalize_surface(s), []).append(n.id)
    return idx


def _pick(g: KnowledgeGraph, ids: Iterable[str], kinds: frozenset[NodeKind]) -> str:
    ids = sorted(set(ids))
    preferred = [i for i in ids if g.nodes[i].kind in kinds]
    return (preferred or ids)[0]


def _anchor_text(
    text: str,
    kinds: frozenset[NodeKind],
    g: KnowledgeGraph,
    idx: _AnchorIndex,
    embedder: EmbeddingProvider | None,
    threshold: float,
    node_vecs: dict[str, Any] | None,
) -> tuple[str | None, AnchorMethod, float]:
    if text in idx.exact:
        return _pick(g, idx.exact[text], kinds), AnchorMethod.EXACT, 1.0
    norm = normalize_surface(text)
    if norm in idx.normalized:
        return _pick(g, idx.normalized[norm], kinds), AnchorMethod.NORMALIZED, 1.0
    if embedder is not None and node_vecs:
        q = embed_all(embedder, [text])[text]
        best: tuple[float, str] | None = None
        for n in g.nodes.values():
            if n.kind not in kinds:
                continue
            sim = max(cosine_similarity(q, node_vecs[s]) for s in n.surface_forms)
            if best is None or sim > best[0] or (sim == best[0] and n.id < best[1]):
                best = (sim, n.id)
        if best is not None and best[0] >= threshold:
            return best[1], AnchorMethod.EMBEDDING, best[0]
    return None, AnchorMethod.UNANCHORED, 0.0


class Anchorer:
    """Reusable anchoring context over one graph (caches node embeddings)."""

    def __init__(self, g: KnowledgeGraph, embedder: EmbeddingProvider | None, threshold: float = DEFAULT_ANCHOR_THRESHOLD):
        if not 0.0 < threshold <= 1.0:
            raise ValidationError(f"threshold must lie in (0, 1], got {threshold}")
        self.g = g
        self.embedder = embedder
        self.threshold = threshold
        self._idx = _index(g)
        self._vecs: dict[str, Any] | None = None

    def _node_vecs(self) -> dict[str, Any] | None:
        if self.embedder is None:
            return None
        if self._vecs is None:
            forms = [s for n in self.g.nodes.values() for s in n.surface_forms]
            self._vecs = embed_all(self.embedder, forms)
        return self._vecs

    def anchor_text(self, text: str, kinds: frozenset[NodeKind]) -> tuple[str | None, AnchorMethod, float]:
        return _anchor_text(text, kinds, self.g, self._idx, self.embedder, self.threshold, self._node_vecs())

    def anchor(self, mention: EntityMention) -> AnchoredEntity:
        node_id, method, score = self.anchor_text(mention.text, COMPATIBLE_KINDS[mention.schema_kind])
        return AnchoredEntity(mention, node_id, method, score)


def anchor_mentions(
    mentions: Sequence[EntityMention],
    g: KnowledgeGraph,
    embedder: EmbeddingProvider | None,
    threshold: float = DEFAULT_ANCHOR_THRESHOLD,
) -> list[AnchoredEntity]:
    """Map mentions onto graph nodes.

    Resolution order per mention: exact name (or alias), then the
    lowercased/whitespace-collapsed form, then the most similar node of a
    compatible kind by embedding cosine if it reaches ``threshold``.
    Anything left is returned flagged ``Unanchored``.
    """
    anchorer = Anchorer(g, embedder, threshold)
    return [anchorer.anchor(m) for m in mentions]


def split_anchors(anchored: Iterable[AnchoredEntity]) -> tuple[list[str], list[str]]:
    """Finding node ids (path starts) and diagnosis node ids (path ends), deduplicated in order."""
    starts: list[str] = []
    ends: list[str] = []
    for a in anchored:
        if a.node_id is None:
            continue
        bucket = ends if a.mention.schema_kind is NodeKind.DIAGNOSIS else starts
        if a.node_id not in bucket:
            bucket.append(a.node_id)
    return starts, ends


# ---------------------------------------------------------------------------
# path retrieval
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    to: str
    relation: str
    forward: bool
    cost: float


def traversal_steps(
    g: KnowledgeGraph,
    priority: Mapping[str, float] | None = None,
    reverse_factor: float = REVERSE_COST_FACTOR,
) -> dict[str, list[Step]]:
    """Every hop available from each node with its effective cost.

    Forward hops cost ``weight * multiplier``; walking an edge against its
    direction costs ``reverse_factor`` times that.
    """
    mult = effective_priority(priority)
    steps: dict[str, list[Step]] = {nid: [] for nid in g.nodes}
    for e in g.edges:
        c = e.weight * mult.get(e.relation, 1.0)
        steps[e.src].append(Step(e.dst, e.relation, True, c))
        steps[e.dst].append(Step(e.src, e.relation, False, c * reverse_factor))
    return steps


def effective_priority(priority: Mapping[str, float] | None) -> dict[str, float]:
    mult = dict(DEFAULT_PRIORITY)
    if priority:
        mult.update(priority)
    for rel, m in mult.items():
        if not m > 0:
            raise ValidationError(f"priority multiplier for {rel!r} must be positive, got {m}")
    return mult


def path_role(relations: Iterable[str]) -> PathRole:
    rels = set(relations)
    if CONTRADICT_RELATION in rels:
        return PathRole.CONTRAST
    if EXCLUDES_RELATION in rels:
        return PathRole.EXCLUSION
    return PathRole.SUPPORT


def _dijkstra(steps: Mapping[str, list[Step]], source: str, targets: set[str]):
    # Heap keys are (cost, node sequence, relation sequence, direction
    # flags): with strictly positive hop costs the first settlement of a
    # node is its cheapest walk and, among equal costs, the
    # lexicographically smallest node sequence.
    heap: list[tuple[float, tuple[str, ...], tuple[str, ...], tuple[bool, ...]]] = [(0.0, (source,), (), ())]
    settled: dict[str, tuple[float, tuple[str, ...], tuple[str, ...], tuple[bool, ...]]] = {}
    remaining = set(targets)
    while heap and remaining:
        cost, nodes, rels, fwd = heapq.heappop(heap)
        u = nodes[-1]
        if u in settled:
            continue
        settled[u] = (cost, nodes, rels, fwd)
        remaining.discard(u)
        for s in steps[u]:
            if s.to in settled:
                continue
            heapq.heappush(heap, (cost + s.cost, nodes + (s.to,), rels + (s.relation,), fwd + (not s.forward,)))
    return settled


def retrieve_paths(
    g: KnowledgeGraph,
    starts: Sequence[str],
    ends: Sequence[str],
    priority: Mapping[str, float] | None = None,
    max_cost: float = DEFAULT_MAX_COST,
    reverse_factor: float = REVERSE_COST_FACTOR,
) -> list[ReasoningPath]:
    """Cheapest path from every start to every end, start-major.

    Pairs with no path, or whose cheapest path costs more than ``max_cost``,
    are left out.
    """
    if not starts:
        raise NoStarts("at least one start node is required")
    if not ends:
        raise NoEnds("at least one end node is required")
    for nid in (*starts, *ends):
        if nid not in g.nodes:
            raise ValidationError(f"unknown node id {nid!r}")
    steps = traversal_steps(g, priority, reverse_factor)
    starts = list(dict.fromkeys(starts))
    ends = list(dict.fromkeys(ends))
    out: list[ReasoningPath] = []
    for s in starts:
        settled = _dijkstra(steps, s, set(ends))
        for t in ends:
            hit = settled.get(t)
            if hit is None:
                continue
            cost, nodes, rels, flags = hit
            if cost > max_cost:
                continue
            out.append(
                ReasoningPath(
                    nodes=nodes,
                    relations=rels,
                    role=path_role(rels),
                    cost=cost,
                    # flags were stored inverted so "forward" sorts first on ties
                    forward=tuple(not f for f in flags),
                    names=tuple(g.nodes[n].name for n in nodes),
                )
            )
    return out


def validate_path(g: KnowledgeGraph, path: ReasoningPath) -> bool:
    """True when every hop is backed by an edge with the stated relation and direction."""
    keys = {e.key for e in g.edges}
    for (u, v), rel, fwd in zip(zip(path.nodes, path.nodes[1:]), path.relations, path.forward):
        key = (u, v, rel) if fwd else (v, u, rel)
        if key not in keys:
            return False
    return True
