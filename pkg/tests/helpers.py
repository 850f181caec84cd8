"""Independent oracles and random fixture generators shared by the test modules."""

import itertools
import math
import random

from pathforge.kg import Edge, KnowledgeGraph, Node, NodeKind, Source

KINDS = list(NodeKind)
RELATIONS = ["adjacentTo", "siteOf", "keyFeatureOf", "hasSupportEvidence", "hasContradictEvidence", "excludes"]

_ID_NAMESPACE = {
    NodeKind.DIAGNOSIS: "MONDO",
    NodeKind.DISEASE: "MONDO",
    NodeKind.PHENOTYPE: "HP",
    NodeKind.CLINICAL_PHENOTYPE: "HP",
    NodeKind.PHYSICAL_ENTITY: "UBERON",
    NodeKind.GENE_PROTEIN: "HGNC",
}


def random_graph(rng: random.Random, n: int, p: float, prefix: str = "n", source=Source.GRAPH_A, relations=RELATIONS, weights=False) -> KnowledgeGraph:
    nodes = {}
    for i in range(n):
        kind = rng.choice(KINDS)
        nid = f"{prefix}{i}"
        nodes[nid] = Node(nid, f"{prefix} node {i}", kind, source)
    edges = []
    ids = list(nodes)
    for u in ids:
        for v in ids:
            if u != v and rng.random() < p:
                w = round(rng.uniform(0.5, 2.0), 3) if weights else 1.0
                edges.append(Edge(u, v, rng.choice(relations), w))
    return KnowledgeGraph(nodes=nodes, edges=tuple(edges))


def random_graph_pair(rng: random.Random):
    """Two graphs whose shared external ids only ever link compatible kinds."""

    def make(prefix, source):
        n = rng.randint(1, 7)
        nodes = {}
        for i in range(n):
            kind = rng.choice(KINDS)
            ext = set()
            if rng.random() < 0.5:
                ext.add(f"{_ID_NAMESPACE[kind]}:{kind.value if _ID_NAMESPACE[kind] in ('UBERON', 'HGNC') else ''}{rng.randint(0, 3)}")
            nid = f"{prefix}{i}"
            nodes[nid] = Node(nid, rng.choice(["alpha", "beta", "gamma", "delta", "nuclear atypia", "atypical nuclei"]) + f" {prefix}{i}", kind, source, frozenset(ext))
        edges = []
        for u, v in itertools.permutations(nodes, 2):
            if rng.random() < 0.3:
                edges.append(Edge(u, v, rng.choice(RELATIONS)))
        return KnowledgeGraph(nodes=nodes, edges=tuple(edges))

    return make("a", Source.GRAPH_A), make("b", Source.GRAPH_B)


def flood_fill_components(g: KnowledgeGraph) -> list[set[str]]:
    adj = {n: set() for n in g.nodes}
    for e in g.edges:
        adj[e.src].add(e.dst)
        adj[e.dst].add(e.src)
    seen, comps = set(), []
    for n in g.nodes:
        if n in seen:
            continue
        comp, stack = set(), [n]
        while stack:
            x = stack.pop()
            if x in comp:
                continue
            comp.add(x)
            stack.extend(adj[x] - comp)
        seen |= comp
        comps.append(comp)
    return comps


def brute_force_best_path(g: KnowledgeGraph, start: str, end: str, mult: dict, reverse_factor: float = 2.0):
    """Cheapest simple path by exhaustive DFS.

    Returns (cost, nodes) with ties broken by lexicographic node sequence, or
    None when ``end`` is unreachable.
    """
    hops = {n: [] for n in g.nodes}
    for e in g.edges:
        c = e.weight * mult.get(e.relation, 1.0)
        hops[e.src].append((e.dst, c))
        hops[e.dst].append((e.src, c * reverse_factor))
    best = None

    def dfs(node, path, cost):
        nonlocal best
        if node == end:
            cand = (cost, tuple(path))
            if best is None or cand[0] < best[0] - 1e-12 or (abs(cand[0] - best[0]) <= 1e-12 and cand[1] < best[1]):
                best = cand
            return
        for nxt, c in hops[node]:
            if nxt not in path:
                path.append(nxt)
                dfs(nxt, path, cost + c)
                path.pop()

    dfs(start, [start], 0.0)
    return best


def soft_dice_oracle(pred, gt, sim, beta, eps=1e-8):
    """Soft-Dice by explicit enumeration of every (pred, gt) pair."""
    pred, gt = sorted(set(pred)), sorted(set(gt))
    total = 0.0
    for p in pred:
        if p in gt:
            total += 1.0
            continue
        best = 0.0
        for g in gt:
            s = sim[(p, g)]
            s = 0.0 if s < 0 else (1.0 if s > 1 else s)
            if s > best:
                best = s
        total += beta * best
    value = 2 * total / (len(pred) + len(gt) + eps)
    return min(1.0, max(0.0, value)), value


def lcs_oracle(a, b):
    """Longest common subsequence length by exhaustive subsequence search over the shorter list."""
    if len(a) > len(b):
        a, b = b, a
    for k in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(any(x == y for y in it) for x in sub):
                return k
    return 0


def population_std(xs):
    m = sum(xs) / len(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


PIPELINE_OUTPUTS = (
    "alignment.json",
    "fused.json",
    "stats.json",
    "anchors.jsonl",
    "paths.jsonl",
    "triplets.jsonl",
    "verdicts.jsonl",
    "kept.jsonl",
    "corpus_verdicts.jsonl",
    "corpus_kept.jsonl",
    "sft.jsonl",
    "rewards.jsonl",
    "trajectory.csv",
    "eval.jsonl",
    "eval_summary.json",
)


def run_mock_pipeline(data, out, jobs: int = 1) -> dict[str, bytes]:
    """Run every CLI stage offline on the bundled fixtures; returns output bytes by file name."""
    from pathforge.cli import main

    d = lambda name: str(data / name)  # noqa: E731
    o = lambda name: str(out / name)  # noqa: E731
    common = ["--mock", "--jobs", str(jobs), "--seed", "7"]
    stages = [
        ["kg", "build", "--a", d("graph_a.json"), "--b", d("graph_b.json"), "--out", o("fused.json"), "--alignment", o("alignment.json")],
        ["kg", "stats", o("fused.json"), "--out", o("stats.json")],
        ["anchor", "--graph", d("carcinoma_graph.json"), "--extraction", d("carcinoma_extraction.json"), "--out", o("anchors.jsonl")],
        ["paths", "--graph", d("carcinoma_graph.json"), "--anchors", o("anchors.jsonl"), "--out", o("paths.jsonl")],
        ["synth", "--graph", d("carcinoma_graph.json"), "--cases", d("cases.jsonl"), "--out", o("triplets.jsonl")],
        ["filter", "--triplets", o("triplets.jsonl"), "--verdicts", o("verdicts.jsonl"), "--out", o("kept.jsonl")],
        ["filter", "--triplets", d("filter_corpus.jsonl"), "--verdicts", o("corpus_verdicts.jsonl"), "--out", o("corpus_kept.jsonl")],
        ["augment", "--chains", o("kept.jsonl"), "--out", o("sft.jsonl")],
        ["reward", "--graph", d("carcinoma_graph.json"), "--pred", d("responses.jsonl"), "--gt", o("kept.jsonl"), "--out", o("rewards.jsonl")],
        ["grpo-demo", "--out", o("trajectory.csv")],
        ["eval", "--pairs", d("eval_pairs.jsonl"), "--out", o("eval.jsonl"), "--summary", o("eval_summary.json")],
    ]
    for argv in stages:
        code = main(argv[:2] + common + argv[2:] if argv[0] == "kg" else argv[:1] + common + argv[1:])
        if code != 0:
            raise AssertionError(f"stage {' '.join(argv[:2])} exited {code}")
    return {name: (out / name).read_bytes() for name in PIPELINE_OUTPUTS}
