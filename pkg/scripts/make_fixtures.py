"""Regenerate the bundled fixture files under src/pathforge/data."""

import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "pathforge" / "data"


def node(id, name, kind, source="GraphA", ext=(), aliases=()):
    d = {"id": id, "name": name, "kind": kind, "source": source, "external_ids": list(ext)}
    if aliases:
        d["aliases"] = list(aliases)
    return d


def edge(src, rel, dst, w=1.0):
    return {"src": src, "dst": dst, "relation": rel, "weight": w}


def graph(nodes, edges):
    return {"nodes": nodes, "edges": edges, "relations": sorted({e["relation"] for e in edges})}


def dump(name, doc):
    (DATA / name).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def dump_jsonl(name, rows):
    (DATA / name).write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


toy = graph(
    [
        node("n1", "Epithelium", "PhysicalEntity"),
        node("n2", "Basement Membrane", "PhysicalEntity"),
        node("n3", "Invasion", "Phenotype"),
        node("n4", "Nuclear Atypia", "Phenotype"),
        node("n5", "Squamous Cell Carcinoma", "Diagnosis"),
        node("n6", "Carcinoma in Situ", "Diagnosis"),
    ],
    [
        edge("n1", "adjacentTo", "n2"),
        edge("n2", "siteOf", "n3"),
        edge("n3", "keyFeatureOf", "n5"),
        edge("n5", "hasSupportEvidence", "n3"),
        edge("n6", "hasSupportEvidence", "n4"),
        edge("n6", "hasContradictEvidence", "n3"),
        edge("n1", "manifests", "n4"),
    ],
)

carcinoma = graph(
    [
        node("main_bronchus", "Main Bronchus", "PhysicalEntity"),
        node("epithelium", "Epithelium", "PhysicalEntity"),
        node("basement_membrane", "Basement Membrane", "PhysicalEntity"),
        node("tumor_cells", "Tumor Cells", "PhysicalEntity"),
        node("invasion", "Invasion", "Phenotype"),
        node("glandular_structures", "Glandular Structures", "Phenotype"),
        node("squamous_cell_carcinoma", "Squamous Cell Carcinoma", "Diagnosis"),
        node("adenocarcinoma", "Adenocarcinoma", "Diagnosis"),
    ],
    [
        edge("main_bronchus", "hasComponent", "epithelium"),
        edge("epithelium", "adjacentTo", "basement_membrane"),
        edge("basement_membrane", "siteOf", "invasion"),
        edge("invasion", "keyFeatureOf", "squamous_cell_carcinoma"),
        edge("tumor_cells", "hasPhenotype", "invasion"),
        edge("adenocarcinoma", "manifests", "glandular_structures"),
        edge("squamous_cell_carcinoma", "excludes", "glandular_structures"),
    ],
)

carcinoma_extraction = {
    "extracted_entities": [
        {"id": "E1", "name": "Main bronchus", "type": "Structure"},
        {"id": "E2", "name": "Basement membrane", "type": "Structure"},
        {"id": "E3", "name": "Tumor cells", "type": "Structure"},
        {"id": "P1", "name": "Invading", "type": "Phenotype"},
        {"id": "P2", "name": "Metastasis", "type": "Phenotype"},
        {"id": "P3", "name": "Glandular structures", "type": "Phenotype"},
        {"id": "D1", "name": "Squamous cell carcinoma", "type": "Diagnosis"},
        {"id": "D2", "name": "Adenocarcinoma", "type": "Diagnosis"},
    ]
}

# Uniform costs prefer f1 -> a -> dx (2.0); the default 0.5 discount on
# hasSupportEvidence makes f1 -> b -> c -> dx (1.5) cheaper.
priority_flip = graph(
    [
        node("dx", "Target Diagnosis", "Diagnosis"),
        node("f1", "Start Finding", "Phenotype"),
        node("m_a", "Direct Intermediate", "PhysicalEntity"),
        node("m_b", "Evidence One", "Phenotype"),
        node("m_c", "Evidence Two", "Phenotype"),
        node("m_d", "Side Structure", "PhysicalEntity"),
    ],
    [
        edge("f1", "adjacentTo", "m_a"),
        edge("m_a", "keyFeatureOf", "dx"),
        edge("f1", "hasSupportEvidence", "m_b"),
        edge("m_b", "hasSupportEvidence", "m_c"),
        edge("m_c", "hasSupportEvidence", "dx"),
        edge("m_d", "adjacentTo", "f1"),
    ],
)

graph_a = graph(
    [
        node("A:epithelium", "Epithelium", "PhysicalEntity"),
        node("A:gland", "Gland", "PhysicalEntity"),
        node("A:nuclear_atypia", "Nuclear Atypia", "Phenotype"),
        node("A:glandular", "Glandular Structures", "Phenotype"),
        node("A:adenocarcinoma", "Adenocarcinoma", "Diagnosis", ext=["MONDO:0005061"]),
        node("A:squamous", "Squamous Carcinoma", "Diagnosis"),
    ],
    [
        edge("A:epithelium", "hasComponent", "A:gland"),
        edge("A:gland", "manifests", "A:glandular"),
        edge("A:adenocarcinoma", "manifests", "A:glandular"),
        edge("A:adenocarcinoma", "hasSupportEvidence", "A:nuclear_atypia"),
        edge("A:squamous", "excludes", "A:glandular"),
        edge("A:squamous", "hasSupportEvidence", "A:nuclear_atypia"),
    ],
)

graph_b = graph(
    [
        node("B:luad", "Lung Adenocarcinoma", "Disease", "GraphB", ext=["MONDO:0005061"]),
        node("B:scc", "Squamous Cell Carcinoma", "Disease", "GraphB"),
        node("B:atypical_nuclei", "Atypical Nuclei", "ClinicalPhenotype", "GraphB"),
        node("B:egfr", "EGFR", "GeneProtein", "GraphB"),
        node("B:tp63", "TP63", "GeneProtein", "GraphB"),
        node("B:gene_x", "Orphan Gene X", "GeneProtein", "GraphB"),
        node("B:gene_y", "Orphan Gene Y", "GeneProtein", "GraphB"),
    ],
    [
        edge("B:luad", "associatedWith", "B:egfr"),
        edge("B:scc", "associatedWith", "B:tp63"),
        edge("B:scc", "hasPhenotype", "B:atypical_nuclei"),
        edge("B:luad", "hasPhenotype", "B:atypical_nuclei"),
        edge("B:gene_x", "interactsWith", "B:gene_y"),
    ],
)

CASE_Q = "What is the most likely diagnosis for this bronchial biopsy?"
cases = [
    {"case_id": "case-001", "question": CASE_Q, "cancer_type": "lung", "source": "fixture", "extraction": carcinoma_extraction},
    {
        "case_id": "case-002",
        "question": "Which carcinoma subtype best explains the findings in this slide?",
        "cancer_type": "lung",
        "source": "fixture",
        "extraction": {
            "extracted_entities": [
                {"id": "E1", "name": "Basement membrane", "type": "Structure"},
                {"id": "P1", "name": "Glandular structures", "type": "Phenotype"},
                {"id": "D1", "name": "Adenocarcinoma", "type": "Diagnosis"},
            ]
        },
    },
    {
        "case_id": "case-003",
        "question": CASE_Q,
        "cancer_type": "lung",
        "source": "fixture",
        "extraction": {"extracted_entities": [{"id": "D1", "name": "Adenocarcinoma", "type": "Diagnosis"}]},
    },
]

GOOD_Q = "What is the most likely diagnosis?"


def trip(i, q, a, c, expected):
    return {"question": q, "answer": a, "chain": c, "entities": [], "paths": [], "meta": {"case_id": f"f{i:02d}", "expected_reasons": expected}}


kept_pairs = [
    ("Squamous cell carcinoma", "Keratin pearls and intercellular bridges are present. Therefore, the final diagnosis is squamous cell carcinoma."),
    ("Adenocarcinoma", "Tumor cells form glandular structures with mucin. Therefore, the final diagnosis is adenocarcinoma."),
    ("Small cell carcinoma", "Cells show nuclear molding and scant cytoplasm. The final diagnosis is small cell carcinoma."),
    ("Carcinoid tumor", "Nests of uniform cells with salt-and-pepper chromatin are seen. This supports carcinoid tumor."),
    ("Large cell carcinoma", "Sheets of large cells lack glandular or squamous differentiation. Conclusion: large cell carcinoma."),
    ("Mesothelioma", "Epithelioid cells line papillary structures along the pleura. The findings indicate mesothelioma."),
    ("Invasive ductal carcinoma", "Solid sheets with a lack of tubules are seen. Therefore, the diagnosis is invasive ductal carcinoma."),
]
filter_rows = [trip(i + 1, GOOD_Q, a, c, []) for i, (a, c) in enumerate(kept_pairs)]
filter_rows += [
    trip(8, "What is the diagnosis, given it is squamous cell carcinoma?", "Squamous cell carcinoma",
         "Keratinization is evident. Therefore, the final diagnosis is squamous cell carcinoma.", ["visual_dependency"]),
    trip(9, GOOD_Q, "Squamous cell carcinoma",
         "Glands with mucin are present. Therefore, the final diagnosis is adenocarcinoma.", ["consistency", "sufficiency"]),
    trip(10, GOOD_Q, "Squamous cell carcinoma",
         "Squamous cell carcinoma was considered first. Glandular differentiation is evident. Therefore, the final diagnosis is adenocarcinoma.", ["consistency"]),
    trip(11, GOOD_Q, "Adenocarcinoma", "", ["consistency", "visual_dependency", "sufficiency"]),
    trip(12, "Is this adenocarcinoma of the lung?", "Adenocarcinoma",
         "Keratin pearls are present. Therefore, the final diagnosis is squamous cell carcinoma.", ["consistency", "visual_dependency", "sufficiency"]),
]

scc_chain = (
    "Histologically, the lesion is localized within the Main Bronchus, where the architectural relationship between the surface epithelium and the adjacent Basement Membrane is scrutinized. ($s_1$)\n"
    "A defining pathological event is observed here: the Basement Membrane serves as the direct site of Invasion by neoplastic cells. ($s_2$)\n"
    "This breach is clinically significant because such invasion is a key feature characteristic of Squamous Cell Carcinoma. ($s_3$)\n"
    "For differential diagnosis, we distinguish this phenotype from Adenocarcinoma. ($s_4$)\n"
    "The logic relies on morphological patterns: whereas Adenocarcinoma predictably manifests Glandular Structures, the definition of Squamous Cell Carcinoma explicitly excludes them. ($s_5$)\n"
    "Therefore, the final diagnosis answer is squamous cell carcinoma. ($a$)\n"
)

# model outputs lined up with the triplets synthesized from cases.jsonl
responses = [
    {
        "case_id": "case-001",
        "response": "<observe>Tumor cells invading through the basement membrane of the main bronchus.</observe>\n"
        "<think>Invasion at the basement membrane is a key feature of squamous cell carcinoma; no glandular structures are seen.</think>\n"
        "<answer>Squamous cell carcinoma</answer>",
    },
    {
        "case_id": "case-002",
        "response": "<observe>Glandular structures are present.</observe>\n<think>Glands suggest a carcinoma.</think>\n<answer>Carcinoma</answer>",
    },
]

eval_pairs = [
    {
        "prediction": "squamous cell carcinoma",
        "reference": "squamous cell carcinoma",
        "prediction_reasoning": "Invasion of the basement membrane. Keratinization is present. Therefore squamous cell carcinoma.",
        "reference_reasoning": "The basement membrane is the site of invasion. Invasion is a key feature of squamous cell carcinoma.",
    },
    {"prediction": "adenocarcinoma of the lung", "reference": "lung adenocarcinoma"},
    {"prediction": "small cell carcinoma", "reference": "squamous cell carcinoma"},
]

if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    dump("toy_graph.json", toy)
    dump("carcinoma_graph.json", carcinoma)
    dump("carcinoma_extraction.json", carcinoma_extraction)
    dump("priority_flip.json", priority_flip)
    dump("graph_a.json", graph_a)
    dump("graph_b.json", graph_b)
    dump_jsonl("cases.jsonl", cases)
    dump_jsonl("filter_corpus.jsonl", filter_rows)
    dump_jsonl("responses.jsonl", responses)
    dump_jsonl("eval_pairs.jsonl", eval_pairs)
    (DATA / "scc_chain.txt").write_text(scc_chain, encoding="utf-8")
    print("fixtures written to", DATA)
