import pytest

from pathforge.errors import GenerationFailed, JudgeFailed, NoPaths, UnparseableResponse
from pathforge.reasoning import PathRole, anchor_mentions, parse_extraction, retrieve_paths
from pathforge.services import LlmClient, Role, prompt_key
from pathforge.synthesis import (
    GENERATION_TEMPLATES,
    FilterVerdict,
    Triplet,
    build_generation_prompt,
    check_consistency,
    check_sufficiency,
    check_visual_dependency,
    filter_corpus,
    judge_triplet,
    question_from_prompt,
    synthesize_triplet,
)

from conftest import data_path, read_jsonl

CARCINOMA_STEP3 = (
    "<observe>Histopathological Findings: Histologically, the lesion is localized within the Main Bronchus, where the "
    "architectural relationship between the surface epithelium and the adjacent Basement Membrane is scrutinized.</observe>\n"
    "<think>Clinical Reasoning: A defining pathological event is observed here: the Basement Membrane serves as the direct "
    "site of Invasion by neoplastic cells. This breach is clinically significant because such invasion is a key feature "
    "characteristic of Squamous Cell Carcinoma. For differential diagnosis, we distinguish this phenotype from "
    "Adenocarcinoma. The logic relies on morphological patterns: whereas Adenocarcinoma predictably manifests Glandular "
    "Structures, the definition of Squamous Cell Carcinoma explicitly excludes them. Therefore, the final diagnosis answer "
    "is squamous cell carcinoma.</think>\n"
    "<answer>Final Answer: Squamous cell carcinoma</answer>"
)


def carcinoma_paths(g):
    pairs = [
        ("main_bronchus", "basement_membrane"),
        ("basement_membrane", "squamous_cell_carcinoma"),
        ("adenocarcinoma", "glandular_structures"),
        ("squamous_cell_carcinoma", "glandular_structures"),
    ]
    out = []
    for s, t in pairs:
        (p,) = retrieve_paths(g, [s], [t])
        out.append(p)
    return out


def test_prompt_carries_template_and_all_paths(carcinoma_graph):
    paths = carcinoma_paths(carcinoma_graph)
    prompt = build_generation_prompt(paths)
    assert "Histopathological Findings" in prompt
    assert prompt.index("<observe>") < prompt.index("<think>") < prompt.index("<answer>")
    for p in paths:
        assert p.render() in prompt
    assert "[Main Bronchus] --hasComponent--> [Epithelium] --adjacentTo--> [Basement Membrane]" in prompt
    assert "[Adenocarcinoma] --manifests--> [Glandular Structures]" in prompt
    assert "[Squamous Cell Carcinoma] --excludes--> [Glandular Structures]" in prompt
    assert question_from_prompt(prompt) == "What is the most likely diagnosis?"


def test_option3_single_line_format(carcinoma_graph):
    prompt = build_generation_prompt(carcinoma_paths(carcinoma_graph), template="Option3", question="Which tumor?\nBe brief.")
    assert "<observe> ... </observe> <think> ... </think> <answer> ... </answer>" in prompt
    assert question_from_prompt(prompt) == "Which tumor? Be brief."
    assert set(GENERATION_TEMPLATES) == {"Option1", "Option2", "Option3"}


def test_prompt_errors(carcinoma_graph):
    with pytest.raises(NoPaths):
        build_generation_prompt([])
    with pytest.raises(ValueError):
        build_generation_prompt(carcinoma_paths(carcinoma_graph), template="Option9")


def test_mock_synthesis_grounds_chain_in_paths(carcinoma_graph, generator):
    # pipeline order: diagnostic paths first, the diagnosis being the first supported end
    a, b, c, d = carcinoma_paths(carcinoma_graph)
    paths = [b, d, a, c]
    t = synthesize_triplet(build_generation_prompt(paths), generator, meta={"case_id": "x"}, paths=paths)
    assert t.answer == "Squamous Cell Carcinoma"
    assert t.eligible
    assert "Basement Membrane site of Invasion" in t.chain
    assert t.chain.endswith("Therefore, the final diagnosis is Squamous Cell Carcinoma.")
    assert t.meta["case_id"] == "x" and t.meta["missing_entities"] == []


def test_carcinoma_step3_reply_fixture(carcinoma_graph):
    paths = carcinoma_paths(carcinoma_graph)
    prompt = build_generation_prompt(paths)
    gen = LlmClient.mocked(Role.GENERATOR, fixtures={prompt_key(prompt): CARCINOMA_STEP3})
    anchored = anchor_mentions(parse_extraction(data_path("carcinoma_extraction.json").read_text()), carcinoma_graph, None)
    t = synthesize_triplet(prompt, gen, entities=anchored, paths=paths)
    assert "squamous cell carcinoma" in t.chain
    assert t.chain.startswith("Histologically, the lesion")
    assert t.answer == "Squamous cell carcinoma"
    assert "Tumor Cells" not in t.meta["missing_entities"]  # not on any path
    assert t.meta["missing_entities"] == []


def test_missing_entities_recorded(carcinoma_graph):
    paths = carcinoma_paths(carcinoma_graph)
    prompt = build_generation_prompt(paths)
    reply = "<observe>Invasion noted.</observe><think>Invasion is a key feature of squamous cell carcinoma.</think><answer>Squamous cell carcinoma</answer>"
    gen = LlmClient.mocked(Role.GENERATOR, fixtures={prompt_key(prompt): reply})
    anchored = anchor_mentions(parse_extraction(data_path("carcinoma_extraction.json").read_text()), carcinoma_graph, None)
    t = synthesize_triplet(prompt, gen, entities=anchored, paths=paths)
    assert "Main Bronchus" in t.meta["missing_entities"]
    assert "Invasion" not in t.meta["missing_entities"]


def test_unparseable_and_failed_generation(carcinoma_graph):
    prompt = build_generation_prompt(carcinoma_paths(carcinoma_graph))
    broken = "<observe>x</observe><think>y</think><answer>z"
    with pytest.raises(UnparseableResponse):
        synthesize_triplet(prompt, LlmClient.mocked(Role.GENERATOR, fixtures={prompt_key(prompt): broken}), paths=[])
    with pytest.raises(GenerationFailed):
        synthesize_triplet("no marker in this prompt", LlmClient.mocked(Role.GENERATOR))


def test_triplet_round_trip(carcinoma_graph, generator):
    paths = carcinoma_paths(carcinoma_graph)
    t = synthesize_triplet(build_generation_prompt(paths), generator, paths=paths)
    assert Triplet.from_dict(t.to_dict()) == t


def _t(q="What is the most likely diagnosis?", a="Squamous cell carcinoma", c="Keratin pearls. Therefore, the final diagnosis is squamous cell carcinoma."):
    return Triplet(q, a, c)


def test_consistency_examples(judge):
    assert check_consistency(_t(), judge)
    assert not check_consistency(_t(c="Keratin pearls. Therefore, the final diagnosis is adenocarcinoma."), judge)
    # agreement must be in the concluding sentence
    assert not check_consistency(_t(c="Squamous cell carcinoma is considered. Glands favour adenocarcinoma."), judge)


def test_visual_dependency_examples(judge):
    assert check_visual_dependency(_t(), judge)
    assert not check_visual_dependency(_t(q="Is this squamous cell carcinoma or adenocarcinoma?"), judge)


def test_sufficiency_examples(judge):
    assert check_sufficiency(_t(), judge)
    assert not check_sufficiency(_t(c="Keratin pearls are present."), judge)


def test_checks_reject_empty_fields(judge):
    for bad in (_t(q=" "), _t(a=""), _t(c="")):
        for check in (check_consistency, check_visual_dependency, check_sufficiency):
            with pytest.raises(JudgeFailed):
                check(bad, judge)


def test_unusable_consistency_verdict():
    t = _t()
    from pathforge.synthesis import CONSISTENCY_PROMPT, _slot

    key = prompt_key(CONSISTENCY_PROMPT.format(chain=_slot(t.chain), answer=_slot(t.answer)))
    j = LlmClient.mocked(Role.JUDGE, fixtures={key: "maybe"})
    with pytest.raises(JudgeFailed):
        check_consistency(t, j)
    v = judge_triplet(t, j)
    assert not v.kept and v.reasons[0].startswith("consistency:judge_failed")


def test_filter_corpus_fixture(judge):
    ts = [Triplet.from_dict(r) for r in read_jsonl(data_path("filter_corpus.jsonl"))]
    assert len(ts) == 12
    res = filter_corpus(ts, judge)
    assert [t.meta["case_id"] for t in res.kept] == [f"f0{i}" for i in range(1, 8)]
    assert len(res.dropped) == 5
    for t, v in res.dropped:
        assert [r.split(":")[0] for r in v.reasons] == t.meta["expected_reasons"]


def test_filter_partition_and_determinism(judge):
    ts = [Triplet.from_dict(r) for r in read_jsonl(data_path("filter_corpus.jsonl"))]
    a = filter_corpus(ts, judge)
    b = filter_corpus(ts, judge, jobs=4)
    assert len(a.kept) + len(a.dropped) == len(ts) == len(a.verdicts)
    assert [v.to_dict() for v in a.verdicts] == [v.to_dict() for v in b.verdicts]
    assert [t.meta["case_id"] for t in a.kept] == [t.meta["case_id"] for t in b.kept]
    for t, v in zip(ts, a.verdicts):
        assert v.kept == (t in a.kept)
    assert filter_corpus([], judge).verdicts == []
    with pytest.raises(ValueError):
        filter_corpus(ts, judge, jobs=0)


def test_verdict_round_trip():
    v = FilterVerdict(True, False, True, ("visual_dependency",))
    assert FilterVerdict.from_dict(v.to_dict()) == v
    with pytest.raises(ValueError):
        FilterVerdict.from_dict({**v.to_dict(), "kept": True})
