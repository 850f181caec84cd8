import itertools
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathforge.errors import JudgeFailed, JudgeOutOfRange, NotWellFormed, ValidationError
from pathforge.prompts import JudgeKind, build_judge_prompt
from pathforge.rewards import (
    EntityExtractor,
    EntitySet,
    RewardBreakdown,
    RewardModel,
    StructuredResponse,
    extract_reward_entities,
    parse_structured,
    reward_entity,
    reward_format,
    reward_semantic,
    soft_dice,
    soft_dice_terms,
    total_reward,
)
from pathforge.services import LlmClient, MockEmbedder, Role, prompt_key

from helpers import soft_dice_oracle

CANONICAL = "<observe>Solid sheets.</observe>\n<think>Keratin pearls point to squamous.</think>\n<answer>Squamous cell carcinoma</answer>"
BLOCKS = {
    "observe": "<observe>Solid sheets.</observe>",
    "think": "<think>Keratin pearls point to squamous.</think>",
    "answer": "<answer>Squamous cell carcinoma</answer>",
}


def _dice(pred, gt, sim, beta, eps=1e-8):
    return soft_dice(soft_dice_terms(pred, gt, lambda a, b: sim[(a, b)], beta), len(set(pred)), len(set(gt)), eps)


def test_worked_soft_dice_case():
    sim = {("c", "a"): 0.6, ("c", "b"): 0.8}
    value = _dice({"a", "c"}, {"a", "b"}, sim, 0.5)
    assert abs(value - 0.7) < 1e-8
    assert soft_dice_terms({"a", "c"}, {"a", "b"}, lambda a, b: sim[(a, b)], 0.5) == pytest.approx(1.4, abs=1e-15)


def _random_instance(rng):
    universe = list("abcdefghij")
    pred = set(rng.sample(universe, rng.randint(0, 6)))
    gt = set(rng.sample(universe, rng.randint(0, 6)))
    sim = {(p, g): rng.uniform(-0.3, 1.2) for p in universe for g in universe}
    return pred, gt, sim, rng.uniform(0.0, 1.0)


def test_soft_dice_matches_oracle():
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(1000):
        pred, gt, sim, beta = _random_instance(rng)
        got = _dice(pred, gt, sim, beta)
        want, _ = soft_dice_oracle(pred, gt, sim, beta)
        worst = max(worst, abs(got - want))
    assert worst < 1e-9


def test_soft_dice_bounds_without_clamp():
    rng = random.Random(5)
    for _ in range(1000):
        pred, gt, sim, _ = _random_instance(rng)
        beta = rng.uniform(0.0, 0.5)
        _, raw = soft_dice_oracle(pred, gt, sim, beta)
        assert 0.0 <= raw <= 1.0


def test_true_positive_never_decreases():
    rng = random.Random(6)
    for _ in range(500):
        pred, gt, sim, beta = _random_instance(rng)
        missing = sorted(gt - pred)
        if not missing:
            continue
        before = _dice(pred, gt, sim, beta)
        after = _dice(pred | {missing[0]}, gt, sim, beta)
        assert after >= before - 1e-12


def test_zero_similarity_spurious_strictly_decreases():
    rng = random.Random(7)
    checked = 0
    for _ in range(500):
        pred, gt, sim, _ = _random_instance(rng)
        beta = rng.uniform(0.0, 0.5)
        before = _dice(pred, gt, sim, beta)
        if before <= 0:
            continue
        sim = {**sim, **{("z", g): 0.0 for g in "abcdefghij"}}
        assert _dice(pred | {"z"}, gt, sim, beta) < before
        checked += 1
    assert checked > 100


def test_soft_dice_edge_cases():
    assert soft_dice(0, 0, 0) == 0.0
    with pytest.raises(ValidationError):
        soft_dice(1, 1, 1, epsilon=0)
    with pytest.raises(ValidationError):
        soft_dice_terms({"a"}, {"a"}, lambda a, b: 0.0, 1.5)


class _VectorTable:
    dimension = 3

    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}

    def embed(self, text):
        return self.table[text]


def test_reward_entity_with_embeddings():
    emb = _VectorTable({"a text": (1, 0, 0), "b text": (0, 1, 0), "c text": (0.6, 0.8, 0)})
    labels = {"a": "a text", "b": "b text", "c": "c text"}
    value = reward_entity(EntitySet.of({"a", "c"}, labels), EntitySet.of({"a", "b"}, labels), emb)
    assert abs(value - 0.7) < 1e-8
    assert reward_entity(EntitySet(), EntitySet.of({"a"}), emb) == 0.0
    assert reward_entity(EntitySet.of({"a"}), EntitySet(), emb) == 0.0


def test_canonical_response_is_well_formed():
    r = parse_structured(CANONICAL)
    assert reward_format(r) == 1
    assert (r.observe, r.think, r.answer) == ("Solid sheets.", "Keratin pearls point to squamous.", "Squamous cell carcinoma")
    assert r.render() == CANONICAL
    assert parse_structured(r.render()) == r
    assert reward_format(parse_structured("preamble " + CANONICAL + " trailing")) == 1


@pytest.mark.parametrize("tag", ["observe", "think", "answer"])
def test_deleting_a_tag_fails(tag):
    for piece in (f"<{tag}>", f"</{tag}>", BLOCKS[tag]):
        assert reward_format(parse_structured(CANONICAL.replace(piece, "", 1))) == 0


@pytest.mark.parametrize("tag", ["observe", "think", "answer"])
def test_duplicating_a_tag_fails(tag):
    assert reward_format(parse_structured(CANONICAL + "\n" + BLOCKS[tag])) == 0
    assert reward_format(parse_structured(CANONICAL.replace(f"<{tag}>", f"<{tag}><{tag}>", 1))) == 0


@pytest.mark.parametrize("order", [o for o in itertools.permutations(BLOCKS) if o != tuple(BLOCKS)])
def test_reordering_fails(order):
    assert reward_format(parse_structured("\n".join(BLOCKS[t] for t in order))) == 0


def test_empty_block_and_nesting_fail():
    assert reward_format(parse_structured(CANONICAL.replace("Solid sheets.", "  "))) == 0
    assert reward_format(parse_structured("<observe>a<think>b</think></observe><answer>c</answer>")) == 0


@given(st.text(alphabet="abc XYZ.,-", min_size=1, max_size=30).filter(str.strip), st.text(alphabet="abc XYZ.,-", min_size=1, max_size=30).filter(str.strip), st.text(alphabet="abc XYZ.,-", min_size=1, max_size=30).filter(str.strip))
def test_render_parse_round_trip(o, t, a):
    r = StructuredResponse(o.strip(), t.strip(), a.strip(), True)
    assert parse_structured(r.render()) == r


def test_semantic_mapping(judge):
    assert reward_semantic("Squamous cell carcinoma", "squamous cell carcinoma", judge) == 1.0
    for score in range(1, 6):
        key = prompt_key(build_judge_prompt(JudgeKind.ANSWER_SCORE, "x", "y"))
        j = LlmClient.mocked(Role.JUDGE, fixtures={key: f"Score: {score}"})
        assert reward_semantic("x", "y", j) == (score - 1) / 4
    with pytest.raises(ValidationError):
        reward_semantic("x", " ", judge)


def test_semantic_judge_failures():
    key = prompt_key(build_judge_prompt(JudgeKind.ANSWER_SCORE, "x", "y"))
    for reply in ("excellent", "7", "six"):
        with pytest.raises(JudgeOutOfRange):
            reward_semantic("x", "y", LlmClient.mocked(Role.JUDGE, fixtures={key: reply}))

    def down(*_):
        raise OSError("connection refused")

    dead = LlmClient(Role.JUDGE, endpoint="http://unused", transport=down, sleep=lambda s: None)
    with pytest.raises(JudgeFailed):
        reward_semantic("x", "y", dead)


def test_total_reward():
    b = total_reward(1, 0.75, 0.5, alpha=2.0)
    assert b.total == 2.75
    assert RewardBreakdown.from_dict(b.to_dict()) == b
    for bad in ((2, 0.5, 0.5), (1, 1.5, 0.5), (1, 0.5, -0.1)):
        with pytest.raises(ValidationError):
            total_reward(*bad)
    with pytest.raises(ValidationError):
        total_reward(1, 0.5, 0.5, alpha=-1)


def test_extractor_finds_graph_entities(carcinoma_graph, embedder):
    ex = EntityExtractor(carcinoma_graph, embedder)
    found = ex.extract("Tumor cells invading the basement membrane; favour squamous cell carcinoma.")
    assert {"tumor_cells", "basement_membrane", "squamous_cell_carcinoma", "invasion"} <= found.entries
    with pytest.raises(NotWellFormed):
        extract_reward_entities(parse_structured("<answer>x</answer>"), carcinoma_graph, embedder)


def test_reward_model_scores(carcinoma_graph, embedder, judge):
    model = RewardModel(carcinoma_graph, embedder, judge)
    gt = model.reference_entities(["basement_membrane", "invasion", "squamous_cell_carcinoma"])
    good = (
        "<observe>Invasion through the basement membrane.</observe>"
        "<think>Invasion is a key feature of squamous cell carcinoma.</think>"
        "<answer>Squamous cell carcinoma</answer>"
    )
    b = model.score(good, "Squamous cell carcinoma", gt)
    assert (b.r_format, b.r_semantic) == (1, 1.0)
    assert b.r_entity == pytest.approx(1.0, abs=1e-8)
    assert b.total == pytest.approx(3.0, abs=1e-8)
    bad = model.score("Squamous cell carcinoma", "Squamous cell carcinoma", gt)
    assert (bad.r_format, bad.r_entity) == (0, 0.0)
    from_chain = model.reference_entities(chain="Invasion of the basement membrane.")
    assert from_chain.entries == {"invasion", "basement_membrane"}
    assert model.reference_entities().entries == frozenset()


@given(st.integers(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 3))
def test_total_reward_range(fmt, sem, ent, alpha):
    assert 0.0 <= total_reward(fmt, sem, ent, alpha).total <= 2 + alpha
