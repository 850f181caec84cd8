import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathforge.errors import BadConfig, GroupTooSmall, NonFinite
from pathforge.grpo import (
    CandidateEnv,
    GrpoConfig,
    Group,
    GroupSample,
    clipped_surrogate,
    demo_env,
    finite_difference_check,
    group_advantages,
    grpo_loss,
    kl_penalty,
    run_toy_training,
    toy_fd_configuration,
    toy_loss,
    toy_loss_grad,
)
from pathforge.rewards import total_reward

from conftest import GOLDEN
from helpers import population_std

finite_rewards = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=16)


def test_advantage_hand_case():
    adv = group_advantages([0, 1, 2])
    assert adv == pytest.approx([-1.224745, 0.0, 1.224745], abs=1e-6)
    assert population_std([0, 1, 2]) == pytest.approx(math.sqrt(2 / 3))


@given(finite_rewards)
def test_advantages_standardized(rs):
    adv = group_advantages(rs)
    if population_std(rs) < 1e-7:
        return
    assert abs(sum(adv)) < 1e-9
    assert population_std(adv) ** 2 == pytest.approx(1.0, abs=1e-6)


@given(finite_rewards, st.floats(0.1, 10), st.floats(-10, 10))
def test_advantages_affine_invariant(rs, a, b):
    if population_std(rs) < 1e-3:
        return
    assert group_advantages([a * r + b for r in rs]) == pytest.approx(group_advantages(rs), abs=1e-6)


@given(finite_rewards, st.randoms())
def test_advantages_permutation_equivariant(rs, rnd):
    idx = list(range(len(rs)))
    rnd.shuffle(idx)
    adv = group_advantages(rs)
    assert group_advantages([rs[i] for i in idx]) == pytest.approx([adv[i] for i in idx], abs=1e-9)


def test_degenerate_group():
    assert group_advantages([0.7] * 8) == [0.0] * 8
    assert group_advantages([1.0, 1.0 + 1e-12]) == [0.0, 0.0]
    with pytest.raises(GroupTooSmall):
        group_advantages([1.0])
    with pytest.raises(NonFinite):
        group_advantages([1.0, float("nan")])


def test_clipped_surrogate_hand_cases():
    assert clipped_surrogate(math.log(1.5), 0.0, 1.0, 0.2) == 1.2
    assert clipped_surrogate(math.log(0.5), 0.0, -1.0, 0.2) == -0.8
    assert clipped_surrogate(0.0, 0.0, 2.0, 0.2) == 2.0
    with pytest.raises(NonFinite):
        clipped_surrogate(float("inf"), 0.0, 1.0, 0.2)


def test_kl_hand_values():
    assert kl_penalty(0.0, math.log(2)) == pytest.approx(0.306853, abs=1e-6)
    assert kl_penalty(0.0, -math.log(2)) == pytest.approx(0.193147, abs=1e-6)
    assert kl_penalty(-1.3, -1.3) == 0.0


@given(st.floats(-20, 5), st.floats(-20, 5))
def test_kl_nonnegative(a, b):
    assert kl_penalty(a, b) >= 0.0


def _group(rewards, logp=0.0):
    return Group([GroupSample(r, logp, logp, logp) for r in rewards])


def test_loss_at_reference_point():
    cfg = GrpoConfig(group_size=3)
    # ratio 1, KL 0, advantages sum to 0
    assert grpo_loss(_group([0, 1, 2]), cfg) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(GroupTooSmall):
        grpo_loss(_group([0, 1]), cfg)


def test_loss_hand_case():
    cfg = GrpoConfig(group_size=2, clip_eps=0.2, kl_coef=0.5)
    g = Group([GroupSample(1.0, math.log(1.5), 0.0, 0.0), GroupSample(0.0, 0.0, 0.0, 0.0)])
    # advantages +1/-1; surrogates 1.2 and -1; KL of first sample = exp(-ln1.5)+ln1.5-1
    kl0 = 1 / 1.5 + math.log(1.5) - 1
    want = -((1.2 - 1.0) / 2 - 0.5 * kl0 / 2)
    assert grpo_loss(g, cfg) == pytest.approx(want, abs=1e-12)


def test_config_validation():
    for bad in ({"group_size": 1}, {"clip_eps": 0}, {"kl_coef": -0.1}, {"sigma_tol": 0}):
        with pytest.raises(BadConfig):
            GrpoConfig(**bad)
    with pytest.raises(NonFinite):
        GroupSample(float("nan"), 0, 0, 0)
    with pytest.raises(BadConfig):
        run_toy_training(demo_env(), iters=0)


def test_finite_differences_fifty_configurations():
    t0 = time.perf_counter()
    cfg = GrpoConfig()
    worst = 0.0
    for seed in range(50):
        logits, batch = toy_fd_configuration(seed, config=cfg)
        err = finite_difference_check(lambda x: toy_loss(x, batch, cfg), lambda x: toy_loss_grad(x, batch, cfg), logits, h=1e-5)
        worst = max(worst, err)
    assert worst < 1e-4
    assert time.perf_counter() - t0 < 10


def test_finite_difference_check_catches_wrong_gradient():
    cfg = GrpoConfig()
    logits, batch = toy_fd_configuration(3, config=cfg)
    err = finite_difference_check(lambda x: toy_loss(x, batch, cfg), lambda x: 2 * toy_loss_grad(x, batch, cfg) + 0.1, logits)
    assert err > 1e-2


def test_zero_variance_environment_is_a_fixed_point():
    env = CandidateEnv((total_reward(1, 0.5, 0.5),) * 3)
    traj = run_toy_training(env, GrpoConfig(kl_coef=0.0), iters=20)
    assert np.array_equal(traj.final_logits, np.zeros(3))
    assert all(r.loss == 0.0 for r in traj.records)


def test_training_reaches_best_candidate():
    t0 = time.perf_counter()
    env = demo_env()
    best = float(env.rewards.max())
    traj = run_toy_training(env, GrpoConfig(), iters=200, seed=7)
    assert len(traj.records) == 200
    assert traj.final_expected_reward >= 0.95 * best
    assert time.perf_counter() - t0 < 30


def test_training_seed_reproducible_and_golden():
    a = run_toy_training(demo_env(), seed=7).to_csv()
    b = run_toy_training(demo_env(), seed=7).to_csv()
    assert a == b
    assert a == (GOLDEN / "grpo_seed7.csv").read_text()
    assert run_toy_training(demo_env(), seed=8).to_csv() != a


def test_demo_env_totals():
    assert demo_env().rewards.tolist() == pytest.approx([0.2, 1.0, 2.4])


@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(0.01, 0.9))
def test_clipped_surrogate_dominated_by_unclipped(log_ratio, adv, eps):
    assert clipped_surrogate(log_ratio, 0.0, adv, eps) <= math.exp(log_ratio) * adv + 1e-12


@given(st.lists(st.tuples(st.floats(0, 3), st.floats(-2, 0), st.floats(-2, 0), st.floats(-2, 0)), min_size=4, max_size=4), st.randoms())
def test_loss_permutation_invariant(rows, rnd):
    cfg = GrpoConfig(group_size=4)
    samples = [GroupSample(*r) for r in rows]
    shuffled = list(samples)
    rnd.shuffle(shuffled)
    assert grpo_loss(Group(shuffled), cfg) == pytest.approx(grpo_loss(Group(samples), cfg), abs=1e-12)


def test_gradient_vanishes_at_stationary_points():
    from pathforge.grpo import ToyBatch, log_softmax

    logits = np.array([0.3, -0.2, 0.1])
    lp = log_softmax(logits)
    actions = np.array([0, 1, 2, 0, 1, 2, 0, 1])
    # equal rewards: no advantage signal; policy equals reference: KL term stationary
    batch = ToyBatch(actions, np.full(8, 1.5), lp[actions], lp[actions])
    assert np.allclose(toy_loss_grad(logits, batch, GrpoConfig(kl_coef=0.0)), 0.0, atol=1e-15)
    assert np.allclose(toy_loss_grad(logits, batch, GrpoConfig(kl_coef=0.03)), 0.0, atol=1e-15)


@given(st.floats(-10, 2), st.floats(-10, 2))
def test_kl_zero_only_at_reference(a, b):
    assert (kl_penalty(a, b) == 0.0) == (a == b) or abs(a - b) < 1e-7
