"""Group-relative policy optimization, at sequence level, plus a toy softmax policy.

The toy policy picks one of K fixed candidate responses.  It is small enough
that every gradient can be checked against central differences, yet it runs
the same loss the full system optimizes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BadConfig, GroupTooSmall, NonFinite
from .rewards import RewardBreakdown

DEFAULT_LR = 0.1


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_coef: float = 0.03
    sigma_tol: float = 1e-8

    def __post_init__(self) -> None:
        if not isinstance(self.group_size, int) or self.group_size < 2:
            raise BadConfig(f"group_size must be an integer >= 2, got {self.group_size!r}")
        if not self.clip_eps > 0:
            raise BadConfig(f"clip_eps must be positive, got {self.clip_eps}")
        if not self.kl_coef >= 0:
            raise BadConfig(f"kl_coef must be nonnegative, got {self.kl_coef}")
        if not self.sigma_tol > 0:
            raise BadConfig(f"sigma_tol must be positive, got {self.sigma_tol}")


@dataclass(frozen=True)
class GroupSample:
    reward: float
    logp_new: float
    logp_old: float
    logp_ref: float

    def __post_init__(self) -> None:
        _finite(self.reward, self.logp_new, self.logp_old, self.logp_ref)


@dataclass(frozen=True)
class Group:
    samples: tuple[GroupSample, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)


def _finite(*xs: float) -> None:
    for x in xs:
        if not math.isfinite(x):
            raise NonFinite(f"non-finite input {x}")


def group_advantages(rewards: Sequence[float], sigma_tol: float = 1e-8) -> list[float]:
    """Standardize rewards within the group (population standard deviation).

    A group whose spread is below ``sigma_tol`` carries no preference signal
    and gets all-zero advantages.
    """
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {len(rewards)}")
    r = np.asarray(rewards, dtype=float)
    if not np.all(np.isfinite(r)):
        raise NonFinite("rewards must be finite")
    sigma = float(r.std())
    if sigma < sigma_tol:
        return [0.0] * len(r)
    return ((r - r.mean()) / sigma).tolist()


def clipped_surrogate(logp_new: float, logp_old: float, advantage: float, clip_eps: float) -> float:
    _finite(logp_new, logp_old, advantage)
    r = math.exp(logp_new - logp_old)
    clipped = min(max(r, 1.0 - clip_eps), 1.0 + clip_eps)
    return min(r * advantage, clipped * advantage)


def kl_penalty(logp_new: float, logp_ref: float) -> float:
    """Per-sample KL estimate ``exp(d) - d - 1`` with ``d = logp_ref - logp_new``."""
    _finite(logp_new, logp_ref)
    d = logp_ref - logp_new
    return math.expm1(d) - d


def grpo_loss(group: Group, config: GrpoConfig) -> float:
    if len(group) != config.group_size:
        raise GroupTooSmall(f"group has {len(group)} samples, config expects {config.group_size}")
    adv = group_advantages([s.reward for s in group.samples], config.sigma_tol)
    g = len(group)
    surr = sum(clipped_surrogate(s.logp_new, s.logp_old, a, config.clip_eps) for s, a in zip(group.samples, adv)) / g
    kl = sum(kl_penalty(s.logp_new, s.logp_ref) for s in group.samples) / g
    return -(surr - config.kl_coef * kl)


# ---------------------------------------------------------------------------
# toy softmax policy
# ---------------------------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - math.log(float(np.exp(z).sum()))


@dataclass(frozen=True)
class ToyBatch:
    """One sampled group for the toy policy: which candidates, their rewards and frozen log-probs."""

    actions: np.ndarray
    rewards: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray

    def group(self, logits: np.ndarray) -> Group:
        lp = log_softmax(logits)[self.actions]
        return Group(
            tuple(
                GroupSample(float(r), float(n), float(o), float(f))
                for r, n, o, f in zip(self.rewards, lp, self.logp_old, self.logp_ref)
            )
        )


def toy_loss(logits: np.ndarray, batch: ToyBatch, config: GrpoConfig) -> float:
    return grpo_loss(batch.group(logits), config)


def toy_loss_grad(logits: np.ndarray, batch: ToyBatch, config: GrpoConfig) -> np.ndarray:
    """Analytic gradient of :func:`toy_loss` with respect to the logits."""
    logits = np.asarray(logits, dtype=float)
    k = logits.shape[0]
    lp_all = log_softmax(logits)
    probs = np.exp(lp_all)
    adv = group_advantages(batch.rewards.tolist(), config.sigma_tol)
    g = len(batch.actions)
    grad = np.zeros(k)
    for a, A, lo, lr in zip(batch.actions, adv, batch.logp_old, batch.logp_ref):
        dlogp = -probs.copy()
        dlogp[a] += 1.0
        lp = lp_all[a]
        ratio = math.exp(lp - lo)
        lo_clip, hi_clip = 1.0 - config.clip_eps, 1.0 + config.clip_eps
        clipped = min(max(ratio, lo_clip), hi_clip)
        # the unclipped branch is the active one of the min unless the ratio
        # sits outside the trust region on the side the advantage favours
        if ratio * A <= clipped * A or lo_clip <= ratio <= hi_clip:
            dsurr = A * ratio
        else:
            dsurr = 0.0
        dkl = 1.0 - math.exp(lr - lp)
        grad += (-dsurr + config.kl_coef * dkl) * dlogp / g
    return grad


def finite_difference_check(
    loss_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    params: np.ndarray,
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Largest relative disagreement between ``grad_fn`` and central differences.

    Relative error per coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    params = np.asarray(params, dtype=float)
    analytic = np.asarray(grad_fn(params), dtype=float)
    worst = 0.0
    for i in range(params.size):
        e = np.zeros_like(params)
        e.flat[i] = h
        numeric = (loss_fn(params + e) - loss_fn(params - e)) / (2 * h)
        a = float(analytic.flat[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst


def toy_fd_configuration(
    seed: int,
    k: int = 4,
    config: GrpoConfig | None = None,
    h: float = 1e-5,
    spread: float = 0.3,
) -> tuple[np.ndarray, ToyBatch]:
    """Random logits and sampled group whose ratios keep clear of the clip kinks.

    Candidate points are redrawn until every ratio sits at least ``10 * h``
    (in ratio space, with a safety factor for the probe step) from
    ``1 +/- clip_eps``.
    """
    config = config or GrpoConfig()
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        old = rng.normal(size=k)
        logits = old + rng.normal(scale=spread, size=k)
        ref = rng.normal(size=k)
        probs_old = np.exp(log_softmax(old))
        actions = rng.choice(k, size=config.group_size, p=probs_old)
        rewards = rng.uniform(0.0, 3.0, size=config.group_size)
        lo = log_softmax(old)[actions]
        ratios = np.exp(log_softmax(logits)[actions] - lo)
        margin = 10 * h * 4
        if np.all(np.abs(ratios - (1 - config.clip_eps)) > margin) and np.all(np.abs(ratios - (1 + config.clip_eps)) > margin):
            return logits, ToyBatch(actions, rewards, lo, log_softmax(ref)[actions])
    raise RuntimeError("could not find a configuration away from the clip kinks")


# ---------------------------------------------------------------------------
# toy training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateEnv:
    """K fixed candidate responses, each with a precomputed reward breakdown."""

    breakdowns: tuple[RewardBreakdown, ...]
    responses: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "breakdowns", tuple(self.breakdowns))
        if len(self.breakdowns) < 2:
            raise BadConfig("the candidate task needs at least two candidates")

    @property
    def rewards(self) -> np.ndarray:
        return np.array([b.total for b in self.breakdowns])

    @property
    def k(self) -> int:
        return len(self.breakdowns)


@dataclass
class TrainRecord:
    iteration: int
    mean_reward: float
    expected_reward: float
    loss: float
    kl: float


@dataclass
class Trajectory:
    records: list[TrainRecord] = field(default_factory=list)
    final_logits: np.ndarray | None = None

    @property
    def mean_rewards(self) -> list[float]:
        return [r.mean_reward for r in self.records]

    @property
    def final_expected_reward(self) -> float:
        return self.records[-1].expected_reward

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "mean_reward", "expected_reward", "loss", "kl"])
        for r in self.records:
            w.writerow([r.iteration, repr(r.mean_reward), repr(r.expected_reward), repr(r.loss), repr(r.kl)])
        return buf.getvalue()


def run_toy_training(
    env: CandidateEnv,
    config: GrpoConfig | None = None,
    iters: int = 200,
    seed: int = 7,
    lr: float = DEFAULT_LR,
) -> Trajectory:
    """Train a softmax policy over ``env``'s candidates with one GRPO step per iteration.

    Each iteration snapshots the old policy, samples a group from it, and
    takes one plain gradient step on the GRPO loss.  The reference policy is
    the initial uniform one.  ``expected_reward`` in each record is the
    policy's mean reward after the step.
    """
    config = config or GrpoConfig()
    if iters < 1:
        raise BadConfig("iters must be >= 1")
    if not lr > 0:
        raise BadConfig("learning rate must be positive")
    rng = np.random.default_rng(seed)
    rewards = env.rewards
    logits = np.zeros(env.k)
    ref_lp = log_softmax(logits.copy())
    traj = Trajectory()
    for it in range(1, iters + 1):
        old = logits.copy()
        old_lp = log_softmax(old)
        actions = rng.choice(env.k, size=config.group_size, p=np.exp(old_lp))
        batch = ToyBatch(actions, rewards[actions], old_lp[actions], ref_lp[actions])
        group = batch.group(logits)
        loss = grpo_loss(group, config)
        kl = sum(kl_penalty(s.logp_new, s.logp_ref) for s in group.samples) / len(group)
        logits = logits - lr * toy_loss_grad(logits, batch, config)
        expected = float(np.exp(log_softmax(logits)) @ rewards)
        traj.records.append(TrainRecord(it, float(batch.rewards.mean()), expected, loss, kl))
    traj.final_logits = logits
    return traj


def demo_env() -> CandidateEnv:
    """Three-candidate task with totals 0.2, 1.0 and 2.4 (alpha = 1)."""
    from .rewards import total_reward

    return CandidateEnv(
        (
            total_reward(0, 0.0, 0.2, 1.0),
            total_reward(1, 0.0, 0.0, 1.0),
            total_reward(1, 0.75, 0.65, 1.0),
        )
    )
