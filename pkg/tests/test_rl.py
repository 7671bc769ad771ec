import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from seqgen.decoding import generate
from seqgen.nn import gradient_check
from seqgen.rl import (
    Episode,
    FifoBuffer,
    PolicyNet,
    PolicyStrategy,
    PpoConfig,
    Transition,
    ValueNet,
    clipped_surrogate,
    compute_advantages,
    edit_distance,
    evaluate_policy,
    ppo_loss,
    rollout,
    rollout_batch,
    step_reward,
    train_policy,
    uniform_baseline_reward,
)

seqs = st.lists(st.integers(0, 3), max_size=7).map(tuple)


def reference_edit_distance(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        reference_edit_distance(a[1:], b) + 1,
        reference_edit_distance(a, b[1:]) + 1,
        reference_edit_distance(a[1:], b[1:]) + (a[0] != b[0]),
    )


class OracleModel:
    """Masked-model stub whose greedy prediction at every position is the reference symbol."""

    def __init__(self, vocab, references, d_model=4):
        self.vocab = vocab
        self.refs = {tuple(X): tuple(Y) for X, Y in references}
        self.d_model = d_model
        self.max_length = 10

    def pair_outputs(self, pairs):
        out = []
        for X, Y in pairs:
            ref = self.refs[tuple(X)]
            rows = np.zeros((len(Y), self.vocab.size))
            rows[np.arange(len(Y)), list(ref)] = 1.0
            g = torch.Generator().manual_seed(len(Y) + sum(y for y in Y))
            out.append((rows, torch.randn(len(Y), self.d_model, generator=g)))
        return out


def episode_from_rewards(rewards, values):
    trs = [Transition(torch.zeros(1, 2), (), torch.zeros(0, 2), (0,), 0, 0.0, v, r) for r, v in zip(rewards, values)]
    return Episode((), (), trs, [], 0.9)


class TestEditDistance:
    def test_identical(self):
        assert edit_distance((1, 2, 3), (1, 2, 3)) == 0

    def test_deletion(self):
        assert edit_distance((1, 2, 3), (1, 3)) == 1

    def test_all_mask(self):
        assert edit_distance((9,) * 5, (1, 2, 3, 4, 5)) == 5

    @given(seqs, seqs)
    def test_matches_recursive_definition(self, a, b):
        assert edit_distance(a, b) == reference_edit_distance(a, b)

    @given(seqs, seqs, seqs)
    def test_metric(self, a, b, c):
        assert edit_distance(a, b) == edit_distance(b, a)
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


class TestStepReward:
    def test_correct_fill(self):
        assert step_reward((9, 9, 9), (1, 9, 9), (1, 2, 3)) == 1

    def test_correct_to_wrong(self):
        assert step_reward((1, 2, 3), (1, 5, 3), (1, 2, 3)) == -1

    def test_wrong_to_other_wrong(self):
        assert step_reward((1, 4, 3), (1, 5, 3), (1, 2, 3)) == 0


class TestRollout:
    def test_perfect_model_left_to_right(self, tiny):
        pairs = tiny.test[:4]
        model = OracleModel(tiny.vocab, pairs)
        policy, value = PolicyNet(4, 8), ValueNet(4)
        for X, Y in pairs:
            ep = rollout(policy, value, model, X, Y, PpoConfig(), np.random.default_rng(0), greedy=True)
            assert ep.actions == list(range(len(Y)))
            assert ep.total_reward == len(Y)
            assert all(tr.reward == 1 for tr in ep.transitions)

    def test_telescoping_and_return(self, tiny):
        torch.manual_seed(0)
        policy, value = PolicyNet(tiny.model.d_model, 16), ValueNet(tiny.model.d_model)
        eps = rollout_batch(policy, value, tiny.model, tiny.test[:10], PpoConfig(gamma=1.0), np.random.default_rng(1))
        for ep in eps:
            L = len(ep.reference)
            assert ep.telescopes()
            assert len(ep.transitions) == L and sorted(ep.actions) == list(range(L))
            assert ep.transitions[0].ret == L - edit_distance(ep.sequences[-1], ep.reference)

    def test_seeded_reproducible(self, tiny):
        policy, value = PolicyNet(tiny.model.d_model, 16), ValueNet(tiny.model.d_model)
        a = rollout_batch(policy, value, tiny.model, tiny.test[:5], PpoConfig(), np.random.default_rng(3))
        b = rollout_batch(policy, value, tiny.model, tiny.test[:5], PpoConfig(), np.random.default_rng(3))
        assert [e.actions for e in a] == [e.actions for e in b]
        assert [e.sequences for e in a] == [e.sequences for e in b]

    def test_batched_equals_single(self, tiny):
        torch.manual_seed(2)
        policy, value = PolicyNet(tiny.model.d_model, 16), ValueNet(tiny.model.d_model)
        torch.nn.init.normal_(policy.fc2.weight)
        batched = rollout_batch(policy, value, tiny.model, tiny.test[:4], PpoConfig(), None, greedy=True)
        for ep, (X, Y) in zip(batched, tiny.test[:4]):
            assert ep.actions == rollout(policy, value, tiny.model, X, Y, PpoConfig(), None, greedy=True).actions


class TestPolicy:
    def test_untrained_policy_uniform(self):
        policy = PolicyNet(6, 8)
        H = torch.randn(1, 5, 6)
        elig = torch.tensor([[True, True, False, True, False]])
        p = policy.log_probs(H, policy.history(torch.zeros(1, 1, dtype=torch.long), torch.zeros(1, 1, 6), torch.zeros(1, dtype=torch.long)), elig).exp()
        np.testing.assert_allclose(p[0].detach().numpy(), [1 / 3, 1 / 3, 0, 1 / 3, 0], atol=1e-7)

    def test_single_eligible(self):
        torch.manual_seed(0)
        policy = PolicyNet(6, 8)
        torch.nn.init.normal_(policy.fc2.weight)
        elig = torch.tensor([[False, False, True]])
        p = policy.log_probs(torch.randn(1, 3, 6), torch.zeros(1, 6), elig).exp()
        np.testing.assert_allclose(p[0].detach().numpy(), [0, 0, 1])

    def test_log_prob_gradient(self):
        torch.manual_seed(1)
        policy = PolicyNet(5, 7).double()
        torch.nn.init.normal_(policy.fc2.weight)
        H = torch.randn(1, 4, 5, dtype=torch.float64)
        elig = torch.ones(1, 4, dtype=torch.bool)
        loss = lambda: policy.log_probs(H, torch.zeros(1, 5, dtype=torch.float64), elig)[0, 2]
        assert gradient_check(loss, list(policy.parameters())) < 1e-3

    def test_history_summary_mean(self):
        policy = PolicyNet(3, 4, k=2, max_steps=5)
        steps = torch.tensor([[1, 3]])
        hidden = torch.randn(1, 2, 3)
        got = policy.history(steps, hidden, torch.tensor([2]))
        want = (policy.history.step.weight[[1, 3]] + hidden[0]).mean(0)
        np.testing.assert_allclose(got[0].detach().numpy(), want.detach().numpy(), atol=1e-7)
        one = policy.history(steps, hidden, torch.tensor([1]))
        np.testing.assert_allclose(one[0].detach().numpy(), (policy.history.step.weight[1] + hidden[0, 0]).detach().numpy(), atol=1e-7)

    def test_history_zero_when_k_zero(self):
        policy = PolicyNet(3, 4, k=0)
        out = policy.history(torch.zeros(2, 1, dtype=torch.long), torch.randn(2, 1, 3), torch.ones(2, dtype=torch.long))
        assert torch.equal(out, torch.zeros(2, 3))


class TestAdvantages:
    def test_discounted_returns(self):
        ep = episode_from_rewards([1, 1, 1], [0, 0, 0])
        G, A = compute_advantages(ep, 0.9)
        np.testing.assert_allclose(G, [2.71, 1.9, 1.0])
        np.testing.assert_allclose(A, G)

    def test_gamma_zero(self):
        G, _ = compute_advantages(episode_from_rewards([3, -1, 2], [0, 0, 0]), 0.0)
        assert G == [3, -1, 2]

    def test_zero_rewards(self):
        _, A = compute_advantages(episode_from_rewards([0, 0], [0.5, -0.25]), 0.9)
        assert A == [-0.5, 0.25]

    def test_gae_lambda_one_is_monte_carlo(self):
        rewards, values = [1, 0, 2, -1], [0.3, -0.2, 0.7, 0.1]
        _, mc = compute_advantages(episode_from_rewards(rewards, values), 0.9)
        _, gae = compute_advantages(episode_from_rewards(rewards, values), 0.9, gae_lambda=1.0)
        np.testing.assert_allclose(gae, mc, atol=1e-12)


class TestClippedSurrogate:
    def test_clip_arithmetic(self):
        out = clipped_surrogate(torch.tensor([1.5, 0.5]), torch.tensor([1.0, -1.0]), 0.2)
        np.testing.assert_allclose(out.numpy(), [1.2, -0.8], atol=1e-7)

    def test_unit_ratio(self):
        A = torch.tensor([0.3, -1.2, 2.0])
        assert torch.equal(clipped_surrogate(torch.ones(3), A, 0.2), A)


class TestPpoLoss:
    def test_on_policy_ratio_is_one(self, tiny):
        torch.manual_seed(0)
        cfg = PpoConfig(normalize_advantages=False, history_k=2)
        policy = PolicyNet(tiny.model.d_model, 16, k=2, max_steps=tiny.model.max_length)
        torch.nn.init.normal_(policy.fc2.weight, std=0.5)
        value = ValueNet(tiny.model.d_model)
        eps = rollout_batch(policy, value, tiny.model, tiny.test[:6], cfg, np.random.default_rng(0))
        batch = [tr for ep in eps for tr in ep.transitions]
        stats = ppo_loss(batch, policy, value, cfg)
        assert stats.clip_fraction == 0.0
        assert stats.policy_loss == pytest.approx(-np.mean([tr.advantage for tr in batch]), abs=1e-5)
        value_mse = np.mean([(tr.value - tr.ret) ** 2 for tr in batch])
        assert stats.value_loss == pytest.approx(value_mse, rel=1e-4)


class TestFifoBuffer:
    def test_capacity_and_order(self):
        buf = FifoBuffer(3)
        buf.extend("abcde")
        assert len(buf) == 3
        assert buf.items() == ["c", "d", "e"]
        assert buf.sequence_numbers == [2, 3, 4]

    @given(st.integers(1, 20), st.lists(st.integers(), max_size=60))
    def test_never_exceeds_capacity(self, cap, items):
        buf = FifoBuffer(cap)
        for x in items:
            buf.add(x)
            assert len(buf) <= cap
            nums = buf.sequence_numbers
            assert nums == list(range(nums[0], nums[0] + len(nums)))

    def test_sample_subset(self):
        buf = FifoBuffer(10)
        buf.extend(range(10))
        s = buf.sample(4, np.random.default_rng(0))
        assert len(set(s)) == 4 and set(s) <= set(range(10))

    def test_invalid_capacity(self):
        with pytest.raises(ValueError):
            FifoBuffer(0)


class TestPpoConfig:
    @pytest.mark.parametrize("kwargs", [{"clip_epsilon": 0.0}, {"clip_epsilon": 1.0}, {"gamma": 1.5}, {"history_k": -1}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            PpoConfig(**kwargs)


class TestTraining:
    def test_zero_learning_rate_leaves_parameters(self, tiny):
        cfg = PpoConfig(iterations=3, generation_batch=4, update_batch=16, lr=0.0)
        torch.manual_seed(cfg.seed)
        fresh = PolicyNet(tiny.model.d_model, cfg.hidden, cfg.history_k, tiny.model.max_length)
        policy, _, log = train_policy(tiny.model, tiny.train, cfg)
        for a, b in zip(fresh.parameters(), policy.parameters()):
            assert torch.equal(a, b)
        assert len(log.rows) == 3

    def test_log_and_hooks(self, tiny, tmp_path):
        seen = []
        cfg = PpoConfig(iterations=4, generation_batch=4, update_batch=16, epochs=2, history_k=3, gamma=1.0)
        policy, value, log = train_policy(tiny.model, tiny.train, cfg, episode_hook=seen.append)
        assert len(seen) == 16 and all(ep.telescopes() for ep in seen)
        log.write_csv(tmp_path / "log.csv")
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["iteration", "mean_reward", "value_loss", "policy_loss", "clip_fraction"]
        assert len(rows) == 4
        assert math.isfinite(evaluate_policy(policy, value, tiny.model, tiny.test[:5], cfg))

    def test_empty_corpus(self, tiny):
        with pytest.raises(ValueError):
            train_policy(tiny.model, [], PpoConfig(iterations=1))

    def test_uniform_baseline_finite(self, tiny):
        r = uniform_baseline_reward(tiny.model, tiny.test[:8], PpoConfig())
        assert 0 <= r <= max(len(Y) for _, Y in tiny.test[:8])


class TestPolicyStrategy:
    @pytest.mark.parametrize("k", [0, 3])
    def test_decode_matches_greedy_rollout(self, tiny, k):
        torch.manual_seed(5)
        policy = PolicyNet(tiny.model.d_model, 16, k=k, max_steps=tiny.model.max_length)
        torch.nn.init.normal_(policy.fc2.weight)
        torch.nn.init.normal_(policy.history.step.weight)
        value = ValueNet(tiny.model.d_model)
        strat = PolicyStrategy(policy, tiny.model)
        for X, Y in tiny.test[:4]:
            ep = rollout(policy, value, tiny.model, X, Y, PpoConfig(history_k=k), None, greedy=True)
            tr = generate(tiny.model, strat, X, len(Y))
            assert [s.positions[0] for s in tr.steps] == ep.actions
            assert tr.final == ep.sequences[-1]

    def test_save_load(self, tiny, tmp_path):
        torch.manual_seed(6)
        policy = PolicyNet(tiny.model.d_model, 16, k=2, max_steps=tiny.model.max_length)
        torch.nn.init.normal_(policy.fc2.weight)
        PolicyStrategy(policy, tiny.model).save(tmp_path / "p.npz", PpoConfig())
        back = PolicyStrategy.load(tmp_path / "p.npz", tiny.model)
        for a, b in zip(policy.state_dict().values(), back.policy.state_dict().values()):
            assert torch.equal(a, b)
        X, Y = tiny.test[0]
        assert generate(tiny.model, back, X, len(Y)) == generate(tiny.model, PolicyStrategy(policy, tiny.model), X, len(Y))
