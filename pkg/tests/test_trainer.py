import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesy_shortcuts.combinatorics import DetOpt, enumerate_detopts, identity
from nesy_shortcuts.knowledge import all_bitvecs, parse_task, with_pins
from nesy_shortcuts.trainer import (
    MLP,
    NonFinite,
    NoPins,
    TrainConfig,
    analytic_gradient,
    concept_table,
    encoder_dist,
    extract_map,
    gradient_check,
    init_params,
    label_prob,
    loss_concept,
    loss_likelihood,
    loss_reconstruction,
    nll_from_table,
    total_loss,
    train,
)

from conftest import XOR_TEXT


def sharp_mlp(mapping, k, a=30.0, b=40.0):
    """Encoder whose output is (numerically) the det-opt ``mapping``.

    Hidden unit ``v`` saturates at +1 only on input ``v``; the output layer
    then writes the bits of ``mapping[v]`` as logits of size ``b``.
    """
    V = all_bitvecs(k).astype(float)
    S = 2 * V - 1
    W1 = a * S.T
    b1 = -a * (V.sum(1) - 0.5)  # pre-activation = a/2 on match, <= -a/2 otherwise
    T = 2 * V[list(mapping)] - 1  # target signs, one row per hidden unit
    W2 = (b / 2) * T
    b2 = (b / 2) * T.sum(0)
    return MLP(W1, b1, W2, b2)


def constant_mlp(k, logits, hidden=4):
    return MLP(np.zeros((k, hidden)), np.zeros(hidden), np.zeros((hidden, k)), np.asarray(logits, float))


def random_mlp(rng, k, hidden=8, scale=1.5):
    return MLP.init(rng, k, hidden, k, scale)


class TestEncoderDist:
    def test_uniform(self):
        d = encoder_dist(constant_mlp(3, [0, 0, 0]), (1, 0, 1))
        np.testing.assert_allclose(d, np.full(8, 1 / 8), rtol=0, atol=1e-15)

    def test_concentrates(self):
        d = encoder_dist(constant_mlp(3, [40, -40, -40]), (0, 0, 0))
        assert d.argmax() == 0b100
        assert d[0b100] > 1 - 1e-15

    def test_sharp_mlp_realizes_mapping(self):
        m = (3, 3, 5, 0, 6, 1, 2, 7)
        P = concept_table(sharp_mlp(m, 3), 3)
        assert extract_map(P, 3).mapping == m
        assert P.max(1).min() > 1 - 1e-12


class TestLabelProb:
    def test_uniform_xor(self, xor_task):
        d = np.full(8, 1 / 8)
        assert label_prob(xor_task, d, (0,)) == pytest.approx(0.5, abs=1e-15)

    def test_point_mass(self, xor_task):
        d = np.zeros(8)
        d[0] = 1.0
        assert label_prob(xor_task, d, (0,)) == 1.0
        assert label_prob(xor_task, d, (1,)) == 0.0

    def test_unachievable_label(self):
        t = parse_task("concepts 1\nlabels 1\nknowledge y1\n")
        assert label_prob(t, np.array([0.3, 0.7]), (0,)) == 0.0


class TestLikelihood:
    def test_detopt_encoder_is_optimal(self, xor_task):
        m = (3, 1, 1, 0, 2, 5, 6, 7)  # admissible shortcut
        assert DetOpt(3, m).is_admissible(xor_task)
        assert loss_likelihood(sharp_mlp(m, 3), xor_task) < 1e-12

    def test_uniform(self, xor_task):
        assert loss_likelihood(constant_mlp(3, [0, 0, 0]), xor_task) == pytest.approx(8 * math.log(2), rel=1e-12)

    def test_mixture_inside_sets_is_exactly_zero(self, xor_task):
        rng = np.random.default_rng(0)
        P = np.zeros((8, 8))
        for g in range(8):
            members = [c for c in range(8) if xor_task.label_index[c] == xor_task.label_index[g]]
            P[g, members] = rng.dirichlet(np.ones(4))
        assert nll_from_table(xor_task, P) == 0.0


class TestReconstruction:
    def test_perfect_inverse(self, xor_task):
        m = (3, 5, 6, 0, 1, 2, 4, 7)
        inverse = [0] * 8
        for g, c in enumerate(m):
            inverse[c] = g
        enc, dec = sharp_mlp(m, 3), sharp_mlp(inverse, 3)
        assert loss_reconstruction(enc, dec, xor_task) < 1e-10

    def test_collision_bounded_away_from_zero(self, xor_task):
        m = (0, 1, 2, 0, 4, 5, 6, 7)  # 000 and 011 both map to 000
        enc = sharp_mlp(m, 3)
        rng = np.random.default_rng(1)
        decoders = [random_mlp(rng, 3, scale=3.0) for _ in range(50)]
        inverse = [0, 1, 2, 3, 4, 5, 6, 7]
        decoders.append(sharp_mlp(inverse, 3))
        for dec in decoders:
            assert loss_reconstruction(enc, dec, xor_task) >= 2 * math.log(2) - 1e-9

    def test_excluded_when_weight_zero(self, xor_task):
        rng = np.random.default_rng(2)
        enc, dec = random_mlp(rng, 3), random_mlp(rng, 3)
        assert total_loss(enc, dec, xor_task, TrainConfig()) == loss_likelihood(enc, xor_task)


class TestConceptLoss:
    def test_concentrated_on_annotation(self, xor_pinned_task):
        assert loss_concept(sharp_mlp(range(8), 3), xor_pinned_task) < 1e-12

    def test_uniform(self, xor_task):
        t = with_pins(xor_task, [(1, 0, 1)])
        assert loss_concept(constant_mlp(3, [0, 0, 0]), t) == pytest.approx(1.5, abs=1e-12)
        t3 = with_pins(xor_task, [(1, 0, 1), (0, 0, 0), (1, 1, 1)])
        assert loss_concept(constant_mlp(3, [0, 0, 0]), t3) == pytest.approx(4.5, abs=1e-12)

    def test_no_pins(self, xor_task):
        with pytest.raises(NoPins):
            loss_concept(constant_mlp(3, [0, 0, 0]), xor_task)
        with pytest.raises(NoPins):
            train(xor_task, TrainConfig(lambda_concept=1.0, epochs=1))


class TestGradients:
    def test_gradient_check_all_terms(self, xor_task):
        t = with_pins(xor_task, [(0, 0, 0), (0, 1, 1), (1, 1, 1)])
        assert gradient_check(t, TrainConfig(lambda_rec=1.0, lambda_concept=1.0), trials=3) < 1e-4

    def test_gradient_check_likelihood_only(self, xor_task):
        assert gradient_check(xor_task, TrainConfig(hidden=5), trials=3) < 1e-4

    def test_output_bias_by_hand(self):
        # k=1, y1 <-> c1: L = -log mu(1) - log(1 - mu(0)), so
        # dL/db2 = mu(0) - (1 - mu(1)) and dL/dW2 = sum_g h_g (mu(g) - g)
        t = parse_task("concepts 1\nlabels 1\nknowledge y1 <-> c1\n")
        enc = MLP(np.array([[0.7, -1.2]]), np.array([0.1, 0.3]), np.array([[0.5], [-0.8]]), np.array([0.2]))
        h = np.tanh(np.array([[0.0], [1.0]]) @ enc.W1 + enc.b1)
        mu = 1 / (1 + np.exp(-(h @ enc.W2 + enc.b2)))[:, 0]
        grad = analytic_gradient(enc, None, t, TrainConfig())
        # flattened order: W1 (2), b1 (2), W2 (2), b2 (1)
        assert grad[-1] == pytest.approx(mu[0] - (1 - mu[1]), rel=1e-12)
        np.testing.assert_allclose(grad[4:6], h.T @ (mu - np.array([0.0, 1.0])), rtol=1e-12)

    def test_trials_validated(self, xor_task):
        with pytest.raises(ValueError):
            gradient_check(xor_task, TrainConfig(), trials=0)


class TestTrain:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(tau=0.4)

    def test_deterministic(self, xor_task, tmp_path):
        cfg = TrainConfig(seed=7, epochs=300, lambda_rec=1.0)
        a, b = train(xor_task, cfg), train(xor_task, cfg)
        a.write(tmp_path / "a")
        b.write(tmp_path / "b")
        for name in ("run.csv", "probs.csv", "confusion.csv", "bit_confusion.csv", "summary.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_init(self, xor_task):
        e0, _ = init_params(xor_task, TrainConfig(seed=0))
        e1, _ = init_params(xor_task, TrainConfig(seed=1))
        assert not np.array_equal(e0.W1, e1.W1)
        assert np.abs(e0.W1).max() <= 0.5

    def test_nonfinite(self, xor_task):
        with pytest.raises(NonFinite):
            train(xor_task, TrainConfig(learning_rate=float("inf"), epochs=3))

    def test_report_invariants(self, xor_task):
        r = train(xor_task, TrainConfig(seed=3, epochs=1500))
        np.testing.assert_allclose(r.probs.sum(1), 1.0, atol=1e-9)
        np.testing.assert_array_equal(r.confusion.sum(1), np.ones(8))
        assert r.bit_confusion.sum(1).tolist() == [8, 8, 8]
        assert r.determinism == pytest.approx(r.probs.max(1).min())
        assert r.theoretical_count == 65536
        if r.optimal:
            assert r.admissible
        assert r.rs == (r.extracted.mapping != tuple(range(8)))

    def test_partial_supervision_pins_hold(self, xor_task):
        t = with_pins(xor_task, [(0, 0, 0), (0, 1, 1), (0, 0, 1)])
        for seed in range(3):
            r = train(t, TrainConfig(seed=seed, epochs=2000, lambda_concept=1.0))
            if r.losses["concept"] < 1e-2:
                assert all(r.extracted.mapping[g] == g for g in t.pinned)
            if r.optimal:
                assert r.admissible

    def test_argmax_ties_prefer_smaller(self):
        assert extract_map(np.full((4, 4), 0.25), 2).mapping == (0, 0, 0, 0)

    def test_summary_line(self, xor_task):
        r = train(xor_task, TrainConfig(seed=0, epochs=5))
        assert r.summary_line().startswith("rs=")
        assert " determinism=" in r.summary_line() and " nll=" in r.summary_line()


# ---------------------------------------------------------------------------
# properties over random encoders

XOR = parse_task(XOR_TEXT)
seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_label_probs_normalize(seed):
    P = concept_table(random_mlp(np.random.default_rng(seed), 3), 3)
    for row in P:
        assert abs(sum(label_prob(XOR, row, y) for y in XOR.s_sets) - 1.0) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(seeds, st.booleans())
def test_optimum_characterization(seed, leak):
    rng = np.random.default_rng(seed)
    P = np.zeros((8, 8))
    lab = XOR.label_index
    for g in range(8):
        inside = np.flatnonzero(lab == lab[g])
        P[g, inside] = rng.dirichlet(np.ones(4) * 0.5)
    if leak:
        g = rng.integers(8)
        outside = np.flatnonzero(lab != lab[g])
        eps = 10 ** rng.uniform(-8, -0.5)
        P[g] *= 1 - eps
        P[g, rng.choice(outside)] += eps
        assert nll_from_table(XOR, P) > 0
    else:
        assert nll_from_table(XOR, P) == 0.0


DETOPTS = enumerate_detopts(XOR, injective=False, respect_pins=False, limit=10**6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, len(DETOPTS) - 1), min_size=1, max_size=6), seeds)
def test_mixtures_of_detopts_are_optimal(picks, seed):
    w = np.random.default_rng(seed).dirichlet(np.ones(len(picks)))
    P = np.zeros((8, 8))
    for weight, i in zip(w, picks):
        P[np.arange(8), DETOPTS[i].mapping] += weight
    assert nll_from_table(XOR, P) == 0.0


def test_identity_among_detopts():
    assert identity(3).mapping in {d.mapping for d in DETOPTS}
