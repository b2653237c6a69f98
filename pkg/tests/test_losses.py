import math

import numpy as np
import pytest

from cloc import autodiff as ad
from cloc.autodiff import Tensor, gradient_check
from cloc.losses import (
    PairSets, TripletIndex, batch_mmnp_oracle, batch_objective, batch_pair_sets, ce_loss, ce_oracle, mmnp_batch,
    mmnp_loss, mmnp_oracle,
)
from cloc.margins import MarginSet, OrdinalSchema, margins_from_values
from cloc.model import Linear, Model
from cloc.verify import check_ce_oracle, check_loss_oracle


def fixed_margins(values):
    schema = OrdinalSchema(len(values) + 1)
    return MarginSet(schema, "all_fixed", fixed_overrides={h + 1: v for h, v in enumerate(values)})


def test_ce_uniform_logits():
    assert ce_loss(2, Tensor(np.zeros(4))).item() == pytest.approx(math.log(4), abs=1e-15)


def test_ce_saturated_prediction():
    v = np.zeros(5)
    v[2] = 20.0
    assert ce_loss(3, Tensor(v)).item() < 1e-8


def test_ce_matches_direct_summation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(size=5)
        y = int(rng.integers(1, 6))
        assert abs(ce_loss(y, Tensor(v)).item() - ce_oracle(y, v)) < 1e-10
    assert check_ce_oracle().passed


def test_ce_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        ce_loss(0, Tensor(np.zeros(3)))


def test_identical_embeddings_give_the_bare_margin():
    u = Tensor([0.6, 0.8])
    pairs = PairSets(u, 1, [(Tensor([0.6, 0.8]), 1)], [(Tensor([0.6, 0.8]), 2)])
    assert mmnp_loss(pairs, fixed_margins([0.5])).item() == pytest.approx(0.5, abs=1e-15)


def test_satisfied_constraint_is_clipped():
    pairs = PairSets(Tensor([1.0, 0.0]), 1, [(Tensor([2.0, 0.0]), 1)], [(Tensor([-1.0, 0.0]), 2)])
    assert mmnp_loss(pairs, fixed_margins([0.5])).item() == 0.0


def test_random_batch_matches_oracle_and_gradients():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(8, 4))
    y = [1, 1, 1, 2, 2, 3, 3, 3]
    ms = margins_from_values(OrdinalSchema(3), [0.3, 0.6])
    ref = batch_mmnp_oracle(z, y, ms.values().tolist())
    for ps, r in zip(batch_pair_sets(z, y), ref):
        assert abs(mmnp_loss(ps, ms).item() - r) < 1e-10
    np.testing.assert_allclose(mmnp_batch(Tensor(z), y, ms.activated()).data, ref, atol=1e-10, rtol=0)

    zt = Tensor(z, requires_grad=True)
    rep = gradient_check(lambda: ad.tsum(mmnp_batch(zt, y, ms.activated())), [zt] + ms.parameters())
    assert rep.min_kink_distance > 1e-4
    assert rep.passed, rep.message


def test_oracle_equivalence_on_100_batches():
    r = check_loss_oracle(n_batches=100)
    assert r.passed, r.detail


def test_oracle_single_term_by_hand():
    # orthogonal anchor and negative: cos = 0
    z, zj, zk = [1.0, 0.0], [1.0, 1.0], [0.0, 3.0]
    want = 0.3 + 0.0 - 1 / math.sqrt(2)
    got = mmnp_oracle(z, 1, [(zj, 1)], [(zk, 2)], [0.3])
    assert got == max(0.0, want)
    got = mmnp_oracle(z, 1, [([1.0, -2.0], 1)], [(zk, 2)], [0.6])
    assert got == pytest.approx(0.6 - 1 / math.sqrt(5), abs=1e-15)


def test_oracle_all_clipped_is_zero():
    assert mmnp_oracle([1.0, 0.0], 1, [([1.0, 0.0], 1)], [([-1.0, 0.0], 2)], [0.2]) == 0.0


def test_pair_set_validation():
    a = Tensor([1.0, 0.0])
    with pytest.raises(ValueError):
        PairSets(a, 1, [], [(Tensor([0.0, 1.0]), 2)]).validate()
    with pytest.raises(ValueError):
        PairSets(a, 1, [(Tensor([1.0, 1.0]), 2)], [(Tensor([0.0, 1.0]), 2)]).validate()
    with pytest.raises(ValueError):
        PairSets(a, 1, [(a, 1)], [(Tensor([0.0, 1.0]), 2)]).validate()


def test_batch_pair_sets_partition():
    y = [1, 2, 1, 3, 2]
    for i, ps in enumerate(batch_pair_sets(np.eye(5), y)):
        assert all(r == y[i] for _, r in ps.positives)
        assert all(r != y[i] for _, r in ps.negatives)
        assert len(ps.positives) + len(ps.negatives) == 4


def test_triplet_index_counts():
    idx = TripletIndex([1, 1, 2, 2, 2], 2)
    # anchors of rank 1: 1 positive x 3 negatives; rank 2: 2 x 2
    assert len(idx) == 2 * 3 + 3 * 4
    np.testing.assert_array_equal(idx.n_pos, [1, 1, 2, 2, 2])


def _model(C, seed=0):
    return Model.init(4, C, hidden=(6,), embedding_dim=3, classifier_hidden=5, seed=seed)


def test_objective_is_mean_ce_when_hinges_inactive():
    # encoder copies the first two features; ranks sit on opposite rays
    enc = [Linear(np.eye(4)[:, :2].copy(), np.zeros(2))]
    rng = np.random.default_rng(0)
    cls = [Linear(rng.normal(size=(2, 3)), np.zeros(3)), Linear(rng.normal(size=(3, 2)), np.zeros(2))]
    model = Model(enc, cls)
    X = np.array([[1, 0, 0, 0], [1, 0.01, 0, 0], [-1, 0, 0, 0], [-1, 0.01, 0, 0]], dtype=float)
    parts = batch_objective(X, [1, 1, 2, 2], model, fixed_margins([0.1]))
    np.testing.assert_array_equal(parts.mm, 0.0)
    assert parts.total.item() == pytest.approx(parts.ce.mean(), abs=1e-15)


def test_zero_margins_and_identical_embeddings_reduce_to_ce():
    model = _model(3)
    X = np.tile([0.5, -0.2, 1.0, 0.3], (6, 1))
    ms = fixed_margins([0.0, 0.0])
    parts = batch_objective(X, [1, 1, 2, 2, 3, 3], model, ms)
    np.testing.assert_array_equal(parts.mm, 0.0)
    assert parts.total.item() == pytest.approx(parts.ce.mean(), abs=1e-15)


def test_twelve_sample_objective_matches_oracle_path():
    rng = np.random.default_rng(5)
    model = _model(3, seed=5)
    X = rng.normal(size=(12, 4))
    y = [1, 2, 3] * 4
    ms = margins_from_values(OrdinalSchema(3), [0.4, 0.9])
    got = batch_objective(X, y, model, ms).total.item()
    z = model.embed(X)
    logits = model.logits(X)
    mm = batch_mmnp_oracle(z, y, ms.values().tolist())
    want = sum(ce_oracle(y[i], logits[i]) + mm[i] for i in range(12)) / 12
    assert abs(got - want) < 1e-10


def test_mm_weight_scales_only_the_margin_term():
    rng = np.random.default_rng(6)
    model = _model(3, seed=6)
    X = rng.normal(size=(6, 4))
    y = [1, 1, 2, 2, 3, 3]
    ms = margins_from_values(OrdinalSchema(3), [0.5, 0.5])
    p1 = batch_objective(X, y, model, ms)
    p0 = batch_objective(X, y, model, ms, mm_weight=0.0)
    assert p0.total.item() == pytest.approx(p1.ce.mean(), abs=1e-14)
    assert p1.total.item() == pytest.approx((p1.ce + p1.mm).mean(), abs=1e-14)


def test_anchor_without_positive_rejected():
    with pytest.raises(ValueError):
        mmnp_batch(Tensor(np.eye(3)), [1, 2, 2], Tensor([0.5]))
