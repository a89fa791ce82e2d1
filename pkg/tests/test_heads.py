import numpy as np
import pytest

from contrex import autodiff as ad
from contrex.errors import InvalidArgumentError
from contrex.heads import (
    ClassifierHead,
    RelationTaskMap,
    classify_relation,
    expand_head,
    new_head,
    predict_task,
    train_relation_classifier,
    train_task_predictor,
)
from contrex.numeric import RngState, finite_diff_grad, relative_grad_error
from contrex.replay import LatentGaussian, LatentGaussianStore, LatentMixture


def point_mass(center, dim):
    mu = np.zeros(dim)
    mu[: len(center)] = center
    return LatentMixture([1.0], [LatentGaussian(mu, np.zeros((dim, dim)), ridge=1e-6)])


def make_store(centers_q, centers_z, dim_q=4, dim_z=8):
    store = LatentGaussianStore()
    for r, (cq, cz) in enumerate(zip(centers_q, centers_z)):
        store.add(r, point_mass(cq, dim_q), point_mass(cz, dim_z))
    return store


class TestRelationTaskMap:
    def test_partition(self):
        m = RelationTaskMap()
        m.add_task(0, [0, 1])
        m.add_task(1, [2, 3])
        assert m.task_of(3) == 1
        assert m.relations_of(0) == [0, 1]
        assert m.all_relations() == [0, 1, 2, 3]
        assert m.n_tasks == 2

    def test_relation_collision_rejected(self):
        m = RelationTaskMap()
        m.add_task(0, [0, 1])
        with pytest.raises(InvalidArgumentError):
            m.add_task(1, [1, 2])

    def test_round_trip(self):
        m = RelationTaskMap()
        m.add_task(0, [5, 6])
        m.add_task(1, [7])
        again = RelationTaskMap.from_dict(m.to_dict())
        assert again.to_dict() == m.to_dict()


class TestExpandHead:
    def test_existing_columns_preserved_bit_exactly(self):
        rng = RngState(1)
        head = new_head(4, 4, rng)
        old_w2 = head.w2.copy()
        old_b2 = head.b2.copy()
        x = RngState(2).normal((3, 4))
        before = head.logits(x).copy()
        expand_head(head, 4, rng)
        assert head.n_out == 8
        # parameter columns for the old classes are byte-identical
        assert np.array_equal(head.w2[:, :4], old_w2)
        assert np.array_equal(head.b2[:4], old_b2)
        # old-class logits unchanged (BLAS kernel choice may vary per shape)
        assert np.allclose(head.logits(x)[:, :4], before, atol=1e-12, rtol=0)

    def test_two_expansions_match_one_in_shape(self):
        a = new_head(4, 2, RngState(3))
        expand_head(a, 2, RngState(4))
        expand_head(a, 2, RngState(5))
        b = new_head(4, 2, RngState(3))
        expand_head(b, 4, RngState(4))
        assert a.w2.shape == b.w2.shape
        assert a.b2.shape == b.b2.shape

    def test_zero_expansion_rejected(self):
        with pytest.raises(InvalidArgumentError):
            expand_head(new_head(4, 2, RngState(6)), 0, RngState(7))


class TestGradients:
    def test_head_gradients_match_finite_differences(self):
        rng = RngState(8)
        x = rng.normal((5, 4))
        y = np.array([0, 1, 2, 1, 0])
        head = new_head(4, 3, rng, hidden_dim=6)
        shapes = {k: v.shape for k, v in head.params().items()}

        def unflatten(flat):
            out = {}
            at = 0
            for k in ("w1", "b1", "w2", "b2"):
                n = int(np.prod(shapes[k]))
                out[k] = flat[at : at + n].reshape(shapes[k])
                at += n
            return out

        def loss_at(flat):
            p = unflatten(flat)
            leaves = {k: ad.leaf(v) for k, v in p.items()}
            probe = ClassifierHead(4, 3, RngState(0), hidden_dim=6)
            logits = probe.graph_logits(ad.constant(x), leaves)
            return ad.cross_entropy_mean(logits, y), leaves

        flat0 = np.concatenate([head.params()[k].ravel() for k in ("w1", "b1", "w2", "b2")])
        loss, leaves = loss_at(flat0)
        ad.backward(loss)
        analytic = np.concatenate([leaves[k].grad.ravel() for k in ("w1", "b1", "w2", "b2")])
        numeric = finite_diff_grad(lambda p: float(loss_at(p)[0].value), flat0, eps=1e-5)
        assert relative_grad_error(analytic, numeric) < 1e-4


class TestTraining:
    def test_zero_epochs_leaves_head_unchanged(self):
        store = make_store([(1,), (-1,)], [(1,), (-1,)])
        m = RelationTaskMap()
        m.add_task(0, [0, 1])
        head = new_head(4, 2, RngState(9))
        before = {k: v.copy() for k, v in head.params().items()}
        train_task_predictor(head, store, m, 20, epochs=0, lr=0.1, rng=RngState(10))
        for k, v in head.params().items():
            assert np.array_equal(v, before[k])

    def test_separable_task_predictor_reaches_full_accuracy(self):
        store = make_store([(3.0,), (-3.0,)], [(1,), (-1,)])
        m = RelationTaskMap()
        m.add_task(0, [0])
        m.add_task(1, [1])
        head = new_head(4, 2, RngState(11))
        train_task_predictor(head, store, m, 50, epochs=60, lr=0.3, rng=RngState(12))
        q_pos = np.array([3.0, 0, 0, 0])
        q_neg = np.array([-3.0, 0, 0, 0])
        assert predict_task(head, m, q_pos) == 0
        assert predict_task(head, m, q_neg) == 1

    def test_separable_relation_classifier(self):
        centers = [(10.0, 0.0), (-10.0, 0.0), (0.0, 10.0), (0.0, -10.0)]
        store = LatentGaussianStore()
        rng = RngState(13)
        for r, c in enumerate(centers):
            mu = np.zeros(8)
            mu[:2] = c
            cov = np.eye(8) * 0.01
            store.add(r, point_mass((0.0,), 4), LatentMixture([1.0], [LatentGaussian(mu, cov)]))
        head = new_head(8, 4, rng)
        train_relation_classifier(head, store, 80, epochs=80, lr=0.3, rng=RngState(14))
        correct = 0
        eval_rng = RngState(15)
        from contrex.replay import sample

        for r in range(4):
            draws = sample(store.prompted_model(r), 50, eval_rng)
            correct += sum(classify_relation(head, d) == r for d in draws)
        assert correct / 200 > 0.99

    def test_loss_curve_non_increasing_within_noise(self):
        store = make_store([(2.0,), (-2.0,)], [(2.0,), (-2.0,)])
        head = new_head(8, 2, RngState(16))
        train_relation_classifier(head, store, 100, epochs=20, lr=0.1, rng=RngState(17))
        curve = head.loss_curve
        assert len(curve) == 20
        assert curve[-1] < curve[0]
        # epoch means may wobble slightly, but never jump upward materially
        assert all(b <= a + 0.05 for a, b in zip(curve, curve[1:]))

    def test_single_relation_converges_to_zero_loss(self):
        store = make_store([(1.0,)], [(1.0,)])
        head = new_head(8, 1, RngState(18))
        train_relation_classifier(head, store, 40, epochs=30, lr=0.5, rng=RngState(19))
        assert head.loss_curve[-1] < 1e-6

    def test_determinism_same_seed_same_weights(self):
        store = make_store([(2.0,), (-2.0,)], [(2.0,), (-2.0,)])

        def run():
            head = new_head(8, 2, RngState(20))
            train_relation_classifier(head, store, 60, epochs=10, lr=0.2, rng=RngState(21))
            return head

        a, b = run(), run()
        for (ka, va), (kb, vb) in zip(a.arrays(), b.arrays()):
            assert ka == kb
            assert np.array_equal(va, vb)

    def test_empty_store_rejected(self):
        head = new_head(4, 2, RngState(22))
        with pytest.raises(InvalidArgumentError):
            train_relation_classifier(head, LatentGaussianStore(), 10, 1, 0.1, RngState(23))

    def test_store_must_cover_map(self):
        store = make_store([(1.0,)], [(1.0,)])
        m = RelationTaskMap()
        m.add_task(0, [0, 1])
        head = new_head(4, 2, RngState(24))
        with pytest.raises(InvalidArgumentError):
            train_task_predictor(head, store, m, 10, 1, 0.1, RngState(25))


class TestPrediction:
    def test_one_hot_logits_select_owning_task(self):
        m = RelationTaskMap()
        m.add_task(0, [0, 1])
        m.add_task(1, [2, 3])
        head = new_head(4, 4, RngState(26))
        head.w1[:] = 0.0
        head.w2[:] = 0.0
        head.b2[:] = np.array([0.0, 0.0, 5.0, 0.0])
        assert predict_task(head, m, np.zeros(4)) == 1

    def test_uniform_logits_tie_break_to_relation_zero(self):
        m = RelationTaskMap()
        m.add_task(0, [0, 1])
        m.add_task(1, [2, 3])
        head = new_head(4, 4, RngState(27))
        head.w1[:] = 0.0
        head.w2[:] = 0.0
        head.b2[:] = 0.0
        assert predict_task(head, m, np.ones(4)) == 0
        assert classify_relation(head, np.ones(4)) == 0

    def test_classify_scale_invariant(self):
        head = new_head(4, 3, RngState(28))
        z = RngState(29).normal(4)
        base = classify_relation(head, z)
        boosted = ClassifierHead(4, 3, RngState(28))
        boosted.w2 = head.w2 * 7.0
        boosted.b2 = head.b2 * 7.0
        boosted.w1 = head.w1.copy()
        boosted.b1 = head.b1.copy()
        assert classify_relation(boosted, z) == base

    def test_golden_argmax_against_brute_force(self):
        head = new_head(4, 5, RngState(30))
        z = RngState(31).normal(4)
        logits = head.logits(z)[0]
        brute = max(range(5), key=lambda i: (logits[i], -i))
        assert classify_relation(head, z) == brute

    def test_predict_task_against_brute_force(self):
        m = RelationTaskMap()
        m.add_task(0, [0, 1, 2])
        m.add_task(1, [3, 4])
        head = new_head(4, 5, RngState(32))
        for trial in range(20):
            q = RngState(100 + trial).normal(4)
            logits = head.logits(q)[0]
            brute_rel = max(range(5), key=lambda i: (logits[i], -i))
            assert predict_task(head, m, q) == m.task_of(brute_rel)
