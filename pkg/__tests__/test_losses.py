import numpy as np
import pytest

from imanip.controller.loss_controller import action_loss, distill_loss, loss_report, total_loss
from imanip.core import gradcore as gc
from imanip.core.errors import ConfigError, DimensionError
from imanip.model.batch import ActionBatch, QValues
from imanip.model.policy import PolicyModel

UNIFORM_L_ACT = np.log(512) + 3 * np.log(12) + 2 * np.log(2)


def q_from(trans, rot, grip, collide):
    b = np.shape(trans)[0]
    return QValues(
        trans=gc.constant(trans),
        rot=gc.constant(rot),
        open=gc.constant(grip),
        collide=gc.constant(collide),
        features=gc.constant(np.zeros((b, 4))),
    )


def uniform_q(b=1):
    return q_from(np.zeros((b, 512)), np.zeros((b, 3, 12)), np.zeros((b, 2)), np.zeros((b, 2)))


def random_q(seed, b=2):
    rng = np.random.default_rng(seed)
    return q_from(rng.normal(size=(b, 512)), rng.normal(size=(b, 3, 12)), rng.normal(size=(b, 2)), rng.normal(size=(b, 2)))


def labels(b=1, trans=0, rot=(0, 0, 0), grip=0, collide=0):
    return ActionBatch(
        trans=np.full(b, trans),
        rot=np.tile(np.array(rot), (b, 1)),
        open=np.full(b, grip),
        collide=np.full(b, collide),
    )


class TestActionLoss:
    def test_uniform_logits(self):
        assert UNIFORM_L_ACT == pytest.approx(15.0793, abs=1e-4)
        assert action_loss(uniform_q(3), labels(3, trans=17, rot=(1, 5, 11), grip=1)).item() == pytest.approx(
            UNIFORM_L_ACT, abs=1e-9
        )

    def test_saturated_logits(self):
        trans = np.zeros((1, 512))
        trans[0, 9] = 50.0
        rot = np.zeros((1, 3, 12))
        rot[0, :, 2] = 50.0
        q = q_from(trans, rot, [[0.0, 50.0]], [[50.0, 0.0]])
        assert action_loss(q, labels(trans=9, rot=(2, 2, 2), grip=1, collide=0)).item() < 1e-18

    def test_label_count_mismatch(self):
        with pytest.raises(DimensionError):
            action_loss(uniform_q(2), labels(3))


class TestDistillLoss:
    def test_identity_is_zero(self):
        q = random_q(0)
        assert distill_loss(q, q).item() == 0.0

    def test_peaked_versus_uniform_translation(self):
        peaked = np.zeros((1, 512))
        peaked[0, 0] = 50.0
        old = q_from(peaked, np.zeros((1, 3, 12)), np.zeros((1, 2)), np.zeros((1, 2)))
        expected = ((1 - 1 / 512) ** 2 + 511 * (1 / 512) ** 2) / 512
        assert expected == pytest.approx(0.001949, abs=1e-6)
        assert distill_loss(old, uniform_q()).item() == pytest.approx(expected, abs=1e-12)

    def test_symmetric(self):
        a, b = random_q(1), random_q(2)
        assert distill_loss(a, b).item() == pytest.approx(distill_loss(b, a).item(), abs=1e-12)

    def test_gripper_terms_use_positive_probability(self):
        old = q_from(np.zeros((1, 512)), np.zeros((1, 3, 12)), [[0.0, 100.0]], np.zeros((1, 2)))
        assert distill_loss(old, uniform_q()).item() == pytest.approx(0.5, abs=1e-12)

    def test_shape_mismatch(self):
        small = q_from(np.zeros((1, 8)), np.zeros((1, 3, 12)), np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(DimensionError):
            distill_loss(small, uniform_q())

    def test_old_model_receives_no_gradient(self, tiny_config, make_batch):
        model = PolicyModel.build(tiny_config)
        old_model = PolicyModel.build(tiny_config.model_copy(update={"seed": 1}))
        batch = make_batch(tiny_config, 2)
        with gc.Tape() as tape:
            old_tensors = {p: tape.leaf(f"old/{p}", v) for p, v in old_model.params.items()}
            q_old = old_model.forward(batch, old_tensors)
            q_new = model.forward(batch, model.params.bind(tape))
            grads = gc.backward(distill_loss(q_old, q_new), tape)
        assert grads
        assert not any(name.startswith("old/") for name in grads)


class TestTotalLoss:
    def test_lambda_scales_distillation_linearly(self):
        q, old = random_q(3), random_q(4)
        target = labels(2, trans=5, rot=(1, 2, 3))
        l_act, l_dis = action_loss(q, target), distill_loss(old, q)
        for lam in (0.0, 0.001, 0.01, 1.0, 2.5):
            assert total_loss(l_act, l_dis, lam).item() == pytest.approx(l_act.item() + lam * l_dis.item(), abs=1e-12)

    def test_lambda_zero_is_action_loss(self):
        q = random_q(5)
        l_act = action_loss(q, labels(2))
        assert total_loss(l_act, distill_loss(random_q(6), q), 0.0) is l_act
        assert total_loss(l_act, None, 1.0) is l_act

    def test_negative_lambda(self):
        q = random_q(7)
        with pytest.raises(ConfigError):
            total_loss(action_loss(q, labels(2)), distill_loss(q, q), -0.1)

    def test_report(self):
        q, old = random_q(8), random_q(9)
        target = labels(2, trans=3)
        report = loss_report(q, target, old, 0.5)
        assert report.l_act == pytest.approx(action_loss(q, target).item(), abs=1e-12)
        assert report.l_total == pytest.approx(report.l_act + 0.5 * report.l_dis, abs=1e-12)
        assert set(report.per_head) == {"trans", "rot", "open", "collide"}
        assert loss_report(q, target, None, 0.5).l_dis == 0.0


def test_total_loss_gradient_check():
    rng = np.random.default_rng(12)
    old = q_from(rng.normal(size=(2, 8)), rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    target = ActionBatch(
        trans=np.array([1, 6]), rot=np.array([[0, 3, 2], [1, 1, 0]]), open=np.array([0, 1]), collide=np.array([1, 1])
    )

    def loss(t):
        q = QValues(t["trans"], t["rot"], t["open"], t["collide"], gc.constant(np.zeros((2, 4))))
        return total_loss(action_loss(q, target), distill_loss(old, q), 0.7)

    start = {
        "trans": rng.normal(size=(2, 8)),
        "rot": rng.normal(size=(2, 3, 4)),
        "open": rng.normal(size=(2, 2)),
        "collide": rng.normal(size=(2, 2)),
    }
    assert gc.grad_check(loss, start).max_rel_error <= 1e-5
