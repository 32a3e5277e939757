import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dinosr.distill import (
    ScheduleSpec,
    desk_lambda_schedule,
    desk_lr_schedule,
    dinosr_loss,
    ema_teacher_update,
    init_heads,
    base_lambda_schedule,
    base_lr_schedule,
    predict_clusters,
    schedule_value,
)
from dinosr.numerics import Tensor


class TestEma:
    def test_endpoints(self, rng):
        student = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
        teacher = {k: rng.normal(size=v.shape) for k, v in student.items()}
        before = {k: v.copy() for k, v in teacher.items()}
        ema_teacher_update(teacher, student, 1.0)
        for k in teacher:
            np.testing.assert_array_equal(teacher[k], before[k])
        ema_teacher_update(teacher, student, 0.0)
        for k in teacher:
            np.testing.assert_array_equal(teacher[k], student[k])

    def test_value(self):
        t = {"p": np.array([1.0])}
        ema_teacher_update(t, {"p": np.array([0.0])}, 0.999)
        assert t["p"][0] == pytest.approx(0.999, abs=1e-15)

    def test_structure_mismatch(self):
        with pytest.raises(ValueError):
            ema_teacher_update({"a": np.zeros(2)}, {"b": np.zeros(2)}, 0.5)
        with pytest.raises(ValueError):
            ema_teacher_update({"a": np.zeros(2)}, {"a": np.zeros(3)}, 0.5)

    @given(st.floats(0, 1), st.integers(0, 1000))
    def test_convex(self, lam, seed):
        r = np.random.default_rng(seed)
        pt, ps = r.normal(size=5), r.normal(size=5)
        t = {"p": pt.copy()}
        ema_teacher_update(t, {"p": ps}, lam)
        lo, hi = np.minimum(pt, ps), np.maximum(pt, ps)
        assert np.all(t["p"] >= lo - 1e-15) and np.all(t["p"] <= hi + 1e-15)

    def test_contraction(self, rng):
        lam = 0.9
        ps = rng.normal(size=6)
        t = {"p": rng.normal(size=6)}
        gap = np.linalg.norm(t["p"] - ps)
        for _ in range(50):
            ema_teacher_update(t, {"p": ps}, lam)
            new_gap = np.linalg.norm(t["p"] - ps)
            assert new_gap == pytest.approx(lam * gap, rel=1e-9)
            gap = new_gap


class TestHeads:
    def test_uniform_with_zero_weights(self):
        heads = {"head3.W": np.zeros((4, 5)), "head3.b": np.zeros(5)}
        p = predict_clusters(np.ones((2, 4)), heads, 3)
        np.testing.assert_allclose(p, 0.2, atol=1e-15)

    def test_rows_sum_to_one(self, rng):
        heads = init_heads([2, 3], 6, 7, seed=0)
        p = predict_clusters(rng.normal(size=(9, 6)), heads, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_hand_case(self):
        heads = {"head1.W": np.array([[1.0, -1.0]]), "head1.b": np.array([0.5, 0.0])}
        p = predict_clusters(np.array([[2.0]]), heads, 1)
        # logits (2.5, -2.0)
        e = np.exp([2.5, -2.0])
        np.testing.assert_allclose(p[0], e / e.sum(), atol=1e-15)


class TestLoss:
    def test_uniform_heads(self, rng):
        V, M = 8, 5
        heads = {f"head{k}.{p}": np.zeros((3, V)) if p == "W" else np.zeros(V) for k in (3, 4) for p in "Wb"}
        z = Tensor(rng.normal(size=(M, 3)))
        table = {3: rng.integers(0, V, M), 4: rng.integers(0, V, M)}
        total, mean = dinosr_loss(z, table, heads)
        assert float(total.data) == pytest.approx(M * 2 * math.log(V), abs=1e-12)
        assert mean == pytest.approx(math.log(V), abs=1e-12)

    def test_confident_heads(self):
        heads = {"head1.W": np.array([[50.0, -50.0]]), "head1.b": np.zeros(2)}
        z = Tensor(np.array([[1.0], [-1.0]]))
        total, _ = dinosr_loss(z, {1: np.array([0, 1])}, heads)
        assert float(total.data) < 1e-30

    def test_hand_two_frames(self):
        heads = {"head1.W": np.array([[1.0, 0.0]]), "head1.b": np.array([0.0, 1.0])}
        z = Tensor(np.array([[0.0], [3.0]]))
        total, _ = dinosr_loss(z, {1: np.array([0, 0])}, heads)
        # frame 1 logits (0, 1), frame 2 logits (3, 1)
        expected = -math.log(1 / (1 + math.e)) - math.log(math.exp(3) / (math.exp(3) + math.e))
        assert float(total.data) == pytest.approx(expected, abs=1e-12)

    def test_additive_over_layers(self, rng):
        heads = init_heads([1, 2], 4, 3, seed=1)
        z = Tensor(rng.normal(size=(6, 4)))
        table = {1: rng.integers(0, 3, 6), 2: rng.integers(0, 3, 6)}
        both, _ = dinosr_loss(z, table, heads)
        one, _ = dinosr_loss(z, {1: table[1]}, {k: v for k, v in heads.items() if k.startswith("head1")})
        two, _ = dinosr_loss(z, {2: table[2]}, {k: v for k, v in heads.items() if k.startswith("head2")})
        assert float(both.data) == pytest.approx(float(one.data) + float(two.data), abs=1e-12)

    def test_coverage_mismatch(self, rng):
        heads = init_heads([1, 2], 4, 3, seed=1)
        z = Tensor(rng.normal(size=(6, 4)))
        with pytest.raises(ValueError):
            dinosr_loss(z, {1: np.zeros(6, dtype=int)}, heads)
        with pytest.raises(ValueError):
            dinosr_loss(z, {1: np.zeros(5, dtype=int), 2: np.zeros(6, dtype=int)}, heads)


class TestSchedules:
    def test_base_values(self):
        lr, lam = base_lr_schedule(), base_lambda_schedule()
        assert schedule_value(lr, 12_000) == pytest.approx(5e-4)
        assert schedule_value(lr, 6_000) == pytest.approx(2.5e-4)
        assert schedule_value(lr, 200_000) == pytest.approx(5e-4)
        assert schedule_value(lr, 400_000) == pytest.approx(5e-5)
        assert schedule_value(lam, 0) == pytest.approx(0.999)
        assert schedule_value(lam, 30_000) == pytest.approx(0.9999)
        assert schedule_value(lam, 400_000) == 1.0

    def test_exponential_tail(self):
        lr = base_lr_schedule()
        # halfway through the tail is the geometric mean of the endpoints
        assert schedule_value(lr, 300_000) == pytest.approx(math.sqrt(5e-4 * 5e-5))

    def test_linear_lambda_tail(self):
        lam = base_lambda_schedule()
        assert schedule_value(lam, 315_000) == pytest.approx((0.9999 + 1.0) / 2)

    @pytest.mark.parametrize("spec", [base_lr_schedule(), base_lambda_schedule(), desk_lr_schedule(), desk_lambda_schedule()])
    def test_continuity(self, spec):
        # no jump at a phase boundary is bigger than a few ordinary steps
        ramp = abs(spec.peak - spec.start) / spec.ramp_end
        tail = abs(spec.peak - spec.final) / (spec.total - spec.hold_end)
        bound = 3 * max(ramp, tail)
        for b in (spec.ramp_end, spec.hold_end):
            at = schedule_value(spec, b)
            assert abs(at - schedule_value(spec, b - 1)) <= bound
            assert abs(schedule_value(spec, b + 1) - at) <= bound

    def test_validation(self):
        with pytest.raises(ValueError):
            ScheduleSpec("lambda", 10, 5, 20, 0.9, 0.99, 1.0).validate()
        with pytest.raises(ValueError):
            ScheduleSpec("lambda", 1, 5, 20, 0.9, 1.5, 1.0).validate()
        with pytest.raises(ValueError):
            ScheduleSpec("lr", 1, 5, 20, 0.0, 1e-3, 0.0).validate()
        with pytest.raises(ValueError):
            schedule_value(desk_lr_schedule(), -1)

    @settings(max_examples=50)
    @given(st.integers(0, 20_000))
    def test_ranges(self, step):
        assert 0.0 <= schedule_value(desk_lambda_schedule(), step) <= 1.0
        assert schedule_value(desk_lr_schedule(), step) >= 0.0
