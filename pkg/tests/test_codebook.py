import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dinosr import codebook as cb
from dinosr.codebook import CodebookError, CodebookState

from kmeans_oracle import lloyd


def _state(E, tau=0.9, freeze=True, simplified=False, n=None):
    E = np.asarray(E, dtype=float)
    n = np.ones(len(E)) if n is None else np.asarray(n, dtype=float)
    return CodebookState(E.copy(), E * n[:, None], n, tau, freeze, simplified)


class TestInit:
    @pytest.mark.parametrize("scheme", cb.INIT_SCHEMES)
    def test_invariant_and_determinism(self, scheme):
        a = cb.init_codebook(16, 8, scheme, rng_seed=3)
        b = cb.init_codebook(16, 8, scheme, rng_seed=3)
        np.testing.assert_array_equal(a.E, b.E)
        np.testing.assert_array_equal(a.E, a.s / a.n[:, None])
        assert np.all(a.n == 1)

    def test_l2norm_rows(self):
        E = cb.init_codebook(32, 12, "gaussian_l2norm", 0).E
        np.testing.assert_allclose(np.linalg.norm(E, axis=1), 1.0, atol=1e-12)

    def test_scaled_variance(self):
        E = cb.init_codebook(400, 64, "gaussian_scaled", 0).E
        assert E.std() == pytest.approx(1 / 8, rel=0.05)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            cb.init_codebook(4, 4, "uniform", 0)


class TestNormalize:
    def test_constant_channel_is_zero(self):
        z = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
        out = cb.normalize_targets(z)
        np.testing.assert_allclose(out[:, 0], 0.0, atol=1e-12)

    def test_moments(self, rng):
        out = cb.normalize_targets(rng.normal(2.0, 5.0, size=(50, 6)))
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-3)

    def test_two_frame_channel(self):
        # mean 2, variance 1: (x - 2) / sqrt(1 + eps)
        out = cb.normalize_targets(np.array([[1.0], [3.0]]))
        d = 1.0 / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out[:, 0], [-d, d], atol=1e-15)


class TestAssign:
    def test_examples(self):
        state = _state([[0, 0], [1, 1]])
        assert cb.assign(np.array([[0.9, 0.9]]), state).tolist() == [1]
        assert cb.assign(np.array([[0.5, 0.5]]), state).tolist() == [0]

    def test_exact_codeword(self, rng):
        E = rng.normal(size=(6, 4))
        assert cb.assign(E[3:4], _state(E)).tolist() == [3]

    def test_brute_force(self, rng):
        E = rng.normal(size=(7, 3))
        X = rng.normal(size=(40, 3))
        expected = [int(np.argmin([np.sum((x - e) ** 2) for e in E])) for x in X]
        assert cb.assign(X, _state(E)).tolist() == expected

    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.integers(-6, 6))
    def test_scale_invariance(self, seed, power):
        r = np.random.default_rng(seed)
        E, X = r.normal(size=(5, 3)), r.normal(size=(20, 3))
        c = 2.0**power
        np.testing.assert_array_equal(cb.assign(X, _state(E)), cb.assign(X * c, _state(E * c)))


class TestUpdate:
    def test_scalar_example(self):
        state = CodebookState(np.array([[5.0]]), np.array([[10.0]]), np.array([2.0]), 0.9)
        cb.update(state, np.array([[4.0], [6.0]]), np.array([0, 0]))
        assert state.s[0, 0] == pytest.approx(10.0, abs=1e-12)
        assert state.n[0] == pytest.approx(2.0, abs=1e-12)
        assert state.E[0, 0] == pytest.approx(5.0, abs=1e-12)

    def test_inactive_frozen(self, rng):
        state = _state(rng.normal(size=(3, 2)), n=[2.0, 3.0, 4.0])
        before = state.copy()
        cb.update(state, rng.normal(size=(4, 2)), np.array([0, 0, 2, 2]))
        np.testing.assert_array_equal(state.E[1], before.E[1])
        np.testing.assert_array_equal(state.s[1], before.s[1])
        assert state.n[1] == before.n[1]

    def test_unfrozen_inactive_decays(self):
        state = _state([[1.0], [2.0]], tau=0.5, freeze=False, n=[1.0, 1.0])
        cb.update(state, np.array([[0.0]]), np.array([0]))
        assert state.n[1] == 0.5
        assert state.E[1, 0] == pytest.approx(2.0)

    def test_underflow(self):
        state = _state([[1.0], [2.0]], tau=0.0, freeze=False)
        with pytest.raises(CodebookError, match="codeword mass underflow"):
            cb.update(state, np.array([[0.0]]), np.array([0]))

    def test_tau_zero_is_mean(self, rng):
        X = rng.normal(size=(30, 3))
        state = _state(rng.normal(size=(4, 3)), tau=0.0)
        a = cb.assign(X, state)
        cb.update(state, X, a)
        for v in np.unique(a):
            np.testing.assert_allclose(state.E[v], X[a == v].mean(axis=0), atol=1e-12)

    def test_invariant_after_updates(self, rng):
        state = cb.init_codebook(8, 4, rng_seed=0, tau=0.7)
        for _ in range(20):
            X = rng.normal(size=(50, 4))
            cb.update(state, X, cb.assign(X, state))
            np.testing.assert_allclose(state.E, state.s / state.n[:, None], rtol=1e-12)
            assert np.all(state.n >= 0)

    def test_simplified(self):
        state = _state([[0.0], [10.0]], tau=0.5, simplified=True, n=[3.0, 1.0])
        cb.update(state, np.array([[2.0], [4.0]]), np.array([0, 0]))
        # e <- 0.5 * 0 + 0.5 * mean(2, 4)
        assert state.E[0, 0] == pytest.approx(1.5)
        assert state.E[1, 0] == 10.0
        np.testing.assert_allclose(state.E, state.s / state.n[:, None])


def test_lloyd_equivalence(rng):
    data = rng.normal(size=(300, 4)) + rng.integers(0, 3, size=(300, 1)) * 4.0
    init = data[:6].copy()
    state = _state(init, tau=0.0, freeze=True)
    oracle = lloyd(data, init, 5)
    for expected in oracle:
        cb.update(state, data, cb.assign(data, state))
        assert np.max(np.abs(state.E - expected)) <= 1e-9


def test_usage_entropy():
    assert cb.usage_entropy(np.array([0, 1, 2, 3]), 4) == pytest.approx(2.0)
    assert cb.usage_entropy(np.array([1, 1]), 4) == 0.0
