import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dinosr import abx
from dinosr.abx import AbxItem, abx_error_rate, dtw_pseudo_distance, framewise_distance
from dinosr.synthdata import default_inventory, gen_corpus

from dtw_oracle import all_paths, brute_dtw


class TestFramewise:
    def test_identical(self):
        v = np.array([0.2, 0.3, 0.5])
        assert framewise_distance(v, v, "cosine") == pytest.approx(0.0, abs=1e-15)
        assert framewise_distance(v, v, "js") == pytest.approx(0.0, abs=1e-15)

    def test_js_disjoint(self):
        assert framewise_distance([1.0, 0.0], [0.0, 1.0], "js") == 1.0

    def test_js_hand_value(self):
        # m = (3/4, 1/4); KL(p||m) = 1 - log2(3)/2, KL(q||m) = 2 - log2(3)
        kl_p = 0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25)
        kl_q = math.log2(1 / 0.75)
        expected = 0.5 * kl_p + 0.5 * kl_q
        assert expected == pytest.approx(1.5 - 0.75 * math.log2(3), abs=1e-15)
        assert framewise_distance([0.5, 0.5], [1.0, 0.0], "js") == pytest.approx(expected, abs=1e-12)

    def test_cosine_values(self):
        assert framewise_distance([1.0, 0.0], [0.0, 2.0]) == pytest.approx(1.0)
        assert framewise_distance([1.0, 1.0], [-3.0, -3.0]) == pytest.approx(2.0)

    def test_errors(self):
        with pytest.raises(ValueError, match="zero vector"):
            framewise_distance([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(ValueError, match="probability"):
            framewise_distance([0.5, 0.6], [1.0, 0.0], "js")
        with pytest.raises(ValueError, match="probability"):
            framewise_distance([1.5, -0.5], [1.0, 0.0], "js")
        with pytest.raises(ValueError):
            framewise_distance([1.0], [1.0, 0.0])
        with pytest.raises(ValueError):
            framewise_distance([1.0], [1.0], "euclid")

    @settings(max_examples=50)
    @given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
    def test_js_symmetric_bounded(self, a, b):
        p = np.array(a) / sum(a)
        q = np.array(b) + 1e-3
        q /= q.sum()
        d1, d2 = framewise_distance(p, q, "js"), framewise_distance(q, p, "js")
        assert d1 == pytest.approx(d2, abs=1e-12)
        assert 0.0 <= d1 <= 1.0


class TestDtw:
    def test_path_count(self):
        # Delannoy numbers
        assert len(list(all_paths(2, 2))) == 3
        assert len(list(all_paths(3, 3))) == 13

    def test_length_one(self, rng):
        a, b = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        assert dtw_pseudo_distance(a, b) == pytest.approx(framewise_distance(a[0], b[0]), abs=1e-15)

    def test_identical(self, rng):
        a = rng.normal(size=(6, 3))
        assert dtw_pseudo_distance(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_brute_force(self, rng):
        for _ in range(100):
            n, m = rng.integers(1, 6, size=2)
            a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
            cost = abx.distance_matrix(a, b).tolist()
            assert dtw_pseudo_distance(a, b) == pytest.approx(brute_dtw(cost), abs=1e-9)

    def test_tie_prefers_shorter_path(self):
        # all-zero cost: every path costs 0, the diagonal is the shortest
        assert abx.dtw_from_costs(np.zeros((3, 3))) == 0.0
        cost = np.array([[1.0, 1.0], [1.0, 1.0]])
        # diagonal path has length 2, average 1
        assert abx.dtw_from_costs(cost) == 1.0

    def test_duplication_invariance(self, rng):
        a = np.repeat(rng.normal(size=(3, 4)), [2, 3, 2], axis=0)
        b = np.repeat(rng.normal(size=(2, 4)), [3, 3], axis=0)
        a2 = np.repeat(a[:1], 4, axis=0)
        a_long = np.concatenate([a2, a[2:]])
        # a constant opening segment stretched from 2 to 4 frames
        assert dtw_pseudo_distance(a_long, a_long) == pytest.approx(0.0, abs=1e-12)
        base = dtw_pseudo_distance(np.repeat(b[:1], 2, axis=0), np.repeat(b[:1], 5, axis=0))
        assert base == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=30)
    @given(st.integers(0, 10**6))
    def test_symmetric(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(r.integers(1, 7), 3)), r.normal(size=(r.integers(1, 7), 3))
        assert dtw_pseudo_distance(a, b) == pytest.approx(dtw_pseudo_distance(b, a), abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            dtw_pseudo_distance(np.zeros((0, 2)), np.ones((1, 2)))


class TestErrorRate:
    def _item(self, rows, cat):
        return AbxItem(np.array(rows, dtype=float), cat)

    def test_correct_and_tie(self):
        a = self._item([[1.0, 0.0]], (0,))
        b = self._item([[0.0, 1.0]], (1,))
        assert abx_error_rate([(a, b, self._item([[1.0, 0.0]], (0,)))]) == 0.0
        # X at 45 degrees is equidistant from A and B
        assert abx_error_rate([(a, b, self._item([[1.0, 1.0]], (0,)))]) == 0.5

    def test_hand_set(self):
        a = self._item([[1.0, 0.0]], (0,))
        b = self._item([[0.0, 1.0]], (1,))
        xs = [[[1.0, 0.1]], [[0.1, 1.0]], [[1.0, 1.0]]]  # correct, wrong, tie
        triples = [(a, b, self._item(x, (0,))) for x in xs]
        assert abx_error_rate(triples) == pytest.approx((0 + 1 + 0.5) / 3)

    def test_malformed(self):
        a = self._item([[1.0, 0.0]], (0,))
        with pytest.raises(ValueError):
            abx_error_rate([(a, a, a)])
        with pytest.raises(ValueError):
            abx_error_rate([(a, self._item([[0.0, 1.0]], (1,)), self._item([[1.0, 0.0]], (2,)))])
        with pytest.raises(ValueError):
            abx_error_rate([])


@pytest.fixture(scope="module")
def corpus():
    return gen_corpus(default_inventory(), 30, 200, seed=0)


class TestSampling:
    def test_items_are_triphones(self, corpus):
        refs = abx.triphone_items(corpus)
        utts = {u.id: u for u in corpus}
        assert refs
        for r in refs[:50]:
            lab = utts[r.utt].labels[r.start : r.end]
            assert [s[0] for s in abx.segments(lab)] == list(r.category)
            assert r.start > 0 and r.end < 200

    def test_triples(self, corpus):
        triples = abx.sample_triples(abx.triphone_items(corpus), 200, seed=1)
        assert len(triples) == 200
        same_context = 0
        for a, b, x in triples:
            assert a.category == x.category and a != x
            assert a.category[1] != b.category[1]
            same_context += (a.category[0], a.category[2]) == (b.category[0], b.category[2])
        assert same_context > 100
        again = abx.sample_triples(abx.triphone_items(corpus), 200, seed=1)
        assert again == triples

    def test_raw_frames_oracle(self, corpus):
        triples = abx.sample_triples(abx.triphone_items(corpus), 100, seed=2)
        reps = {u.id: u.frames for u in corpus}
        assert abx_error_rate(abx.materialize(triples, reps), "cosine") <= 0.02

    def test_manifest_round_trip(self, corpus, tmp_path):
        triples = abx.sample_triples(abx.triphone_items(corpus), 20, seed=3)
        names = default_inventory().names
        path = abx.write_manifest(triples, tmp_path / "m.csv", names)
        assert path.read_text().splitlines()[0] == "item_a,item_b,item_x,category_a,category_b"
        assert abx.read_manifest(path, names) == triples

    def test_default_layer(self):
        assert abx.default_layer(12, 8) == 5
        assert abx.default_layer(4, 2) == 3
        assert abx.default_layer(6, 1) == 6
