import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subclassrep.errors import DataError
from subclassrep.prob import (
    PairwiseModel,
    PlattParams,
    couple,
    coupling_objective,
    cross_fit_decisions,
    fit_platt,
    fold_assignment,
    sigmoid_prob,
    train_calibrated_binary,
    train_one_vs_one,
)
from subclassrep.svm import TrainConfig, train_binary


def consistent_r(p):
    p = np.asarray(p, dtype=float)
    return p[:, None] / (p[:, None] + p[None, :])


def random_complementary(rng, k):
    r = rng.uniform(0.01, 0.99, size=(k, k))
    r = np.triu(r, 1)
    r = r + np.tril(1.0 - r.T, -1)
    np.fill_diagonal(r, 0.5)
    return r


class TestSigmoid:
    def test_midpoint(self):
        assert sigmoid_prob(PlattParams(-1.0, 0.0), 0.0) == 0.5

    def test_saturation_without_overflow(self):
        with np.errstate(over="raise"):
            assert sigmoid_prob(PlattParams(-1.0, 0.0), 1000.0) == pytest.approx(1.0)
            assert sigmoid_prob(PlattParams(-1.0, 0.0), -1000.0) == pytest.approx(0.0)

    def test_hand_value(self):
        assert sigmoid_prob(PlattParams(2.0, -1.0), 0.5) == 0.5

    def test_vectorized(self):
        p = sigmoid_prob(PlattParams(-1.0, 0.0), np.array([-1.0, 0.0, 1.0]))
        np.testing.assert_allclose(p, [1 / (1 + np.e), 0.5, 1 / (1 + np.exp(-1))])


class TestFitPlatt:
    def test_symmetric_offset(self):
        f = np.linspace(0.1, 3.0, 40)
        decisions = np.r_[f, -f, -f[::3], f[::3]]
        labels = np.r_[np.ones(40), -np.ones(40), np.ones(14), -np.ones(14)]
        params = fit_platt(decisions, labels)
        assert abs(params.b) <= 1e-6
        assert params.a < 0

    def test_recovers_generating_sigmoid(self):
        rng = np.random.default_rng(2024)
        f = rng.uniform(-3.0, 3.0, size=10_000)
        labels = rng.random(10_000) < 1.0 / (1.0 + np.exp(2.0 * f - 1.0))
        params = fit_platt(f, labels)
        assert params.a == pytest.approx(2.0, abs=0.1)
        assert params.b == pytest.approx(-1.0, abs=0.1)

    def test_separated_stays_finite(self):
        decisions = np.r_[np.linspace(1, 5, 20), -np.linspace(1, 5, 20)]
        labels = np.r_[np.ones(20), np.zeros(20)]
        params = fit_platt(decisions, labels)
        hi, lo = sigmoid_prob(params, 1.0), sigmoid_prob(params, -1.0)
        assert np.isfinite([params.a, params.b]).all()
        assert 0.0 <= lo < hi <= 1.0

    def test_label_encodings_agree(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=50)
        lab = f + rng.normal(size=50) > 0
        a = fit_platt(f, lab)
        b = fit_platt(f, np.where(lab, 1, -1))
        c = fit_platt(f, lab.astype(int))
        assert a == b == c

    def test_single_label(self):
        with pytest.raises(DataError, match="both"):
            fit_platt([0.1, 0.2], [1, 1])

    def test_non_finite(self):
        with pytest.raises(DataError, match="finite"):
            fit_platt([0.1, np.nan], [1, 0])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 60))
    def test_monotone_and_interior(self, seed, n):
        rng = np.random.default_rng(seed)
        f = rng.normal(scale=3.0, size=n)
        lab = rng.random(n) < 0.5
        lab[0], lab[1] = True, False
        params = fit_platt(f, lab)
        # far outside the data the sigmoid may round to exactly 0 or 1 in floating point
        inside = sigmoid_prob(params, np.linspace(f.min(), f.max(), 101))
        assert np.all((inside > 0.0) & (inside < 1.0))
        steps = np.diff(sigmoid_prob(params, np.linspace(-20.0, 20.0, 201)))
        assert np.all(steps <= 0) if params.a > 0 else np.all(steps >= 0)


class TestCouple:
    def test_uniform(self):
        np.testing.assert_allclose(couple(np.full((3, 3), 0.5)), [1 / 3] * 3, atol=1e-12)

    def test_two_classes_exact(self):
        p = couple(np.array([[0.5, 0.7], [0.3, 0.5]]))
        np.testing.assert_allclose(p, [0.7, 0.3], rtol=0, atol=1e-15)

    def test_recovers_consistent(self):
        p = couple(consistent_r([0.6, 0.3, 0.1]))
        np.testing.assert_allclose(p, [0.6, 0.3, 0.1], atol=1e-6)

    @pytest.mark.parametrize(
        "r, match",
        [
            (np.array([[0.5, 1.0], [0.0, 0.5]]), "inside"),
            (np.array([[0.5, 0.6], [0.6, 0.5]]), "complementary"),
            (np.array([[0.5]]), "K >= 2"),
        ],
    )
    def test_validation(self, r, match):
        with pytest.raises(DataError, match=match):
            couple(r)

    def test_simplex_on_random_matrices(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = couple(random_complementary(rng, int(rng.integers(2, 9))))
            assert np.all(p >= 0.0)
            assert abs(p.sum() - 1.0) <= 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_objective_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        r = random_complementary(rng, int(rng.integers(3, 9)))
        # the sweep starts from the uniform vector, so max_iter=m is the state after m sweeps
        values = [coupling_objective(r, np.full(r.shape[0], 1.0 / r.shape[0]))]
        values += [coupling_objective(r, couple(r, tolerance=0.0, max_iter=m)) for m in range(1, 15)]
        assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8),
    )
    def test_consistency_recovery(self, weights):
        p = np.asarray(weights) / np.sum(weights)
        np.testing.assert_allclose(couple(consistent_r(p)), p, atol=1e-6)


def _blobs(k, per=15, seed=0, spread=0.3):
    rng = np.random.default_rng(seed)
    centers = 4.0 * np.eye(max(k, 2))[:k]
    X = np.vstack([c + rng.normal(scale=spread, size=(per, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(k), per)
    return X, y


class TestCrossFit:
    def test_folds_stratified(self):
        y = np.r_[np.ones(10), -np.ones(7)]
        fold = fold_assignment(y, 3, seed=1)
        for value in (1.0, -1.0):
            counts = np.bincount(fold[y == value], minlength=3)
            assert counts.max() - counts.min() <= 1

    def test_decisions_come_from_held_out_models(self):
        X, y = _blobs(2, per=12, spread=1.5)
        yy = np.where(y == 0, 1.0, -1.0)
        cfg = TrainConfig(c=1.0, seed=3)
        decisions, fold = cross_fit_decisions(X, yy, cfg, 3, seed=5)
        for k in range(3):
            held = fold == k
            assert held.any() and (~held).any()
            # the model producing fold k's decisions saw exactly the other folds
            model, _ = train_binary(X[~held], yy[~held], cfg)
            np.testing.assert_array_equal(decisions[held], model.decision_function(X[held]))

    def test_too_few_examples(self):
        X = np.arange(6, dtype=float)[:, None]
        y = np.array([1, 1, -1, -1, -1, -1.0])
        with pytest.raises(DataError, match="needs at least 3"):
            train_calibrated_binary(X, y, TrainConfig(), folds=3, seed=0)

    def test_single_fold_rejected(self):
        X, y = _blobs(2)
        with pytest.raises(DataError, match="2 folds"):
            train_calibrated_binary(X, np.where(y == 0, 1.0, -1.0), TrainConfig(), folds=1, seed=0)


class TestOneVsOne:
    def test_two_classes_one_binary(self):
        X, y = _blobs(2)
        assert len(train_one_vs_one(X, y, ["a", "b"]).binaries) == 1

    def test_ten_classes_45_binaries(self):
        X, y = _blobs(10, per=4)
        model = train_one_vs_one(X, y, [f"c{i}" for i in range(10)])
        assert len(model.binaries) == 45
        assert model.pairs[0] == (0, 1) and model.pairs[-1] == (8, 9)

    def test_separable_blobs_zero_pair_error(self):
        X, y = _blobs(3)
        model = train_one_vs_one(X, y, ["a", "b", "c"], TrainConfig(c=10.0))
        for (i, j), binary in zip(model.pairs, model.binaries):
            mask = (y == i) | (y == j)
            pred = binary.decision_function(X[mask]) > 0
            assert np.array_equal(pred, y[mask] == i)
            assert binary.identity == (model.classes[i], model.classes[j])

    def test_posteriors_on_simplex(self):
        X, y = _blobs(3)
        proba = train_one_vs_one(X, y, ["a", "b", "c"]).predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)
        assert np.mean(proba.argmax(axis=1) == y) == 1.0

    def test_small_class_rejected(self):
        X, y = _blobs(2)
        X, y = X[:17], y[:17]
        with pytest.raises(DataError, match="'b' has 2"):
            train_one_vs_one(X, y, ["a", "b"], calibration_folds=3)

    def test_jobs_do_not_change_result(self):
        X, y = _blobs(4, per=8, spread=1.0)
        a = train_one_vs_one(X, y, list("abcd"), seed=4, jobs=1)
        b = train_one_vs_one(X, y, list("abcd"), seed=4, jobs=4)
        assert a.to_json() == b.to_json()

    def test_json_round_trip(self):
        X, y = _blobs(3, spread=1.0)
        model = train_one_vs_one(X, y, ["a", "b", "c"])
        obj = json.loads(model.to_json())
        assert obj["classes"] == ["a", "b", "c"]
        assert [e["pair"] for e in obj["pairs"]] == [[0, 1], [0, 2], [1, 2]]
        assert set(obj["pairs"][0]["platt"]) == {"a", "b"}
        back = PairwiseModel.from_dict(obj)
        np.testing.assert_array_equal(back.predict_proba(X), model.predict_proba(X))
