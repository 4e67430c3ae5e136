import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helprank.features import FEATURES
from helprank.regress import (M1, M2, M3, SPECS, ForestHyper, LinearHyper, build_tree, correlation_matrix,
                              feature_importance, get_spec, pearson, predict, predict_raw, rankdata,
                              run_study, spearman, svr_objective, train_forest, train_linear)


# ---- brute-force oracles ---------------------------------------------------

def pearson_oracle(a, b):
    n = len(a)
    ma, mb = math.fsum(a) / n, math.fsum(b) / n
    cov = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = math.fsum((x - ma) ** 2 for x in a)
    vb = math.fsum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def ranks_oracle(a):
    # rank of x = 1 + (#smaller) + (#equal - 1) / 2
    return [1 + sum(y < x for y in a) + (sum(y == x for y in a) - 1) / 2 for x in a]


def spearman_oracle(a, b):
    return pearson_oracle(ranks_oracle(a), ranks_oracle(b))


def test_correlation_oracle_200_pairs():
    rng = np.random.default_rng(123)
    for k in range(200):
        n = int(rng.integers(3, 51))
        if k % 3 == 0:
            a = rng.integers(0, 5, n).astype(float)
            b = rng.integers(0, 4, n).astype(float)
        else:
            a = rng.normal(size=n)
            b = 0.5 * a + rng.normal(size=n)
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        assert abs(pearson(a, b) - pearson_oracle(a, b)) < 1e-12
        assert abs(spearman(a, b) - spearman_oracle(a, b)) < 1e-12


def test_rankdata_midranks():
    assert rankdata([10, 20, 20, 5]).tolist() == [2.0, 3.5, 3.5, 1.0]


@given(st.lists(st.integers(-5, 5), min_size=2, max_size=30).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.integers(-5, 5), min_size=len(a), max_size=len(a)))))
def test_spearman_is_pearson_of_ranks(pair):
    a, b = (np.array(x, dtype=float) for x in pair)
    s = spearman(a, b)
    p = pearson(rankdata(a), rankdata(b))
    assert (math.isnan(s) and math.isnan(p)) or s == p
    if not math.isnan(s):
        assert -1.0 <= s <= 1.0


def test_pearson_constant_is_nan():
    assert math.isnan(pearson([1, 1, 1], [1, 2, 3]))
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


# ---- specs -----------------------------------------------------------------

def test_specs_nested():
    assert set(M1.features) < set(M2.features) < set(M3.features)
    assert M3.features == FEATURES
    assert M2.features == ("rat", "len", "ugr", "pol")
    assert get_spec("M2") is M2 and len(SPECS) == 3
    with pytest.raises(ValueError):
        get_spec("M4")


# ---- linear ----------------------------------------------------------------

def test_linear_recovers_planted_weights():
    rng = np.random.default_rng(0)
    X = rng.random((500, 3))
    w = np.array([0.5, -0.2, 0.3])
    y = 0.1 + X @ w
    m = train_linear(X, y, hp=LinearHyper(C=100))
    np.testing.assert_allclose(m.weights, w, atol=1e-2)
    assert m.bias == pytest.approx(0.1, abs=1e-2)


def test_linear_loss_non_increasing():
    rng = np.random.default_rng(1)
    X = rng.random((300, 4))
    y = np.clip(0.2 + X @ [0.3, 0.1, 0, -0.1] + rng.normal(0, 0.05, 300), 0, 0.99)
    for hp in (LinearHyper(), LinearHyper(precondition=False, learning_rate=0.5), LinearHyper(epsilon=0.05)):
        hist = np.array(train_linear(X, y, hp=hp).loss_history)
        assert hist.size == hp.epochs + 1
        assert np.all(np.diff(hist) <= 1e-6)


def test_linear_matches_reference_objective():
    sk = pytest.importorskip("sklearn.svm")
    rng = np.random.default_rng(2)
    X = rng.random((400, 5)) * [1, 0.1, 0.3, 1, 0.05]
    y = np.clip(X @ [0.4, 2.0, -0.5, 0.1, 3.0] + rng.normal(0, 0.1, 400), 0, None)
    m = train_linear(X, y)
    ref = sk.LinearSVR(C=1.0, epsilon=0.0, loss="epsilon_insensitive", tol=1e-8, max_iter=200000,
                       dual=True).fit(X, y)
    lam = 1.0 / len(y)
    mine = svr_objective(m.weights, m.bias, X, y, 0.0, lam)
    theirs = svr_objective(ref.coef_, ref.intercept_[0], X, y, 0.0, lam)
    assert mine <= theirs + 1e-3


def test_linear_standardize_flag_changes_penalty_only():
    rng = np.random.default_rng(3)
    X = rng.random((300, 2))
    y = 0.2 + 0.4 * X[:, 0]
    a = train_linear(X, y, hp=LinearHyper(C=100, standardize=True))
    np.testing.assert_allclose(a.weights, [0.4, 0.0], atol=1e-2)


def test_linear_deterministic_and_shapes():
    rng = np.random.default_rng(4)
    X, y = rng.random((80, 3)), rng.random(80)
    a = train_linear(X, y, M1)
    b = train_linear(X, y, M1)
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias
    assert list(a.coefficients) == list(M1.features)
    with pytest.raises(ValueError):
        train_linear(X, y, M2)


# ---- trees and forests -------------------------------------------------------

def test_tree_matches_sklearn_cart():
    tree_mod = pytest.importorskip("sklearn.tree")
    rng = np.random.default_rng(5)
    X = rng.random((200, 4))
    y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=200)
    hp = ForestHyper(n_trees=1, max_features=None, bootstrap=False, min_samples_leaf=3, max_depth=6)
    mine = build_tree(X, y, hp, np.random.default_rng(0))
    ref = tree_mod.DecisionTreeRegressor(min_samples_leaf=3, max_depth=6, random_state=0).fit(X, y)
    Xt = rng.random((500, 4))
    np.testing.assert_allclose(mine.predict(Xt), ref.predict(Xt), atol=1e-12)
    assert mine.n_nodes == ref.tree_.node_count


def test_stump_importance():
    X = np.array([[0.0, 5.0], [0.1, 5.0], [0.9, 5.0], [1.0, 5.0]])
    y = np.array([0.1, 0.1, 0.8, 0.8])
    f = train_forest(X, y, hp=ForestHyper(n_trees=1, bootstrap=False, max_features=None, min_samples_leaf=1))
    assert f.trees[0].n_nodes == 3
    assert feature_importance(f) == {"x0": 1.0, "x1": 0.0}


def test_constant_target_no_importance():
    X = np.random.default_rng(6).random((30, 3))
    f = train_forest(X, np.full(30, 0.3), hp=ForestHyper(n_trees=5))
    assert set(feature_importance(f).values()) == {0.0}


def test_forest_single_feature_step():
    # noise-feature splits take a share that shrinks with n; sklearn's forest behaves the same
    rng = np.random.default_rng(7)
    X = rng.random((2000, 5))
    y = np.where(X[:, 2] > 0.5, 0.8, 0.2)
    f = train_forest(X, y, hp=ForestHyper(n_trees=50, seed=1))
    imp = feature_importance(f)
    assert imp["x2"] >= 0.95
    assert sum(imp.values()) == pytest.approx(1.0, abs=1e-9)


def test_forest_importance_close_to_sklearn():
    ens = pytest.importorskip("sklearn.ensemble")
    rng = np.random.default_rng(11)
    X = rng.random((600, 6))
    y = 0.6 * X[:, 0] + 0.3 * (X[:, 1] > 0.5) + 0.05 * rng.random(600)
    mine = np.array(list(feature_importance(train_forest(X, y, hp=ForestHyper(n_trees=60))).values()))
    ref = ens.RandomForestRegressor(60, max_features=2, min_samples_leaf=2, random_state=0).fit(X, y)
    np.testing.assert_allclose(mine, ref.feature_importances_, atol=0.03)


def test_forest_prediction_is_tree_mean_and_leaves_bounded():
    rng = np.random.default_rng(8)
    X, y = rng.random((120, 11)), rng.random(120) * 0.99
    f = train_forest(X, y, M3, ForestHyper(n_trees=15))
    Xt = rng.random((20, 11))
    expected = sum(t.predict(Xt) for t in f.trees) / len(f.trees)
    np.testing.assert_allclose(predict_raw(f, Xt), expected, rtol=0, atol=1e-15)
    for t in f.trees:
        leaves = t.feature < 0
        assert np.all((t.value[leaves] >= 0) & (t.value[leaves] < 1))
        assert np.all(t.feature[~leaves] < 11)


def test_forest_seeded():
    rng = np.random.default_rng(9)
    X, y = rng.random((60, 3)), rng.random(60)
    a = predict_raw(train_forest(X, y, hp=ForestHyper(n_trees=8, seed=3)), X)
    b = predict_raw(train_forest(X, y, hp=ForestHyper(n_trees=8, seed=3)), X)
    c = predict_raw(train_forest(X, y, hp=ForestHyper(n_trees=8, seed=4)), X)
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()


def test_predict_clamps():
    rng = np.random.default_rng(10)
    X = rng.random((50, 1))
    m = train_linear(X, 2.0 * X[:, 0], hp=LinearHyper(C=100))
    value, clamped = predict(m, np.array([0.9]))
    assert clamped and 0 <= value < 1
    raw, flag = predict(m, np.array([0.9]), clamp=False)
    assert raw > 1 and not flag


# ---- study -------------------------------------------------------------------

def _fm(y_fn, n=150, seed=0):
    from helprank.features import COLUMNS, FeatureMatrix
    rng = np.random.default_rng(seed)
    vals = rng.random((n, len(COLUMNS))) * 0.9
    vals[:, -1] = y_fn(vals)
    ids = tuple(f"r{k}" for k in range(n))
    return FeatureMatrix(ids, tuple(f"u{k % 10}" for k in range(n)), tuple(f"i{k % 7}" for k in range(n)), vals)


def test_study_perfect_linear_signal():
    fm = _fm(lambda v: 0.05 + 0.3 * v[:, 0] + 0.2 * v[:, 1] + 0.1 * v[:, 2])
    rep = run_study(fm, regressors=("linear",), k=5, seed=1, linear_hp=LinearHyper(C=100))
    for row in rep.correlations:
        assert row["pearson"] > 0.99
    assert len(rep.fold_correlations) == 15
    assert rep.matrix.shape == (12, 12)
    assert rep.config["linear"]["C"] == 100


def test_study_shape_and_bounds():
    fm = _fm(lambda v: 0.5 * v[:, 7])
    rep = run_study(fm, k=3, seed=2, forest_hp=ForestHyper(n_trees=10))
    assert len(rep.correlations) == 6
    for row in rep.correlations:
        assert -1 <= row["pearson"] <= 1 and -1 <= row["spearman"] <= 1
    for imp in rep.importances.values():
        assert all(v >= 0 for v in imp.values())
        assert sum(imp.values()) == pytest.approx(1.0, abs=1e-9)
    m3 = rep.correlation("M3", "forest")["pearson"]
    assert m3 > rep.correlation("M1", "forest")["pearson"]


def test_study_deterministic_and_validates():
    fm = _fm(lambda v: 0.5 * v[:, 0], n=40)
    a = run_study(fm, k=4, seed=3, forest_hp=ForestHyper(n_trees=5))
    b = run_study(fm, k=4, seed=3, forest_hp=ForestHyper(n_trees=5))
    assert a.correlations == b.correlations
    with pytest.raises(ValueError):
        run_study(fm, k=1)
    with pytest.raises(ValueError):
        run_study(_fm(lambda v: v[:, 0], n=5), k=3)


def test_correlation_matrix_symmetric():
    fm = _fm(lambda v: v[:, 0] * 0.5)
    m = correlation_matrix(fm)
    np.testing.assert_allclose(m, m.T)
    np.testing.assert_allclose(np.diag(m), 1.0)
