import numpy as np
import pytest

from conftest import corpus_of, review
from helprank.features import compute_features, squash
from helprank.recommend import (FactorModel, HelpfulnessWeights, RatingMatrix, TrainingDiverged, build_weights,
                                epoch_order, estimate_rating, load_model, mf_objective, predict_matrix,
                                predicted_helpfulness, rmse, save_model, top_n, train_mf, train_svdpp,
                                train_weighted_mf)
from helprank.regress import M3, ForestHyper, predict, train_forest
from helprank.synthetic import make_corpus, noisy_ratings, rank_one_matrix


def _small(seed=0, n=12, m=10, density=0.5):
    rng = np.random.default_rng(seed)
    triples = [(f"u{u:02d}", f"i{i:02d}", float(rng.integers(1, 6)))
               for u in range(n) for i in range(m) if rng.random() < density]
    return RatingMatrix.from_triples(triples)


# ---- rating matrix and weights ---------------------------------------------

def test_rating_matrix_rejects_duplicate_pairs():
    with pytest.raises(ValueError):
        RatingMatrix.from_triples([("u", "i", 4), ("u", "i", 5)])


def test_from_corpus_keeps_latest_review():
    c = corpus_of(review("a", "u", "i", stars=2, date="2019-01-01"),
                  review("b", "u", "i", stars=5, date="2020-01-01"),
                  review("c", "v", "i", stars=3))
    R = RatingMatrix.from_corpus(c)
    assert len(R) == 2
    assert dict(zip(R.keys, R.ratings)) == {"b": 5.0, "c": 3.0}


def test_weights_validation_and_csv(tmp_path):
    R = _small()
    with pytest.raises(ValueError):
        HelpfulnessWeights({"x": 1.5})
    W = HelpfulnessWeights({k: (n % 7) / 7 for n, k in enumerate(R.keys)})
    path = W.to_csv(tmp_path / "w.csv", R)
    back = HelpfulnessWeights.read_csv(path)
    np.testing.assert_allclose(back.for_matrix(R), W.for_matrix(R), atol=5e-7)
    with pytest.raises(KeyError):
        HelpfulnessWeights({}).for_matrix(R)


def test_predicted_helpfulness_branches():
    c, _ = make_corpus(seed=1, n_users=6, n_items=5, reviews_per_user=(4, 5))
    fm = compute_features(c)
    m3 = train_forest(fm.X(M3.features), fm.y, M3, ForestHyper(n_trees=5))
    voted = review("v", "u", "i", useful=1, cool=2)
    assert predicted_helpfulness(voted, fm.row(0), m3) == squash(3)
    silent = review("s", "u", "i")
    expected, _ = predict(m3, fm.row(0).vector())
    assert predicted_helpfulness(silent, fm.row(0), m3) == expected
    weights, fallback = build_weights(c, fm, m3)
    assert fallback == pytest.approx(np.mean([r.total_votes == 0 for r in c.reviews]))
    assert all(0 <= w < 1 for w in weights.weights.values())


def test_blank_text_gets_unit_weight():
    c = corpus_of(review("a", "u", "i", text=""), review("b", "u", "j", useful=2),
                  review("c", "v", "i"), review("d", "v", "j", text="lovely stay"))
    fm = compute_features(c)
    m3 = train_forest(fm.X(M3.features), fm.y, M3, ForestHyper(n_trees=2))
    weights, _ = build_weights(c, fm, m3)
    assert weights.weights["a"] == 1.0
    assert weights.weights["b"] == squash(2)


# ---- plain and weighted MF -----------------------------------------------------

def test_rank_one_recovery():
    R = rank_one_matrix(15, 15, seed=0)
    m = train_mf(R, K=1, lam=0.0, lr=0.01, epochs=500)
    assert rmse(m, R) < 1e-3
    pred, _ = predict_matrix(m, R, clamp=False)
    assert np.max(np.abs(pred - R.ratings)) < 1e-2


def test_all_ones_weights_match_plain_mf_exactly():
    R = _small(1)
    a = train_weighted_mf(R, np.ones(len(R)), K=4, epochs=15, track_objective=True)
    b = train_mf(R, K=4, epochs=15, track_objective=True)
    assert a.objective_history == b.objective_history
    assert a.user_factors.tobytes() == b.user_factors.tobytes()
    assert a.item_factors.tobytes() == b.item_factors.tobytes()


def test_zero_weight_elision_is_exact():
    R = _small(2)
    w = np.where(np.arange(len(R)) % 4 == 0, 0.0, 0.6)
    a = train_weighted_mf(R, w, K=3, epochs=10)
    keep = np.flatnonzero(w > 0)
    b = train_weighted_mf(R.subset(keep), w[keep], K=3, epochs=10)
    assert a.user_factors.tobytes() == b.user_factors.tobytes()
    assert a.item_factors.tobytes() == b.item_factors.tobytes()


def test_epoch_order_stable_under_removal():
    h = np.arange(1, 50, dtype=np.uint64) * np.uint64(2654435761)
    full = epoch_order(h, 3)
    sub = np.arange(0, 49, 3)
    kept = [k for k in full if k in set(sub.tolist())]
    assert [sub[j] for j in epoch_order(h[sub], 3)] == kept
    assert not np.array_equal(epoch_order(h, 0), epoch_order(h, 1))


def _duplicated(R, w, dup):
    # a matrix with repeated (user, item) pairs, built past the constructor check on purpose
    extra = np.asarray(dup)
    D = object.__new__(RatingMatrix)
    for name, val in (("user_ids", R.user_ids), ("item_ids", R.item_ids),
                      ("users", np.concatenate([R.users, R.users[extra]])),
                      ("items", np.concatenate([R.items, R.items[extra]])),
                      ("ratings", np.concatenate([R.ratings, R.ratings[extra]])),
                      ("keys", R.keys + tuple(R.keys[k] + "#2" for k in extra))):
        object.__setattr__(D, name, val)
    return D, np.concatenate([w, w[extra]])


def test_doubling_weight_matches_duplication():
    R_train, _, R_test, _ = noisy_ratings(seed=3, noisy_share=0.0)
    w = np.full(len(R_train), 0.5)
    dup = np.arange(0, len(R_train), 3)
    doubled = w.copy()
    doubled[dup] = 1.0
    D, wd = _duplicated(R_train, w, dup)
    kw = dict(K=5, lam=0.05, lr=0.01, epochs=60)
    a = rmse(train_weighted_mf(R_train, doubled, **kw), R_test, clamp=True)
    b = rmse(train_weighted_mf(D, wd, **kw), R_test, clamp=True)
    assert abs(a - b) / b < 0.02


def test_objective_non_increasing_with_small_rate():
    R = _small(4, density=0.6)
    w = np.linspace(0.2, 1.0, len(R))
    m = train_weighted_mf(R, w, K=3, lam=0.05, lr=0.002, epochs=80, track_objective=True)
    assert np.all(np.diff(m.objective_history) <= 1e-6)


def test_divergence_is_reported():
    R = _small(5)
    with pytest.raises(TrainingDiverged):
        train_mf(R, K=5, lr=5.0, epochs=30)


def test_invalid_arguments():
    R = _small(6)
    with pytest.raises(ValueError):
        train_mf(R, K=0)
    with pytest.raises(ValueError):
        train_weighted_mf(R, np.full(len(R), 2.0))
    with pytest.raises(ValueError):
        train_mf(R.subset([]))


def test_seeded_reproduction():
    R = _small(7)
    a, b = train_mf(R, K=4, epochs=5, seed=3), train_mf(R, K=4, epochs=5, seed=3)
    assert a.user_factors.tobytes() == b.user_factors.tobytes()
    assert not np.array_equal(a.user_factors, train_mf(R, K=4, epochs=5, seed=4).user_factors)


# ---- SVD++ -------------------------------------------------------------------

def test_svdpp_single_rating():
    R = RatingMatrix.from_triples([("u", "i", 4.0)])
    m = train_svdpp(R, K=2, epochs=200)
    assert estimate_rating(m, "u", "i")[0] == pytest.approx(4.0, abs=1e-3)


def test_svdpp_constant_ratings():
    R = RatingMatrix.from_triples([(f"u{u}", f"i{i}", 3.5) for u in range(6) for i in range(6) if (u + i) % 2])
    m = train_svdpp(R, K=3, epochs=30, lam=0.1)
    assert m.global_mean == 3.5
    assert np.max(np.abs(m.user_bias)) < 0.02 and np.max(np.abs(m.item_bias)) < 0.02
    assert rmse(m, R) < 0.05


def test_svdpp_beats_unbiased_mf_on_biased_data():
    rng = np.random.default_rng(8)
    bu, bi = rng.normal(0, 0.7, 20), rng.normal(0, 0.7, 20)
    P, Q = rng.normal(0, 0.4, (20, 2)), rng.normal(0, 0.4, (20, 2))
    full = np.clip(3.4 + bu[:, None] + bi[None, :] + P @ Q.T, 1, 5)
    mask = rng.random((20, 20)) < 0.6
    test = rng.random((20, 20)) < 0.25
    trip = lambda sel: [(f"u{u:02d}", f"i{i:02d}", full[u, i]) for u, i in zip(*np.nonzero(sel))]
    uids, iids = [f"u{u:02d}" for u in range(20)], [f"i{i:02d}" for i in range(20)]
    R_train = RatingMatrix.from_triples(trip(mask & ~test), uids, iids)
    R_test = RatingMatrix.from_triples(trip(mask & test), uids, iids)
    kw = dict(K=5, lam=0.02, lr=0.01, epochs=60)
    assert rmse(train_svdpp(R_train, **kw), R_test, True) < rmse(train_mf(R_train, **kw), R_test, True)


# ---- inference ------------------------------------------------------------------

def _zero_model(biased=False):
    return FactorModel("mf", ("u",), ("a", "b"), np.zeros((1, 2)), np.zeros((2, 2)), {},
                       np.array([True]), np.array([True, True]), biased, 3.7,
                       np.zeros(1) if biased else None, np.zeros(2) if biased else None)


def test_estimate_rating_clamp_and_fallback():
    m = _zero_model()
    assert estimate_rating(m, "u", "a", clamp=False) == (0.0, False)
    assert estimate_rating(m, "u", "a") == (1.0, False)
    assert estimate_rating(m, "nobody", "a") == (3.0, True)
    svd = train_svdpp(_small(9), K=2, epochs=3)
    assert estimate_rating(svd, "stranger", "i00") == (svd.global_mean, True)


def test_top_n_ordering_rules():
    m = _zero_model()
    assert top_n(m, "u", ["b", "a"], 5) == ["a", "b"]
    with pytest.raises(ValueError):
        top_n(m, "u", [], 3)
    with pytest.raises(ValueError):
        top_n(m, "u", ["a"], 0)


def test_top_n_dominant_item_and_monotone_transform():
    rng = np.random.default_rng(10)
    U = np.abs(rng.normal(1, 0.2, (5, 2)))
    I = np.abs(rng.normal(0.5, 0.2, (4, 2)))
    I[2] = [3.0, 3.0]
    ids = ("a", "b", "c", "d")
    make = lambda U_: FactorModel("mf", tuple(f"u{k}" for k in range(5)), ids, U_, I, {},
                                  np.ones(5, bool), np.ones(4, bool))
    m, scaled = make(U), make(U * 7.5)
    for k in range(5):
        ranking = top_n(m, f"u{k}", ids, 4)
        assert ranking[0] == "c"
        assert top_n(scaled, f"u{k}", ids, 4) == ranking


def test_model_round_trip(tmp_path):
    R = _small(11)
    for m in (train_mf(R, K=3, epochs=3, biased=True), train_svdpp(R, K=3, epochs=3)):
        back = load_model(save_model(m, tmp_path / m.kind))
        assert back.user_factors.tobytes() == m.user_factors.tobytes()
        assert back.item_bias.tobytes() == m.item_bias.tobytes()
        p1, _ = predict_matrix(m, R)
        p2, _ = predict_matrix(back, R)
        assert p1.tobytes() == p2.tobytes()


def test_mf_objective_definition():
    R = RatingMatrix.from_triples([("u", "a", 4.0), ("u", "b", 2.0)])
    U, I = np.array([[1.0]]), np.array([[3.0], [1.0]])
    # errors (1, 1), weights (0.5, 1), penalty 0.1 * (1 + 9 + 1)
    assert mf_objective(R, np.array([0.5, 1.0]), U, I, 0.1) == pytest.approx(0.5 + 1 + 1.1)
