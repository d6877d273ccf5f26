import csv
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trialoffer import _kernels
from trialoffer.dynamics import run_stochastic
from trialoffer.exceptions import ParseError, RangeError, ShapeError
from trialoffer.experiments import (
    AGGREGATE_HEADER,
    EmptyCellWarning,
    Format,
    GroupAssignment,
    PositionWeights,
    PreferenceData,
    RankingStrategy,
    build_market,
    cluster_users,
    estimate_quality,
    estimate_visibility,
    fixture_path,
    load_groups,
    load_preferences,
    ranking_factors,
    reachable_items,
    run_experiment,
    save_groups,
    simulate_ranking,
    write_aggregate,
)
from trialoffer.market import MarketConfig

# group means of the 8 x 6 reference fixture, averaged by hand
REF_VISIBILITY = np.array([[0.6, 0.75, 0.8, 0.8, 0.5, 0.3],
                           [0.2, 0.4, 0.85, 0.4, 0.75, 0.7]])
REF_QUALITY = np.array([[0.5, 0.45, 0.4, 0.4, 0.3, 0.1],
                        [0.4 / 3, 0.25, 0.75, 0.5 / 3, 0.75, 0.7]])


@pytest.fixture
def reference(data_dir):
    data = load_preferences(data_dir / "reference_8x6.csv")
    groups = load_groups(data_dir / "reference_8x6_groups.csv")
    return data, groups


@pytest.fixture(scope="module")
def synthetic():
    data = load_preferences(fixture_path("synthetic_2x20.csv"))
    groups = load_groups(fixture_path("synthetic_2x20_groups.csv"))
    return data, groups


def write(path, text):
    path.write_text(text)
    return path


class TestLoading:
    def test_reference_fixture(self, reference):
        data, groups = reference
        assert data.gamma.shape == (8, 6)
        assert data.observed_mask.sum() == 20
        np.testing.assert_array_equal(groups.sizes, [4, 4])

    def test_triplet_mask(self, tmp_path):
        p = write(tmp_path / "t.csv", "user,item,value\na,x,0.5\na,y,0.2\nb,x,1.0\nc,y,0.0\n")
        with pytest.warns(EmptyCellWarning):
            data = load_preferences(p)
        assert data.gamma.shape == (3, 2)
        assert data.observed_mask.sum() == 4
        assert data.gamma[1, 1] == 0.0 and not data.observed_mask[1, 1]

    def test_dense_needs_mask(self, tmp_path):
        p = write(tmp_path / "d.csv", "0.1,0.2\n0.3,0.4\n")
        with pytest.raises(ParseError, match="mask"):
            load_preferences(p, Format.DENSE)
        m = write(tmp_path / "m.csv", "1,0\n0,1\n")
        data = load_preferences(p, "DenseCsv", mask_path=m)
        np.testing.assert_array_equal(data.observed_mask, [[True, False], [False, True]])

    def test_dense_mask_shape(self, tmp_path):
        p = write(tmp_path / "d.csv", "0.1,0.2\n0.3,0.4\n")
        m = write(tmp_path / "m.csv", "1,0\n")
        with pytest.raises(ShapeError):
            load_preferences(p, Format.DENSE, mask_path=m)

    def test_out_of_range(self, tmp_path):
        p = write(tmp_path / "t.csv", "user,item,value\n0,0,4\n0,1,2\n1,0,5\n1,1,1\n")
        with pytest.raises(RangeError):
            load_preferences(p)
        data = load_preferences(p, normalize=True)
        np.testing.assert_allclose(data.gamma, [[0.75, 0.25], [1.0, 0.0]])

    def test_parse_error_location(self, tmp_path):
        p = write(tmp_path / "t.csv", "user,item,value\n0,0,0.5\n0,1,abc\n")
        with pytest.raises(ParseError) as info:
            load_preferences(p)
        assert info.value.row == 3 and info.value.column == "value"
        assert "row 3" in str(info.value)

    def test_missing_column(self, tmp_path):
        p = write(tmp_path / "t.csv", "user,value\n0,0.5\n")
        with pytest.raises(ParseError, match="item"):
            load_preferences(p)

    def test_duplicate(self, tmp_path):
        p = write(tmp_path / "t.csv", "user,item,value\n0,0,0.5\n0,0,0.4\n")
        with pytest.raises(ParseError, match="duplicate"):
            load_preferences(p)

    def test_user_without_observation(self):
        with pytest.raises(RangeError):
            PreferenceData(np.full((2, 2), 0.5), np.array([[True, False], [False, False]]))


class TestGroups:
    def test_weights(self):
        g = GroupAssignment(np.array([0, 1, 1, 2, 2, 2]), 3)
        np.testing.assert_allclose(g.weights, [1 / 6, 2 / 6, 3 / 6])
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_empty_group(self):
        with pytest.raises(RangeError):
            GroupAssignment(np.array([0, 0, 2]), 3)

    def test_round_trip(self, tmp_path):
        g = GroupAssignment(np.array([1, 0, 1, 0]), 2)
        save_groups(g, tmp_path / "g.csv")
        np.testing.assert_array_equal(load_groups(tmp_path / "g.csv").group_of, g.group_of)

    def test_incomplete_file(self, tmp_path):
        p = write(tmp_path / "g.csv", "user,group\n0,0\n2,1\n")
        with pytest.raises(ParseError):
            load_groups(p)


class TestEstimation:
    def test_reference_visibility(self, reference):
        np.testing.assert_allclose(estimate_visibility(*reference), REF_VISIBILITY, atol=1e-15)

    def test_reference_quality(self, reference):
        np.testing.assert_allclose(estimate_quality(*reference), REF_QUALITY, atol=1e-15)

    def test_two_user_average(self):
        data = PreferenceData(np.array([[0.4, 0.2], [0.8, 0.6]]), np.array([[True, False], [True, False]]))
        g = GroupAssignment.single(2)
        with pytest.warns(EmptyCellWarning):
            assert estimate_visibility(data, g)[0, 0] == pytest.approx(0.6, abs=1e-15)
        with pytest.warns(EmptyCellWarning):
            assert estimate_quality(data, g)[0, 1] == pytest.approx(0.4, abs=1e-15)

    def test_singletons(self, reference):
        data, _ = reference
        g = GroupAssignment(np.arange(8), 8)
        with pytest.warns(EmptyCellWarning):
            v = estimate_visibility(data, g)
        np.testing.assert_array_equal(v, np.where(data.observed_mask, data.gamma, 0.0))

    def test_fully_observed_cell(self):
        data = PreferenceData(np.array([[0.7, 0.3]]), np.array([[True, False]]))
        with pytest.warns(EmptyCellWarning):
            q = estimate_quality(data, GroupAssignment.single(1))
        np.testing.assert_array_equal(q, [[0.0, 0.3]])

    def test_prune_and_unseen(self):
        gamma = np.array([[0.5, 0.7, 0.2], [0.6, 0.9, 0.4], [0.3, 0.8, 0.6], [0.1, 0.5, 0.7]])
        mask = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 0], [0, 1, 1]], dtype=bool)
        data = PreferenceData(gamma, mask)
        groups = GroupAssignment(np.array([0, 0, 1, 1]), 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyCellWarning)
            cfg, keep = build_market(data, groups, 0.5)
            cfg_u, keep_u = build_market(data, groups, 0.5, unseen_only=True)
        # item 0: group 0 has seen it (no quality), group 1 has not (no visibility)
        np.testing.assert_array_equal(keep, [False, True, True])
        np.testing.assert_allclose(cfg.visibility, [[0.7, 0.4], [0.65, 0.7]], atol=1e-15)
        # every member of group 1 has rated item 1
        np.testing.assert_array_equal(keep_u, keep)
        np.testing.assert_allclose(cfg_u.visibility, [[0.7, 0.4], [0.0, 0.7]], atol=1e-15)


class TestClustering:
    def test_singletons_and_single(self, reference):
        data, _ = reference
        np.testing.assert_array_equal(cluster_users(data, 8).group_of, np.arange(8))
        one = cluster_users(data, 1)
        assert one.M == 1 and one.weights.tolist() == [1.0]

    def test_blobs(self):
        rng = np.random.default_rng(0)
        centers = np.array([[0.9] * 5 + [0.1] * 5, [0.1] * 5 + [0.9] * 5])
        gamma = np.clip(np.repeat(centers, 15, axis=0) + rng.normal(0, 0.05, (30, 10)), 0, 1)
        data = PreferenceData(gamma, np.ones_like(gamma, dtype=bool))
        g = cluster_users(data, 2, seed=3)
        np.testing.assert_array_equal(g.group_of, [0] * 15 + [1] * 15)

    def test_deterministic(self, synthetic):
        data, _ = synthetic
        a = cluster_users(data, 3, seed=5).group_of
        b = cluster_users(data, 3, seed=5).group_of
        np.testing.assert_array_equal(a, b)

    def test_recovers_fixture_groups(self, synthetic):
        data, groups = synthetic
        np.testing.assert_array_equal(cluster_users(data, 2, seed=0).group_of, groups.group_of)

    def test_bad_m(self, reference):
        with pytest.raises(ValueError):
            cluster_users(reference[0], 9)


class TestPositionWeights:
    def test_reciprocal(self):
        pw = PositionWeights.reciprocal(6, cutoff=3)
        np.testing.assert_allclose(pw.iota, [1, 0.5, 1 / 3, 0, 0, 0])
        assert pw.cutoff == 3

    def test_validation(self):
        with pytest.raises(RangeError):
            PositionWeights([0.5, 1.0])
        with pytest.raises(RangeError):
            PositionWeights([0.0, 0.0])

    def test_from_file(self, tmp_path):
        p = write(tmp_path / "iota.txt", "1.0\n0.5\n# comment\n0.25\n")
        pw = PositionWeights.from_file(p, n_items=5)
        np.testing.assert_allclose(pw.iota, [1.0, 0.5, 0.25, 0.0, 0.0])
        bad = write(tmp_path / "bad.txt", "1.0\nx\n")
        with pytest.raises(ParseError):
            PositionWeights.from_file(bad)


class TestRankingFactors:
    def test_quality_example(self):
        eta = ranking_factors("Quality", [1.0, 0.5, 0.25], quality_row=[0.2, 0.9, 0.5])
        np.testing.assert_array_equal(eta, [0.25, 1.0, 0.5])

    def test_popularity_ties(self):
        eta = ranking_factors(RankingStrategy.POPULARITY, [1.0, 0.5, 0.25], phi=np.full(3, 1 / 3))
        np.testing.assert_array_equal(eta, [1.0, 0.5, 0.25])

    def test_cutoff_one(self):
        pw = PositionWeights.reciprocal(5, cutoff=1)
        eta = ranking_factors("Popularity", pw, phi=[0.1, 0.3, 0.2, 0.25, 0.15])
        assert np.count_nonzero(eta) == 1 and eta[1] == 1.0

    def test_random_is_permutation(self):
        gen = np.random.default_rng(0)
        iota = np.array([1.0, 0.5, 0.25, 0.125])
        draws = [ranking_factors("Random", iota, phi=np.full(4, 0.25), rng=gen) for _ in range(20)]
        for eta in draws:
            np.testing.assert_array_equal(np.sort(eta), np.sort(iota))
        assert len({tuple(e) for e in draws}) > 1

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=60), st.integers(2, 7))
    def test_incremental_popularity_order(self, bumps, n):
        counts = np.ones(n, dtype=np.int64)
        pos = _kernels.descending_positions(counts.astype(float))
        order = np.argsort(pos)
        for j in bumps:
            j = j % n
            counts[j] += 1
            _kernels._bump(order, pos, counts, j)
            np.testing.assert_array_equal(pos, _kernels.descending_positions(counts.astype(float)))


class TestSimulateRanking:
    def test_unit_quality(self):
        cfg = MarketConfig(np.array([0.5, 0.5]), np.ones((2, 4)), np.ones((2, 4)), np.array([0.5, 0.5]))
        for strategy in RankingStrategy:
            tr = simulate_ranking(cfg, strategy, PositionWeights.reciprocal(4), 500, seed=1, record_every=50)
            np.testing.assert_array_equal(tr.efficiency[1:], 1.0)

    def test_unranked_matches_purchase_clock(self):
        rng = np.random.default_rng(4)
        cfg = MarketConfig(np.array([0.4, 0.6]), rng.uniform(0.2, 1, (2, 5)), rng.uniform(0.2, 1, (2, 5)),
                           np.array([0.5, 0.5]))
        st_ = run_stochastic(cfg, T_purchases=300, seed=9)
        tr = simulate_ranking(cfg, None, None, st_.meta["total_trials"], seed=9)
        np.testing.assert_array_equal(tr.counts[-1], st_.meta["counts"][-1])
        assert tr.purchases[-1] == 300

    def test_window_efficiency(self):
        cfg = MarketConfig.homogeneous(np.ones(3), [0.5, 0.5, 0.5], 0.5)
        tr = simulate_ranking(cfg, "Random", PositionWeights.reciprocal(3), 5000, seed=2,
                              record_every=1000, window=1000)
        assert np.all(np.abs(tr.window_efficiency[1:] - 0.5) < 0.06)

    def test_bad_counts(self):
        cfg = MarketConfig.homogeneous(np.ones(2), [0.5, 0.5], 0.5)
        with pytest.raises(RangeError):
            simulate_ranking(cfg, "Random", [1.0, 0.5], 10, 0, d0=[0, 1])


class TestRunExperiment:
    def test_single_group_reproduces_direct_run(self, synthetic):
        data, _ = synthetic
        groups = GroupAssignment.single(data.n_users)
        res = run_experiment(data, groups, "Quality", r=0.5, T=3000, seeds=[7], record_every=100)
        v, q = estimate_visibility(data, groups), estimate_quality(data, groups)
        direct = MarketConfig.homogeneous(v[0], q[0], 0.5)
        tr = simulate_ranking(direct, "Quality", PositionWeights.reciprocal(data.n_items), 3000, 7, 100)
        np.testing.assert_array_equal(res.trajectories[0].counts, tr.counts)
        np.testing.assert_array_equal(res.trajectories[0].purchases, tr.purchases)

    def test_parallel_matches_serial(self, synthetic):
        data, groups = synthetic
        a = run_experiment(data, groups, "Popularity", T=2000, seeds=[0, 1, 2], record_every=500)
        b = run_experiment(data, groups, "Popularity", T=2000, seeds=[0, 1, 2], record_every=500, jobs=3)
        for x, y in zip(a.trajectories, b.trajectories):
            np.testing.assert_array_equal(x.counts, y.counts)

    def test_random_entropy_near_maximum(self, synthetic):
        res = run_experiment(*synthetic, "Random", T=50000, seeds=range(10), record_every=5000)
        n_eff = reachable_items(res.cfg).sum()
        final = np.array([tr.entropy[-1] for tr in res.trajectories])
        assert np.all(np.abs(final - np.log(n_eff)) <= 0.05 * np.log(n_eff))

    def test_quality_beats_random(self, synthetic):
        q = run_experiment(*synthetic, "Quality", T=50000, seeds=range(10), record_every=5000)
        r = run_experiment(*synthetic, "Random", T=50000, seeds=range(10), record_every=5000)
        burn = q.times >= 25000
        assert np.all(q.quantiles()[0][burn, 1] >= r.quantiles()[0][burn, 1])

    def test_aggregate_csv(self, synthetic, tmp_path):
        results = [run_experiment(*synthetic, s, T=1000, seeds=[0, 1], record_every=500) for s in RankingStrategy]
        write_aggregate(results, tmp_path / "agg.csv")
        rows = list(csv.reader(open(tmp_path / "agg.csv")))
        assert rows[0] == AGGREGATE_HEADER
        assert [r[1] for r in rows[1:]] == ["Random"] * 2 + ["Popularity"] * 2 + ["Quality"] * 2
        assert [int(r[0]) for r in rows[1:3]] == [500, 1000]

    def test_trajectory_csv(self, synthetic, tmp_path):
        res = run_experiment(*synthetic, "Random", T=1000, seeds=[0], record_every=500)
        res.trajectories[0].to_csv(tmp_path / "s.csv")
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0][:5] == ["t", "purchases", "efficiency", "window_efficiency", "entropy"]
        assert len(rows[0]) == 5 + 20

    def test_rejects_bad_feedback(self, synthetic):
        with pytest.raises(RangeError):
            run_experiment(*synthetic, "Random", r=1.0, T=10)
