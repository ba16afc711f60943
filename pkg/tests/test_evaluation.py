import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupmatch.data import Episode, SynthConfig, generate_synthetic, relabel, split_probe_gallery
from groupmatch.evaluation import (
    ModelScorer,
    RankTable,
    average_precision,
    cmc,
    mean_average_precision,
    mean_pool_group_score,
    part_distance_person_scores,
    run_group_reid,
    run_person_reid,
    summarize,
)
from groupmatch.graph import GroupView
from groupmatch.model import ModelConfig, init_params

ranks = st.lists(st.integers(1, 12), min_size=1, max_size=30)


class TestCMC:
    def test_all_first(self):
        np.testing.assert_array_equal(cmc(RankTable.from_first_ranks([1, 1, 1]), 5), np.ones(5))

    def test_hand_example(self):
        curve = cmc(RankTable.from_first_ranks([1, 2, 1]), 3)
        assert curve[0] == pytest.approx(2 / 3)
        assert curve[1] == 1.0

    def test_no_match_is_an_error(self):
        table = RankTable()
        table.add("p", [0, 1], [0.5, 0.1], [False, False])
        with pytest.raises(ValueError):
            cmc(table)
        with pytest.raises(ValueError):
            mean_average_precision(table)

    def test_empty(self):
        with pytest.raises(ValueError):
            cmc(RankTable())

    @settings(max_examples=100, deadline=None)
    @given(ranks)
    def test_monotone_and_bounded(self, r):
        curve = cmc(RankTable.from_first_ranks(r, 12), 12)
        assert np.all(np.diff(curve) >= 0)
        assert curve.min() >= 0 and curve.max() <= 1
        assert curve[-1] == 1.0


class TestMAP:
    def test_all_first(self):
        assert mean_average_precision(RankTable.from_first_ranks([1, 1])) == 1.0

    def test_two_hits(self):
        assert average_precision(np.array([True, False, True])) == pytest.approx(5 / 6)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=20).filter(any))
    def test_bounds(self, correct):
        ap = average_precision(np.array(correct))
        assert 0 < ap <= 1


class TestRankTable:
    def test_sorted_and_stable(self):
        table = RankTable()
        table.add("p", ["a", "b", "c", "d"], [0.1, 0.5, 0.5, 0.2], [False, False, True, False])
        row = table.rows[0]
        assert row.gallery_ids == ["b", "c", "d", "a"]
        assert np.all(np.diff(row.scores) <= 0)
        assert row.first_correct == 1


def views(groups=4, seed=0):
    return generate_synthetic(SynthConfig(groups=groups, seed=seed))


class TestProtocols:
    def test_single_true_match(self):
        a, b = views(1)
        table = run_group_reid([Episode(a, (b,))], mean_pool_group_score)
        assert cmc(table, 1)[0] == 1.0

    def test_empty_gallery(self):
        a = views(1)[0]
        with pytest.raises(ValueError):
            run_group_reid([Episode(a, ())], mean_pool_group_score)
        with pytest.raises(ValueError):
            run_person_reid([Episode(a, ())], part_distance_person_scores)

    def test_identical_person_ranks_first(self):
        a = views(1)[0]
        twin = GroupView("other", 5, a.person_ids, a.parts.copy())
        table = run_person_reid([Episode(a, (twin,))], part_distance_person_scores)
        assert all(row.first_correct == 0 for row in table.rows)

    def test_person_probe_excludes_own_view(self):
        recs = views(3)
        eps = split_probe_gallery(recs)
        table = run_person_reid(eps, part_distance_person_scores)
        for row in table.rows:
            gid, vid, _ = row.probe
            assert all((g, v) != (gid, vid) for g, v, _ in row.gallery_ids)

    def test_model_and_baseline_tables_same_shape(self):
        recs = views(3)
        eps = split_probe_gallery(recs)
        params = init_params(ModelConfig(), 0)
        base = run_group_reid(eps, mean_pool_group_score)
        model = run_group_reid(eps, ModelScorer(params).group)
        assert len(base) == len(model)
        assert [len(r.gallery_ids) for r in base.rows] == [len(r.gallery_ids) for r in model.rows]

    def test_repeatable(self):
        eps = split_probe_gallery(views(3))
        params = init_params(ModelConfig(), 1)
        a = summarize(run_group_reid(eps, ModelScorer(params, cache=False).group))
        b = summarize(run_group_reid(eps, ModelScorer(params, cache=False).group))
        assert a == b

    def test_skipped_persons_counted(self):
        recs = generate_synthetic(SynthConfig(groups=6, replacement=0.5, min_members=5, seed=2))
        table = run_person_reid(split_probe_gallery(recs), part_distance_person_scores)
        assert table.skipped > 0
        assert summarize(table)["skipped"] == table.skipped

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 6))
    def test_distractors_never_help(self, seed, n):
        recs = views(4, seed)
        extra = relabel(generate_synthetic(SynthConfig(groups=n, views=1, seed=seed + 1)), "x")
        plain = cmc(run_group_reid(split_probe_gallery(recs), mean_pool_group_score), 10)
        crowded = cmc(run_group_reid(split_probe_gallery(recs, extra), mean_pool_group_score), 10)
        assert np.all(crowded <= plain + 1e-12)
        plain_p = cmc(run_person_reid(split_probe_gallery(recs), part_distance_person_scores), 10)
        crowded_p = cmc(run_person_reid(split_probe_gallery(recs, extra), part_distance_person_scores), 10)
        assert np.all(crowded_p <= plain_p + 1e-12)


def test_summary_keys():
    out = summarize(RankTable.from_first_ranks([1, 3, 25], 30))
    assert set(out) == {"R-1", "R-5", "R-10", "R-20", "mAP", "probes", "skipped"}
    assert out["R-1"] == pytest.approx(1 / 3) and out["R-5"] == pytest.approx(2 / 3)
