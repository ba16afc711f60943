import json
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupmatch.data import (
    MIN_SHARED,
    DatasetError,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    relabel,
    shared_fraction,
    split_probe_gallery,
    write_dataset,
)
from groupmatch.graph import GroupView


def by_group(records):
    out = {}
    for r in records:
        out.setdefault(r.group_id, []).append(r)
    return out


class TestGenerator:
    def test_counts_and_shapes(self):
        cfg = SynthConfig(groups=20, views=2)
        recs = generate_synthetic(cfg)
        assert len(recs) == 40
        for r in recs:
            assert 2 <= r.n_persons <= 8
            assert r.parts.shape[1:] == (4, 16)

    def test_noiseless_views_identical(self):
        cfg = SynthConfig(noise=0.0, occlusion=0.0, replacement=0.0, groups=5)
        for views in by_group(generate_synthetic(cfg)).values():
            assert views[0].person_ids == views[1].person_ids
            assert np.array_equal(views[0].parts, views[1].parts)

    def test_deterministic(self):
        a, b = generate_synthetic(SynthConfig(seed=4)), generate_synthetic(SynthConfig(seed=4))
        assert all(x.person_ids == y.person_ids and np.array_equal(x.parts, y.parts) for x, y in zip(a, b))

    def test_held_out_views_leave_others_unchanged(self):
        cfg = SynthConfig(groups=4)
        base = generate_synthetic(cfg)
        more = generate_synthetic(cfg, views=[0, 1, 7])
        kept = [r for r in more if r.view_id in (0, 1)]
        assert all(np.array_equal(x.parts, y.parts) for x, y in zip(base, kept))

    def test_replacement_rate(self):
        # groups of 5+ members always have swappable slots
        cfg = SynthConfig(identities=200, groups=1000, min_members=5, max_members=8, replacement=0.1)
        _, stats = generate_synthetic(cfg, return_stats=True)
        assert abs(stats["replaced"] / stats["slots"] - 0.1) <= 0.02

    def test_occlusion_zeroes_one_part(self):
        cfg = SynthConfig(noise=0.0, occlusion=1.0, groups=3)
        for r in generate_synthetic(cfg):
            zero_parts = np.all(r.parts == 0, axis=-1).sum(axis=1)
            assert np.all(zero_parts == 1)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SynthConfig(groups=0)
        with pytest.raises(ValueError):
            SynthConfig(occlusion=1.5)
        with pytest.raises(ValueError):
            SynthConfig(min_members=5, max_members=3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_views_share_sixty_percent(self, seed, rate):
        cfg = SynthConfig(seed=seed, groups=6, views=3, replacement=rate)
        for views in by_group(generate_synthetic(cfg)).values():
            for v in views:
                assert len(set(v.person_ids)) == len(v.person_ids)
            for a in views:
                for b in views:
                    assert shared_fraction(a.person_ids, b.person_ids) >= MIN_SHARED - 1e-12


class TestFileFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        recs = generate_synthetic(SynthConfig(groups=5))
        back = load_dataset(write_dataset(tmp_path / "d.jsonl", recs))
        assert len(back) == len(recs)
        for x, y in zip(recs, back):
            assert (x.group_id, x.view_id, x.person_ids) == (y.group_id, y.view_id, y.person_ids)
            assert np.array_equal(x.parts, y.parts)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=6, max_size=6))
    def test_float_round_trip(self, tmp_path_factory, values):
        rec = GroupView(1, 0, (1, 2), np.array(values).reshape(2, 3, 1))
        path = tmp_path_factory.mktemp("f") / "x.jsonl"
        back = load_dataset(write_dataset(path, [rec]))[0]
        assert np.array_equal(back.parts, rec.parts)

    def test_part_count_mismatch_names_line(self, tmp_path):
        recs = generate_synthetic(SynthConfig(groups=2))
        path = write_dataset(tmp_path / "d.jsonl", recs)
        odd = generate_synthetic(SynthConfig(groups=1, parts=3))[0]
        with open(path, "a") as fh:
            from groupmatch.data import record_to_line
            fh.write(record_to_line(odd) + "\n")
        with pytest.raises(DatasetError, match="line 5"):
            load_dataset(path)

    @pytest.mark.parametrize("line,msg", [
        ("{not json", "line 1"),
        ('{"group_id": 1, "view_id": 0}', "persons"),
        ('{"group_id": 1, "view_id": 0, "persons": []}', "non-empty"),
        ('{"group_id": 1, "view_id": 0, "persons": [{"person_id": 1, "parts": [[1, 2], [3]]}]}', "person"),
        ('{"group_id": 1, "view_id": 0, "persons": [{"person_id": 1, "parts": [[1]]},'
         ' {"person_id": 1, "parts": [[2]]}]}', "duplicate"),
    ])
    def test_malformed(self, tmp_path, line, msg):
        path = tmp_path / "bad.jsonl"
        path.write_text(line + "\n")
        with pytest.raises(DatasetError, match=msg):
            load_dataset(path)

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "e.jsonl")

    def test_thousand_records_load_fast(self, tmp_path):
        recs = generate_synthetic(SynthConfig(groups=500, views=2))
        path = write_dataset(tmp_path / "big.jsonl", recs)
        t = time.perf_counter()
        assert len(load_dataset(path)) == 1000
        assert time.perf_counter() - t < 1.0


class TestProbeGallery:
    def test_two_by_two(self):
        recs = generate_synthetic(SynthConfig(groups=2, views=2))
        eps = split_probe_gallery(recs)
        assert len(eps) == 4
        assert all(len(e.gallery) == 3 for e in eps)
        assert all(any(g.group_id == e.probe.group_id for g in e.gallery) for e in eps)
        assert all(e.probe not in e.gallery for e in eps)

    def test_distractors_gallery_only(self):
        recs = generate_synthetic(SynthConfig(groups=2))
        extra = relabel(generate_synthetic(SynthConfig(groups=3, views=1, seed=9)), "x")
        eps = split_probe_gallery(recs, extra)
        assert len(eps) == 4
        assert all(len(e.gallery) == 6 for e in eps)
        assert not any(str(e.probe.group_id).startswith("x") for e in eps)

    def test_needs_multi_view_group(self):
        with pytest.raises(ValueError):
            split_probe_gallery(generate_synthetic(SynthConfig(groups=3, views=1)))
