import numpy as np
import pytest

from groupmatch.graph import DUMMY_ID, GroupView, build_context_graph, pad_to_size, permute_nodes


def view(n, p=3, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return GroupView("g", 0, tuple(range(n)), rng.normal(size=(n, p, d)))


def test_singleton_graph():
    g = build_context_graph(view(1))
    np.testing.assert_array_equal(g.adjacency, [[1.0]])


def test_fully_connected():
    g = build_context_graph(view(3))
    np.testing.assert_array_equal(g.adjacency, np.ones((3, 3)))
    assert g.real_mask.all()


def test_features_copied_exactly():
    v = view(3)
    g = build_context_graph(v)
    assert np.array_equal(g.features, v.parts)
    assert g.states.layer == 0


def test_rejects_empty_and_ragged():
    with pytest.raises(ValueError):
        GroupView.from_persons("g", 0, [])
    with pytest.raises(ValueError):
        GroupView.from_persons("g", 0, [(1, np.ones((4, 3))), (2, np.ones((3, 3)))])


def test_pad_noop():
    g = build_context_graph(view(2))
    assert pad_to_size(g, 2) is g


def test_pad_layout():
    g = pad_to_size(build_context_graph(view(2)), 4)
    assert g.real_mask.tolist() == [True, True, False, False]
    assert g.person_ids[2:] == (DUMMY_ID, DUMMY_ID)
    assert np.all(g.features[2:] == 0)
    np.testing.assert_array_equal(g.adjacency, np.ones((4, 4)))


def test_pad_too_small():
    with pytest.raises(ValueError):
        pad_to_size(build_context_graph(view(3)), 2)


def test_permutation_equivariance():
    v = view(4)
    perm = [2, 0, 3, 1]
    pv = GroupView("g", 0, tuple(v.person_ids[k] for k in perm), v.parts[perm])
    a = permute_nodes(build_context_graph(v), perm)
    b = build_context_graph(pv)
    assert np.array_equal(a.features, b.features) and a.person_ids == b.person_ids
