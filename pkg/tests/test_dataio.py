import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dettraj.dataio import (DataError, DatasetSplit, TrajectorySequence, center_on_target, few_shot,
                            load_tsv, make_windows, prepare, save_tsv, split_paths, strip_ids)
from dettraj.sim import ScenarioConfig, simulate


def line_seq(n_frames, n_peds=1, name="s"):
    f = np.repeat(np.arange(n_frames), n_peds)
    p = np.tile(np.arange(n_peds), n_frames)
    xy = np.column_stack([0.4 * f + p, 0.1 * p])
    return TrajectorySequence(f, p, xy, name)


def test_load_two_lines(tmp_path):
    path = tmp_path / "a.tsv"
    path.write_text("0 1 0.0 0.0\n1 1 0.4 0.0\n")
    seq = load_tsv(str(path))
    assert list(seq.frames) == [0, 1]
    assert list(np.unique(seq.ped_ids)) == [1]
    assert seq.name == "a"


def test_load_sorts_by_frame_then_ped(tmp_path):
    path = tmp_path / "b.tsv"
    path.write_text("1 2 1 1\n0 5 0 0\n1 1 2 2\n")
    seq = load_tsv(str(path))
    assert list(seq.frame_ids) == [0, 1, 1] and list(seq.ped_ids) == [5, 1, 2]


def test_empty_file(tmp_path):
    path = tmp_path / "e.tsv"
    path.write_text("")
    with pytest.raises(DataError, match="empty sequence"):
        load_tsv(str(path))


def test_malformed_line_number(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("0 1 0.0 0.0\n1 1 zero 0.0\n")
    with pytest.raises(DataError, match=":2:"):
        load_tsv(str(path))
    path.write_text("0 1 0.0\n")
    with pytest.raises(DataError, match=":1:"):
        load_tsv(str(path))


def test_duplicate_and_nonfinite_rejected():
    with pytest.raises(DataError):
        TrajectorySequence([0, 0], [1, 1], [[0, 0], [1, 1]])
    with pytest.raises(DataError):
        TrajectorySequence([0], [1], [[np.inf, 0]])


def test_tsv_roundtrip_simulator_output(tmp_path):
    for seed in range(3):
        seq = simulate(seed, 25, ScenarioConfig(max_agents=8))
        a = tmp_path / f"a{seed}.tsv"
        b = tmp_path / f"b{seed}.tsv"
        save_tsv(seq, str(a))
        save_tsv(load_tsv(str(a)), str(b))
        assert a.read_bytes() == b.read_bytes()
        assert b"\r" not in a.read_bytes()


def test_tsv_number_format(tmp_path):
    seq = TrajectorySequence([0, 0, 0], [1, 2, 3], [[1.0, -0.0], [0.1234567, 2.5], [-3.0000001, 10]])
    path = tmp_path / "f.tsv"
    save_tsv(seq, str(path))
    assert path.read_text() == "0 1 1.0 0.0\n0 2 0.123457 2.5\n0 3 -3.0 10.0\n"


# ---- windowing

def test_exact_span_one_window():
    assert len(make_windows(line_seq(21), 9, 12, 1)) == 1


def test_25_frames_five_windows():
    assert len(make_windows(line_seq(25), 9, 12, 1)) == 5


def test_short_sequence_gives_no_windows():
    assert make_windows(line_seq(20), 9, 12, 1) == []


def test_absent_at_last_observed_frame():
    seq = line_seq(21, 2)
    keep = ~((seq.frame_ids == 8) & (seq.ped_ids == 1))
    seq = TrajectorySequence(seq.frame_ids[keep], seq.ped_ids[keep], seq.xy[keep])
    ws = make_windows(seq, 9, 12, 1)
    assert [w.target_id for w in ws] == [0]
    # the absent pedestrian still appears as a detection in the other observed frames
    assert np.sum(ws[0].id_labels == 1) == 8


def test_weak_mode_keeps_partial_futures():
    seq = line_seq(21, 2)
    keep = ~((seq.frame_ids == 15) & (seq.ped_ids == 1))
    seq = TrajectorySequence(seq.frame_ids[keep], seq.ped_ids[keep], seq.xy[keep])
    assert [w.target_id for w in make_windows(seq, 9, 12, 1, "full")] == [0]
    weak = make_windows(seq, 9, 12, 1, "weak")
    assert sorted(w.target_id for w in weak) == [0, 1]
    w1 = [w for w in weak if w.target_id == 1][0]
    assert w1.Y is None and len(w1.future_detections[15 - 9]) == 1


def test_window_contents():
    w = make_windows(line_seq(21, 3), 9, 12, 1)[1]
    assert len(w) == 27 and set(w.time_index) == set(range(1, 10))
    assert [len(x) for x in w.X] == [3] * 9
    np.testing.assert_array_equal(w.positions[w.target_index], w.target_last_position)
    assert w.time_index[w.target_index] == 9
    assert w.Y.shape == (12, 2)
    assert len(w.future_detections) == 12


def brute_force_count(seq, T_obs, T_pred, stride, full):
    frames = sorted(set(seq.frame_ids.tolist()))
    present = {(int(f), int(p)) for f, p in zip(seq.frame_ids, seq.ped_ids)}
    n = 0
    for s in range(0, len(frames) - T_obs - T_pred + 1, stride):
        last = frames[s + T_obs - 1]
        fut = frames[s + T_obs:s + T_obs + T_pred]
        for p in set(seq.ped_ids.tolist()):
            if (last, p) not in present:
                continue
            if full and not all((f, p) in present for f in fut):
                continue
            n += 1
    return n


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3),
       st.booleans())
def test_window_count_matches_enumeration(seed, T_obs, T_pred, stride, full):
    rng = np.random.default_rng(seed)
    F, P = int(rng.integers(1, 15)), int(rng.integers(1, 5))
    keep = rng.random(F * P) < 0.7
    f = np.repeat(np.arange(F), P)[keep]
    p = np.tile(np.arange(P), F)[keep]
    if len(f) == 0:
        return
    seq = TrajectorySequence(f, p, rng.normal(size=(len(f), 2)))
    got = len(make_windows(seq, T_obs, T_pred, stride, "full" if full else "weak"))
    assert got == brute_force_count(seq, T_obs, T_pred, stride, full)


def test_bad_window_args():
    with pytest.raises(ValueError):
        make_windows(line_seq(21), 0, 12)
    with pytest.raises(ValueError):
        make_windows(line_seq(21), 9, 12, mode="partial")


# ---- centering and id stripping

def test_center_shifts_everything():
    w = make_windows(line_seq(21, 2), 9, 12, 1)[0]
    w = w.__class__(**{**w.__dict__, "target_last_position": np.array([3.0, 4.0])})
    c = center_on_target(w)
    np.testing.assert_allclose(c.positions, w.positions - [3, 4])
    np.testing.assert_allclose(c.Y, w.Y - [3, 4])
    np.testing.assert_allclose(c.future_detections[0], w.future_detections[0] - [3, 4])
    np.testing.assert_array_equal(c.offset, [3, 4])


def test_center_target_at_origin_and_identity():
    seq = simulate(1, 25, ScenarioConfig(max_agents=6))
    for w in make_windows(seq, 9, 12, 4):
        c = center_on_target(w)
        np.testing.assert_array_equal(c.positions[c.target_index], [0.0, 0.0])
        cc = center_on_target(c)
        np.testing.assert_array_equal(cc.positions, c.positions)


def test_centering_is_isometry():
    seq = simulate(2, 25, ScenarioConfig(max_agents=6))
    for w in make_windows(seq, 9, 12, 5):
        c = center_on_target(w)
        d0 = np.hypot(*(w.positions[:, None] - w.positions[None]).transpose(2, 0, 1))
        d1 = np.hypot(*(c.positions[:, None] - c.positions[None]).transpose(2, 0, 1))
        np.testing.assert_allclose(d0, d1, atol=1e-12)


def test_strip_ids_keeps_multiset_and_target():
    w = center_on_target(make_windows(line_seq(21, 4), 9, 12, 1)[2])
    a, b = strip_ids(w, seed=1), strip_ids(w, seed=2)
    key = lambda v: sorted(zip(v.time_index.tolist(), map(tuple, v.positions.tolist())))  # noqa: E731
    assert key(a) == key(b) == key(w)
    for s in (a, b):
        np.testing.assert_array_equal(s.positions[s.target_index], [0, 0])
        assert s.id_labels[s.target_index] == w.target_id
        # time indices stay grouped frame by frame
        assert np.all(np.diff(s.time_index) >= 0)
    assert not np.array_equal(a.id_labels, b.id_labels)


def test_strip_ids_requires_labels():
    w = make_windows(line_seq(21), 9, 12, 1)[0]
    w.id_labels = None
    with pytest.raises(ValueError):
        strip_ids(w)


def test_prepare_is_center_then_strip():
    w = make_windows(line_seq(21, 3), 9, 12, 1)[0]
    a = prepare(w, 5)
    b = strip_ids(center_on_target(w), 5)
    np.testing.assert_array_equal(a.positions, b.positions)


# ---- splits and few-shot

def test_split_disjoint_and_complete():
    paths = [f"s{i}.tsv" for i in range(20)]
    sp = split_paths(paths, 0.1, 0.2, seed=3)
    assert sorted(sp.train + sp.val + sp.test) == sorted(paths)
    assert len(sp.test) == 4 and len(sp.val) == 2
    with pytest.raises(ValueError):
        DatasetSplit(["a"], ["a"], [])
    with pytest.raises(ValueError):
        DatasetSplit(["a"], [], [], few_shot_frac=0)


def test_few_shot_seeded_subset():
    items = list(range(100))
    a = few_shot(items, 0.1, seed=4)
    assert a == few_shot(items, 0.1, seed=4) and len(a) == 10 and set(a) <= set(items)
    assert few_shot(items, 1.0) == items
    assert len(few_shot(items, 0.001)) == 1
    with pytest.raises(ValueError):
        few_shot(items, 1.5)
