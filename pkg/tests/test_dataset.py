import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vicount.dataset import (
    Frame,
    PedestrianObservation,
    VideoSequence,
    derive_flow_labels,
    ground_truth_total,
    load_sequence,
    sample_pairs,
    save_sequence,
    select_frames,
    unique_identity_total,
)
from vicount.errors import LabelingError, ParseError, ValidationError
from vicount.simulator import SimConfig, generate


def make_frame(index, t, ids, positions=None):
    obs = []
    for k, pid in enumerate(ids):
        pos = positions[k] if positions else (0.1 + 0.02 * k, 0.5)
        obs.append(PedestrianObservation(position=pos, identity=pid))
    return Frame(index=index, timestamp=t, observations=tuple(obs))


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


class TestLoadSequence:
    def test_two_frames_counts(self, tmp_path):
        path = tmp_path / "seq.jsonl"
        write_jsonl(
            path,
            [
                {"frame": 0, "t": 0.0, "peds": [
                    {"id": 1, "x": 0.1, "y": 0.2, "f": None},
                    {"id": 2, "x": 0.3, "y": 0.4, "f": None},
                    {"id": 3, "x": 0.5, "y": 0.6, "f": None}]},
                {"frame": 1, "t": 1.0, "peds": [
                    {"id": 1, "x": 0.1, "y": 0.2, "f": None},
                    {"id": 4, "x": 0.7, "y": 0.8, "f": None}]},
            ],
        )
        seq = load_sequence(path)
        assert [f.n for f in seq.frames] == [3, 2]

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValidationError):
            load_sequence(path)

    def test_inconsistent_descriptor_length_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_jsonl(
            path,
            [
                {"frame": 0, "t": 0.0, "peds": [{"id": 1, "x": 0.1, "y": 0.2, "f": [1.0, 0.0]}]},
                {"frame": 1, "t": 1.0, "peds": [{"id": 1, "x": 0.1, "y": 0.2, "f": [1.0]}]},
            ],
        )
        with pytest.raises(ValidationError):
            load_sequence(path)

    def test_mixed_descriptor_presence_rejected(self, tmp_path):
        path = tmp_path / "mixed.jsonl"
        write_jsonl(
            path,
            [
                {"frame": 0, "t": 0.0, "peds": [{"id": 1, "x": 0.1, "y": 0.2, "f": [1.0]}]},
                {"frame": 1, "t": 1.0, "peds": [{"id": 1, "x": 0.1, "y": 0.2, "f": None}]},
            ],
        )
        with pytest.raises(ValidationError):
            load_sequence(path)

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"frame": 0, "t": 0.0, "peds": []}\nnot json\n')
        with pytest.raises(ParseError, match="line 2"):
            load_sequence(path)

    def test_non_monotonic_timestamps_rejected(self, tmp_path):
        path = tmp_path / "ts.jsonl"
        write_jsonl(
            path,
            [
                {"frame": 0, "t": 1.0, "peds": []},
                {"frame": 1, "t": 0.5, "peds": []},
            ],
        )
        with pytest.raises(ValidationError):
            load_sequence(path)

    def test_position_outside_unit_square_rejected(self, tmp_path):
        path = tmp_path / "pos.jsonl"
        write_jsonl(path, [{"frame": 0, "t": 0.0, "peds": [{"id": 0, "x": 1.5, "y": 0.2, "f": None}]}])
        with pytest.raises(ValidationError):
            load_sequence(path)

    def test_round_trip(self, tmp_path, labeled_sequence):
        path = tmp_path / "rt.jsonl"
        save_sequence(labeled_sequence, path)
        loaded = load_sequence(path)
        assert len(loaded.frames) == len(labeled_sequence.frames)
        for a, b in zip(loaded.frames, labeled_sequence.frames):
            assert a.index == b.index and a.timestamp == b.timestamp
            assert [o.identity for o in a.observations] == [o.identity for o in b.observations]
            for oa, ob in zip(a.observations, b.observations):
                assert oa.position == ob.position
                np.testing.assert_array_equal(oa.descriptor, ob.descriptor)


class TestSamplePairs:
    def _ten_frames(self):
        frames = [make_frame(i, float(i), [i]) for i in range(10)]
        return VideoSequence(id="ten", frames=frames)

    def test_one_fps_sigma_three(self):
        # default test-protocol interval of 3 s
        pairs = sample_pairs(self._ten_frames(), 3.0)
        idx = [(a.index, b.index) for a, b in pairs]
        assert idx == [(0, 3), (3, 6), (6, 9)]

    def test_single_frame_no_pairs(self):
        seq = VideoSequence(id="one", frames=[make_frame(0, 0.0, [1])])
        assert sample_pairs(seq, 3.0) == []

    def test_nearest_frame_wins_with_tie_to_earlier(self):
        frames = [make_frame(i, t, [i]) for i, t in enumerate([0.0, 2.4, 3.6, 6.0])]
        seq = VideoSequence(id="near", frames=frames)
        sel = select_frames(seq, 3.0)
        # target 3.0 is equidistant from 2.4 and 3.6: earlier frame wins
        assert [f.index for f in sel] == [0, 1, 3]

    def test_deterministic(self):
        seq = self._ten_frames()
        assert sample_pairs(seq, 3.0) == sample_pairs(seq, 3.0)

    def test_invalid_sigma(self):
        with pytest.raises(ValidationError):
            sample_pairs(self._ten_frames(), 0.0)


class TestDeriveFlowLabels:
    def test_partial_overlap(self):
        prev = make_frame(0, 0.0, [1, 2, 3])
        curr = make_frame(1, 1.0, [2, 3, 4])
        gt = derive_flow_labels(prev, curr)
        assert gt.shared_pairs == frozenset({(1, 0), (2, 1)})
        assert gt.inflow_count == 1
        assert gt.outflow_count == 1

    def test_identical_frames(self):
        prev = make_frame(0, 0.0, [1, 2, 3])
        curr = make_frame(1, 1.0, [1, 2, 3])
        gt = derive_flow_labels(prev, curr)
        assert gt.inflow_count == 0 and gt.outflow_count == 0

    def test_disjoint(self):
        prev = make_frame(0, 0.0, [1, 2, 3])
        curr = make_frame(1, 1.0, [4, 5])
        gt = derive_flow_labels(prev, curr)
        assert gt.inflow_count == 2 and gt.outflow_count == 3
        assert gt.shared_pairs == frozenset()

    def test_missing_identities(self):
        prev = Frame(0, 0.0, (PedestrianObservation(position=(0.1, 0.1)),))
        curr = make_frame(1, 1.0, [1])
        with pytest.raises(LabelingError):
            derive_flow_labels(prev, curr)

    @given(
        prev_ids=st.lists(st.integers(0, 12), max_size=8, unique=True),
        curr_ids=st.lists(st.integers(0, 12), max_size=8, unique=True),
    )
    def test_count_coupling(self, prev_ids, curr_ids):
        prev = make_frame(0, 0.0, prev_ids)
        curr = make_frame(1, 1.0, curr_ids)
        gt = derive_flow_labels(prev, curr)
        matched_curr = {j for _, j in gt.shared_pairs}
        matched_prev = {i for i, _ in gt.shared_pairs}
        assert gt.inflow_count + len(matched_curr) == curr.n
        assert gt.outflow_count + len(matched_prev) == prev.n
        assert gt.inflow_count >= 0 and gt.outflow_count >= 0


class TestGroundTruthTotal:
    def test_single_frame(self):
        seq = VideoSequence(id="s", frames=[make_frame(0, 0.0, [1, 2, 3, 4, 5])])
        assert ground_truth_total(seq, 3.0) == 5

    def test_known_inflow_schedule(self):
        frames = [
            make_frame(0, 0.0, [0, 1, 2, 3, 4]),
            make_frame(1, 1.0, [0, 1, 2, 5, 6]),
            make_frame(2, 2.0, [0, 1, 2, 5, 6]),
            make_frame(3, 3.0, [0, 1, 7, 8, 9]),
        ]
        seq = VideoSequence(id="s", frames=frames)
        assert ground_truth_total(seq, 1.0) == 5 + 2 + 0 + 3

    @pytest.mark.parametrize("seed", [0, 3, 11])
    def test_matches_brute_force_without_occlusion(self, seed):
        # brute-force oracle: union of identities over the sampled frames
        seq = generate(SimConfig(num_frames=40, seed=seed, occlusion_dropout=0.0,
                                 group_rate=0.5))
        assert ground_truth_total(seq, 3.0) == unique_identity_total(seq, 3.0)

    def test_unlabeled_rejected(self):
        frame = Frame(0, 0.0, (PedestrianObservation(position=(0.2, 0.2)),))
        seq = VideoSequence(id="u", frames=[frame])
        with pytest.raises(LabelingError):
            ground_truth_total(seq, 3.0)
