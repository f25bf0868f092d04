import heapq
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtapsim.engine import (Case, EpisodeEnd, apply_assignment, compute_feasible,
                            init_episode, step_until_decision)
from dtapsim.observation import (ActionDecodeError, build_observation,
                                 decode_action, deserialize_observation,
                                 serialize_observation, standardize_features)


def queue_case(state, case_id, label_id, arrival):
    state.active_cases[case_id] = Case(case_id, label_id, arrival)
    heapq.heappush(state.label_queues.setdefault(label_id, []),
                   (arrival, case_id))


@pytest.fixture()
def seven_case_state(audit_small):
    """Three cases waiting at the first label, four at the second; every
    resource idle and on shift."""
    state = init_episode(audit_small, 0)
    for i in range(3):
        queue_case(state, i, 1, 0.1 * i)
    for i in range(3, 7):
        queue_case(state, i, 2, 0.1 * i)
    return state


class TestBuildObservation:
    def test_activity_ratios_span_every_label(self, audit_small, seven_case_state):
        graph = build_observation(seven_case_state, audit_small)
        assert graph.activity_feat.shape == (4,)
        assert graph.activity_feat[0] == 0.0          # start marker
        assert graph.activity_feat[3] == 0.0          # end marker
        assert graph.activity_feat[1] == pytest.approx(3 / 7)
        assert graph.activity_feat[2] == pytest.approx(4 / 7)
        assert graph.activity_feat.sum() == pytest.approx(1.0, abs=1e-12)

    def test_resource_flags_zero_when_on_shift(self, audit_small, seven_case_state):
        graph = build_observation(seven_case_state, audit_small)
        assert list(graph.resource_feat) == [0.0, 0.0, 0.0]

    def test_resource_flag_one_when_unavailable(self, audit_small, seven_case_state):
        state = seven_case_state
        state.active_resources.remove(1)
        state.busy_resources.add(1)
        graph = build_observation(state, audit_small)
        assert list(graph.resource_feat) == [0.0, 1.0, 0.0]

    def test_assign_features_follow_pool_declaration(self, audit_small,
                                                     seven_case_state):
        graph = build_observation(seven_case_state, audit_small)
        assert graph.assign_pairs == audit_small.pools
        assert list(graph.assign_feat) == [2.0, 1.0, 1.0, 2.0]

    def test_all_pairs_unblocked_when_everything_waits(self, audit_small,
                                                       seven_case_state):
        graph = build_observation(seven_case_state, audit_small)
        assert list(graph.mask) == [1, 1, 1, 1]
        assert graph.edges_res == ((0, 0), (1, 1), (1, 2), (2, 3))
        assert graph.edges_act == ((1, 0), (1, 1), (2, 2), (2, 3))

    def test_busy_resource_blocks_its_pairs(self, audit_small, seven_case_state):
        state = seven_case_state
        state.active_resources.remove(1)
        state.busy_resources.add(1)
        graph = build_observation(state, audit_small)
        # pairs (1,1) and (2,1) use resource 1
        assert list(graph.mask) == [1, 0, 0, 1]
        assert all(m != 1 for m, _ in graph.edges_res)

    def test_empty_label_blocks_its_pairs(self, audit_small):
        state = init_episode(audit_small, 0)
        queue_case(state, 0, 1, 0.0)  # only the first label has work
        graph = build_observation(state, audit_small)
        assert list(graph.mask) == [1, 1, 0, 0]
        assert graph.activity_feat[1] == 1.0
        assert graph.activity_feat[2] == 0.0

    def test_blocked_nodes_are_isolated(self, audit_small, seven_case_state):
        state = seven_case_state
        state.active_resources.remove(2)
        state.off_resources.add(2)
        graph = build_observation(state, audit_small)
        connected = {j for _, j in graph.edges_res} | {j for _, j in graph.edges_act}
        unblocked = {j for j in range(len(graph.mask)) if graph.mask[j]}
        assert connected == unblocked

    def test_step_and_clock_carried(self, audit_small, seven_case_state):
        state = seven_case_state
        state.decision_step = 9
        state.clock = 3.25
        graph = build_observation(state, audit_small)
        assert graph.step == 9
        assert graph.clock == 3.25
        assert not graph.standardized


class TestMaskMatchesFeasibility:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_mask_equals_engine_feasibility_along_episodes(self, audit_small, seed):
        state = init_episode(audit_small, seed)
        checked = 0
        while checked < 50:
            outcome = step_until_decision(state, audit_small)
            if isinstance(outcome, EpisodeEnd):
                break
            graph = build_observation(state, audit_small)
            feasible = set(compute_feasible(state, audit_small))
            for j, pair in enumerate(graph.assign_pairs):
                assert bool(graph.mask[j]) == (pair in feasible)
            assert set(outcome.feasible) == feasible
            checked += 1
            apply_assignment(state, audit_small, outcome.feasible[0])
        assert checked > 10


class TestStandardization:
    def test_two_point_example(self):
        from dtapsim.observation import _standardize
        out = _standardize(np.array([0.0, 1.0]))
        assert list(out) == [-1.0, 1.0]

    def test_constant_features_become_zeros(self, agreement4):
        state = init_episode(agreement4, 0)
        queue_case(state, 0, 1, 0.0)
        graph = standardize_features(build_observation(state, agreement4))
        # one waiting label among start/task/end: ratios are (0, 1, 0)
        assert graph.activity_feat.std() > 0
        # resource flags all equal: standardized away to zeros
        assert list(graph.resource_feat) == [0.0, 0.0, 0.0, 0.0]

    def test_moments_after_standardization(self, audit_small, seven_case_state):
        graph = standardize_features(build_observation(seven_case_state, audit_small))
        for vec in (graph.activity_feat, graph.assign_feat):
            assert abs(vec.mean()) < 1e-12
            assert vec.std() == pytest.approx(1.0, abs=1e-12)

    def test_standardization_keeps_structure(self, audit_small, seven_case_state):
        raw = build_observation(seven_case_state, audit_small)
        out = standardize_features(raw)
        assert out.standardized and not raw.standardized
        assert out.assign_pairs == raw.assign_pairs
        assert out.edges_res == raw.edges_res
        assert out.edges_act == raw.edges_act
        assert list(out.mask) == list(raw.mask)
        assert out.step == raw.step and out.clock == raw.clock

    @given(values=st.lists(st.integers(min_value=-10**6, max_value=10**6),
                           min_size=2, max_size=16))
    @settings(max_examples=200, deadline=None)
    def test_order_preserved_or_flattened(self, values):
        # integer-valued features keep gaps far above float resolution, so
        # strict order must survive centering and scaling exactly
        from dtapsim.observation import _standardize
        arr = np.array(values, dtype=float)
        out = _standardize(arr)
        if arr.std() < 1e-9:
            assert not out.any()
        else:
            for i in range(len(arr)):
                for j in range(len(arr)):
                    if arr[i] < arr[j]:
                        assert out[i] < out[j]
                    elif arr[i] == arr[j]:
                        assert out[i] == out[j]


class TestDecodeAction:
    def test_valid_index_maps_to_pair(self, audit_small, seven_case_state):
        graph = build_observation(seven_case_state, audit_small)
        assert decode_action(graph, 2) == (2, 1)

    def test_blocked_index_rejected(self, audit_small, seven_case_state):
        state = seven_case_state
        state.active_resources.remove(1)
        state.busy_resources.add(1)
        graph = build_observation(state, audit_small)
        with pytest.raises(ActionDecodeError):
            decode_action(graph, 1)

    @pytest.mark.parametrize("bad", [-1, 4, 100])
    def test_out_of_range_rejected(self, audit_small, seven_case_state, bad):
        graph = build_observation(seven_case_state, audit_small)
        with pytest.raises(ActionDecodeError):
            decode_action(graph, bad)

    @pytest.mark.parametrize("bad", [True, 1.0, "2", None])
    def test_non_integer_rejected(self, audit_small, seven_case_state, bad):
        graph = build_observation(seven_case_state, audit_small)
        with pytest.raises(ActionDecodeError):
            decode_action(graph, bad)


class TestWireFormat:
    def test_round_trip_preserves_numbers(self, audit_small, seven_case_state):
        graph = standardize_features(build_observation(seven_case_state, audit_small))
        payload = json.loads(json.dumps(serialize_observation(graph)))
        back = deserialize_observation(payload)
        np.testing.assert_array_equal(back.resource_feat, graph.resource_feat)
        np.testing.assert_array_equal(back.activity_feat, graph.activity_feat)
        np.testing.assert_array_equal(back.assign_feat, graph.assign_feat)
        assert back.assign_pairs == graph.assign_pairs
        assert back.edges_res == graph.edges_res
        assert back.edges_act == graph.edges_act
        np.testing.assert_array_equal(back.mask, graph.mask)
        assert back.step == graph.step
        assert back.clock == graph.clock

    def test_payload_keys_are_stable(self, audit_small, seven_case_state):
        graph = build_observation(seven_case_state, audit_small)
        payload = serialize_observation(graph)
        assert sorted(payload) == ["activity_feat", "assign_feat", "assign_pairs",
                                   "clock", "edges_act", "edges_res", "mask",
                                   "resource_feat", "step"]

    def test_payload_is_plain_json(self, audit_small, seven_case_state):
        graph = build_observation(seven_case_state, audit_small)
        text = json.dumps(serialize_observation(graph))
        assert isinstance(json.loads(text), dict)
