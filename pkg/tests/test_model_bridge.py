import json
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from app.models import ConcatState, PanProtocol, Transcript
from app.services.model_bridge import (
    bridge_demo,
    distribution_tv,
    empirical_tv,
    exact_output_distribution,
    exact_state_distribution,
    exact_transcript_distribution,
    export_trace,
    local_to_pan,
    pan_to_local,
    simulate,
    state_key,
    transcript_of,
    two_intrusion_to_one,
)
from app.services.toy_protocols import (
    adaptive_chooser_local,
    counter_protocol,
    get_toy_protocol,
    keep_probability,
    randomized_response_local,
    randomized_response_protocol,
)
from app.utils.exceptions import ContractViolationError, DomainError

parts = st.recursive(
    st.one_of(st.integers(), st.text(), st.booleans(), st.none()),
    lambda children: st.lists(children, max_size=3).map(tuple),
    max_leaves=6,
)


class TestConcatState:
    """Test suite for the length-prefixed state codec"""

    @given(st.lists(parts, max_size=8))
    @hypothesis_settings(max_examples=150, deadline=None)
    def test_codec_round_trip(self, values):
        state = ConcatState(parts=tuple(values))
        assert ConcatState.decode(state.encode()) == state

    def test_parts_containing_separators(self):
        state = ConcatState(parts=("3:abc", ":", "", "12:"))
        assert ConcatState.decode(state.encode()).parts == state.parts

    def test_malformed_encoding(self):
        with pytest.raises(DomainError):
            ConcatState.decode("5:ab")
        with pytest.raises(DomainError):
            ConcatState.decode("x:1")

    def test_prefix_relation(self):
        short = ConcatState(parts=(1, 0))
        assert short.is_prefix_of(short.append(1))
        assert not short.append(1).is_prefix_of(short)


class TestTwoIntrusionToOne:
    """Test suite for the concatenated-state construction"""

    def test_counter_trace(self, rng):
        concat = two_intrusion_to_one(counter_protocol())
        run = simulate(concat, [1, 0, 1], rng)
        assert run.output == 0
        final = simulate(concat, [1, 0, 1], rng, intrusion_times=[3]).observed[3]
        assert final.parts == (1, 1, 0)

    def test_empty_stream(self, rng):
        concat = two_intrusion_to_one(counter_protocol())
        run = simulate(concat, [], rng, intrusion_times=[0])
        assert run.observed[0] == ConcatState()
        assert run.output == 0

    def test_last_part_matches_source_state(self, seed):
        source = randomized_response_protocol(1.0)
        concat = two_intrusion_to_one(source)
        stream = [1, 0, 1]
        rng_a, rng_b = seed.generator(1), seed.generator(2)
        lasts = [simulate(concat, stream, rng_a, intrusion_times=[3]).observed[3].last() for _ in range(20_000)]
        states = [simulate(source, stream, rng_b, intrusion_times=[3]).observed[3] for _ in range(20_000)]
        assert empirical_tv(lasts, states) <= 0.02

    def test_exact_outputs_agree(self):
        for name in ("randomized-response", "adaptive-chooser"):
            source = get_toy_protocol(name, 0.7)
            concat = two_intrusion_to_one(source)
            stream = [1, 1, 0, 1]
            assert distribution_tv(
                exact_output_distribution(source, stream), exact_output_distribution(concat, stream)
            ) == pytest.approx(0.0, abs=1e-12)


class TestPanToLocal:
    """Test suite for the pan-to-local transformation"""

    def test_deterministic_transcript_equals_state_trace(self, rng):
        concat = two_intrusion_to_one(counter_protocol())
        local = pan_to_local(concat)
        stream = [1, 1, 0, 1]
        states = simulate(concat, stream, rng, intrusion_times=range(5)).observed
        transcripts = simulate(local, stream, rng, intrusion_times=range(5)).observed
        for t in range(5):
            assert transcripts[t].messages == states[t].parts
            assert len(transcripts[t]) == t

    def test_randomized_prefix_laws_agree(self, seed):
        concat = two_intrusion_to_one(randomized_response_protocol(1.0))
        local = pan_to_local(concat)
        stream = [0, 1, 1, 0]
        times = range(1, 5)
        rng_a, rng_b = seed.generator(3), seed.generator(4)
        states = [simulate(concat, stream, rng_a, intrusion_times=times).observed for _ in range(20_000)]
        transcripts = [simulate(local, stream, rng_b, intrusion_times=times).observed for _ in range(20_000)]
        for t in times:
            tv = empirical_tv((s[t].parts for s in states), (tr[t].messages for tr in transcripts))
            assert tv <= 0.03

    @pytest.mark.parametrize("name", ["counter", "randomized-response", "adaptive-chooser"])
    def test_exact_transcript_identity(self, name):
        concat = two_intrusion_to_one(get_toy_protocol(name, 1.0))
        local = pan_to_local(concat)
        for stream in ([0], [1, 0], [1, 1, 0], [0, 1, 0, 1]):
            assert distribution_tv(
                exact_state_distribution(concat, stream), exact_transcript_distribution(local, stream)
            ) == pytest.approx(0.0, abs=1e-12)

    def test_rewriting_step_is_a_contract_violation(self, rng):
        rewriting = PanProtocol(
            name="rewriter",
            internal_step=lambda state, x, rng: ConcatState(parts=(x,) * (len(state) + 1)),
            output_step=lambda state, rng: state,
            initial_state=ConcatState(),
        )
        local = pan_to_local(rewriting)
        with pytest.raises(ContractViolationError):
            simulate(local, [1, 0, 1], rng)

    def test_requires_concat_discipline(self):
        with pytest.raises(ContractViolationError):
            pan_to_local(counter_protocol())


class TestLocalToPan:
    """Test suite for the local-to-pan transformation"""

    def test_single_round_randomized_response(self):
        pan = local_to_pan(randomized_response_local(1.0))
        law = exact_state_distribution(pan, [1])
        keep = keep_probability(1.0)
        assert {parts[0][1]: p for parts, p in law.items()} == pytest.approx({1: keep, 0: 1 - keep})

    def test_states_are_transcript_prefixes(self, rng):
        pan = local_to_pan(adaptive_chooser_local(1.0))
        stream = [1, 0, 0, 1, 1]
        for _ in range(200):
            run = simulate(pan, stream, rng, intrusion_times=range(6))
            for t in range(5):
                assert run.observed[t].is_prefix_of(run.observed[t + 1])
            assert len(transcript_of(run.output)) == 5

    def test_round_trip_reproduces_transcript_law(self):
        lp = adaptive_chooser_local(0.8)
        round_trip = pan_to_local(local_to_pan(lp))
        stream = [1, 0, 1]
        original = exact_transcript_distribution(lp, stream, strip_ids=False)
        recovered = exact_transcript_distribution(round_trip, stream)
        assert distribution_tv(original, recovered) == pytest.approx(0.0, abs=1e-12)


class TestSimulate:
    """Test suite for simulation with intrusions"""

    def test_no_intrusions(self, rng):
        run = simulate(counter_protocol(), [1, 1, 1], rng)
        assert run.observed == {}
        assert run.output == 1

    def test_intrusion_after_second_element(self, rng):
        run = simulate(two_intrusion_to_one(counter_protocol()), [1, 1, 0], rng, intrusion_times={2})
        assert run.observed[2].parts == (1, 0)

    def test_local_intrusions_are_transcript_prefixes(self, rng):
        pan = local_to_pan(randomized_response_local(1.0))
        run = simulate(pan, [0, 1, 1], rng, intrusion_times=range(4))
        for t in range(4):
            assert run.observed[t].parts == run.output.parts[:t]

    @pytest.mark.parametrize("times", [[-1], [4]])
    def test_out_of_range_intrusion(self, rng, times):
        with pytest.raises(DomainError):
            simulate(counter_protocol(), [1, 0, 1], rng, intrusion_times=times)

    def test_local_protocol_simulation(self, rng):
        run = simulate(randomized_response_local(2.0), [1, 0], rng)
        assert isinstance(run.output, Transcript)
        assert len(run.output) == 2

    def test_trace_export(self, rng, tmp_path):
        run = simulate(two_intrusion_to_one(counter_protocol()), [1, 0], rng, intrusion_times=[1], record_trace=True)
        path = tmp_path / "trace.jsonl"
        export_trace(run.trace, path)
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert [line["t"] for line in lines] == [0, 1, 2]
        assert [line["intrusion"] for line in lines] == [False, True, False]
        assert all(len(line["state_digest"]) == 64 for line in lines)
        assert lines[1]["message"] == 1


class TestExactOracles:
    """Test suite for enumeration limits"""

    def test_limit_enforced(self):
        concat = two_intrusion_to_one(randomized_response_protocol(1.0))
        with pytest.raises(DomainError):
            exact_state_distribution(concat, [1] * 7)

    def test_law_sums_to_one(self):
        law = exact_transcript_distribution(adaptive_chooser_local(1.0), [1, 0, 1, 1])
        assert sum(law.values()) == pytest.approx(1.0)

    def test_state_key_views(self):
        assert state_key(ConcatState(parts=(1, 2))) == (1, 2)
        assert state_key(Transcript(entries=(("r", 1),))) == (("r", 1),)


class TestBridgeDemo:
    """Test suite for the bridge demonstration"""

    def test_counter_is_exact(self):
        report = bridge_demo("counter", [1, 0, 1, 1], trials=1000, seed=5)
        assert report.max_tv == 0.0
        assert report.prefix_monotone
        assert all(row.exact_pan_to_local_tv == 0.0 for row in report.prefixes)

    def test_randomized_response_is_close(self):
        report = bridge_demo("randomized-response", [1, 0, 1, 1], trials=10_000, seed=6)
        assert report.max_tv <= 0.05
        assert all(row.exact_pan_to_local_tv == pytest.approx(0.0, abs=1e-12) for row in report.prefixes)

    def test_trials_below_minimum(self):
        with pytest.raises(DomainError):
            bridge_demo("counter", [1, 0], trials=10, seed=1)

    def test_unknown_protocol(self):
        with pytest.raises(DomainError):
            bridge_demo("nope", [1, 0], trials=1000, seed=1)

    def test_same_seed_same_report(self):
        first = bridge_demo("adaptive-chooser", [1, 0, 1], trials=1000, seed=8)
        second = bridge_demo("adaptive-chooser", [1, 0, 1], trials=1000, seed=8)
        assert first == second
