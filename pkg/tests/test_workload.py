import io
import math

import pytest
from hypothesis import given, settings, strategies as st

from helpers import make_workload

from poolsim import ArrivalProcess, generate_trace, measurement_filter, zipf_split
from poolsim.domain import Request
from poolsim.workload import read_trace, write_trace


class TestZipfSplit:
    def test_uniform_alpha_zero(self):
        assert zipf_split(4, 0.0, 2.0) == [0.5, 0.5, 0.5, 0.5]

    def test_single_model(self):
        assert zipf_split(1, 2.7, 3.5) == [3.5]

    def test_against_direct_summation(self):
        # Oracle: sum j^-1.5 over j=1..4 and divide termwise.
        norm = sum(j ** -1.5 for j in range(1, 5))
        expected = [1.0 * (i ** -1.5) / norm for i in range(1, 5)]
        got = zipf_split(4, 1.5, 1.0)
        for g, e in zip(got, expected):
            assert g == pytest.approx(e, rel=1e-12)
        assert got[0] == pytest.approx(0.59844, abs=5e-6)
        assert got[1] == pytest.approx(0.21158, abs=5e-6)
        assert got[2] == pytest.approx(0.11517, abs=5e-6)
        assert got[3] == pytest.approx(0.07481, abs=5e-6)

    @given(
        n=st.integers(min_value=1, max_value=64),
        alpha=st.one_of(st.just(0.0), st.floats(min_value=1e-6, max_value=5.0)),
        total=st.floats(min_value=1e-3, max_value=1e3, allow_nan=False),
    )
    @settings(max_examples=200, deadline=None)
    def test_sum_and_ordering(self, n, alpha, total):
        rates = zipf_split(n, alpha, total)
        assert math.fsum(rates) == pytest.approx(total, rel=1e-12)
        for a, b in zip(rates, rates[1:]):
            if alpha == 0.0:
                assert a == b
            else:
                assert a > b

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            zipf_split(0, 0.0, 1.0)
        with pytest.raises(ValueError):
            zipf_split(4, -0.1, 1.0)
        with pytest.raises(ValueError):
            zipf_split(4, 0.0, 0.0)


class TestGenerateTrace:
    def test_deterministic_intervals(self):
        spec = make_workload(
            n_models=4,
            total_rps=2.0,
            alpha=0.0,
            grace=2.0,
            window=4.0,
            drain=0.0,
            process=ArrivalProcess.DETERMINISTIC,
        )
        trace = generate_trace(spec)
        # Each model fires at 0, 2, 4 within the 6 s horizon, interleaved.
        for model_id in range(4):
            times = [r.arrival_time for r in trace if r.model_id == model_id]
            assert times == pytest.approx([0.0, 2.0, 4.0])
        assert [r.arrival_time for r in trace] == sorted(r.arrival_time for r in trace)
        assert [r.id for r in trace] == list(range(len(trace)))

    def test_same_seed_same_bytes(self):
        spec = make_workload(seed=42)
        buf1, buf2 = io.StringIO(), io.StringIO()
        write_trace(generate_trace(spec), buf1)
        write_trace(generate_trace(spec), buf2)
        assert buf1.getvalue() == buf2.getvalue()

    def test_different_seeds_differ(self):
        a = generate_trace(make_workload(seed=1))
        b = generate_trace(make_workload(seed=2))
        assert [r.arrival_time for r in a] != [r.arrival_time for r in b]

    def test_poisson_rate_matches_over_long_horizon(self):
        # Law of large numbers: empirical per-model rate within 3% over 10000 s.
        spec = make_workload(
            n_models=4,
            total_rps=2.0,
            alpha=1.5,
            grace=0.0,
            window=10_000.0,
            drain=0.0,
            seed=123,
        )
        trace = generate_trace(spec)
        rates = zipf_split(4, 1.5, 2.0)
        for model_id, rate in enumerate(rates):
            count = sum(1 for r in trace if r.model_id == model_id)
            assert count / 10_000.0 == pytest.approx(rate, rel=0.03)

    def test_lengths_come_from_spec(self):
        spec = make_workload(isl=77, osl=11)
        trace = generate_trace(spec)
        assert trace and all(r.isl == 77 and r.target_osl == 11 for r in trace)


class TestMeasurementFilter:
    def _req(self, completion):
        r = Request(id=0, model_id=0, arrival_time=0.0, isl=1, target_osl=2)
        r.completion_time = completion
        return r

    def test_closed_interval_bounds(self):
        spec = make_workload(grace=10.0, window=5.0)
        eps = 1e-9
        inside = [self._req(10.0), self._req(15.0), self._req(12.0)]
        outside = [self._req(10.0 - eps), self._req(15.0 + eps), self._req(None)]
        kept = measurement_filter(inside + outside, spec)
        assert kept == inside

    def test_empty_input(self):
        assert measurement_filter([], make_workload()) == []


def test_trace_roundtrip():
    spec = make_workload(seed=5)
    trace = generate_trace(spec)
    buf = io.StringIO()
    write_trace(trace, buf)
    buf.seek(0)
    again = read_trace(buf)
    assert [(r.arrival_time, r.model_id, r.isl, r.target_osl) for r in again] == [
        (r.arrival_time, r.model_id, r.isl, r.target_osl) for r in trace
    ]


def test_read_trace_rejects_bad_header():
    with pytest.raises(ValueError):
        read_trace(io.StringIO("nope\n1,2,3,4\n"))
