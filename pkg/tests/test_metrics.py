import pytest

from helpers import make_cluster, make_workload

from poolsim import EmptyWindow, IncompleteRequest, per_request_metrics, summarize
from poolsim.domain import Request
from poolsim.metrics import nearest_rank


def completed_request(rid=0, arrival=0.0, first_token=0.0991, completion=None, osl=1024):
    r = Request(id=rid, model_id=0, arrival_time=arrival, isl=1024, target_osl=osl)
    r.realized_osl = osl
    r.prefill_start = arrival
    r.prefill_end = first_token
    r.transfer_end = first_token
    r.first_token_time = first_token
    r.completion_time = completion if completion is not None else first_token + 0.0138 * (osl - 1)
    return r


class TestPerRequest:
    def test_ttft_from_first_token(self):
        r = completed_request()
        ttft, tpot, e2e = per_request_metrics(r)
        assert ttft == pytest.approx(0.0991)
        assert tpot == pytest.approx(0.0138)
        assert e2e == pytest.approx(r.completion_time)

    def test_osl_two_single_interval(self):
        r = completed_request(osl=2, completion=0.0991 + 0.0123)
        _, tpot, _ = per_request_metrics(r)
        assert tpot == pytest.approx(0.0123)

    def test_degenerate_zero_span(self):
        r = completed_request(osl=4, completion=0.0991)
        _, tpot, _ = per_request_metrics(r)
        assert tpot == 0.0

    def test_incomplete_chain_rejected(self):
        r = Request(id=0, model_id=0, arrival_time=0.0, isl=1, target_osl=4)
        with pytest.raises(IncompleteRequest):
            per_request_metrics(r)

    def test_osl_one_rejected(self):
        r = completed_request(osl=1, completion=0.1)
        with pytest.raises(IncompleteRequest):
            per_request_metrics(r)


class TestNearestRank:
    def test_textbook_cases(self):
        values = [15.0, 20.0, 35.0, 40.0, 50.0]
        assert nearest_rank(values, 5) == 15.0
        assert nearest_rank(values, 30) == 20.0
        assert nearest_rank(values, 40) == 20.0
        assert nearest_rank(values, 50) == 35.0
        assert nearest_rank(values, 100) == 50.0

    def test_single_value(self):
        assert nearest_rank([7.0], 99) == 7.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nearest_rank([], 50)


class TestSummarize:
    def setup_method(self):
        self.cluster = make_cluster(n_models=4, pool_size=4)
        self.spec = make_workload(n_models=4, total_rps=2.0, grace=0.0, window=60.0)

    def test_interactivity_is_inverse_mean_tpot(self):
        # Mean TPOT 13.8 ms corresponds to 72.46 tok/s interactivity.
        reqs = [completed_request(rid=i, arrival=0.1 * i, osl=1024) for i in range(5)]
        summary = summarize(reqs, self.cluster, self.spec)
        assert summary.tpot_mean_s == pytest.approx(0.0138)
        assert summary.interactivity_tok_s == pytest.approx(72.46, abs=0.01)

    def test_throughput_per_decode_gpu(self):
        # 3740 tok/s over 4 decode workers -> 935 tok/s per GPU.
        n_tokens = 3740 * 60
        osl = 440
        count = n_tokens // osl  # 510 requests of 440 tokens each
        reqs = [completed_request(rid=i, osl=osl) for i in range(count)]
        summary = summarize(reqs, self.cluster, self.spec)
        assert summary.output_throughput_tok_s == pytest.approx(3740.0)
        assert summary.throughput_per_decode_gpu_tok_s == pytest.approx(935.0)

    def test_ratio_identity_exact(self):
        reqs = [completed_request(rid=i, osl=64) for i in range(10)]
        summary = summarize(reqs, self.cluster, self.spec)
        assert (
            summary.throughput_per_decode_gpu_tok_s * self.cluster.decode_pool_size
            == summary.output_throughput_tok_s
        )
        assert summary.achieved_offered_ratio == summary.achieved_rps / summary.offered_rps

    def test_tpot_mean_over_requests_not_ratio_of_sums(self):
        fast = completed_request(rid=0, osl=2, completion=0.0991 + 0.010)
        slow = completed_request(rid=1, osl=101, completion=0.0991 + 0.020 * 100)
        summary = summarize([fast, slow], self.cluster, self.spec)
        assert summary.tpot_mean_s == pytest.approx((0.010 + 0.020) / 2)
        # ITL is token-weighted, so the long request dominates it.
        assert summary.itl_mean_s == pytest.approx((0.010 + 2.0) / 101)

    def test_percentiles_from_request_population(self):
        reqs = [
            completed_request(rid=i, first_token=0.05 + 0.01 * i, osl=16) for i in range(100)
        ]
        summary = summarize(reqs, self.cluster, self.spec)
        ttfts = sorted(0.05 + 0.01 * i for i in range(100))
        assert summary.ttft_p50_s == ttfts[49]
        assert summary.ttft_p99_s == ttfts[98]

    def test_empty_window(self):
        with pytest.raises(EmptyWindow):
            summarize([], self.cluster, self.spec)

    def test_achieved_rps_counts_window_completions(self):
        reqs = [completed_request(rid=i, osl=8) for i in range(30)]
        summary = summarize(reqs, self.cluster, self.spec)
        assert summary.achieved_rps == pytest.approx(0.5)
        assert summary.completed_requests == 30
