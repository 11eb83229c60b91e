import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provsim.engine import (Engine, EventKind, EventQueue, SharedLink, SimulationDivergence,
                            SimulationError, TransferJob, add_transfer, fair_share,
                            max_min_rates, next_completion)

from oracles import piecewise_completion_times, water_level

MB = 10**6


def run_on_link(capacity, jobs):
    """Drive the real engine with (arrival, size, cap) jobs on one link."""
    eng = Engine()
    eng.add_link("L", capacity)
    made = []
    for i, (arrival, size, cap) in enumerate(jobs):
        job = TransferJob(f"j{i}", size, math.inf if cap is None else cap)
        made.append(job)
        eng.schedule_at(arrival, EventKind.REQUEST_ARRIVAL,
                        lambda ev, j=job: eng.start_transfer("L", j))
    eng.run_until_idle()
    return [j.finished_at for j in made]


class TestEventQueue:
    def test_orders_by_time_then_insertion(self):
        q = EventQueue()
        q.schedule(5.0, EventKind.STAGE_COMPLETE, {"n": "late"})
        q.schedule(1.0, EventKind.STAGE_COMPLETE, {"n": "a"})
        q.schedule(1.0, EventKind.STAGE_COMPLETE, {"n": "b"})
        assert [q.pop().payload["n"] for _ in range(3)] == ["a", "b", "late"]
        assert q.now == 5.0

    def test_rejects_past_events(self):
        q = EventQueue()
        q.schedule(10.0, EventKind.STAGE_COMPLETE)
        q.pop()
        with pytest.raises(SimulationError, match="past"):
            q.schedule(9.0, EventKind.STAGE_COMPLETE)


class TestFairShare:
    def test_single_job_gets_full_link(self):
        # 100 MB alone on a 10 MB/s link finishes at t=10 s
        assert run_on_link(10 * MB, [(0.0, 100 * MB, None)]) == [pytest.approx(10.0)]

    def test_two_jobs_split_then_survivor_speeds_up(self):
        # 100 MB and 200 MB at t=0: 5 MB/s each, first done at 20 s, second at 30 s
        done = run_on_link(10 * MB, [(0.0, 100 * MB, None), (0.0, 200 * MB, None)])
        assert done == [pytest.approx(20.0), pytest.approx(30.0)]

    def test_capped_jobs_leave_residual_idle(self):
        link = SharedLink("L", 10 * MB)
        add_transfer(link, TransferJob("a", 100 * MB, 3 * MB), 0.0)
        add_transfer(link, TransferJob("b", 100 * MB, 3 * MB), 0.0)
        assert link.utilization == pytest.approx(6 * MB)

    def test_residual_of_capped_job_goes_to_others(self):
        assert fair_share(10.0, [3.0, math.inf, math.inf]) == [3.0, 3.5, 3.5]

    def test_next_completion_examples(self):
        link = SharedLink("L", 10 * MB)
        assert next_completion(link, 0.0) is None
        add_transfer(link, TransferJob("a", 100 * MB), 0.0)
        add_transfer(link, TransferJob("b", 50 * MB), 0.0)
        job, t = next_completion(link, 0.0)
        assert job.id == "b" and t == pytest.approx(10.0)

    def test_duplicate_join_rejected(self):
        link = SharedLink("L", 1.0)
        job = TransferJob("a", 1.0)
        add_transfer(link, job)
        with pytest.raises(SimulationError):
            add_transfer(link, job)

    def test_late_arrival_reshares(self):
        # 50 MB done alone by t=5; both at 5 MB/s until the 25 MB job ends at
        # t=10; the remaining 25 MB then runs alone at 10 MB/s
        done = run_on_link(10 * MB, [(0.0, 100 * MB, None), (5.0, 25 * MB, None)])
        assert done == [pytest.approx(12.5), pytest.approx(10.0)]

    def test_water_level_oracle_agrees_on_examples(self):
        from fractions import Fraction as F
        assert water_level(F(10), [F(3), None, None]) == [3, F(7, 2), F(7, 2)]
        assert water_level(F(10), [F(3), F(3)]) == [3, 3]


class TestMultiLink:
    def test_job_limited_by_tightest_link(self):
        a = TransferJob("a", 1.0, links=("fast", "slow"))
        b = TransferJob("b", 1.0, links=("fast",))
        rates = max_min_rates([a, b], {"fast": 10.0, "slow": 2.0})
        assert rates == {"a": 2.0, "b": 8.0}

    def test_single_link_jobs_reduce_to_fair_share(self):
        rng = random.Random(3)
        for _ in range(50):
            caps = [rng.choice([math.inf, rng.uniform(0.1, 5)]) for _ in range(rng.randint(1, 5))]
            jobs = [TransferJob(f"j{i}", 1.0, c, links=("L",)) for i, c in enumerate(caps)]
            got = max_min_rates(jobs, {"L": 7.0})
            for j, want in zip(jobs, fair_share(7.0, caps)):
                assert got[j.id] == pytest.approx(want, rel=1e-12)

    def test_engine_two_link_transfer(self):
        eng = Engine()
        eng.add_link("nfs", 2.0)
        eng.add_link("nic", 10.0)
        a = eng.start_transfer(("nfs", "nic"), TransferJob("a", 20.0))
        b = eng.start_transfer("nic", TransferJob("b", 40.0))
        eng.run_until_idle()
        assert a.finished_at == pytest.approx(10.0)
        assert b.finished_at == pytest.approx(5.0)


class TestOracle:
    def test_randomized_instances_match_exact_oracle(self):
        rng = random.Random(20240101)
        worst = 0.0
        for _ in range(200):
            capacity = rng.uniform(1, 200) * MB
            jobs = []
            for _ in range(rng.randint(1, 5)):
                arrival = rng.choice([0.0, rng.uniform(0, 50)])
                size = rng.uniform(1, 2000) * MB
                cap = rng.choice([None, rng.uniform(0.5, 100) * MB])
                jobs.append((arrival, size, cap))
            got = run_on_link(capacity, jobs)
            want = piecewise_completion_times(capacity, jobs)
            for g, w in zip(got, want):
                worst = max(worst, abs(g - float(w)) / float(w))
        assert worst <= 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 20), st.floats(1, 500),
                              st.one_of(st.none(), st.floats(0.5, 30))),
                    min_size=1, max_size=5))
    def test_capacity_and_work_conservation(self, jobs):
        eng = Engine()
        eng.add_link("L", 25.0)
        made = []
        for i, (arrival, size, cap) in enumerate(jobs):
            job = TransferJob(f"j{i}", size, math.inf if cap is None else cap)
            made.append(job)
            eng.schedule_at(arrival, EventKind.REQUEST_ARRIVAL,
                            lambda ev, j=job: eng.start_transfer("L", j))

        def check(engine):
            link = engine.links["L"]
            assert link.utilization <= 25.0 * (1 + 1e-12)
            capped_out = all(j.rate >= j.per_job_cap * (1 - 1e-12)
                             for j in link.active_jobs.values())
            if link.active_jobs and not capped_out:
                assert link.utilization == pytest.approx(25.0, rel=1e-9)

        eng.observers.append(check)
        eng.run_until_idle()
        for job in made:
            assert job.transferred_bytes == job.total_bytes
            assert job.finished_at >= job.started_at


class TestEngine:
    def test_empty_run_finishes_at_zero(self):
        clock, trace = Engine().run_until_idle()
        assert clock == 0.0 and trace == []

    def test_watchdog_raises_divergence(self):
        eng = Engine(watchdog=100)

        def again(ev):
            eng.schedule_in(1.0, EventKind.STAGE_COMPLETE, again)

        eng.schedule_at(0.0, EventKind.STAGE_COMPLETE, again)
        with pytest.raises(SimulationDivergence, match="divergence"):
            eng.run_until_idle()

    def test_cancel_frees_bandwidth(self):
        eng = Engine()
        eng.add_link("L", 10.0)
        a = eng.start_transfer("L", TransferJob("a", 100.0))
        b = eng.start_transfer("L", TransferJob("b", 100.0))
        eng.schedule_at(4.0, EventKind.STAGE_COMPLETE, lambda ev: eng.cancel_transfer(b))
        eng.run_until_idle()
        # 20 bytes done by t=4 at 5/s, then 80 bytes alone at 10/s
        assert a.finished_at == pytest.approx(12.0)
        assert b.finished_at is None and b.transferred_bytes == pytest.approx(20.0)

    def test_remaining_is_read_only(self):
        eng = Engine()
        eng.add_link("L", 10.0)
        job = eng.start_transfer("L", TransferJob("a", 100.0))
        seen = []
        eng.schedule_at(3.0, EventKind.STAGE_COMPLETE,
                        lambda ev: seen.extend([eng.remaining(job), eng.remaining(job)]))
        eng.run_until_idle()
        assert seen == [pytest.approx(70.0), pytest.approx(70.0)]
        assert job.finished_at == pytest.approx(10.0)
