"""The seven acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (shown even
without ``-s``) before asserting.
"""

import math
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import pytest

from provsim.architectures import ArchitectureKind as A, Calibration, ClusterState, link_capacities
from provsim.calibration import DEFAULT_TARGETS, Knob, calibrate, parse_targets
from provsim.cli import experiment
from provsim.config import default_config
from provsim.engine import Engine, EventKind, TransferJob
from provsim.harness import ScenarioKind as K
from provsim.images import CacheStatus, ImageManager
from provsim.lifecycle import LifecycleState as S, legal_path, next_state
from provsim.model import (GiB, MiB, ClusterSpec, ImageTemplate, MacPool, NodeSpec, OsFamily,
                           VmRequest, default_cluster)
from provsim.report import csv_text
from provsim.simulator import simulate

from oracles import piecewise_completion_times


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return report


def minutes(seconds):
    return seconds / 60.0


# -- 1 -------------------------------------------------------------------

# deliberately off-target starting points for the fitted knobs
UNCALIBRATED = {
    "calibration.boot_io_mib": 1024.0,
    "calibration.ssh_stream_mibps": 7.0,
    "cluster.local_disk_mibps": 80.0,
}


def test_criterion_1_calibration_fit(verdict):
    cfg = default_config()
    for name, value in UNCALIBRATED.items():
        cfg = Knob(name).set(cfg, value)
    fitted = calibrate(cfg, parse_targets(DEFAULT_TARGETS)).config

    sb = {a: experiment(fitted, a, K.SB) for a in A}
    mi = {a: experiment(fitted, a, K.MI) for a in (A.ARCH2, A.ARCH3)}
    t1, t2, t3 = (minutes(sb[a].total) for a in (A.ARCH1, A.ARCH2, A.ARCH3))
    d4 = [minutes(d) for d in sb[A.ARCH4].deploy_times]
    mi_max = {a: max(minutes(d) for d in r.deploy_times) for a, r in mi.items()}
    checks = [
        60 <= t1 <= 90,
        60 <= t2 <= 90,
        t3 >= 200,
        max(d4) <= 15,
        8 <= statistics.median(d4) <= 12,
        mi_max[A.ARCH2] <= 30,
        mi_max[A.ARCH3] <= 30,
    ]
    detail = (f"SB arch1 {t1:.1f}, arch2 {t2:.1f}, arch3 {t3:.1f} min; arch4 per-VM max "
              f"{max(d4):.1f}, median {statistics.median(d4):.1f} min; MI per-VM max arch2 "
              f"{mi_max[A.ARCH2]:.1f}, arch3 {mi_max[A.ARCH3]:.1f} min")
    verdict(1, all(checks), detail)


# -- 2 -------------------------------------------------------------------

def test_criterion_2_ordering(verdict):
    base = default_config()
    problems, worst_gap = [], 0.0
    for seed in range(8):
        cfg = replace(base, seed=seed * 10, jitter=0.0 if seed == 0 else 0.1)
        for scen in K:
            tot = {a: experiment(cfg, a, scen).total for a in A}
            if not tot[A.ARCH4] < min(tot[A.ARCH1], tot[A.ARCH2]):
                problems.append(f"seed {cfg.seed} {scen.value}: arch4 not fastest")
            if scen.burst and not max(tot[A.ARCH1], tot[A.ARCH2]) < tot[A.ARCH3]:
                problems.append(f"seed {cfg.seed} {scen.value}: arch3 not slowest")
            gap = abs(tot[A.ARCH1] - tot[A.ARCH2]) / min(tot[A.ARCH1], tot[A.ARCH2])
            worst_gap = max(worst_gap, gap)
            if gap > 0.10:
                problems.append(f"seed {cfg.seed} {scen.value}: arch1/arch2 gap {gap:.1%}")
    detail = (f"8 seeds x 4 scenarios; largest arch1/arch2 gap {worst_gap:.1%}"
              + ("" if not problems else "; " + "; ".join(problems[:3])))
    verdict(2, not problems, detail)


# -- 3 -------------------------------------------------------------------

def test_criterion_3_fair_share_oracle(verdict):
    rng = random.Random(3)
    worst, n = 0.0, 0
    for _ in range(250):
        capacity = rng.uniform(1, 150) * MiB
        jobs = [(rng.choice([0.0, rng.uniform(0, 100)]), rng.uniform(1, 9000) * MiB,
                 rng.choice([None, rng.uniform(0.5, 60) * MiB]))
                for _ in range(rng.randint(1, 5))]
        eng = Engine()
        eng.add_link("L", capacity)
        made = []
        for i, (arrival, size, cap) in enumerate(jobs):
            job = TransferJob(f"j{i}", size, math.inf if cap is None else cap)
            made.append(job)
            eng.schedule_at(arrival, EventKind.REQUEST_ARRIVAL,
                            lambda ev, j=job: eng.start_transfer("L", j))
        eng.run_until_idle()
        for job, want in zip(made, piecewise_completion_times(capacity, jobs)):
            worst = max(worst, abs(job.finished_at - float(want)) / float(want))
        n += 1
    verdict(3, n >= 100 and worst <= 1e-9,
            f"{n} instances, worst relative error {worst:.2e} (limit 1e-9)")


# -- 4 -------------------------------------------------------------------

TEMPLATES = [ImageTemplate("winxp", 8 * GiB, OsFamily.WINDOWS_XP),
             ImageTemplate("slc5", 4 * GiB, OsFamily.LINUX)]


def _random_run(rng):
    n_nodes = rng.randint(1, 5)
    nodes = [NodeSpec(f"esxi{i + 1}", local_disk_rate=rng.uniform(40, 300) * MiB,
                      nfs_client_rate=rng.uniform(10, 60) * MiB) for i in range(n_nodes)]
    n_vms = rng.randint(1, 8)
    cluster = ClusterSpec(nodes=nodes, mac_pool=MacPool.generate(rng.randint(n_vms, 12)),
                          templates=list(TEMPLATES))
    arch = rng.choice(list(A))
    requests = [VmRequest(f"vm{i:02d}", rng.choice(TEMPLATES).id,
                          rng.choice([0.0, round(rng.uniform(0, 2000), 3)]),
                          rng.choice(cluster.node_ids)) for i in range(n_vms)]
    violations = []
    pool_size = len(cluster.mac_pool)

    def observe(prov):
        state = prov.state
        pool = state.mac_pool
        if pool.allocated_count + pool.free_count != pool_size:
            violations.append("mac count")
        bound = pool.bindings()
        live = [vm for vm in prov.instances.values() if vm.mac is not None
                and vm.state not in (S.FAILED, S.SHUT_DOWN)]
        if sorted(bound.values()) != sorted(vm.id for vm in live):
            violations.append("mac binding")
        for loc, cap in state.capacity.items():
            held = sum(b for owner in state.holdings.values() for l, b in owner if l == loc)
            if abs(held - state.used[loc]) > 1e-6 or state.used[loc] > cap:
                violations.append(f"disk {loc}")

    rec = simulate(cluster, arch, requests, seed=rng.randrange(2**31),
                   sigma=rng.choice([0.0, 0.1]), warmup=rng.choice(["full", "none"]),
                   observers=[observe])
    for req in requests:
        vm = rec.instances[req.id]
        os = cluster.template(req.template).os_family
        if vm.state is not S.RUNNING:
            violations.append(f"{vm.id} ended {vm.state.value}")
        if vm.path != legal_path(os):
            violations.append(f"{vm.id} path")
        for a, b in zip(vm.path[1:-1], vm.path[2:]):
            if next_state(a, os) is not b:
                violations.append(f"{vm.id} {a.value}->{b.value}")
        if (S.SID_RESET in vm.stage_timestamps) != (os is OsFamily.WINDOWS_XP):
            violations.append(f"{vm.id} SidReset")
        times = [vm.stage_timestamps[s] for s in vm.path]
        if times != sorted(times):
            violations.append(f"{vm.id} timestamps")
    return violations


def test_criterion_4_lifecycle_properties(verdict):
    rng = random.Random(4)
    bad, start = [], time.perf_counter()
    for k in range(1000):
        v = _random_run(rng)
        if v:
            bad.append((k, v[:3]))
    elapsed = time.perf_counter() - start
    verdict(4, not bad, f"1000 randomized runs in {elapsed:.1f} s, {len(bad)} with violations"
            + (f"; first {bad[0]}" if bad else ""))


# -- 5 -------------------------------------------------------------------

def test_criterion_5_determinism(verdict):
    cfg = default_config()
    cfg = replace(cfg, jitter=0.1, seed=42)
    cells = [(a, s) for a in A for s in K]

    def outputs(arch, scen):
        res = experiment(cfg, arch, scen, keep_records=True)
        trace = "\n".join(repr(r) for r in res.records[0].trace)
        return csv_text(res), trace

    first = [outputs(a, s) for a, s in cells]
    second = [outputs(a, s) for a, s in cells]
    with ThreadPoolExecutor(max_workers=8) as pool:
        threaded = list(pool.map(lambda c: outputs(*c), cells))
    ok = first == second == threaded
    verdict(5, ok, f"{len(cells)} cells: CSV and trace identical across two serial runs "
                   f"and a thread-parallel run" if ok else "outputs differ")


# -- 6 -------------------------------------------------------------------

def test_criterion_6_image_manager(verdict):
    cluster = default_cluster()
    eng = Engine()
    for lid, cap in link_capacities(A.ARCH4, cluster, Calibration()).items():
        eng.add_link(lid, cap)
    state = ClusterState(cluster)
    mgr = ImageManager(eng, state)
    duplicates = []

    def no_duplicates(engine):
        ids = [j.id for j in engine.jobs.values() if j.kind is EventKind.SYNC_COMPLETE]
        keys = [tuple(i.split(":")[1:4:2]) for i in ids]
        if len(keys) != len(set(keys)):
            duplicates.append(engine.now)

    eng.observers.append(no_duplicates)
    tpl = cluster.templates[0]
    mgr.register_template(tpl, cluster.node_ids)
    # extra acquires while syncing must not start more copies
    for node in cluster.node_ids:
        mgr.acquire_image(node, tpl.id)
    eng.run_until_idle()
    want = tpl.size / cluster.nodes[0].nic_bandwidth
    sync_times = [r.time for r in eng.trace if r.kind == "SyncComplete"]
    cached_ok = (len(sync_times) == 5 and all(abs(t - want) <= 1e-9 * want for t in sync_times)
                 and all(mgr.is_cached(n, tpl.id) for n in cluster.node_ids))

    mgr.handle_template_update(tpl.id, 2)
    resyncing = all(mgr.entry(n, tpl.id).status is CacheStatus.SYNCING
                    for n in cluster.node_ids)
    eng.run_until_idle()
    refreshed = all(mgr.entry(n, tpl.id).version == 2 and mgr.is_cached(n, tpl.id)
                    for n in cluster.node_ids)
    ok = not duplicates and cached_ok and resyncing and refreshed and mgr.syncs_started == 10
    verdict(6, ok, f"5 nodes cached at {sync_times[0]:.3f} s (size/bandwidth {want:.3f} s); "
                   f"no duplicate syncs; v2 update resynced {mgr.syncs_started - 5} nodes")


# -- 7 -------------------------------------------------------------------

def test_criterion_7_averaging(verdict):
    # "within 3 sigma" is checked two ways: relative to the jitter sigma at
    # runs=3, and against the empirical per-VM spread over 30 runs (three runs
    # give too unstable a spread estimate for a 3-sd test on its own)
    sigma = 0.1
    base = default_config()
    problems, checked, worst_rel, worst_z = [], 0, 0.0, 0.0
    for arch in A:
        for scen in K:
            cell = f"{arch.value}/{scen.value}"
            single = experiment(replace(base, runs=1), arch, scen)
            three = experiment(base, arch, scen)
            if three.deploy_times != single.deploy_times or three.total != single.total:
                problems.append(f"{cell} sigma=0 mean differs")
            noisy = experiment(replace(base, jitter=sigma), arch, scen)
            wide = experiment(replace(base, jitter=sigma, runs=30), arch, scen)
            for i, ref in enumerate(single.deploy_times):
                checked += 1
                m = noisy.deploy_times[i]
                if not noisy.deploy_std[i] > 0:
                    problems.append(f"{cell} vm{i + 1} zero spread")
                rel = abs(m / ref - 1)
                worst_rel = max(worst_rel, rel)
                if rel > 3 * sigma:
                    problems.append(f"{cell} vm{i + 1} mean off by {rel:.1%}")
                col = [r.deploy[i] for r in wide.runs]
                z = abs(statistics.fmean(col) - ref) / statistics.stdev(col)
                worst_z = max(worst_z, z)
                if z > 3:
                    problems.append(f"{cell} vm{i + 1} mean {z:.2f} sd from sigma=0 value")
    verdict(7, not problems,
            f"16 cells, {checked} VMs: sigma=0 means exact; sigma=0.1 spreads nonzero, worst "
            f"relative shift {worst_rel:.2%} (limit 30%), worst shift {worst_z:.2f} sd over "
            f"30 runs (limit 3)" + ("" if not problems else f"; {problems[:2]}"))
