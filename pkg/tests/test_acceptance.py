"""End-to-end validation gates, each with a fixed wall-clock budget.

Every gate prints one summary line (visible with -s or in captured output)
and asserts both the semantic property and its runtime budget.  The random
program population is shared across gates: programs of at most 3 threads,
at most 6 instructions per thread (11 total), 2 locations, values {0,1,2},
and crash budget 1.
"""

import json
import sys
import time
from importlib import resources
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

sys.path.insert(0, str(Path(__file__).parent))
from _gen import random_program, random_test

from nvmcheck import explore, graphs, labels as L, races
from nvmcheck.graphs import INIT_TID, dptso_witness, generate_graphs, po_less
from nvmcheck.litmus import ProgramExec, parse_litmus
from nvmcheck.tso import PTSOSYN_MACHINE

import random

CORPUS = Path(resources.files("nvmcheck") / "corpus")

PROPERTY_CASES = 1000
_prop_elapsed = {}


def _corpus_tests():
    return [parse_litmus(p.read_text(), name=p.stem)
            for p in sorted(CORPUS.glob("*.litmus"))]


def _random_population(n=200, max_total=11):
    """Deterministic sample of n tests within the stated size bounds."""
    out, seed = [], 0
    while len(out) < n:
        t = random_test(seed, crashes=1, nlocs=2)
        if sum(len(c) for c in t.program.threads) <= max_total:
            out.append(t)
        seed += 1
    return out


@pytest.fixture(scope="module")
def corpus():
    return _corpus_tests()


@pytest.fixture(scope="module")
def population():
    return _random_population()


def _content(s):
    return (s.nv_memories, s.final_states)


def _report(gate, t0, budget, detail):
    elapsed = time.time() - t0
    print(f"{gate}: pass ({elapsed:.1f}s of {budget:.0f}s budget; {detail})")
    assert elapsed < budget


# -- gate 1: bundled corpus verdicts -----------------------------------------

def test_corpus_verdicts_reproduced(corpus):
    budget = 10.0
    t0 = time.time()
    expected = json.loads((CORPUS / "expected.json").read_text())
    by_name = {t.name: t for t in corpus}
    rows = 0
    for name, want in sorted(expected.items()):
        t = by_name[name]
        for model, exp in want["models"].items():
            assert explore.verdict(t, model).passed == exp, (name, model)
            rows += 1
        assert races.is_racy(t) == want["racy"], name
        assert races.is_strongly_racy(t) == want["strongly_racy"], name
        rows += 2
    _report("corpus verdicts", t0, budget,
            f"{rows} verdicts over {len(expected)} tests, all exact")


# -- gates 2 and 3: the two machines of each family coincide ------------------

def test_buffered_tso_machines_equivalent(corpus, population):
    budget = 600.0
    t0 = time.time()
    for t in corpus + population:
        cmp = explore.compare_models(t, "ptso", "ptsosyn")
        assert cmp.equal, (t.name, cmp)
    _report("ptso = ptsosyn", t0, budget,
            f"{len(corpus) + len(population)} programs, all equal")


def test_sc_machines_equivalent(corpus, population):
    budget = 300.0
    t0 = time.time()
    for t in corpus + population:
        cmp = explore.compare_models(t, "psc", "pscf")
        assert cmp.equal, (t.name, cmp)
    _report("psc = pscf", t0, budget,
            f"{len(corpus) + len(population)} programs, all equal")


# -- gate 4: total-order and modification-order checkers agree ----------------

def test_order_and_mo_checkers_agree(corpus):
    budget = 600.0
    t0 = time.time()
    checked = 0
    for t in corpus:
        mems = {tuple(t.init)}
        # Also seed graph enumeration with every memory an actual run can
        # leave behind, so post-crash initializations are covered.
        mems |= explore.explore(t, "ptsosyn").nv_memories
        for mem in sorted(mems):
            for g in generate_graphs(t, mem, max_events=12):
                assert (graphs.consistent_dptso(g)
                        == graphs.consistent_dptsomo(g)), (t.name, mem, g)
                checked += 1
    _report("dptso = dptsomo", t0, budget,
            f"{checked} graphs from {len(corpus)} tests, all agree")


# -- gate 5: declarative reachability matches the operational machines --------

def test_declarative_matches_operational(corpus):
    budget = 900.0
    t0 = time.time()
    for t in corpus:
        for op, dec in (("ptsosyn", "dptso"), ("psc", "dpsc")):
            o = explore.explore(t, op)
            d = graphs.dec_reachable(t, dec, max_chain=t.max_crashes + 1)
            assert o.nv_memories == d.nv_memories, (t.name, dec)
            assert o.final_states == d.final_states, (t.name, dec)
    _report("operational = declarative", t0, budget,
            f"{len(corpus)} tests x 2 model pairs, memories and finals equal")


# -- gate 6: race freedom ports behavior, fence mapping restores it -----------

def test_fence_mapping_closes_model_gap(corpus, population):
    budget = 600.0
    t0 = time.time()
    quiet = 0
    for t in corpus + population:
        psc = explore.explore(t, "psc")
        if not races.is_strongly_racy(t):
            quiet += 1
            assert _content(explore.explore(t, "ptsosyn")) == _content(psc), \
                t.name
        mapped = races.map_test(t)
        assert not races.is_strongly_racy(mapped), t.name
        assert _content(explore.explore(mapped, "ptsosyn")) == _content(psc), \
            t.name
    _report("fence mapping", t0, budget,
            f"{len(corpus) + len(population)} programs, {quiet} already "
            f"race-quiet; mapped runs match psc")


# -- gate 7: property suites ---------------------------------------------------

_prop = settings(
    max_examples=PROPERTY_CASES, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large,
                           HealthCheck.filter_too_much,
                           HealthCheck.large_base_example])


def _timed(name):
    """Record a property suite's wall-clock runtime under its name."""
    def deco(fn):
        def wrapper():
            s0 = time.time()
            try:
                return fn()
            finally:
                _prop_elapsed[name] = _prop_elapsed.get(name, 0.0) \
                    + (time.time() - s0)
        wrapper.__name__ = fn.__name__
        return wrapper
    return deco


def _machine_walk(rng, t, steps=40):
    """Random crash-free walk of the ptsosyn machine; yields state pairs."""
    pe = ProgramExec(t)
    ps = pe.initial_state()
    mst = PTSOSYN_MACHINE.initial(t.init, t.nthreads)
    for _ in range(steps):
        moves = [(None, n) for n in PTSOSYN_MACHINE.internal(mst)]
        for tid in range(t.nthreads):
            for lab, ns in pe.thread_succ(tid, ps[tid]):
                for n in PTSOSYN_MACHINE.step_label(mst, tid, lab):
                    moves.append(((tid, ns), n))
        if not moves:
            return
        prog, nmst = rng.choice(moves)
        yield mst, nmst
        if prog is not None:
            tid, ns = prog
            ps = ps[:tid] + (ns,) + ps[tid + 1:]
        mst = nmst


@_timed("fifo buffers")
@given(st.integers(0, 10 ** 9))
@_prop
def test_property_persist_queues_are_fifo(seed):
    rng = random.Random(seed)
    t = random_test(rng.randrange(10 ** 6), crashes=0, nlocs=2)
    appended = [[] for _ in range(t.nlocs)]
    persisted = [[] for _ in range(t.nlocs)]
    for old, new in _machine_walk(rng, t):
        for x in range(t.nlocs):
            a, b = old.pbs[x], new.pbs[x]
            if b == a:
                continue
            if len(b) == len(a) + 1 and b[:len(a)] == a:
                if b[-1][0] == "v":
                    appended[x].append(b[-1][1])
            elif b == a[1:]:
                if a[0][0] == "v":
                    persisted[x].append(a[0][1])
                    assert new.mem[x] == a[0][1]
            else:
                raise AssertionError(f"queue {x} changed non-FIFO: {a} -> {b}")
        for tid in range(t.nthreads):
            a, b = old.bufs[tid], new.bufs[tid]
            if len(b) == len(a) - 1:
                assert b == a[1:] or any(
                    a[i].kind == L.FO and b == a[:i] + a[i + 1:]
                    for i in range(len(a)))
    for x in range(t.nlocs):
        assert persisted[x] == appended[x][:len(persisted[x])]


def _flush_class(g):
    """Flushes, plus flush-opts made durable by a later fence or rmw."""
    out = []
    for e in g.events:
        if e.lab.kind == L.FL:
            out.append(e)
        elif e.lab.kind == L.FO and any(
                f.lab.kind in (L.U, L.REX, L.MF, L.SF) and po_less(e, f)
                for f in g.events):
            out.append(e)
    return out


@_timed("derived order in witness")
@given(st.integers(0, 10 ** 9))
@_prop
def test_property_witness_orders_durable_flushes_first(seed):
    rng = random.Random(seed)
    t = random_test(rng.randrange(10 ** 6), crashes=0, nlocs=2)
    budget = 12
    for examined, g in enumerate(generate_graphs(t, max_events=6)):
        if budget == 0 or examined >= 60:
            break
        w = dptso_witness(g)
        if w is None:
            continue
        budget -= 1
        rank = {e: i for i, e in enumerate(w)}
        for f in _flush_class(g):
            x = f.lab.loc
            last = rank[g.m[x]]
            for e in g.events:
                if e.lab.kind in (L.W, L.U) and e.lab.loc == x \
                        and rank[e] > last:
                    assert rank[f] < rank[e], (f, e, w)


def _accepted_walk(rng, pe, nthreads, steps=25):
    ps = pe.initial_state()
    trace = []
    for _ in range(steps):
        moves = [(tid, lab, ns)
                 for tid in range(nthreads)
                 for lab, ns in pe.thread_succ(tid, ps[tid])]
        if not moves:
            break
        tid, lab, ns = rng.choice(moves)
        trace.append((tid, lab))
        ps = ps[:tid] + (ns,) + ps[tid + 1:]
    return trace


def _accepts(pe, nthreads, trace):
    frontier = {pe.initial_state()}
    for tid, lab in trace:
        nxt = set()
        for ps in frontier:
            for l2, ns in pe.thread_succ(tid, ps[tid]):
                if l2 == lab:
                    nxt.add(ps[:tid] + (ns,) + ps[tid + 1:])
        if not nxt:
            return False
        frontier = nxt
    return True


@_timed("per-thread-prefix closure")
@given(st.integers(0, 10 ** 9))
@_prop
def test_property_accepted_traces_close_under_thread_prefixes(seed):
    rng = random.Random(seed)
    t = random_test(rng.randrange(10 ** 6), crashes=0, nlocs=2)
    pe = ProgramExec(t)
    trace = _accepted_walk(rng, pe, t.nthreads)
    cuts = {tid: rng.randint(0, sum(1 for i, _ in trace if i == tid))
            for tid in range(t.nthreads)}
    seen = {tid: 0 for tid in cuts}
    prefix = []
    for tid, lab in trace:
        if seen[tid] < cuts[tid]:
            prefix.append((tid, lab))
            seen[tid] += 1
    assert _accepts(pe, t.nthreads, prefix)


@_timed("exploration order-insensitivity")
@given(st.integers(0, 10 ** 9), st.sampled_from(sorted(explore.MODELS)))
@_prop
def test_property_search_order_does_not_change_summaries(seed, model):
    rng = random.Random(seed)
    t = random_test(rng.randrange(10 ** 6), crashes=rng.randint(0, 1),
                    max_threads=2, max_instrs=4, nlocs=2)
    assert (explore.explore(t, model, order="bfs")
            == explore.explore(t, model, order="dfs"))


@_timed("fence-pass idempotence")
@given(st.integers(0, 10 ** 9))
@_prop
def test_property_fence_insertion_is_idempotent(seed):
    rng = random.Random(seed)
    nlocs = 2
    prog = random_program(rng, nlocs=nlocs)
    once = races.insert_fences(prog, nlocs)
    assert races.insert_fences(once, nlocs) == once


def test_property_suites_within_budget():
    budget = 300.0
    total = sum(_prop_elapsed.values())
    detail = ", ".join(f"{k} {v:.0f}s" for k, v in _prop_elapsed.items())
    print(f"property suites: pass ({total:.1f}s of {budget:.0f}s budget; "
          f"{PROPERTY_CASES} cases each; {detail})")
    assert len(_prop_elapsed) == 5
    assert total < budget
