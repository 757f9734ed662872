"""Race detection, protection masks, and fence insertion."""

import pytest
from hypothesis import given, strategies as st

from _gen import random_test
from nvmcheck import explore, graphs, labels as L, races
from nvmcheck.labels import CRASH
from nvmcheck.litmus import (CasI, FaddI, FlushI, FlushOptI, IfGoto, MfenceI,
                             Program, ReadI, SfenceI, WriteI,
                             initial_program_state, parse_litmus)

FO_OOO = """
litmus "fo-ooo"
thread a { x1 := 1; x2 := 1; r0 := x2; if (r0 = 2) { x2 := 3; } }
thread b { x2 := 2; fo x1; sfence; x3 := 1; }
allowed { nv(x2) = 3 /\\ nv(x3) = 1 /\\ nv(x1) = 0 }
budget { crashes = 0; }
"""

FOT = """
litmus "fot"
thread a { x := 1; fo x; y := 1; }
thread b { r0 := y; sfence; if (r0 = 1) { z := 1; } }
"""


# -- protection masks over traces -------------------------------------------

def test_write_unprotects_other_locations():
    tr = ((0, L.write(1, 1)),)
    assert races.unprotected_after(tr, 0, L.read(0, 0), 2)
    assert races.unprotected_after(tr, 0, L.flush_opt(0), 2)
    assert not races.unprotected_after(tr, 0, L.read(1, 0), 2)
    assert not races.unprotected_after(tr, 0, L.flush_opt(1), 2)


def test_fences_and_rmws_restore_protection():
    w = (0, L.write(1, 1))
    r = L.read(0, 0)
    fo = L.flush_opt(0)
    assert not races.unprotected_after((w, (0, L.mfence())), 0, r, 2)
    assert not races.unprotected_after((w, (0, L.rmw(0, 0, 1))), 0, r, 2)
    assert not races.unprotected_after((w, (0, L.read_ex(0, 0))), 0, r, 2)
    # sfence shields flush-opts but not reads
    sf = (w, (0, L.sfence()))
    assert races.unprotected_after(sf, 0, r, 2)
    assert not races.unprotected_after(sf, 0, fo, 2)
    # a write to the raced location itself protects it
    ww = (w, (0, L.write(0, 1)))
    assert not races.unprotected_after(ww, 0, r, 2)
    assert races.unprotected_after(ww, 0, L.read(1, 0), 2)


def test_crash_restores_protection():
    tr = ((0, L.write(1, 1)), CRASH)
    assert not races.unprotected_after(tr, 0, L.read(0, 0), 2)
    assert races.max_crashless_suffix(tr) == ()
    tr2 = (CRASH, (0, L.write(1, 1)))
    assert races.max_crashless_suffix(tr2) == tr2[1:]
    assert races.unprotected_after(tr2, 0, L.read(0, 0), 2)


def test_other_threads_do_not_unprotect():
    tr = ((1, L.write(1, 1)),)
    assert not races.unprotected_after(tr, 0, L.read(0, 0), 2)


@st.composite
def _traces(draw):
    ent = st.one_of(
        st.just(CRASH),
        st.tuples(st.integers(0, 1), st.sampled_from([
            L.write(0, 1), L.write(1, 1), L.read(0, 0), L.read(1, 0),
            L.flush(0), L.flush_opt(1), L.mfence(), L.sfence(),
            L.rmw(0, 0, 1), L.read_ex(1, 0),
        ])))
    return tuple(draw(st.lists(ent, max_size=8)))


@given(_traces(), st.integers(0, 1), st.booleans(), st.integers(0, 1))
def test_protection_depends_only_on_crashless_suffix(tr, tid, is_read, loc):
    lab = L.read(loc, 0) if is_read else L.flush_opt(loc)
    assert races.unprotected_after(tr, tid, lab, 2) == \
        races.unprotected_after(races.max_crashless_suffix(tr), tid, lab, 2)


# -- race search -------------------------------------------------------------

def test_exhibits_race_at_initial_state():
    t = parse_litmus("""
    litmus "wr"
    thread a { x := 1; }
    thread b { r0 := x; }
    """)
    ps = initial_program_state(t.program)
    lab = races.exhibits_race(ps, t, 1)
    assert lab is not None and lab.kind == L.R and lab.loc == 0
    assert races.exhibits_race(ps, t, 0) is None  # writes do not race


def test_disjoint_locations_are_race_free():
    t = parse_litmus("""
    litmus "disjoint"
    thread a { x := 1; fl x; }
    thread b { y := 1; r0 := y; }
    """)
    assert not races.is_racy(t)
    assert not races.is_strongly_racy(t)


def test_fot_is_racy_but_not_strongly():
    t = parse_litmus(FOT)
    w = races.find_race(t)
    assert w is not None and w.lab.kind == L.R
    assert races.find_strong_race(t) is None


def test_fo_ooo_is_strongly_racy():
    t = parse_litmus(FO_OOO)
    w = races.find_strong_race(t)
    assert w is not None
    assert w.lab.kind == L.FO and w.lab.loc == t.symtab.locs.index("x1")
    # the run that reached the race indeed leaves the label unprotected
    assert races.unprotected_after(w.trace, w.tid, w.lab, t.nlocs)
    assert races.is_racy(t)


def test_locked_rmw_contention_is_not_a_race():
    t = parse_litmus("""
    litmus "locked"
    thread a { r0 := FADD(x, 1); }
    thread b { r0 := FADD(x, 1); }
    """)
    assert not races.is_racy(t)


# -- fence insertion ---------------------------------------------------------

X, Y = 0, 1


def _fence(code, nlocs=2):
    return races.insert_fences(Program((tuple(code),)), nlocs).threads[0]


def test_mfence_inserted_before_unprotected_read():
    got = _fence([WriteI(Y, ("c", 1)), ReadI(0, X), FlushOptI(X)])
    assert got == (WriteI(Y, ("c", 1)), MfenceI(), ReadI(0, X), FlushOptI(X))


def test_sfence_inserted_before_unprotected_flush_opt():
    got = _fence([WriteI(Y, ("c", 1)), FlushOptI(X)])
    assert got == (WriteI(Y, ("c", 1)), SfenceI(), FlushOptI(X))


def test_same_location_needs_no_fence():
    code = (WriteI(X, ("c", 1)), ReadI(0, X), FlushOptI(X))
    assert _fence(code) == code


@pytest.mark.parametrize("guard", [
    MfenceI(), FaddI(0, X, ("c", 1)), CasI(0, X, ("c", 0), ("c", 1)),
    FaddI(0, Y, ("c", 1)),
])
def test_existing_guards_suppress_fences(guard):
    code = (WriteI(Y, ("c", 1)), guard, ReadI(1, X), FlushOptI(X))
    assert _fence(code) == code


def test_sfence_does_not_guard_reads():
    got = _fence([WriteI(Y, ("c", 1)), SfenceI(), ReadI(0, X)])
    assert got == (WriteI(Y, ("c", 1)), SfenceI(), MfenceI(), ReadI(0, X))


def test_plain_flush_needs_no_fence():
    code = (WriteI(Y, ("c", 1)), FlushI(X))
    assert _fence(code) == code


def test_branch_join_takes_the_unprotected_path():
    t = parse_litmus("""
    litmus "join"
    thread a { r0 := z; if (r0 = 1) { y := 1; } r1 := x; }
    """)
    mapped = races.insert_fences(t.program, t.nlocs).threads[0]
    read = mapped[-1]
    assert isinstance(read, ReadI)
    assert mapped[-2] == MfenceI()


def test_goto_lands_on_inserted_fence():
    t = parse_litmus("""
    litmus "hop"
    thread a { y := 1; goto 9; 9: r0 := x; }
    """)
    mapped = races.insert_fences(t.program, t.nlocs)
    code = mapped.threads[0]
    assert code[2] == MfenceI() and isinstance(code[3], ReadI)
    assert code[1] == IfGoto(("c", 1), 2)  # jump reaches the fence first
    same = explore.explore(races.map_test(t), "psc")
    orig = explore.explore(t, "psc")
    assert same.final_states == orig.final_states


def test_loopy_code_is_rejected():
    code = (IfGoto(("c", 1), 0),)
    with pytest.raises(ValueError):
        races.insert_fences(Program((code,)), 1)


def test_insertion_is_idempotent_on_random_programs():
    for seed in range(40):
        t = random_test(seed, crashes=0, max_threads=2, max_instrs=5)
        once = races.insert_fences(t.program, t.nlocs)
        again = races.insert_fences(once, t.nlocs)
        assert once == again, f"seed {seed}"


def test_mapped_random_programs_have_no_strong_race():
    for seed in range(25):
        t = random_test(seed, crashes=1, max_threads=2, max_instrs=4)
        mapped = races.map_test(t)
        assert not races.is_strongly_racy(mapped), f"seed {seed}"


def test_mapped_fo_ooo_closes_the_model_gap():
    t = parse_litmus(FO_OOO)
    mapped = races.map_test(t)
    assert not races.is_strongly_racy(mapped)
    # with the races protected, buffered and sequential summaries agree
    syn = explore.explore(mapped, "ptsosyn")
    seq = explore.explore(t, "psc")
    assert syn.nv_memories == seq.nv_memories
    assert syn.final_states == seq.final_states
    # the original program's buffered behaviour was strictly richer
    assert explore.explore(t, "ptsosyn").nv_memories > seq.nv_memories


# -- the graph-level notion --------------------------------------------------

def _line_graph(labs):
    """One thread running `labs` over two locations; reads see the
    latest same-thread write, or the initial value."""
    ev = [graphs.init_event(X, 0), graphs.init_event(Y, 0)]
    last = {X: ev[0], Y: ev[1]}
    rf = set()
    for i, lab in enumerate(labs, start=1):
        e = graphs.Event(0, i, lab)
        ev.append(e)
        if lab.kind == L.R:
            rf.add((last[lab.loc], e))
        if lab.kind == L.W:
            last[lab.loc] = e
    return graphs.make_graph(ev, rf, (last[X], last[Y])), ev


def test_graph_unprotected_read_after_foreign_write():
    g, ev = _line_graph([L.write(Y, 1), L.read(X, 0)])
    assert races.g_unprotected(g, ev[-1])


@pytest.mark.parametrize("mid,rd,expect", [
    (L.mfence(), L.read(X, 0), False),
    (L.sfence(), L.read(X, 0), True),
    (L.sfence(), L.flush_opt(X), False),
    (L.flush(X), L.read(X, 0), True),
    (L.write(X, 1), L.read(X, 1), False),
])
def test_graph_protection_between_write_and_access(mid, rd, expect):
    g, ev = _line_graph([L.write(Y, 1), mid, rd])
    assert races.g_unprotected(g, ev[-1]) is expect


def test_graph_init_writes_do_not_unprotect():
    g, ev = _line_graph([L.read(X, 0)])
    assert not races.g_unprotected(g, ev[-1])
    assert not races.g_unprotected(g, ev[0])  # init event, wrong kind
