"""Execution graphs and axiomatic consistency checking.

An execution graph has events (per-location initialization writes plus
numbered thread events), a reads-from relation, and a per-location choice of
the write whose value persisted last.  Three checkers decide consistency:

* `consistent_dptso` searches for a strict total order on the non-read
  events subject to seven irreflexivity conditions;
* `consistent_dptsomo` searches per-location modification orders and checks
  a happens-before acyclicity criterion (equivalent, usually faster);
* `consistent_dpsc` is the sequentially consistent variant built on full
  program order and reads-from.

`generate_graphs` enumerates every graph a litmus test can generate over a
given initial memory (all partial runs included); `dec_reachable` chains
generated graphs across crashes and reports reachable persisted memories and
final register states, mirroring the operational explorer's summary.
"""

from __future__ import annotations

from itertools import permutations, product
from typing import NamedTuple

from .explore import ReachabilitySummary
from .labels import (CRASH, FL, FO, MF, R, REX, SF, U, W, Label,
                     READING_KINDS, WRITING_KINDS, check_label, restrict_trace,
                     write)
from .litmus import (initial_program_state, silent_closure, thread_successors)

INIT_TID = -1


class Event(NamedTuple):
    tid: int  # INIT_TID for initialization events
    sn: int   # 0 for initialization, 1.. within each thread
    lab: Label


def init_event(loc, val):
    return Event(INIT_TID, 0, write(loc, val))


def is_init(e):
    return e.tid == INIT_TID


def next_event(events, tid, lab):
    """The event extending `events` in thread `tid` with label `lab`."""
    sn = max((e.sn for e in events if e.tid == tid), default=0) + 1
    return Event(tid, sn, lab)


def po_less(a, b):
    """Program order: initialization first, then per-thread issue order."""
    if a.tid == INIT_TID:
        return b.tid != INIT_TID
    return a.tid == b.tid and a.sn < b.sn


def _event_key(e):
    lab = e.lab
    return (e.tid, e.sn, lab.kind, -1 if lab.loc is None else lab.loc,
            -1 if lab.val_r is None else lab.val_r,
            -1 if lab.val_w is None else lab.val_w)


class ExecutionGraph(NamedTuple):
    events: tuple  # sorted by (tid, sn)
    rf: frozenset  # (writer, reader) event pairs
    m: tuple       # loc -> event whose value persisted last


def make_graph(events, rf, m):
    return ExecutionGraph(tuple(sorted(events, key=_event_key)),
                          frozenset(rf), tuple(m))


def mem_of(g):
    return tuple(e.lab.val_w for e in g.m)


def check_graph(g):
    """Validate well-formedness; raises ValueError on defects."""
    locs = range(len(g.m))
    by_tid = {}
    for e in g.events:
        check_label(e.lab)
        by_tid.setdefault(e.tid, []).append(e.sn)
    for x in locs:
        inits = [e for e in g.events
                 if is_init(e) and e.lab.loc == x and e.lab.kind == W]
        if len(inits) != 1:
            raise ValueError(f"location {x} needs exactly one init write")
        if g.m[x] not in g.events or g.m[x].lab.kind not in WRITING_KINDS \
                or g.m[x].lab.loc != x:
            raise ValueError(f"m({x}) must pick a write to {x} in the graph")
    for tid, sns in by_tid.items():
        if tid == INIT_TID:
            continue
        if sorted(sns) != list(range(1, len(sns) + 1)):
            raise ValueError(f"thread {tid} serial numbers not contiguous")
    sources = {}
    for w, r in g.rf:
        if w not in g.events or r not in g.events:
            raise ValueError("rf edge over foreign events")
        if (w.lab.kind not in WRITING_KINDS or r.lab.kind not in READING_KINDS
                or w.lab.loc != r.lab.loc or w.lab.val_w != r.lab.val_r
                or w == r):
            raise ValueError(f"bad rf edge {w} -> {r}")
        if r in sources:
            raise ValueError(f"two rf sources for {r}")
        sources[r] = w
    for e in g.events:
        if e.lab.kind in READING_KINDS and e not in sources:
            raise ValueError(f"read {e} has no rf source")
    return g


# ---------------------------------------------------------------------------
# Indexed view shared by the checkers.


class _Idx:
    def __init__(self, g):
        ev = g.events
        self.n = n = len(ev)
        self.pos = pos = {e: i for i, e in enumerate(ev)}
        self.kind = [e.lab.kind for e in ev]
        self.loc = [e.lab.loc for e in ev]
        self.po = po = set()
        for i, a in enumerate(ev):
            for j, b in enumerate(ev):
                if i != j and po_less(a, b):
                    po.add((i, j))
        self.rf = {(pos[w], pos[r]) for w, r in g.rf}
        self.rfe = {p for p in self.rf if p not in po}
        self.m = [pos[e] for e in g.m]
        self.writes_by_loc = {}
        for i in range(n):
            if self.kind[i] in (W, U):
                self.writes_by_loc.setdefault(self.loc[i], []).append(i)
        # Flushes ordered before some rmw, failed rmw, or fence are durable;
        # so is every plain flush.
        self.flo = [
            i for i in range(n)
            if self.kind[i] == FL
            or (self.kind[i] == FO and any(
                (i, j) in po and self.kind[j] in (U, REX, MF, SF)
                for j in range(n)))
        ]


def _acyclic(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in edges:
        if a == b:
            return False
        adj[a].append(b)
    state = [0] * n  # 0 new, 1 on stack, 2 done
    for root in range(n):
        if state[root]:
            continue
        stack = [(root, iter(adj[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            for nxt in it:
                if state[nxt] == 1:
                    return False
                if state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, iter(adj[nxt])))
                    break
            else:
                state[node] = 2
                stack.pop()
    return True


# ---------------------------------------------------------------------------
# Total-order checker.


def dptso_witness(g):
    """A strict total order on the non-read events witnessing consistency,
    as a tuple of events, or None."""
    ix = _Idx(g)
    kind, loc, po, rfe = ix.kind, ix.loc, ix.po, ix.rfe
    p_nodes = [i for i in range(ix.n) if kind[i] != R]
    pset = set(p_nodes)

    # An external read sees a write while following it in program order, or
    # an event reads from itself: no order can help.
    for w, r in rfe:
        if r == w or (r, w) in po:
            return None

    forced = {i: set() for i in p_nodes}
    for a, b in po:
        if a in pset and b in pset:
            if kind[a] in (W, FL, FO) and kind[b] == FO and loc[a] != loc[b]:
                continue  # stores and flushes pass later other-location fo
            forced[a].add(b)
    for w, r in rfe:
        for a in p_nodes:
            if a != w and (a == r or (r, a) in po):
                forced[w].add(a)

    rf_list = list(ix.rf)
    sync = [i for i in p_nodes if kind[i] in (U, REX, MF)]
    rfe_list = list(rfe)

    def conditions_hold(rank):
        fr = []
        for w, r in rf_list:
            for w2 in ix.writes_by_loc.get(loc[r], ()):
                if w2 != r and rank[w] < rank[w2]:
                    fr.append((r, w2))
        for r, w2 in fr:
            for e in (w2, *(b for a, b in rfe_list if a == w2)):
                if (e, r) in po:
                    return False  # read observes a store it overtakes
            if kind[r] != R and rank[w2] < rank[r]:
                return False
            for w3, r2 in rfe_list:
                if rank[w2] < rank[w3] and (r2, r) in po:
                    return False
            for e in sync:
                if rank[w2] < rank[e] and (e, r) in po:
                    return False
        for f in ix.flo:
            mx = ix.m[loc[f]]
            for w2 in ix.writes_by_loc[loc[f]]:
                if rank[mx] < rank[w2] < rank[f]:
                    return False
        return True

    # Enumerate linear extensions of the forced edges.
    indeg = {i: 0 for i in p_nodes}
    for i in p_nodes:
        for j in forced[i]:
            indeg[j] += 1
    order = []
    rank = {}

    def extend():
        if len(order) == len(p_nodes):
            if conditions_hold(rank):
                return True
            return False
        for i in p_nodes:
            if indeg[i] == 0 and i not in rank:
                rank[i] = len(order)
                order.append(i)
                for j in forced[i]:
                    indeg[j] -= 1
                if extend():
                    return True
                for j in forced[i]:
                    indeg[j] += 1
                order.pop()
                del rank[i]
        return False

    if extend():
        return tuple(g.events[i] for i in order)
    return None


def consistent_dptso(g):
    return dptso_witness(g) is not None


# ---------------------------------------------------------------------------
# Modification-order checkers.


def _ppo_pairs(ix):
    out = set()
    for a, b in ix.po:
        ka, kb = ix.kind[a], ix.kind[b]
        if ka in (W, FL, FO, SF) and kb == R:
            continue  # stores and flushes pass later loads
        if ka in (W, FL, FO) and kb == FO and ix.loc[a] != ix.loc[b]:
            continue
        out.add((a, b))
    return out


def _mo_search(g, use_sc):
    ix = _Idx(g)
    po = ix.po
    if use_sc:
        base = po | ix.rf
    else:
        base = _ppo_pairs(ix) | ix.rfe
    if not _acyclic(ix.n, base):
        return False

    locs = sorted(ix.writes_by_loc)
    perms_by_loc = []
    for x in locs:
        ws = ix.writes_by_loc[x]
        init = [i for i in ws if g.events[i].tid == INIT_TID]
        rest = [i for i in ws if g.events[i].tid != INIT_TID]
        # Initialization writes are order-minimal in any acyclic candidate.
        perms_by_loc.append([init + list(p) for p in permutations(rest)])

    rf_list = list(ix.rf)

    for combo in product(*perms_by_loc):
        mo = set()
        for chain in combo:
            for i in range(len(chain)):
                for j in range(i + 1, len(chain)):
                    mo.add((chain[i], chain[j]))
        fr = {(r, w2) for w, r in rf_list for (a, w2) in mo if a == w
              if w2 != r}
        if not use_sc and any((w2, r) in po for r, w2 in fr):
            continue
        dtpo = set()
        for f in ix.flo:
            mx = ix.m[ix.loc[f]]
            for a, w2 in mo:
                if a == mx:
                    dtpo.add((f, w2))
        if _acyclic(ix.n, base | mo | fr | dtpo):
            return True
    return False


def consistent_dptsomo(g):
    return _mo_search(g, use_sc=False)


def consistent_dpsc(g):
    return _mo_search(g, use_sc=True)


CHECKERS = {
    "dptso": consistent_dptso,
    "dptsomo": consistent_dptsomo,
    "dpsc": consistent_dpsc,
}


# ---------------------------------------------------------------------------
# Graph generation from a litmus test.


def _thread_paths(test, tid, max_len=None):
    """All (labels, terminated, final regs) the thread can realize."""
    code = test.program.threads[tid]
    universe = test.universe
    regs0 = initial_program_state(test.program)[tid][1]
    out = []

    def rec(pc, regs, labs):
        pc, regs = silent_closure(code, pc, regs, universe)
        done = pc >= len(code)
        out.append((tuple(labs), done, regs))
        if done or (max_len is not None and len(labs) >= max_len):
            return
        for lab, (npc, nregs) in thread_successors(code, pc, regs, universe):
            labs.append(lab)
            rec(npc, nregs, labs)
            labs.pop()

    rec(0, regs0, [])
    return out


def _event_sets(test, mem, max_events=None):
    """Yield (events, complete, final regs) over all path combinations."""
    inits = tuple(init_event(x, mem[x]) for x in range(test.nlocs))
    budget = None if max_events is None else max_events - len(inits)
    if budget is not None and budget < 0:
        return
    per_thread = [_thread_paths(test, tid, budget)
                  for tid in range(test.nthreads)]
    for combo in product(*per_thread):
        if budget is not None and sum(len(c[0]) for c in combo) > budget:
            continue
        events = list(inits)
        for tid, (labs, _, _) in enumerate(combo):
            events.extend(Event(tid, i + 1, lab)
                          for i, lab in enumerate(labs))
        complete = all(done for _, done, _ in combo)
        finals = tuple(regs for _, _, regs in combo) if complete else None
        yield tuple(events), complete, finals


def _graphs_over(events, nlocs):
    """All (rf, m) completions of an event set; none if a read is unfeedable."""
    reads = [e for e in events if e.lab.kind in READING_KINDS]
    writes_by_loc = {x: [] for x in range(nlocs)}
    for e in events:
        if e.lab.kind in WRITING_KINDS:
            writes_by_loc[e.lab.loc].append(e)
    cands = []
    for r in reads:
        cs = [w for w in writes_by_loc[r.lab.loc]
              if w.lab.val_w == r.lab.val_r and w != r]
        if not cs:
            return
        cands.append(cs)
    m_choices = [writes_by_loc[x] for x in range(nlocs)]
    for rf_srcs in product(*cands):
        rf = frozenset(zip(rf_srcs, reads))
        for m in product(*m_choices):
            yield ExecutionGraph(events, rf, m)


def generate_graphs(test, mem=None, max_events=None):
    """Every graph the test generates over `mem` (partial runs included)."""
    mem = test.init if mem is None else tuple(mem)
    for events, _, _ in _event_sets(test, mem, max_events):
        yield from _graphs_over(events, test.nlocs)


def trace_in_graph(trace, g):
    """Whether a crash-free observable trace realizes exactly this graph."""
    if any(ent == CRASH for ent in trace):
        return False
    by_tid = {}
    for e in g.events:
        if not is_init(e):
            by_tid.setdefault(e.tid, []).append(e)
    tids = set(by_tid) | {t for t, _ in trace}
    for tid in tids:
        want = tuple(e.lab for e in sorted(by_tid.get(tid, ()),
                                           key=lambda e: e.sn))
        if restrict_trace(trace, tid) != want:
            return False
    return True


# ---------------------------------------------------------------------------
# Chain reachability across crashes.


def dec_reachable(test, model="dptso", max_chain=None, max_events=None):
    """Reachable persisted memories and final states, declaratively.

    A run with n crashes is a chain of n+1 graphs, each generated over the
    memory the previous graph persisted; crashes may strike mid-run, so
    partial graphs contribute their memories too.  `max_chain` bounds the
    chain length (defaulting to the test's crash budget plus one).
    """
    checker = CHECKERS[model]
    crashes = test.max_crashes if max_chain is None else max_chain - 1
    m0 = tuple(test.init)
    seen = {m0}
    finals = set()
    graphs_checked = 0
    cache = {}
    frontier = {m0}
    for _ in range(crashes + 1):
        new = set()
        for m in frontier:
            hit = cache.get(m)
            if hit is None:
                mems, fins, cnt = _expand(test, m, checker, max_events)
                cache[m] = hit = (mems, fins)
                graphs_checked += cnt
            mems, fins = hit
            finals |= fins
            new |= mems
        frontier = new - seen
        seen |= new
        if not frontier:
            break
    return ReachabilitySummary(model, crashes, frozenset(seen),
                               frozenset(finals), graphs_checked)


def _expand(test, mem, checker, max_events):
    mems = set()
    finals = set()
    count = 0
    for events, complete, regs in _event_sets(test, mem, max_events):
        sat = False
        for g in _graphs_over(events, test.nlocs):
            count += 1
            if checker(g):
                sat = True
                mems.add(mem_of(g))
        if sat and complete:
            finals.add(regs)
    return mems, finals, count
