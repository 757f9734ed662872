"""Data-race detection under the sequential model, and fence insertion.

A read or flush-opt races when it is enabled at a reachable state
together with another thread's write to the same location.  Races by
themselves do not separate the buffered model from the sequential one;
what matters is whether the racing instruction is *unprotected*: the
racing thread wrote to some other location earlier and nothing since
then fenced that write (a write to the raced location, a locked rmw, an
mfence, or, for flush-opts only, an sfence).

Programs whose reachable races are all protected behave identically
under the buffered and sequential models, so it suffices to verify them
sequentially.  `insert_fences` enforces that property syntactically by
placing an mfence before each unprotected read and an sfence before
each unprotected flush-opt.
"""

from __future__ import annotations

from collections import deque
from typing import NamedTuple, Optional

from . import graphs, labels, sc
from .explore import DEFAULT_LIMIT, ResourceLimitError, _run, _trace_to
from .labels import CRASH
from .litmus import (Assign, FaddI, CasI, FlushI, FlushOptI, IfGoto,
                     MfenceI, Program, ProgramExec, ReadI, SfenceI, WriteI,
                     expr_regs, eval_expr, make_test, set_crash_budget)


class RaceWitness(NamedTuple):
    tid: int      # thread whose read or flush-opt races
    lab: object   # the racing label
    writer: int   # thread with a same-location write enabled
    trace: tuple  # run reaching the racy state


# ---------------------------------------------------------------------------
# Protection masks.
#
# Per thread, one bitmask per racing kind records which locations are
# currently unprotected: bit x set in the read mask means a read of x
# could still run ahead of an earlier buffered write.

def _mask_step(mask, lab, all_mask):
    k = lab.kind
    if k == labels.W:
        m = all_mask & ~(1 << lab.loc)
        return (m, m)
    if k in (labels.U, labels.REX, labels.MF):
        return (0, 0)
    if k == labels.SF:
        return (mask[0], 0)
    return mask  # R and FL leave protection untouched


def max_crashless_suffix(trace):
    """The portion of a trace after its last crash."""
    for i in range(len(trace) - 1, -1, -1):
        if trace[i] == CRASH:
            return tuple(trace[i + 1:])
    return tuple(trace)


def unprotected_after(trace, tid, lab, nlocs):
    """Whether `lab` (a read or flush-opt) is unprotected for `tid`
    once `trace` has run.  A crash restores full protection."""
    all_mask = (1 << nlocs) - 1
    cur = (0, 0)
    for ent in trace:
        if ent == CRASH:
            cur = (0, 0)
        elif ent[0] == tid:
            cur = _mask_step(cur, ent[1], all_mask)
    sel = cur[0] if lab.kind == labels.R else cur[1]
    return bool(sel >> lab.loc & 1)


# ---------------------------------------------------------------------------
# Race search.

def _races_at(ex, ps):
    """Yield (tid, lab, writer) for each race enabled at program state ps."""
    per = [ex.enabled(tid, ps[tid]) for tid in range(len(ps))]
    writes = [frozenset(l.loc for l in labs if l.kind in labels.WRITING_KINDS)
              for labs in per]
    for tid, labs in enumerate(per):
        seen = set()
        for lab in labs:
            if lab.kind not in (labels.R, labels.FO) or lab.loc in seen:
                continue
            for wtid, wlocs in enumerate(writes):
                if wtid != tid and lab.loc in wlocs:
                    seen.add(lab.loc)
                    yield tid, lab, wtid
                    break


def exhibits_race(ps, test, tid):
    """A racing label thread tid enables at program state ps, or None."""
    ex = test if isinstance(test, ProgramExec) else ProgramExec(test)
    for rtid, lab, _ in _races_at(ex, ps):
        if rtid == tid:
            return lab
    return None


def find_race(test, crashes=None, limit=DEFAULT_LIMIT):
    """A witness for some reachable race under the sequential model."""
    if crashes is None:
        crashes = test.max_crashes
    else:
        test = set_crash_budget(test, crashes)
    visited, _, _, _ = _run(test, sc.PSC_MACHINE, crashes, limit, "bfs")
    ex = ProgramExec(test)
    for key in visited:  # insertion order, so the first hit is shallowest
        for tid, lab, wtid in _races_at(ex, key[0]):
            return RaceWitness(tid, lab, wtid, _trace_to(visited, key))
    return None


def is_racy(test, crashes=None, limit=DEFAULT_LIMIT):
    return find_race(test, crashes, limit) is not None


def find_strong_race(test, crashes=None, limit=DEFAULT_LIMIT):
    """A witness for some reachable unprotected race.

    The search runs the sequential machine with each thread's protection
    masks folded into the state, so a state is racy only on runs that
    actually leave the racing instruction unfenced.
    """
    machine = sc.PSC_MACHINE
    if crashes is None:
        crashes = test.max_crashes
    else:
        test = set_crash_budget(test, crashes)
    ex = ProgramExec(test)
    nthreads = test.nthreads
    all_mask = (1 << test.nlocs) - 1
    ps0 = ex.initial_state()
    masks0 = ((0, 0),) * nthreads
    root = (ps0, machine.initial(test.init, nthreads), 0, masks0)
    visited = {root: None}
    queue = deque([root])
    while queue:
        cur = queue.popleft()
        ps, mst, used, masks = cur
        for tid, lab, wtid in _races_at(ex, ps):
            sel = masks[tid][0] if lab.kind == labels.R else masks[tid][1]
            if sel >> lab.loc & 1:
                return RaceWitness(tid, lab, wtid, _trace_to(visited, cur))

        succs = []
        for tid in range(nthreads):
            for lab, tstate in ex.thread_succ(tid, ps[tid]):
                nps = ps[:tid] + (tstate,) + ps[tid + 1:]
                if lab is None:
                    succs.append((None, (nps, mst, used, masks)))
                    continue
                nm = masks[:tid] + (_mask_step(masks[tid], lab, all_mask),) \
                    + masks[tid + 1:]
                for nmst in machine.step_label(mst, tid, lab):
                    succs.append(((tid, lab), (nps, nmst, used, nm)))
        for nmst in machine.internal(mst):
            succs.append((None, (ps, nmst, used, masks)))
        if used < crashes:
            nmst = machine.initial(machine.crash_mem(mst), nthreads)
            succs.append((CRASH, (ps0, nmst, used + 1, masks0)))

        for lab, nxt in succs:
            if nxt not in visited:
                if len(visited) >= limit:
                    raise ResourceLimitError(
                        f"state limit {limit} exceeded in strong-race search")
                visited[nxt] = (cur, lab)
                queue.append(nxt)
    return None


def is_strongly_racy(test, crashes=None, limit=DEFAULT_LIMIT):
    return find_strong_race(test, crashes, limit) is not None


# ---------------------------------------------------------------------------
# The same notion on execution graphs.

def g_unprotected(g, e):
    """Whether graph event e (a read or flush-opt) follows some
    same-thread write to another location with nothing protective
    ordered between them."""
    if e.lab.kind not in (labels.R, labels.FO):
        return False
    loc = e.lab.loc
    guard = {labels.U, labels.REX, labels.MF}
    if e.lab.kind == labels.FO:
        guard.add(labels.SF)
    for w in g.events:
        if (w.lab.kind != labels.W or w.tid == graphs.INIT_TID
                or w.lab.loc == loc or not graphs.po_less(w, e)):
            continue
        if not any(graphs.po_less(w, c) and graphs.po_less(c, e)
                   and (c.lab.kind in guard
                        or (c.lab.kind == labels.W and c.lab.loc == loc))
                   for c in g.events):
            return True
    return False


# ---------------------------------------------------------------------------
# Fence insertion.
#
# One forward pass per thread carries the protection masks through the
# instructions, joining branch paths by union of unprotectedness.  Each
# read of an unprotected location gets an mfence immediately before it,
# each flush-opt an sfence, and the inserted fence's effect flows
# onward, so a single mfence can protect everything after it.  A crash
# restarts the thread at entry with fresh masks, hence one analysis
# from entry covers post-crash runs as well.  Branch targets must point
# forward (parsed programs are unrolled, so they do).

def _static_step(ins, mask, all_mask):
    if isinstance(ins, WriteI):
        m = all_mask & ~(1 << ins.loc)
        return (m, m)
    if isinstance(ins, (FaddI, CasI, MfenceI)):
        return (0, 0)
    if isinstance(ins, SfenceI):
        return (mask[0], 0)
    return mask


def _succ_pcs(code, i):
    ins = code[i]
    if not isinstance(ins, IfGoto):
        return (i + 1,)
    if not expr_regs(ins.cond, set()):  # constant cond: one live successor
        return (ins.target,) if eval_expr(ins.cond, ()) != 0 else (i + 1,)
    return (ins.target, i + 1)


def _thread_fences(code, all_mask):
    n = len(code)
    fence = [None] * n
    masks = [None] * n  # in-mask per pc; None while unreached
    if n:
        masks[0] = (0, 0)
    for i in range(n):
        cur = masks[i]
        if cur is None:
            continue
        ins = code[i]
        if isinstance(ins, ReadI) and cur[0] >> ins.loc & 1:
            fence[i] = "mf"
            cur = (0, 0)
        elif isinstance(ins, FlushOptI) and cur[1] >> ins.loc & 1:
            fence[i] = "sf"
            cur = (cur[0], 0)
        out = _static_step(ins, cur, all_mask)
        for j in _succ_pcs(code, i):
            if j <= i:
                raise ValueError("fence insertion needs loop-free code; "
                                 "unroll the program first")
            if j < n:
                old = masks[j]
                masks[j] = out if old is None else (old[0] | out[0],
                                                    old[1] | out[1])
    return fence


def _map_thread(code, all_mask):
    fence = _thread_fences(code, all_mask)
    cum = [0]
    for f in fence:
        cum.append(cum[-1] + (f is not None))
    out = []
    for i, ins in enumerate(code):
        if fence[i] == "mf":
            out.append(MfenceI())
        elif fence[i] == "sf":
            out.append(SfenceI())
        if isinstance(ins, IfGoto):
            # jump to the fence, if any, so branched paths stay protected
            ins = IfGoto(ins.cond, ins.target + cum[ins.target])
        out.append(ins)
    return tuple(out)


def insert_fences(program, nlocs):
    """Fence every unprotected read and flush-opt of a program."""
    all_mask = (1 << nlocs) - 1
    return Program(tuple(_map_thread(code, all_mask)
                         for code in program.threads))


def map_test(test):
    """`test` with fences inserted; checks and budget carry over."""
    prog = insert_fences(test.program, test.nlocs)
    mapped = make_test(test.name, prog, test.nlocs,
                       dict(enumerate(test.init)), test.checks,
                       test.max_crashes, test.symtab)
    return mapped._replace(unroll=test.unroll)
