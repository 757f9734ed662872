"""State-space exploration of a litmus test under an operational model.

A system state is (program state, machine state, crashes used).  Transitions
are the program's silent steps, observable program labels accepted by the
machine, silent machine steps (propagation/persistence), and, while budget
remains, a crash that keeps the persisted memory and restarts the program.

The summary records every persisted memory seen (a crash could strike at any
state) and the register maps of runs where all threads terminated.
"""

from __future__ import annotations

from collections import deque
from typing import NamedTuple, Optional

from . import sc, tso
from .labels import CRASH
from .litmus import ProgramExec, set_crash_budget

MODELS = {**tso.MACHINES, **sc.MACHINES}

DEFAULT_LIMIT = 10_000_000


class ResourceLimitError(Exception):
    """The exploration exceeded its state budget."""


class ReachabilitySummary(NamedTuple):
    model: str
    crashes: int
    nv_memories: frozenset   # tuples, one value per location
    final_states: frozenset  # per-thread register tuples
    states: int


class CheckResult(NamedTuple):
    kind: str       # 'allowed' | 'forbidden'
    cond: str
    passed: bool
    witness: Optional[tuple]  # trace entries (tid, Label) or CRASH


class Verdict(NamedTuple):
    test: str
    model: str
    checks: tuple
    summary: ReachabilitySummary

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


class ModelComparison(NamedTuple):
    test: str
    model_a: str
    model_b: str
    equal: bool
    nv_only_a: frozenset
    nv_only_b: frozenset
    finals_only_a: frozenset
    finals_only_b: frozenset


def resolve_model(model):
    if isinstance(model, str):
        try:
            return MODELS[model]
        except KeyError:
            raise ValueError(f"unknown model {model!r}") from None
    return model


def _term_holds(term, ps, mem, ex):
    if term[0] == "nv":
        _, loc, op, val = term
        actual = mem[loc]
    else:
        _, tid, reg, op, val = term
        pc, regs = ps[tid]
        if pc < len(ex.program.threads[tid]):
            return False  # thread still running: no final register value yet
        actual = regs[reg]
    return actual == val if op == "=" else actual != val


def _check_holds(check, ps, mem, ex):
    return all(_term_holds(t, ps, mem, ex) for t in check.terms)


def _run(test, machine, crashes, limit, order):
    ex = ProgramExec(test)
    ps0 = ex.initial_state()
    root = (ps0, machine.initial(test.init, test.nthreads), 0)
    visited = {root: None}
    queue = deque([root])
    pop = queue.popleft if order == "bfs" else queue.pop
    nthreads = test.nthreads
    nv_memories = set()
    final_states = set()
    hits = [None] * len(test.checks)  # first state satisfying each check

    while queue:
        cur = pop()
        ps, mst, used = cur
        mem = mst.mem
        nv_memories.add(mem)
        if ex.all_terminated(ps):
            final_states.add(tuple(t[1] for t in ps))
        for i, chk in enumerate(test.checks):
            if hits[i] is None and _check_holds(chk, ps, mem, ex):
                hits[i] = cur

        succs = []
        for tid in range(nthreads):
            for lab, tstate in ex.thread_succ(tid, ps[tid]):
                nps = ps[:tid] + (tstate,) + ps[tid + 1:]
                if lab is None:
                    succs.append((None, (nps, mst, used)))
                else:
                    for nmst in machine.step_label(mst, tid, lab):
                        succs.append(((tid, lab), (nps, nmst, used)))
        for nmst in machine.internal(mst):
            succs.append((None, (ps, nmst, used)))
        if used < crashes:
            nmst = machine.initial(machine.crash_mem(mst), nthreads)
            succs.append((CRASH, (ps0, nmst, used + 1)))

        for lab, nxt in succs:
            if nxt not in visited:
                if len(visited) >= limit:
                    raise ResourceLimitError(
                        f"state limit {limit} exceeded under {machine.name}")
                visited[nxt] = (cur, lab)
                queue.append(nxt)

    return visited, nv_memories, final_states, hits


def _trace_to(visited, state):
    out = []
    ent = visited[state]
    while ent is not None:
        parent, lab = ent
        if lab is not None:
            out.append(lab)
        ent = visited[parent]
    out.reverse()
    return tuple(out)


def explore(test, model, crashes=None, limit=DEFAULT_LIMIT, order="bfs"):
    """Reachability summary of `test` under `model`."""
    machine = resolve_model(model)
    if crashes is None:
        crashes = test.max_crashes
    else:
        test = set_crash_budget(test, crashes)
    visited, nv, finals, _ = _run(test, machine, crashes, limit, order)
    return ReachabilitySummary(machine.name, crashes, frozenset(nv),
                               frozenset(finals), len(visited))


def verdict(test, model, crashes=None, limit=DEFAULT_LIMIT):
    """Evaluate the test's checks under `model`, with witness traces."""
    machine = resolve_model(model)
    if crashes is None:
        crashes = test.max_crashes
    else:
        test = set_crash_budget(test, crashes)
    visited, nv, finals, hits = _run(test, machine, crashes, limit, "bfs")
    results = []
    for chk, hit in zip(test.checks, hits):
        if chk.kind == "allowed":
            passed = hit is not None
        else:
            passed = hit is None
        witness = _trace_to(visited, hit) if hit is not None else None
        results.append(CheckResult(chk.kind, chk.text, passed, witness))
    summary = ReachabilitySummary(machine.name, crashes, frozenset(nv),
                                  frozenset(finals), len(visited))
    return Verdict(test.name, machine.name, tuple(results), summary)


def compare_models(test, model_a, model_b, crashes=None, limit=DEFAULT_LIMIT):
    """Compare reachable persisted memories and final states of two models."""
    sa = explore(test, model_a, crashes, limit)
    sb = explore(test, model_b, crashes, limit)
    return ModelComparison(
        test.name, sa.model, sb.model,
        sa.nv_memories == sb.nv_memories
        and sa.final_states == sb.final_states,
        sa.nv_memories - sb.nv_memories,
        sb.nv_memories - sa.nv_memories,
        sa.final_states - sb.final_states,
        sb.final_states - sa.final_states,
    )


def format_trace(trace, symtab):
    """Render a witness trace with symbolic names."""
    parts = []
    for ent in trace:
        if ent == CRASH:
            parts.append("CRASH")
        else:
            tid, lab = ent
            parts.append(f"{symtab.threads[tid]}:"
                         f"{lab.display(lambda l: symtab.locs[l])}")
    return " ; ".join(parts)
