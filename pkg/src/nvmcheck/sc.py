"""Sequentially consistent persistency machines.

`psc` is the buffered form: writes enter per-location FIFO persist queues
immediately (no store buffers), flush-opts enqueue per-thread tokens, and
queue heads persist silently.  `pscf` is the speculative finite form: every
write or flush-opt either persists immediately or commits to never
persisting, tracked by a set of clean locations and a set of threads with no
outstanding unpersisted flush-opt.  `pscf` has no silent machine steps, so
its reachable-state count is finite for finite programs.
"""

from __future__ import annotations

from typing import NamedTuple

from .labels import FL, FO, MF, R, REX, SF, U, W, Machine


class PscState(NamedTuple):
    mem: tuple  # loc -> value
    pbs: tuple  # loc -> tuple of entries ('v', val) | ('f', tid)


class PscfState(NamedTuple):
    mem: tuple   # persisted memory
    vmem: tuple  # volatile view
    cp: int      # bitmask of clean locations
    csf: int     # bitmask of threads with no pending flush-opt


# ---------------------------------------------------------------------------
# psc


def rdw_psc(mem, pbx, loc):
    for ent in reversed(pbx):
        if ent[0] == "v":
            return ent[1]
    return mem[loc]


def psc_initial(mem, nthreads):
    return PscState(tuple(mem), ((),) * len(mem))


def _enqueue(pbs, loc, ent):
    return pbs[:loc] + (pbs[loc] + (ent,),) + pbs[loc + 1:]


def _no_token(pbs, tid):
    return all(("f", tid) not in pbx for pbx in pbs)


def psc_step_label(st, tid, lab):
    mem, pbs = st
    k = lab.kind
    if k == W:
        return (PscState(mem, _enqueue(pbs, lab.loc, ("v", lab.val_w))),)
    if k == R:
        ok = rdw_psc(mem, pbs[lab.loc], lab.loc) == lab.val_r
        return (st,) if ok else ()
    if k == U:
        if (_no_token(pbs, tid)
                and rdw_psc(mem, pbs[lab.loc], lab.loc) == lab.val_r):
            return (PscState(mem, _enqueue(pbs, lab.loc, ("v", lab.val_w))),)
        return ()
    if k == REX:
        ok = (_no_token(pbs, tid)
              and rdw_psc(mem, pbs[lab.loc], lab.loc) == lab.val_r)
        return (st,) if ok else ()
    if k in (MF, SF):
        return (st,) if _no_token(pbs, tid) else ()
    if k == FL:
        return (st,) if pbs[lab.loc] == () else ()
    if k == FO:
        return (PscState(mem, _enqueue(pbs, lab.loc, ("f", tid))),)
    raise ValueError(f"unknown label kind {k}")


def psc_internal(st):
    mem, pbs = st
    out = []
    for x, pbx in enumerate(pbs):
        if not pbx:
            continue
        head = pbx[0]
        npbs = pbs[:x] + (pbx[1:],) + pbs[x + 1:]
        nmem = mem
        if head[0] == "v":
            nmem = mem[:x] + (head[1],) + mem[x + 1:]
        out.append(PscState(nmem, npbs))
    return out


def psc_drain(st):
    mem, pbs = st
    out = list(mem)
    for x, pbx in enumerate(pbs):
        for ent in pbx:
            if ent[0] == "v":
                out[x] = ent[1]
    return tuple(out)


def psc_successors(st, enabled):
    out = [((tid, lab), nst)
           for tid, lab in enabled
           for nst in psc_step_label(st, tid, lab)]
    out.extend((None, nst) for nst in psc_internal(st))
    return out


# ---------------------------------------------------------------------------
# pscf


def pscf_initial(mem, nthreads):
    mem = tuple(mem)
    return PscfState(mem, mem, (1 << len(mem)) - 1, (1 << nthreads) - 1)


def _set_mem(mem, loc, val):
    return mem[:loc] + (val,) + mem[loc + 1:]


def pscf_step_label(st, tid, lab):
    mem, vmem, cp, csf = st
    k = lab.kind
    if k == W:
        x, v = lab.loc, lab.val_w
        out = [PscfState(mem, _set_mem(vmem, x, v), cp & ~(1 << x), csf)]
        if cp & (1 << x):
            out.append(PscfState(_set_mem(mem, x, v), _set_mem(vmem, x, v),
                                 cp, csf))
        return tuple(out)
    if k == R:
        return (st,) if vmem[lab.loc] == lab.val_r else ()
    if k == U:
        x = lab.loc
        if not (csf & (1 << tid)) or vmem[x] != lab.val_r:
            return ()
        nv = _set_mem(vmem, x, lab.val_w)
        out = [PscfState(mem, nv, cp & ~(1 << x), csf)]
        if cp & (1 << x):
            out.append(PscfState(_set_mem(mem, x, lab.val_w), nv, cp, csf))
        return tuple(out)
    if k == REX:
        ok = (csf & (1 << tid)) and vmem[lab.loc] == lab.val_r
        return (st,) if ok else ()
    if k in (MF, SF):
        return (st,) if csf & (1 << tid) else ()
    if k == FL:
        return (st,) if cp & (1 << lab.loc) else ()
    if k == FO:
        x = lab.loc
        out = [PscfState(mem, vmem, cp & ~(1 << x), csf & ~(1 << tid))]
        if cp & (1 << x):
            out.append(st)
        return tuple(out)
    raise ValueError(f"unknown label kind {k}")


def pscf_internal(st):
    return ()


def pscf_drain(st):
    return st.mem


def pscf_successors(st, enabled):
    return [((tid, lab), nst)
            for tid, lab in enabled
            for nst in pscf_step_label(st, tid, lab)]


PSC_MACHINE = Machine("psc", psc_initial, psc_step_label, psc_internal,
                      psc_drain)
PSCF_MACHINE = Machine("pscf", pscf_initial, pscf_step_label, pscf_internal,
                       pscf_drain)

MACHINES = {"psc": PSC_MACHINE, "pscf": PSCF_MACHINE}
