"""Buffered operational machines for x86 persistency.

Two equivalent machines are provided.  `ptso` keeps one global persistence
buffer holding writes and per-location persist markers, fed by per-thread
store buffers whose entries may propagate out of order within the documented
constraints.  `ptsosyn` splits the persistence buffer into per-location FIFO
queues of values and flush-opt tokens, with store buffers propagating from
the head (flush-opts may still jump forward).  Both expose the same stepping
interface: `step_label` consumes one observable program label, `internal`
enumerates silent machine transitions, `crash_mem` is what survives a crash.

State components are immutable tuples so explored states hash cheaply.
"""

from __future__ import annotations

from typing import NamedTuple

from .labels import FL, FO, MF, R, REX, SF, U, W, Machine


class PtsoState(NamedTuple):
    mem: tuple   # loc -> value
    pb: tuple    # entries ('w', loc, val) | ('p', loc)
    bufs: tuple  # tid -> tuple of labels (W | FL | FO | SF)


class SynState(NamedTuple):
    mem: tuple   # loc -> value
    pbs: tuple   # loc -> tuple of entries ('v', val) | ('f', tid)
    bufs: tuple  # tid -> tuple of labels


# ---------------------------------------------------------------------------
# ptso


def rdw_ptso(mem, pb, buf, loc):
    """Value a thread with store buffer `buf` reads from `loc`."""
    for lab in reversed(buf):
        if lab.kind == W and lab.loc == loc:
            return lab.val_w
    for ent in reversed(pb):
        if ent[0] == "w" and ent[1] == loc:
            return ent[2]
    return mem[loc]


def ptso_initial(mem, nthreads):
    return PtsoState(tuple(mem), (), ((),) * nthreads)


def _push(bufs, tid, lab):
    return bufs[:tid] + (bufs[tid] + (lab,),) + bufs[tid + 1:]


def ptso_step_label(st, tid, lab):
    mem, pb, bufs = st
    k = lab.kind
    if k == R:
        ok = rdw_ptso(mem, pb, bufs[tid], lab.loc) == lab.val_r
        return (st,) if ok else ()
    if k in (W, FL, FO, SF):
        return (PtsoState(mem, pb, _push(bufs, tid, lab)),)
    if k == U:
        if bufs[tid] == () and rdw_ptso(mem, pb, (), lab.loc) == lab.val_r:
            return (PtsoState(mem, pb + (("w", lab.loc, lab.val_w),), bufs),)
        return ()
    if k == REX:
        ok = bufs[tid] == () and rdw_ptso(mem, pb, (), lab.loc) == lab.val_r
        return (st,) if ok else ()
    if k == MF:
        return (st,) if bufs[tid] == () else ()
    raise ValueError(f"unknown label kind {k}")


def _ptso_props(buf):
    """Indexes of buffer entries that may propagate, with their pb entry."""
    out = []
    seen_w = seen_fl = seen_sf = False
    fo_locs = set()
    for i, lab in enumerate(buf):
        k = lab.kind
        if k == W:
            if not (seen_w or seen_fl or seen_sf):
                out.append((i, ("w", lab.loc, lab.val_w)))
            seen_w = True
        elif k == FL:
            if not (seen_w or seen_fl or seen_sf or lab.loc in fo_locs):
                out.append((i, ("p", lab.loc)))
            seen_fl = True
        elif k == FO:
            # May overtake other-location stores and flushes, but not any
            # same-location store/flush or an earlier store fence.
            blocked = seen_sf or any(
                b.kind in (W, FL) and b.loc == lab.loc for b in buf[:i])
            if not blocked:
                out.append((i, ("p", lab.loc)))
            fo_locs.add(lab.loc)
        else:  # SF: head only
            if i == 0:
                out.append((i, None))
            seen_sf = True
    return out


def _ptso_persists(pb):
    """Indexes of pb entries that may persist right now."""
    out = []
    seen_per = False
    written = set()
    for i, ent in enumerate(pb):
        if seen_per:
            break
        if ent[0] == "w":
            if ent[1] not in written:
                out.append(i)
            written.add(ent[1])
        else:
            if ent[1] not in written:
                out.append(i)
            seen_per = True
    return out


def ptso_internal(st):
    mem, pb, bufs = st
    out = []
    for tid, buf in enumerate(bufs):
        for i, ent in _ptso_props(buf):
            nbufs = bufs[:tid] + (buf[:i] + buf[i + 1:],) + bufs[tid + 1:]
            npb = pb if ent is None else pb + (ent,)
            out.append(PtsoState(mem, npb, nbufs))
    for i in _ptso_persists(pb):
        ent = pb[i]
        npb = pb[:i] + pb[i + 1:]
        nmem = mem
        if ent[0] == "w":
            nmem = mem[:ent[1]] + (ent[2],) + mem[ent[1] + 1:]
        out.append(PtsoState(nmem, npb, bufs))
    return out


def ptso_drain(st):
    """Memory after all buffers propagate and all persists complete."""
    mem, pb, bufs = st
    bufs = [list(b) for b in bufs]
    mem = list(mem)

    def persist_all():
        for ent in pb:
            if ent[0] == "w":
                mem[ent[1]] = ent[2]

    while any(bufs):
        persist_all()
        pb = ()
        for buf in bufs:
            if buf:
                lab = buf.pop(0)
                if lab.kind == W:
                    pb = pb + (("w", lab.loc, lab.val_w),)
    persist_all()
    return tuple(mem)


# ---------------------------------------------------------------------------
# ptsosyn


def rdw_ptsosyn(mem, pbx, buf, loc):
    """Like rdw_ptso but against one location's persist queue."""
    for lab in reversed(buf):
        if lab.kind == W and lab.loc == loc:
            return lab.val_w
    for ent in reversed(pbx):
        if ent[0] == "v":
            return ent[1]
    return mem[loc]


def syn_initial(mem, nthreads):
    nlocs = len(mem)
    return SynState(tuple(mem), ((),) * nlocs, ((),) * nthreads)


def _no_token(pbs, tid):
    return all(("f", tid) not in pbx for pbx in pbs)


def syn_step_label(st, tid, lab):
    mem, pbs, bufs = st
    k = lab.kind
    if k == R:
        ok = rdw_ptsosyn(mem, pbs[lab.loc], bufs[tid], lab.loc) == lab.val_r
        return (st,) if ok else ()
    if k in (W, FL, FO, SF):
        return (SynState(mem, pbs, _push(bufs, tid, lab)),)
    if k == U:
        x = lab.loc
        if (bufs[tid] == () and _no_token(pbs, tid)
                and rdw_ptsosyn(mem, pbs[x], (), x) == lab.val_r):
            npbs = pbs[:x] + (pbs[x] + (("v", lab.val_w),),) + pbs[x + 1:]
            return (SynState(mem, npbs, bufs),)
        return ()
    if k == REX:
        x = lab.loc
        ok = (bufs[tid] == () and _no_token(pbs, tid)
              and rdw_ptsosyn(mem, pbs[x], (), x) == lab.val_r)
        return (st,) if ok else ()
    if k == MF:
        ok = bufs[tid] == () and _no_token(pbs, tid)
        return (st,) if ok else ()
    raise ValueError(f"unknown label kind {k}")


def _syn_props(st, tid):
    """Propagation steps for one thread: (index, loc, queue-entry | None)."""
    mem, pbs, bufs = st
    buf = bufs[tid]
    out = []
    if buf:
        head = buf[0]
        if head.kind == W:
            out.append((0, head.loc, ("v", head.val_w)))
        elif head.kind == FL:
            if pbs[head.loc] == ():
                out.append((0, head.loc, None))
        elif head.kind == SF:
            if _no_token(pbs, tid):
                out.append((0, None, None))
    for i, lab in enumerate(buf):
        if lab.kind != FO:
            continue
        blocked = any(
            b.kind == SF or (b.kind in (W, FL, FO) and b.loc == lab.loc)
            for b in buf[:i])
        if not blocked:
            out.append((i, lab.loc, ("f", tid)))
    return out


def syn_internal(st):
    mem, pbs, bufs = st
    out = []
    for tid in range(len(bufs)):
        for i, loc, ent in _syn_props(st, tid):
            buf = bufs[tid]
            nbufs = bufs[:tid] + (buf[:i] + buf[i + 1:],) + bufs[tid + 1:]
            npbs = pbs
            if ent is not None:
                npbs = pbs[:loc] + (pbs[loc] + (ent,),) + pbs[loc + 1:]
            out.append(SynState(mem, npbs, nbufs))
    for x, pbx in enumerate(pbs):
        if not pbx:
            continue
        head = pbx[0]
        npbs = pbs[:x] + (pbx[1:],) + pbs[x + 1:]
        nmem = mem
        if head[0] == "v":
            nmem = mem[:x] + (head[1],) + mem[x + 1:]
        out.append(SynState(nmem, npbs, bufs))
    return out


def syn_drain(st):
    """Memory after all buffers propagate and every queue empties."""
    mem, pbs, bufs = st
    bufs = [list(b) for b in bufs]
    mem = list(mem)

    def persist_all():
        for x in range(len(pbs)):
            for ent in pbs[x]:
                if ent[0] == "v":
                    mem[x] = ent[1]

    while any(bufs):
        persist_all()
        pbs = ((),) * len(pbs)
        for buf in bufs:
            if buf:
                lab = buf.pop(0)
                if lab.kind == W:
                    x = lab.loc
                    pbs = pbs[:x] + (pbs[x] + (("v", lab.val_w),),) + pbs[x + 1:]
    persist_all()
    return tuple(mem)


# ---------------------------------------------------------------------------
# Spec-shaped successor wrappers and the model registry.


def ptso_successors(st, enabled):
    """enabled: iterable of (tid, label); yields ((tid, label) | None, state')."""
    out = [((tid, lab), nst)
           for tid, lab in enabled
           for nst in ptso_step_label(st, tid, lab)]
    out.extend((None, nst) for nst in ptso_internal(st))
    return out


def ptsosyn_successors(st, enabled):
    out = [((tid, lab), nst)
           for tid, lab in enabled
           for nst in syn_step_label(st, tid, lab)]
    out.extend((None, nst) for nst in syn_internal(st))
    return out


PTSO_MACHINE = Machine("ptso", ptso_initial, ptso_step_label, ptso_internal,
                       ptso_drain)
PTSOSYN_MACHINE = Machine("ptsosyn", syn_initial, syn_step_label,
                          syn_internal, syn_drain)

MACHINES = {"ptso": PTSO_MACHINE, "ptsosyn": PTSOSYN_MACHINE}
