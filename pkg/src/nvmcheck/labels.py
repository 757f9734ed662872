"""Shared vocabulary: event labels, transition labels, and trace algebra.

Thread ids and locations are interned small integers everywhere in this
package; symbolic names live in a per-test symbol table (see litmus.SymTab)
and are only used for display.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

# Label kinds.
R = 0    # read
W = 1    # write
U = 2    # read-modify-write (FADD, successful CAS)
REX = 3  # failed CAS (exclusive read)
MF = 4   # memory fence
FL = 5   # flush
FO = 6   # optimized flush (flush-opt)
SF = 7   # store fence

KIND_NAMES = ("R", "W", "U", "R_ex", "MF", "FL", "FO", "SF")

# Kinds that write to a location / read from one.
WRITING_KINDS = frozenset({W, U})
READING_KINDS = frozenset({R, U, REX})


class Label(NamedTuple):
    """An event label; loc/val_r/val_w are None exactly when the kind lacks them."""

    kind: int
    loc: Optional[int] = None
    val_r: Optional[int] = None
    val_w: Optional[int] = None

    def display(self, locname=str) -> str:
        k = self.kind
        if k == R:
            return f"R({locname(self.loc)},{self.val_r})"
        if k == W:
            return f"W({locname(self.loc)},{self.val_w})"
        if k == U:
            return f"U({locname(self.loc)},{self.val_r},{self.val_w})"
        if k == REX:
            return f"R_ex({locname(self.loc)},{self.val_r})"
        if k == MF:
            return "MF"
        if k == FL:
            return f"FL({locname(self.loc)})"
        if k == FO:
            return f"FO({locname(self.loc)})"
        return "SF"


def read(loc: int, val: int) -> Label:
    return Label(R, loc, val, None)


def write(loc: int, val: int) -> Label:
    return Label(W, loc, None, val)


def rmw(loc: int, val_r: int, val_w: int) -> Label:
    return Label(U, loc, val_r, val_w)


def read_ex(loc: int, val: int) -> Label:
    return Label(REX, loc, val, None)


def mfence() -> Label:
    return Label(MF)


def flush(loc: int) -> Label:
    return Label(FL, loc)


def flush_opt(loc: int) -> Label:
    return Label(FO, loc)


def sfence() -> Label:
    return Label(SF)


def check_label(lab: Label) -> Label:
    """Validate the presence pattern of loc/val_r/val_w against the kind."""
    k = lab.kind
    has_loc = lab.loc is not None
    has_r = lab.val_r is not None
    has_w = lab.val_w is not None
    want = {
        R: (True, True, False),
        W: (True, False, True),
        U: (True, True, True),
        REX: (True, True, False),
        MF: (False, False, False),
        FL: (True, False, False),
        FO: (True, False, False),
        SF: (False, False, False),
    }[k]
    if (has_loc, has_r, has_w) != want:
        raise ValueError(f"malformed label {lab!r}")
    return lab


# A program transition label is either Silent (represented as None at the
# transition level) or an Observable (tid, Label) pair.  Traces produced by
# the explorer are tuples of (tid, Label) pairs interleaved with CRASH
# markers.
CRASH = "crash"


def restrict_trace(tr, tid: int) -> tuple:
    """The subsequence of tr's labels whose thread id equals tid."""
    out = []
    for ent in tr:
        if ent == CRASH:
            continue
        t, lab = ent
        if t == tid:
            out.append(lab)
    return tuple(out)


def per_thread_prefix(tr1, tr2) -> bool:
    """True iff per thread, tr1's label sequence is a prefix of tr2's.

    Both traces must be crash-free.
    """
    tids = {t for t, _ in tr1} | {t for t, _ in tr2}
    for tid in tids:
        a = restrict_trace(tr1, tid)
        b = restrict_trace(tr2, tid)
        if a != b[: len(a)]:
            return False
    return True


class Machine(NamedTuple):
    """An operational persistency machine.

    initial(mem, nthreads) builds the machine state over a non-volatile
    memory; step_label(st, tid, lab) returns the states reachable by one
    observable program step; internal(st) enumerates silent machine steps
    (propagation, persistence); drain(st) is the memory once all pending
    work completes.  The mem component is what survives a crash.
    """

    name: str
    initial: object
    step_label: object
    internal: object
    drain: object

    def crash_mem(self, st):
        return st.mem
