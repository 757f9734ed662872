"""Litmus-test surface syntax and the transition system induced by a program.

A litmus file names a test, optionally seeds the non-volatile memory, gives
one or more threads, and lists outcome checks plus exploration budgets:

    litmus "example"
    init { x2 = 1; }
    thread t1 {
      x1 := 1;
      fo x1;
      r1 := x2;
      if (r1 = 1) { x3 := 1; }
    }
    allowed { nv(x3) = 1 /\\ nv(x1) = 0 }
    budget { crashes = 1; }

Identifiers of the shape r<digits> (r0, r1, ...) are registers; every other
identifier in operand position is a location.  Thread names are free-form.
Structured `if` blocks desugar to conditional branches; `goto N` jumps to the
statement labelled `N:`, and `if (e) goto N;` is the primitive conditional
branch both forms reduce to.  Loops (backward branches) must be covered by
the unroll budget and are rewritten into that many copies, after which the
code is acyclic.
"""

from __future__ import annotations

import re
from typing import NamedTuple, Optional

from .labels import (Label, flush, flush_opt, mfence, read, read_ex, rmw,
                     sfence, write)


class LitmusError(Exception):
    """Parse or well-formedness failure, carrying a position when known."""

    def __init__(self, msg, line=None, col=None):
        if line is not None:
            msg = f"{line}:{col}: {msg}"
        super().__init__(msg)
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Expressions: ('c', n) | ('r', reg) | ('+', a, b) | ('=', a, b) | ('!=', a, b)
# Comparisons yield 1/0.


def eval_expr(e, regs):
    op = e[0]
    if op == "c":
        return e[1]
    if op == "r":
        return regs[e[1]]
    a = eval_expr(e[1], regs)
    b = eval_expr(e[2], regs)
    if op == "+":
        return a + b
    if op == "=":
        return 1 if a == b else 0
    return 1 if a != b else 0


def eval_expr_set(e, regsets, universe):
    """All values an expression may take when each register ranges over a set."""
    op = e[0]
    if op == "c":
        return {e[1]}
    if op == "r":
        return set(regsets[e[1]])
    xs = eval_expr_set(e[1], regsets, universe)
    ys = eval_expr_set(e[2], regsets, universe)
    if op == "+":
        return {a + b for a in xs for b in ys}
    if op == "=":
        return {1 if a == b else 0 for a in xs for b in ys}
    return {1 if a != b else 0 for a in xs for b in ys}


def expr_regs(e, acc):
    op = e[0]
    if op == "r":
        acc.add(e[1])
    elif op != "c":
        expr_regs(e[1], acc)
        expr_regs(e[2], acc)
    return acc


# ---------------------------------------------------------------------------
# Instructions.


class Assign(NamedTuple):
    reg: int
    expr: tuple


class IfGoto(NamedTuple):
    cond: tuple
    target: int  # taken when cond evaluates nonzero


class WriteI(NamedTuple):
    loc: int
    expr: tuple


class ReadI(NamedTuple):
    reg: int
    loc: int


class FaddI(NamedTuple):
    reg: int
    loc: int
    expr: tuple


class CasI(NamedTuple):
    reg: int
    loc: int
    expr_r: tuple
    expr_w: tuple


class MfenceI(NamedTuple):
    pass


class FlushI(NamedTuple):
    loc: int


class FlushOptI(NamedTuple):
    loc: int


class SfenceI(NamedTuple):
    pass


class Program(NamedTuple):
    threads: tuple  # per thread: tuple of instructions


class Check(NamedTuple):
    kind: str    # 'allowed' | 'forbidden'
    terms: tuple  # ('nv', loc, op, val) | ('reg', tid, reg, op, val)
    text: str    # surface form for reports


class SymTab(NamedTuple):
    threads: tuple  # tid -> name
    locs: tuple     # loc -> name
    regs: tuple     # tid -> tuple of register names

    def tid(self, name):
        return self.threads.index(name)

    def loc_name(self, loc):
        return self.locs[loc]


class LitmusTest(NamedTuple):
    name: str
    program: Program
    init: tuple          # per-location initial value
    checks: tuple
    max_crashes: int
    unroll: int
    symtab: SymTab
    universe: tuple      # sorted finite value universe

    @property
    def nlocs(self):
        return len(self.init)

    @property
    def nthreads(self):
        return len(self.program.threads)


# ---------------------------------------------------------------------------
# Tokenizer.

_TOKEN_RE = re.compile(
    r"""(?P<ws>[ \t\r]+)
      | (?P<comment>\#[^\n]*)
      | (?P<nl>\n)
      | (?P<nat>\d+)
      | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<str>"[^"\n]*")
      | (?P<op>:=|!=|/\\|[;{}(),=:+])
    """,
    re.VERBOSE,
)

_REG_RE = re.compile(r"^r\d+$")


class _Tok(NamedTuple):
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text):
    toks = []
    line, col, pos = 1, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise LitmusError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind == "nl":
            line += 1
            col = 1
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, tok, line, col))
            col += len(tok)
        else:
            col += len(tok)
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0
        self.thread_names = []
        self.loc_ids = {}
        self.reg_ids = []   # per thread: dict name -> id
        self.threads = []   # per thread: list of (stmt picture)
        self.init = {}
        self.checks = []
        self.crashes = 1
        self.unroll = 0
        self.test_name = None

    # -- token helpers ------------------------------------------------------

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.next()
        if t.text != text:
            raise LitmusError(f"expected {text!r}, found {t.text!r}", t.line, t.col)
        return t

    def expect_kind(self, kind):
        t = self.next()
        if t.kind != kind:
            raise LitmusError(f"expected {kind}, found {t.text!r}", t.line, t.col)
        return t

    def fail(self, msg):
        t = self.peek()
        raise LitmusError(msg, t.line, t.col)

    # -- identifier interning ------------------------------------------------

    def loc_id(self, name):
        return self.loc_ids.setdefault(name, len(self.loc_ids))

    def reg_id(self, tid, name):
        return self.reg_ids[tid].setdefault(name, len(self.reg_ids[tid]))

    # -- grammar -------------------------------------------------------------

    def parse(self):
        self.expect("litmus")
        self.test_name = self.expect_kind("str").text[1:-1]
        if self.peek().text == "init":
            self.parse_init()
        while self.peek().text == "thread":
            self.parse_thread()
        if not self.threads:
            self.fail("at least one thread required")
        while self.peek().text in ("allowed", "forbidden"):
            self.parse_check()
        if self.peek().text == "budget":
            self.parse_budget()
        t = self.peek()
        if t.kind != "eof":
            self.fail(f"trailing input {t.text!r}")

    def parse_init(self):
        self.expect("init")
        self.expect("{")
        while self.peek().text != "}":
            name = self.expect_kind("id").text
            if _REG_RE.match(name):
                self.fail(f"{name!r} is a register name, not a location")
            self.expect("=")
            val = int(self.expect_kind("nat").text)
            self.expect(";")
            self.init[self.loc_id(name)] = val
        self.expect("}")

    def parse_thread(self):
        self.expect("thread")
        name = self.expect_kind("id").text
        if name in self.thread_names:
            self.fail(f"duplicate thread {name!r}")
        self.thread_names.append(name)
        self.reg_ids.append({})
        tid = len(self.thread_names) - 1
        self.expect("{")
        stmts, labels = [], {}
        self.parse_stmts(tid, stmts, labels)
        self.expect("}")
        self.threads.append(self.resolve(stmts, labels))

    def parse_stmts(self, tid, stmts, labels):
        """Fill `stmts` with instructions; branch targets are placeholders."""
        while True:
            t = self.peek()
            if t.text in ("}",) or t.kind == "eof":
                return
            if t.kind == "nat":  # NAT ':' stmt
                self.next()
                self.expect(":")
                if t.text in labels:
                    raise LitmusError(f"duplicate label {t.text}", t.line, t.col)
                labels[t.text] = len(stmts)
                continue
            self.parse_stmt(tid, stmts, labels)

    def parse_stmt(self, tid, stmts, labels):
        t = self.peek()
        if t.text == "if":
            self.next()
            self.expect("(")
            cond = self.parse_expr(tid)
            self.expect(")")
            if self.peek().text == "goto":
                g = self.next()
                lbl = self.expect_kind("nat").text
                self.expect(";")
                stmts.append(IfGoto(cond, ("label", lbl, g.line, g.col)))
                return
            self.expect("{")
            # Branch past the block when the condition is zero.
            hole = len(stmts)
            stmts.append(IfGoto(("=", cond, ("c", 0)), -1))
            self.parse_stmts(tid, stmts, labels)
            self.expect("}")
            stmts[hole] = stmts[hole]._replace(target=len(stmts))
            return
        if t.text == "goto":
            self.next()
            lbl = self.expect_kind("nat").text
            self.expect(";")
            stmts.append(IfGoto(("c", 1), ("label", lbl, t.line, t.col)))
            return
        if t.text == "mfence":
            self.next()
            self.expect(";")
            stmts.append(MfenceI())
            return
        if t.text == "sfence":
            self.next()
            self.expect(";")
            stmts.append(SfenceI())
            return
        if t.text in ("fl", "fo"):
            self.next()
            loc = self.expect_kind("id").text
            if _REG_RE.match(loc):
                self.fail(f"{loc!r} is a register name, not a location")
            self.expect(";")
            ctor = FlushI if t.text == "fl" else FlushOptI
            stmts.append(ctor(self.loc_id(loc)))
            return
        if t.kind == "id":
            name = self.next().text
            self.expect(":=")
            if _REG_RE.match(name):
                reg = self.reg_id(tid, name)
                stmts.append(self.parse_reg_rhs(tid, reg))
            else:
                expr = self.parse_expr(tid)
                stmts.append(WriteI(self.loc_id(name), expr))
            self.expect(";")
            return
        self.fail(f"expected statement, found {t.text!r}")

    def parse_reg_rhs(self, tid, reg):
        t = self.peek()
        if t.text == "FADD":
            self.next()
            self.expect("(")
            loc = self.expect_kind("id").text
            self.expect(",")
            e = self.parse_expr(tid)
            self.expect(")")
            return FaddI(reg, self.loc_id(loc), e)
        if t.text == "CAS":
            self.next()
            self.expect("(")
            loc = self.expect_kind("id").text
            self.expect(",")
            er = self.parse_expr(tid)
            self.expect(",")
            ew = self.parse_expr(tid)
            self.expect(")")
            return CasI(reg, self.loc_id(loc), er, ew)
        if t.kind == "id" and not _REG_RE.match(t.text):
            self.next()
            return ReadI(reg, self.loc_id(t.text))
        return Assign(reg, self.parse_expr(tid))

    def parse_expr(self, tid):
        lhs = self.parse_sum(tid)
        t = self.peek()
        if t.text in ("=", "!="):
            self.next()
            rhs = self.parse_sum(tid)
            return (t.text, lhs, rhs)
        return lhs

    def parse_sum(self, tid):
        e = self.parse_atom(tid)
        while self.peek().text == "+":
            self.next()
            e = ("+", e, self.parse_atom(tid))
        return e

    def parse_atom(self, tid):
        t = self.next()
        if t.kind == "nat":
            return ("c", int(t.text))
        if t.kind == "id":
            if not _REG_RE.match(t.text):
                raise LitmusError(
                    f"{t.text!r}: only registers may appear in expressions "
                    "(read locations with r := loc)", t.line, t.col)
            return ("r", self.reg_id(tid, t.text))
        if t.text == "(":
            e = self.parse_expr(tid)
            self.expect(")")
            return e
        raise LitmusError(f"expected expression, found {t.text!r}", t.line, t.col)

    def resolve(self, stmts, labels):
        """Resolve goto labels to instruction indexes."""
        code = []
        for ins in stmts:
            if isinstance(ins, IfGoto) and isinstance(ins.target, tuple):
                _, lbl, line, col = ins.target
                if lbl not in labels:
                    raise LitmusError(f"undefined label {lbl}", line, col)
                ins = ins._replace(target=labels[lbl])
            code.append(ins)
        return tuple(code)

    def parse_check(self):
        kind = self.next().text
        self.expect("{")
        terms, parts = [], []
        while True:
            terms.append(self.parse_term(parts))
            if self.peek().text != "/\\":
                break
            self.next()
        self.expect("}")
        self.checks.append(Check(kind, tuple(terms), " /\\ ".join(parts)))

    def parse_term(self, parts):
        t = self.next()
        if t.text == "nv":
            self.expect("(")
            loc = self.expect_kind("id").text
            self.expect(")")
            if loc not in self.loc_ids:
                raise LitmusError(f"unknown location {loc!r} in check", t.line, t.col)
            op = self.next().text
            if op not in ("=", "!="):
                self.fail("expected = or !=")
            val = int(self.expect_kind("nat").text)
            parts.append(f"nv({loc}) {op} {val}")
            return ("nv", self.loc_ids[loc], op, val)
        if t.kind == "id":
            if t.text not in self.thread_names:
                raise LitmusError(f"unknown thread {t.text!r} in check", t.line, t.col)
            tid = self.thread_names.index(t.text)
            self.expect(":")
            regname = self.expect_kind("id").text
            if regname not in self.reg_ids[tid]:
                raise LitmusError(
                    f"thread {t.text!r} has no register {regname!r}", t.line, t.col)
            op = self.next().text
            if op not in ("=", "!="):
                self.fail("expected = or !=")
            val = int(self.expect_kind("nat").text)
            parts.append(f"{t.text}:{regname} {op} {val}")
            return ("reg", tid, self.reg_ids[tid][regname], op, val)
        raise LitmusError(f"expected nv(loc) or thread:reg, found {t.text!r}",
                          t.line, t.col)

    def parse_budget(self):
        self.expect("budget")
        self.expect("{")
        while self.peek().text != "}":
            key = self.expect_kind("id").text
            self.expect("=")
            val = int(self.expect_kind("nat").text)
            self.expect(";")
            if key == "crashes":
                self.crashes = val
            elif key == "unroll":
                self.unroll = val
            else:
                self.fail(f"unknown budget key {key!r}")
        self.expect("}")


# ---------------------------------------------------------------------------
# Unrolling: rewrite backward branches into `unroll` forward copies.


def unroll_program(program, budget):
    """Expand backward branches; the result has only forward targets."""
    out = []
    for code in program.threads:
        back = any(isinstance(i, IfGoto) and i.target <= pc
                   for pc, i in enumerate(code))
        if not back:
            out.append(code)
            continue
        if budget == 0:
            raise LitmusError("program has a loop but unroll budget is 0")
        n = len(code)
        copies = budget + 1
        end = n * copies
        new = []
        for c in range(copies):
            base = c * n
            for pc, ins in enumerate(code):
                if isinstance(ins, IfGoto):
                    if ins.target > pc:
                        tgt = base + ins.target
                    elif c + 1 < copies:
                        tgt = (c + 1) * n + ins.target
                    else:
                        tgt = end  # final copy: loop exits by terminating
                    new.append(ins._replace(target=min(tgt, end)))
                else:
                    new.append(ins)
        out.append(tuple(new))
    return Program(tuple(out))


# ---------------------------------------------------------------------------
# Finite value universe: {0} and init values, closed under the program's
# arithmetic with reads ranging over the universe built so far.  Each round
# accounts for one more store feeding a later load; acyclic code executes
# each store occurrence at most once per crash era, which bounds the chain
# length and hence the number of rounds needed.

_UNIVERSE_CAP = 256


def value_universe(program, init_vals, max_crashes=1):
    universe = {0} | set(init_vals)
    nregs = [_max_reg(code) + 1 for code in program.threads]
    total = sum(len(c) for c in program.threads)
    for _ in range(total * (max_crashes + 1) + 2):
        produced = set(universe)
        for tid, code in enumerate(program.threads):
            produced |= _thread_written(code, nregs[tid], universe)
        if produced == universe:
            break
        if len(produced) > _UNIVERSE_CAP:
            raise LitmusError(f"value universe exceeds {_UNIVERSE_CAP} values")
        universe = produced
    return tuple(sorted(universe))


def _max_reg(code):
    regs = set()
    for ins in code:
        for e in _exprs_of(ins):
            expr_regs(e, regs)
        if isinstance(ins, (Assign, ReadI, FaddI, CasI)):
            regs.add(ins.reg)
    return max(regs, default=-1)


def _exprs_of(ins):
    if isinstance(ins, Assign):
        return (ins.expr,)
    if isinstance(ins, IfGoto):
        return (ins.cond,)
    if isinstance(ins, WriteI):
        return (ins.expr,)
    if isinstance(ins, FaddI):
        return (ins.expr,)
    if isinstance(ins, CasI):
        return (ins.expr_r, ins.expr_w)
    return ()


def _thread_written(code, nregs, universe):
    """Forward pass collecting all values the thread's writes may produce."""
    written = set()
    if not code:
        return written
    states = [[frozenset()] * nregs for _ in range(len(code) + 1)]
    states[0] = [frozenset({0})] * nregs
    reached = {0}

    def join(pc, regsets):
        states[pc] = [states[pc][i] | regsets[i] for i in range(nregs)]
        reached.add(pc)

    for pc, ins in enumerate(code):
        if pc not in reached:
            continue
        regsets = states[pc]
        if isinstance(ins, Assign):
            vals = frozenset(eval_expr_set(ins.expr, regsets, universe))
            nxt = regsets[:]
            nxt[ins.reg] = vals
            join(pc + 1, nxt)
        elif isinstance(ins, IfGoto):
            join(ins.target, regsets)
            join(pc + 1, regsets)
        elif isinstance(ins, WriteI):
            written |= eval_expr_set(ins.expr, regsets, universe)
            join(pc + 1, regsets)
        elif isinstance(ins, ReadI):
            nxt = regsets[:]
            nxt[ins.reg] = frozenset(universe)
            join(pc + 1, nxt)
        elif isinstance(ins, FaddI):
            incs = eval_expr_set(ins.expr, regsets, universe)
            written |= {v + d for v in universe for d in incs}
            nxt = regsets[:]
            nxt[ins.reg] = frozenset(universe)
            join(pc + 1, nxt)
        elif isinstance(ins, CasI):
            written |= eval_expr_set(ins.expr_w, regsets, universe)
            nxt = regsets[:]
            nxt[ins.reg] = frozenset(universe) | frozenset(
                eval_expr_set(ins.expr_r, regsets, universe))
            join(pc + 1, nxt)
        else:
            join(pc + 1, regsets)
    return written


# ---------------------------------------------------------------------------
# Parsing entry point.


def parse_litmus(text, name=None, crashes=None, unroll=None):
    """Parse litmus source into an unrolled, universe-annotated test.

    `crashes` and `unroll` override the file's budget block.
    """
    p = _Parser(text)
    p.parse()
    if crashes is not None:
        p.crashes = crashes
    if unroll is not None:
        p.unroll = unroll
    nlocs = len(p.loc_ids)
    program = Program(tuple(p.threads))
    for code in program.threads:
        for ins in code:
            if isinstance(ins, IfGoto) and not 0 <= ins.target <= len(code):
                raise LitmusError(f"branch target {ins.target} out of range")
    program = unroll_program(program, p.unroll)
    init = tuple(p.init.get(loc, 0) for loc in range(nlocs))
    regs = tuple(tuple(sorted(d, key=d.get)) for d in p.reg_ids)
    symtab = SymTab(tuple(p.thread_names), _loc_names(p.loc_ids), regs)
    universe = value_universe(program, init, p.crashes)
    return LitmusTest(name or p.test_name, program, init, tuple(p.checks),
                      p.crashes, p.unroll, symtab, universe)


def set_crash_budget(test, crashes):
    """Adjust the crash budget, growing the value universe if needed."""
    if crashes == test.max_crashes:
        return test
    universe = value_universe(test.program, test.init, crashes)
    return test._replace(max_crashes=crashes, universe=universe)


def _loc_names(loc_ids):
    names = [None] * len(loc_ids)
    for name, i in loc_ids.items():
        names[i] = name
    return tuple(names)


def make_test(name, program, nlocs, init=None, checks=(), max_crashes=1,
              symtab=None):
    """Build a test directly from instructions (for generated programs)."""
    init_t = tuple((init or {}).get(loc, 0) for loc in range(nlocs))
    if symtab is None:
        nregs = [_max_reg(code) + 1 for code in program.threads]
        symtab = SymTab(
            tuple(f"t{i}" for i in range(len(program.threads))),
            tuple(f"x{i}" for i in range(nlocs)),
            tuple(tuple(f"r{i}" for i in range(n)) for n in nregs),
        )
    universe = value_universe(program, init_t, max_crashes)
    return LitmusTest(name, program, init_t, tuple(checks), max_crashes, 0,
                      symtab, universe)


# ---------------------------------------------------------------------------
# Program LTS (threads as labelled transition systems over ⟨pc, regs⟩).


def initial_program_state(program, nregs=None):
    if nregs is None:
        nregs = [_max_reg(code) + 1 for code in program.threads]
    return tuple((0, (0,) * nregs[tid]) for tid in range(len(program.threads)))


def thread_terminated(code, pc):
    return pc >= len(code)


def thread_successors(code, pc, regs, universe):
    """Transitions of one thread state: (label-or-None, (pc', regs')) pairs."""
    if pc >= len(code):
        return ()
    ins = code[pc]
    out = []
    if isinstance(ins, Assign):
        nregs = list(regs)
        nregs[ins.reg] = eval_expr(ins.expr, regs)
        out.append((None, (pc + 1, tuple(nregs))))
    elif isinstance(ins, IfGoto):
        tgt = ins.target if eval_expr(ins.cond, regs) != 0 else pc + 1
        out.append((None, (tgt, regs)))
    elif isinstance(ins, WriteI):
        out.append((write(ins.loc, eval_expr(ins.expr, regs)), (pc + 1, regs)))
    elif isinstance(ins, ReadI):
        for v in universe:
            nregs = list(regs)
            nregs[ins.reg] = v
            out.append((read(ins.loc, v), (pc + 1, tuple(nregs))))
    elif isinstance(ins, FaddI):
        inc = eval_expr(ins.expr, regs)
        for v in universe:
            nregs = list(regs)
            nregs[ins.reg] = v
            out.append((rmw(ins.loc, v, v + inc), (pc + 1, tuple(nregs))))
    elif isinstance(ins, CasI):
        vr = eval_expr(ins.expr_r, regs)
        vw = eval_expr(ins.expr_w, regs)
        nregs = list(regs)
        nregs[ins.reg] = vr
        out.append((rmw(ins.loc, vr, vw), (pc + 1, tuple(nregs))))
        for v in universe:
            if v != vr:
                nregs = list(regs)
                nregs[ins.reg] = v
                out.append((read_ex(ins.loc, v), (pc + 1, tuple(nregs))))
    elif isinstance(ins, MfenceI):
        out.append((mfence(), (pc + 1, regs)))
    elif isinstance(ins, FlushI):
        out.append((flush(ins.loc), (pc + 1, regs)))
    elif isinstance(ins, FlushOptI):
        out.append((flush_opt(ins.loc), (pc + 1, regs)))
    else:
        out.append((sfence(), (pc + 1, regs)))
    return tuple(out)


def program_successors(ps, program, universe):
    """All program transitions from ps: (Silent | (tid, Label), ps')."""
    out = []
    for tid, (pc, regs) in enumerate(ps):
        for lab, tstate in thread_successors(program.threads[tid], pc, regs,
                                             universe):
            nps = ps[:tid] + (tstate,) + ps[tid + 1:]
            out.append((None if lab is None else (tid, lab), nps))
    return out


def silent_closure(code, pc, regs, universe):
    """Follow the (deterministic) silent steps of one thread to a fixpoint."""
    while pc < len(code):
        ins = code[pc]
        if isinstance(ins, Assign):
            nregs = list(regs)
            nregs[ins.reg] = eval_expr(ins.expr, regs)
            regs = tuple(nregs)
            pc += 1
        elif isinstance(ins, IfGoto):
            pc = ins.target if eval_expr(ins.cond, regs) != 0 else pc + 1
        else:
            break
    return pc, regs


def enabled_labels(ps, program, tid, universe):
    """Observable labels thread tid enables after its own silent steps."""
    code = program.threads[tid]
    pc, regs = silent_closure(code, ps[tid][0], ps[tid][1], universe)
    return frozenset(lab for lab, _ in thread_successors(code, pc, regs,
                                                         universe))


class ProgramExec:
    """Memoized per-thread steppers for one test (exploration hot path)."""

    def __init__(self, test):
        self.test = test
        self.program = test.program
        self.universe = test.universe
        self._succ = [{} for _ in test.program.threads]
        self._enabled = [{} for _ in test.program.threads]

    def initial_state(self):
        return initial_program_state(self.program)

    def thread_succ(self, tid, tstate):
        memo = self._succ[tid]
        hit = memo.get(tstate)
        if hit is None:
            hit = memo[tstate] = thread_successors(
                self.program.threads[tid], tstate[0], tstate[1], self.universe)
        return hit

    def enabled(self, tid, tstate):
        memo = self._enabled[tid]
        hit = memo.get(tstate)
        if hit is None:
            code = self.program.threads[tid]
            pc, regs = silent_closure(code, tstate[0], tstate[1], self.universe)
            hit = memo[tstate] = frozenset(
                lab for lab, _ in thread_successors(code, pc, regs,
                                                    self.universe))
        return hit

    def all_terminated(self, ps):
        return all(pc >= len(code)
                   for (pc, _), code in zip(ps, self.program.threads))


# ---------------------------------------------------------------------------
# Serializer (used by the fence-mapping command).


def expr_text(e, regnames):
    op = e[0]
    if op == "c":
        return str(e[1])
    if op == "r":
        return regnames[e[1]]
    a, b = expr_text(e[1], regnames), expr_text(e[2], regnames)
    return f"({a} {op} {b})"


def to_litmus_text(test):
    """Render a test back into the surface grammar."""
    sym = test.symtab
    lines = [f'litmus "{test.name}"']
    inits = [f"{sym.locs[loc]} = {v};" for loc, v in enumerate(test.init) if v]
    if inits:
        lines.append("init { " + " ".join(inits) + " }")
    for tid, code in enumerate(test.program.threads):
        regnames = list(sym.regs[tid])
        while len(regnames) < _max_reg(code) + 1:
            regnames.append(f"r{100 + len(regnames)}")
        targets = {ins.target for ins in code if isinstance(ins, IfGoto)}
        lines.append(f"thread {sym.threads[tid]} {{")
        for pc, ins in enumerate(code):
            prefix = f"  {pc}: " if pc in targets else "  "
            lines.append(prefix + _stmt_text(ins, sym, regnames))
        if len(code) in targets:
            # A branch may exit past the last statement; give it a landing
            # site that does nothing.
            dummy = regnames[0] if regnames else "r0"
            lines.append(f"  {len(code)}: {dummy} := {dummy};")
        lines.append("}")
    for chk in test.checks:
        lines.append(f"{chk.kind} {{ {chk.text} }}")
    lines.append("budget { crashes = %d; unroll = 0; }" % test.max_crashes)
    return "\n".join(lines) + "\n"


def _stmt_text(ins, sym, regnames):
    if isinstance(ins, Assign):
        return f"{regnames[ins.reg]} := {expr_text(ins.expr, regnames)};"
    if isinstance(ins, IfGoto):
        if ins.cond == ("c", 1):
            return f"goto {ins.target};"
        return f"if ({expr_text(ins.cond, regnames)}) goto {ins.target};"
    if isinstance(ins, WriteI):
        return f"{sym.locs[ins.loc]} := {expr_text(ins.expr, regnames)};"
    if isinstance(ins, ReadI):
        return f"{regnames[ins.reg]} := {sym.locs[ins.loc]};"
    if isinstance(ins, FaddI):
        return (f"{regnames[ins.reg]} := FADD({sym.locs[ins.loc]}, "
                f"{expr_text(ins.expr, regnames)});")
    if isinstance(ins, CasI):
        return (f"{regnames[ins.reg]} := CAS({sym.locs[ins.loc]}, "
                f"{expr_text(ins.expr_r, regnames)}, "
                f"{expr_text(ins.expr_w, regnames)});")
    if isinstance(ins, MfenceI):
        return "mfence;"
    if isinstance(ins, FlushI):
        return f"fl {sym.locs[ins.loc]};"
    if isinstance(ins, FlushOptI):
        return f"fo {sym.locs[ins.loc]};"
    return "sfence;"
