"""Command-line front end.

Subcommands: run (reachability summary), check (verdicts for a test's
allowed/forbidden outcomes), compare (two models on one test), races
(race and strong-race search), map (fence insertion, emitting litmus
source), corpus (sweep a directory against its expected.json).

Exit codes: 0 success; 1 semantic failure (failed check, diverging
models, race found, corpus mismatch); 2 usage or parse error;
3 resource limit exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import explore, graphs, races
from .explore import DEFAULT_LIMIT, ResourceLimitError
from .labels import CRASH, KIND_NAMES
from .litmus import LitmusError, parse_litmus, to_litmus_text

_OPERATIONAL = tuple(sorted(explore.MODELS))
_DECLARATIVE = tuple(sorted(graphs.CHECKERS))


class UsageError(Exception):
    pass


def _load(args):
    path = Path(args.file)
    try:
        text = path.read_text()
    except OSError as e:
        raise UsageError(str(e)) from None
    return parse_litmus(text,
                        crashes=getattr(args, "crashes", None),
                        unroll=getattr(args, "unroll", None))


def _trace_json(trace):
    out = []
    for ent in trace:
        if ent == CRASH:
            out.append("crash")
        else:
            tid, lab = ent
            out.append([tid, KIND_NAMES[lab.kind], lab.loc,
                        lab.val_r, lab.val_w])
    return out


def summary_to_json(s):
    return {
        "model": s.model,
        "crashes": s.crashes,
        "nv_memories": sorted(list(m) for m in s.nv_memories),
        "final_states": sorted([list(r) for r in fs] for fs in s.final_states),
        "states": s.states,
    }


def summary_from_json(d):
    return explore.ReachabilitySummary(
        d["model"], d["crashes"],
        frozenset(tuple(m) for m in d["nv_memories"]),
        frozenset(tuple(tuple(r) for r in fs) for fs in d["final_states"]),
        d["states"])


def _emit(args, payload, text_lines):
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        for line in text_lines:
            print(line)


def _summary_lines(test, s):
    locs = ", ".join(test.symtab.locs)
    lines = [f"{test.name}: {s.model}, crashes={s.crashes}, "
             f"states={s.states}",
             f"persisted memories over ({locs}):"]
    lines += [f"  {m}" for m in sorted(s.nv_memories)]
    if s.final_states:
        lines.append("final register states:")
        lines += [f"  {fs}" for fs in sorted(s.final_states)]
    return lines


def _run_model(test, model, args):
    if model in _DECLARATIVE:
        return graphs.dec_reachable(test, model,
                                    max_chain=getattr(args, "chain", None))
    if model in _OPERATIONAL:
        return explore.explore(test, model, limit=args.limit)
    raise UsageError(f"unknown model {model!r}; choose from "
                     f"{', '.join(_OPERATIONAL + _DECLARATIVE)}")


def cmd_run(args):
    test = _load(args)
    s = _run_model(test, args.model, args)
    payload = {"test": test.name, "model": s.model,
               "stats": summary_to_json(s)}
    _emit(args, payload, _summary_lines(test, s))
    return 0


def _nv_holds(term, mem):
    _, loc, op, val = term
    return mem[loc] == val if op == "=" else mem[loc] != val


def _reg_holds(term, fs):
    _, tid, reg, op, val = term
    return fs[tid][reg] == val if op == "=" else fs[tid][reg] != val


def _dec_verdict(test, model, args):
    s = graphs.dec_reachable(test, model,
                             max_chain=getattr(args, "chain", None))
    results = []
    for chk in test.checks:
        kinds = {t[0] for t in chk.terms}
        if len(kinds) > 1:
            raise UsageError(
                "declarative models cannot evaluate checks mixing nv() and "
                "register terms; use an operational model")
        if kinds == {"nv"}:
            sat = any(all(_nv_holds(t, m) for t in chk.terms)
                      for m in s.nv_memories)
        else:
            sat = any(all(_reg_holds(t, fs) for t in chk.terms)
                      for fs in s.final_states)
        passed = sat if chk.kind == "allowed" else not sat
        results.append(explore.CheckResult(chk.kind, chk.text, passed, None))
    return explore.Verdict(test.name, model, tuple(results), s)


def cmd_check(args):
    test = _load(args)
    if args.model in _DECLARATIVE:
        v = _dec_verdict(test, args.model, args)
    elif args.model in _OPERATIONAL:
        v = explore.verdict(test, args.model, limit=args.limit)
    else:
        raise UsageError(f"unknown model {args.model!r}")
    checks = []
    lines = [f"{v.test} under {v.model}:"]
    for c in v.checks:
        entry = {"kind": c.kind, "cond": c.cond, "pass": c.passed}
        mark = "ok" if c.passed else "FAIL"
        lines.append(f"  [{mark}] {c.kind} {{ {c.cond} }}")
        if c.witness is not None and (c.kind == "allowed") == c.passed:
            entry["witness"] = _trace_json(c.witness)
            lines.append("         witness: "
                         + (explore.format_trace(c.witness, test.symtab)
                            or "(initial state)"))
        checks.append(entry)
    payload = {"test": v.test, "model": v.model, "checks": checks,
               "stats": summary_to_json(v.summary)}
    _emit(args, payload, lines)
    return 0 if v.passed else 1


def cmd_compare(args):
    if len(args.model or ()) != 2:
        raise UsageError("compare needs exactly two --model flags")
    a, b = args.model
    for m in (a, b):
        if m not in _OPERATIONAL:
            raise UsageError(f"compare runs operational models only, "
                             f"got {m!r}")
    test = _load(args)
    cmp = explore.compare_models(test, a, b, limit=args.limit)
    payload = {"test": cmp.test, "models": [cmp.model_a, cmp.model_b],
               "equal": cmp.equal,
               "nv_only_a": sorted(list(m) for m in cmp.nv_only_a),
               "nv_only_b": sorted(list(m) for m in cmp.nv_only_b),
               "finals_only_a": sorted([list(r) for r in fs]
                                       for fs in cmp.finals_only_a),
               "finals_only_b": sorted([list(r) for r in fs]
                                       for fs in cmp.finals_only_b)}
    lines = [f"{cmp.test}: {cmp.model_a} vs {cmp.model_b}: "
             + ("equal" if cmp.equal else "DIFFER")]
    for tag, ms in (
            (f"memories only in {cmp.model_a}", cmp.nv_only_a),
            (f"memories only in {cmp.model_b}", cmp.nv_only_b),
            (f"finals only in {cmp.model_a}", cmp.finals_only_a),
            (f"finals only in {cmp.model_b}", cmp.finals_only_b)):
        for m in sorted(ms):
            lines.append(f"  {tag}: {m}")
    _emit(args, payload, lines)
    return 0 if cmp.equal else 1


def cmd_races(args):
    test = _load(args)
    finder = races.find_strong_race if args.strong else races.find_race
    w = finder(test, limit=args.limit)
    kind = "strong race" if args.strong else "race"
    payload = {"test": test.name, "strong": args.strong, "racy": w is not None}
    if w is None:
        lines = [f"{test.name}: no {kind} found"]
    else:
        locname = lambda l: test.symtab.locs[l]
        lines = [f"{test.name}: {kind}: thread {test.symtab.threads[w.tid]} "
                 f"{w.lab.display(locname)} against a write by thread "
                 f"{test.symtab.threads[w.writer]}",
                 "  after: " + (explore.format_trace(w.trace, test.symtab)
                                or "(initial state)")]
        payload["witness"] = {
            "tid": w.tid, "writer": w.writer,
            "label": [KIND_NAMES[w.lab.kind], w.lab.loc,
                      w.lab.val_r, w.lab.val_w],
            "trace": _trace_json(w.trace)}
    _emit(args, payload, lines)
    return 1 if w is not None else 0


def cmd_map(args):
    test = _load(args)
    text = to_litmus_text(races.map_test(test))
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    return 0


def _corpus_dir(args):
    if args.dir:
        return Path(args.dir)
    return Path(resources.files("nvmcheck") / "corpus")


def cmd_corpus(args):
    cdir = _corpus_dir(args)
    manifest_path = cdir / "expected.json"
    if not manifest_path.is_file():
        raise UsageError(f"no expected.json in {cdir}")
    expected = json.loads(manifest_path.read_text())
    rows = []
    ok = True
    for name in sorted(expected):
        path = cdir / f"{name}.litmus"
        test = parse_litmus(path.read_text(), name=name)
        want = expected[name]
        for model, exp in want.get("models", {}).items():
            got = explore.verdict(test, model, limit=args.limit).passed
            rows.append((name, model, exp, got))
            ok &= exp == got
        if "racy" in want:
            got = races.is_racy(test, limit=args.limit)
            rows.append((name, "racy", want["racy"], got))
            ok &= want["racy"] == got
        if "strongly_racy" in want:
            got = races.is_strongly_racy(test, limit=args.limit)
            rows.append((name, "strong", want["strongly_racy"], got))
            ok &= want["strongly_racy"] == got
    wide = max(len(r[0]) for r in rows) if rows else 0
    lines = [f"{name:<{wide}}  {col:<8} expected={exp!s:<5} got={got!s:<5} "
             + ("ok" if exp == got else "MISMATCH")
             for name, col, exp, got in rows]
    lines.append(f"{'all verdicts match' if ok else 'MISMATCHES FOUND'} "
                 f"({len(rows)} rows)")
    payload = {"dir": str(cdir), "ok": ok,
               "rows": [{"test": n, "column": c, "expected": e, "got": g}
                        for n, c, e, g in rows]}
    _emit(args, payload, lines)
    return 0 if ok else 1


def _parser():
    p = argparse.ArgumentParser(
        prog="nvmcheck",
        description="Simulate, check, and compare persistency models "
                    "over litmus tests.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, model=True):
        sp.add_argument("file", help="litmus test file")
        if model:
            sp.add_argument("--model", default="ptsosyn",
                            help="model name (default ptsosyn)")
        sp.add_argument("--crashes", type=int, default=None, metavar="N",
                        help="override the test's crash budget")
        sp.add_argument("--unroll", type=int, default=None, metavar="N",
                        help="override the test's loop unrolling budget")
        sp.add_argument("--limit", type=int, default=DEFAULT_LIMIT,
                        metavar="N", help="state/graph budget")
        sp.add_argument("--json", action="store_true",
                        help="machine-readable output")

    sp = sub.add_parser("run", help="reachability summary under one model")
    common(sp)
    sp.add_argument("--chain", type=int, default=None, metavar="N",
                    help="graph-chain length for declarative models")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("check", help="evaluate the test's outcome checks")
    common(sp)
    sp.add_argument("--chain", type=int, default=None, metavar="N",
                    help="graph-chain length for declarative models")
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("compare", help="compare two models on one test")
    sp.add_argument("file")
    sp.add_argument("--model", action="append", metavar="NAME",
                    help="give exactly twice")
    sp.add_argument("--crashes", type=int, default=None, metavar="N")
    sp.add_argument("--unroll", type=int, default=None, metavar="N")
    sp.add_argument("--limit", type=int, default=DEFAULT_LIMIT, metavar="N")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("races", help="search for data races")
    common(sp, model=False)
    sp.add_argument("--strong", action="store_true",
                    help="report only unprotected races")
    sp.set_defaults(fn=cmd_races)

    sp = sub.add_parser("map", help="insert fences and emit litmus source")
    sp.add_argument("file")
    sp.add_argument("-o", "--output", default=None, metavar="FILE")
    sp.add_argument("--crashes", type=int, default=None, metavar="N")
    sp.add_argument("--unroll", type=int, default=None, metavar="N")
    sp.set_defaults(fn=cmd_map)

    sp = sub.add_parser("corpus", help="sweep a test directory against "
                                       "its expected.json")
    sp.add_argument("dir", nargs="?", default=None,
                    help="directory (default: bundled corpus)")
    sp.add_argument("--limit", type=int, default=DEFAULT_LIMIT, metavar="N")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_corpus)

    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"nvmcheck: {e}", file=sys.stderr)
        return 2
    except LitmusError as e:
        print(f"nvmcheck: parse error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"nvmcheck: {e}", file=sys.stderr)
        return 2
    except ResourceLimitError as e:
        print(f"nvmcheck: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
