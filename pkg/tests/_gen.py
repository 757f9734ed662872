"""Seeded random straight-line programs for cross-model testing."""

import random

from nvmcheck.litmus import (CasI, FaddI, FlushI, FlushOptI, MfenceI, Program,
                             ReadI, SfenceI, WriteI, make_test)

_VALUES = (0, 1, 2)


def random_program(rng, max_threads=3, max_instrs=6, nlocs=3, values=_VALUES):
    threads = []
    for _ in range(rng.randint(1, max_threads)):
        code = []
        nregs = 0
        for _ in range(rng.randint(1, max_instrs)):
            kind = rng.choices(
                ("w", "r", "fl", "fo", "mf", "sf", "fadd", "cas"),
                weights=(30, 25, 10, 12, 5, 5, 7, 6))[0]
            loc = rng.randrange(nlocs)
            if kind == "w":
                code.append(WriteI(loc, ("c", rng.choice(values))))
            elif kind == "r":
                code.append(ReadI(nregs, loc))
                nregs += 1
            elif kind == "fl":
                code.append(FlushI(loc))
            elif kind == "fo":
                code.append(FlushOptI(loc))
            elif kind == "mf":
                code.append(MfenceI())
            elif kind == "sf":
                code.append(SfenceI())
            elif kind == "fadd":
                code.append(FaddI(nregs, loc, ("c", rng.choice(values))))
                nregs += 1
            else:
                code.append(CasI(nregs, loc, ("c", rng.choice(values)),
                                 ("c", rng.choice(values))))
                nregs += 1
        threads.append(tuple(code))
    return Program(tuple(threads))


def random_test(seed, crashes=1, **kw):
    rng = random.Random(seed)
    program = random_program(rng, **kw)
    return make_test(f"rand{seed}", program, kw.get("nlocs", 3),
                     max_crashes=crashes)
