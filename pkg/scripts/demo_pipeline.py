#!/usr/bin/env python3
"""End-to-end demo on the bundled two-county fixture.

Runs optimize -> audit -> simulate into out/demo and prints where the
reports landed. Equivalent CLI calls:

    spinopt optimize --bundle fixtures/twocounty --out out/demo --fanout-cutoff 0
    spinopt audit    --bundle fixtures/twocounty --out out/demo
    spinopt simulate --bundle fixtures/twocounty --out out/demo --replications 2000
"""

import sys
from pathlib import Path

from spinopt.cli import RunConfig, cmd_audit, cmd_optimize, cmd_simulate

ROOT = Path(__file__).resolve().parent.parent
BUNDLE = ROOT / "fixtures" / "twocounty"
OUT = ROOT / "out" / "demo"


def main() -> int:
    for label, cmd, cfg in [
        ("optimize", cmd_optimize, RunConfig("optimize", BUNDLE, OUT, fanout_cutoff=0)),
        ("audit", cmd_audit, RunConfig("audit", BUNDLE, OUT / "audit_input")),
        ("simulate", cmd_simulate, RunConfig("simulate", BUNDLE, OUT / "sim", replications=2000, seed=1)),
    ]:
        print(f"--- {label}")
        code = cmd(cfg)
        if code != 0:
            print(f"{label} failed with exit code {code}", file=sys.stderr)
            return code
    print(f"--- reports under {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
