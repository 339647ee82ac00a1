#!/usr/bin/env python3
"""Runs the epsarb CLI on every example in data/ and checks the reported values."""

import argparse
import json
import math
import statistics
import subprocess
import sys
from pathlib import Path


def near(expected, tol):
    return lambda v: abs(v - expected) <= tol, f"= {expected} +- {tol}"


def within(lo, hi):
    return lambda v: lo <= v <= hi, f"in [{lo}, {hi}]"


def equals(expected):
    return lambda v: v == expected, f"== {expected!r}"


def lookup(report, path):
    node = report
    for key in path.split("."):
        node = node[int(key)] if isinstance(node, list) else node[key]
    return node


class Runner:
    def __init__(self, cli, data):
        self.cli = cli
        self.data = Path(data)
        self.failures = 0

    def call(self, args):
        argv = [self.cli] + [str(self.data / a) if a.endswith((".json", ".csv")) else a for a in args]
        proc = subprocess.run(argv, capture_output=True, text=True)
        report = json.loads(proc.stdout) if proc.stdout.strip().startswith("{") else {}
        return proc.returncode, report, proc.stderr

    def check(self, name, args, code=0, **fields):
        rc, report, err = self.call(args)
        problems = []
        if rc != code:
            problems.append(f"exit {rc}, expected {code} {err.strip()}")
        for path, (pred, text) in fields.items():
            try:
                value = lookup(report, path.replace("__", "."))
            except (KeyError, IndexError, TypeError):
                problems.append(f"{path} missing")
                continue
            if not pred(value):
                problems.append(f"{path} = {value!r}, expected {text}")
        self.report(name, problems)

    def report(self, name, problems):
        if problems:
            self.failures += 1
            print(f"FAIL {name}: " + "; ".join(problems))
        else:
            print(f"ok   {name}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cli", required=True, help="path to the epsarb executable")
    ap.add_argument("--data", required=True, help="directory holding the example files")
    args = ap.parse_args()
    r = Runner(args.cli, args.data)

    # Arbitrage and measures
    r.check("no strict arbitrage at eps", ["check-arbitrage", "nostrictarb.json"], 0,
            status=equals("none_within_tolerance"))
    r.check("strict arbitrage at eps/2", ["check-arbitrage", "nostrictarb.json", "--eps", "0.25"], 2,
            status=equals("strict_arbitrage"), slacks__w1=near(0.25, 1e-8), slacks__w2=near(0.25, 1e-8))
    r.check("NA' fails along e2", ["na-prime", "nostrictarb.json"], 2,
            holds=equals(False), witness__g__0=near(0.0, 1e-8), witness__gain=within(1e-9, math.inf))
    r.check("extremal direction e1", ["node-structure", "nostrictarb.json"], 0,
            nodes__r__hbar__0=near(1.0, 1e-8), nodes__r__hbar__1=near(0.0, 1e-8))
    for eta in ["1e-4", "1e-6", "1e-9"]:
        r.check(f"no eps-martingale measure (eta {eta})", ["find-emm", "nsaem.json", "--eta", eta], 2,
                feasible=equals(False))
    r.check("critical value = eps", ["critical-value", "kbar_market.json", "--p", "2"], 0,
            epsilon_P=near(0.5, 1e-5))
    r.check("uniform eps-martingale measure", ["find-emm", "kbar_market.json"], 0,
            feasible=equals(True), deviation=near(0.5, 1e-8),
            weights__w1=near(0.5, 1e-8), weights__w2=near(0.5, 1e-8))
    r.check("deterministic increment", ["critical-value", "deterministic.json"], 0, epsilon_P=near(3.0, 1e-5))
    r.check("martingale step", ["critical-value", "martingale.json"], 0, epsilon_P=near(0.0, 1e-9))

    # Pricing
    r.check("robust bounds", ["price-bound", "price_range.json", "--payoff", "psi.json"], 0,
            sup__value=near(0.5, 1e-6), sup__attained=equals(True),
            inf__value=near(0.0, 1e-6), inf__attained=equals(False))
    r.check("fair range (-eps, 1/2 + eps]", ["fair-range", "price_range.json", "--p", "2", "--payoff", "psi.json"], 0,
            interval__lo=near(-0.5, 1e-6), interval__hi=near(1.0, 1e-6),
            interval__lo_open=equals(True), interval__hi_open=equals(False))
    r.check("superhedge price", ["superhedge", "price_range.json", "--payoff", "psi.json"], 0,
            price=near(0.5, 1e-6), primal=near(0.5, 1e-6), certified=equals(True))

    # Adapted transport
    r.check("adapted distance on increments", ["aw", "--variant", "delta", "p0.json", "peps.json", "--q", "2"], 0,
            value=near(2.0, 1e-10))
    r.check("non-causal distance", ["w-inf", "--variant", "delta", "p0.json", "peps.json"], 0,
            value=near(0.5, 1e-10))
    r.check("closing example M + delta", ["aw-delta", "closing_p.json", "closing_pprime.json"], 0,
            value=near(3.5, 1e-9))
    r.check("adapted distance on levels", ["aw", "kr_p.json", "kr_pprime.json"], 0, value=equals(4.0))
    r.check("Knothe-Rosenblatt cost", ["kr", "kr_p.json", "kr_pprime.json"], 0, cost=equals(5.0))
    r.check("elog at lambda 200", ["elog", "kr_p.json", "kr_pprime.json", "--lambda", "200"], 0,
            value=within(3.95, 4.0))
    r.check("stability on the counterexample pair",
            ["stability", "p0.json", "peps.json", "--eps", "0.1", "--payoff", "path_call.json"], 0,
            distance=near(2.0, 1e-10), all_hold=equals(True), checks__1__slack=within(1.0, math.inf))

    # Empirical measure: median over seeds at N = 1024 for the four-atom law
    values = []
    for seed in range(20):
        rc, rep, err = r.call(["adapted-empirical", "four_atom.json", "--samples", "1024", "--seed", str(seed),
                               "--lambda", "1"])
        if rc != 0:
            r.report("adapted empirical", [f"seed {seed}: exit {rc} {err.strip()}"])
            break
        values.append(rep["elog"])
    else:
        med = statistics.median(values)
        r.report(f"adapted empirical median elog {med:.4f}", [] if med < 0.1 else [f"median {med} >= 0.1"])

    # Reports are reproducible byte for byte
    first = subprocess.run([args.cli, "adapted-empirical", str(r.data / "four_atom.json"), "--samples", "256",
                            "--seed", "7", "--lambda", "5"], capture_output=True).stdout
    second = subprocess.run([args.cli, "adapted-empirical", str(r.data / "four_atom.json"), "--samples", "256",
                             "--seed", "7", "--lambda", "5"], capture_output=True).stdout
    r.report("byte-identical reruns", [] if first == second and first else ["outputs differ"])

    print(f"{r.failures} failure(s)")
    return 1 if r.failures else 0


if __name__ == "__main__":
    sys.exit(main())
