"""`decorrelator analyze`: formula table, trace attack and boundary audit.

This is a trusted-side tool: it reads provenance and key material to score
what an adversary could learn from the listing and the trace.
"""

import json
from pathlib import Path

from app.commands import add_dir_flag, templates
from decorrelator import artifacts
from decorrelator.core.adversary import (
    CORRELATORS, audit_untrusted, baseline_pair_prob, distribution_profile, educated_guess_win, is_insecure,
    listing_histograms, reconstruct_log10, report_to_dict, trace_attack,
)


def register(subparsers) -> None:
    parser = subparsers.add_parser("analyze", help="score the recorded trace against the ground truth")
    add_dir_flag(parser)
    parser.add_argument("--trace", type=Path, default=None, help="trace path (default: <dir>/trace.jsonl)")
    parser.add_argument("--correlator", choices=CORRELATORS, default="both")
    parser.add_argument("--modulus", type=int, default=None, help="skip the modulus search and use this one")
    parser.add_argument("--max-modulus", type=int, default=1 << 14)
    parser.add_argument("--json", action="store_true", help="print the report as JSON")
    parser.set_defaults(func=cmd_analyze)


def _formula_table(program, provenance) -> dict:
    histograms = listing_histograms(program, provenance.origins)
    names = list(histograms)
    sizes = [histograms[name].total for name in names]
    baseline = baseline_pair_prob(sizes) if sum(sizes) >= 2 else 1
    rows = [
        {"name": name, "size": size, "reconstruct_log10": reconstruct_log10(sizes, index)}
        for index, (name, size) in enumerate(zip(names, sizes))
    ]
    best = None
    profile = distribution_profile(histograms)
    for opcode in sorted({op for h in histograms.values() for op in h.counts}):
        outcome = educated_guess_win(sizes, profile, opcode)
        if best is None or outcome.advantage > best["advantage"]:
            best = {"opcode": opcode, "win": outcome.win, "advantage": outcome.advantage,
                    "target": names[outcome.target]}
    return {
        "programs": rows,
        "n": len(names),
        "baseline": float(baseline),
        "baseline_fraction": str(baseline),
        "educated_guess": best,
        "degenerate": len(names) == 1,
    }


def cmd_analyze(args) -> int:
    base = artifacts.get_artifact_dir()
    trace_path = args.trace or base / artifacts.TRACE_FILE
    program = artifacts.load_listing(base)
    provenance = artifacts.load_provenance(base)
    key = artifacts.load_key(base)
    flat = artifacts.load_layout(base)
    trace = artifacts.load_trace(trace_path)

    table = _formula_table(program, provenance)
    attack = trace_attack(trace, program, provenance, correlator=args.correlator, modulus=args.modulus,
                          max_modulus=args.max_modulus)
    findings = audit_untrusted((base / artifacts.LISTING_FILE).read_text(encoding="utf-8"),
                               trace_path.read_text(encoding="utf-8").splitlines(),
                               key, flat, provenance, program)
    report = {**table, "attack": report_to_dict(attack), "audit": findings}
    artifacts.save_report({"analyze": report})
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(templates.get_template("analyze.txt.j2").render(
            table=table, attack=attack, insecure=is_insecure(attack), findings=findings,
        ), end="")
    return 0
