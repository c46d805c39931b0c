"""Command-line surface: assemble | build | link | run | diff-run | enforce | report.

Exit codes: 0 success, 1 usage, 2 build error, 3 policy violation,
4 equivalence failure.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from . import corpus, emitlink, emulator, frontend, pipeline, tagplan
from .emulator import BadInstruction, LimitExceeded, PolicyViolation
from .errors import RvtagError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BUILD = 2
EXIT_POLICY = 3
EXIT_EQUIV = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class CliError(RvtagError):
    pass


class EquivalenceFailure(RvtagError):
    """Baseline and tagged runs diverged; message names the first cell."""


def _parse_defsyms(items):
    table = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--defsym expects name=value, got {item!r}")
        try:
            table[name] = int(value, 0)
        except ValueError:
            raise CliError(f"--defsym {name}: {value!r} is not an integer") from None
    return table


def _load_config(args):
    path = getattr(args, "config", None) or os.environ.get("RVTAG_CONFIG")
    if not path:
        raise CliError("no tag configuration: pass --config or set RVTAG_CONFIG")
    config = tagplan.load_config(path)
    if getattr(args, "policy", None):
        config = tagplan.make_config(
            carrier=config.carrier, coverage=config.coverage,
            labels=config.labels_enabled, policy=args.policy)
    return config


def _read_sources(paths):
    sources = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as handle:
            sources.append(handle.read())
    return sources


def _emit_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# assemble

def cmd_assemble(args) -> int:
    defsym = _parse_defsyms(args.defsym)
    program = frontend.assemble_files(args.inputs, defsym=defsym)
    summary = {
        "entry": program.entry,
        "fragments": [
            {
                "name": frag.name,
                "instructions": len(frag.insns),
                "relocations": len(frag.relocations),
                "exported": frag.exported,
                "internal": frag.internal,
                "signature": frag.signature,
            }
            for frag in program.fragments
        ],
        "data_bytes": len(program.data),
        "data_symbols": dict(sorted(program.data_symbols.items())),
    }
    if args.json:
        sys.stdout.write(_emit_json(summary))
    else:
        print(f"entry: {program.entry}")
        for frag in summary["fragments"]:
            marks = "".join(
                m for m, on in (("G", frag["exported"]), ("I", frag["internal"])) if on)
            print(f"  {frag['name']:24} {frag['instructions']:5} insns "
                  f"{frag['relocations']:3} relocs {marks}")
        print(f"data: {len(program.data)} bytes, "
              f"{len(program.data_symbols)} symbols")
    return EXIT_OK


# ---------------------------------------------------------------------------
# link / build

def _build_one(args, config, *, tagged, with_labels=None, out_path=None):
    defsym = _parse_defsyms(args.defsym)
    image = pipeline.build_image(
        _read_sources(args.inputs), config,
        tagged=tagged, with_labels=with_labels, defsym=defsym,
        cfi_label_direct_calls=getattr(args, "cfi_label_direct_calls", False),
        coverage_mode=getattr(args, "coverage_mode", "all_branches"),
        max_pair_gap=getattr(args, "max_pair_gap", emitlink.MAX_PAIR_GAP),
    )
    if out_path is not None:
        emitlink.write_image(image, out_path)
    return image


def cmd_link(args) -> int:
    config = _load_config(args)
    _build_one(args, config, tagged=not args.no_tags, out_path=args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_build(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    rows = []

    baseline_path = out.with_suffix(".base.rvti") if not args.no_tags else out
    baseline = _build_one(args, config, tagged=False, out_path=baseline_path)
    rows.append((str(baseline_path), len(baseline.text), None))

    if not args.no_tags:
        tagged = _build_one(args, config, tagged=True, out_path=out)
        rows.append((str(out), len(tagged.text),
                     _growth(len(baseline.text), len(tagged.text))))
        if config.policy == "cfi" and config.labels_enabled:
            nolabel_path = out.with_suffix(".nolabels.rvti")
            nolabel = _build_one(args, config, tagged=True, with_labels=False,
                                 out_path=nolabel_path)
            rows.append((str(nolabel_path), len(nolabel.text),
                         _growth(len(baseline.text), len(nolabel.text))))

    if args.json:
        payload = [
            {"image": name, "text_bytes": size,
             "growth_pct": growth if growth is not None else 0.0}
            for name, size, growth in rows
        ]
        sys.stdout.write(_emit_json(payload))
    else:
        print(f"{'image':40} {'text bytes':>10} {'growth':>8}")
        for name, size, growth in rows:
            cell = f"{growth:7.2f}%" if growth is not None else "       -"
            print(f"{name:40} {size:>10} {cell}")
    return EXIT_OK


def _growth(base: int, new: int) -> float:
    return (new - base) * 100.0 / base if base else 0.0


# ---------------------------------------------------------------------------
# run / enforce

def _coverage_dump(image, state, policy_state) -> dict:
    cl = []
    for addr, kind in image.label_addrs:
        if kind != "cl":
            continue
        word = 0
        for i in range(4):
            word |= state.memory.get(addr + i, 0) << (8 * i)
        cl.append({"addr": addr, "count": (word >> 12) & 0xFFFFF})
    return {
        "cl": cl,
        "ci": {hex(pc): count for pc, count in sorted(policy_state.ci_counts.items())},
        "bcf": {
            hex(pc): {hex(target): count for target, count in sorted(targets.items())}
            for pc, targets in sorted(policy_state.bcf.items())
        },
    }


def cmd_run(args) -> int:
    image = emitlink.read_image(args.image)
    mode = "aware" if args.mode == "aware" else "compat"
    try:
        state, counters, policy_state = emulator.run(
            image, mode=mode, max_insns=args.max_insns)
    except PolicyViolation as exc:
        print(f"policy violation: {exc.kind} pc={exc.pc:#x} {exc.detail}")
        return EXIT_POLICY
    print(f"exit={state.exit_code} reason={state.stop_reason} "
          f"retired={counters.retired} tag_fetches={counters.tag_fetches} "
          f"labels={counters.labels_seen}")
    if state.stdout:
        sys.stdout.buffer.write(bytes(state.stdout))
        sys.stdout.write("\n")
    if args.dump_coverage:
        payload = _coverage_dump(image, state, policy_state)
        with open(args.dump_coverage, "w", encoding="utf-8") as handle:
            handle.write(_emit_json(payload))
        print(f"coverage written to {args.dump_coverage}")
    return EXIT_OK


def cmd_enforce(args) -> int:
    image = emitlink.read_image(args.image)
    try:
        state, counters, policy_state = emulator.run(
            image, mode="aware", max_insns=args.max_insns)
    except PolicyViolation as exc:
        print(f"violation: kind={exc.kind} pc={exc.pc:#x} detail={exc.detail}")
        return EXIT_POLICY
    print(f"clean run: exit={state.exit_code} retired={counters.retired}")
    if args.dump_coverage:
        payload = _coverage_dump(image, state, policy_state)
        with open(args.dump_coverage, "w", encoding="utf-8") as handle:
            handle.write(_emit_json(payload))
    return EXIT_OK


# ---------------------------------------------------------------------------
# diff-run

def compare_states(base, tagged, data_base) -> str | None:
    """First architectural divergence between two final states, or None."""
    for i in range(1, 32):
        if base.regs[i] != tagged.regs[i]:
            return f"x{i}: baseline {base.regs[i]:#x} != tagged {tagged.regs[i]:#x}"
    if base.exit_code != tagged.exit_code:
        return f"exit code: {base.exit_code} != {tagged.exit_code}"
    if base.stop_reason != tagged.stop_reason:
        return f"stop reason: {base.stop_reason!r} != {tagged.stop_reason!r}"
    if bytes(base.stdout) != bytes(tagged.stdout):
        return "stdout streams differ"
    addrs = {a for a in base.memory if a >= data_base}
    addrs |= {a for a in tagged.memory if a >= data_base}
    for addr in sorted(addrs):
        a = base.memory.get(addr, 0)
        b = tagged.memory.get(addr, 0)
        if a != b:
            return f"memory[{addr:#x}]: baseline {a:#x} != tagged {b:#x}"
    return None


def diff_one(name, sources, config, *, defsym=None, max_insns,
             cfi_label_direct_calls=False) -> dict:
    """Build baseline and tagged images for one program, run both, compare.

    Under the cfi policy a labels-off build rides along so the label cost
    shows up separately in the report.
    """
    baseline = pipeline.build_image(sources, config, tagged=False, defsym=defsym)
    base_state, base_counters, _ = emulator.run(
        baseline, mode="compat", max_insns=max_insns)

    def measure(with_labels):
        tagged = pipeline.build_image(
            sources, config, tagged=True, with_labels=with_labels, defsym=defsym,
            cfi_label_direct_calls=cfi_label_direct_calls)
        tag_state, tag_counters, _ = emulator.run(
            tagged, mode="compat", max_insns=max_insns)
        divergence = compare_states(base_state, tag_state, baseline.data_base)
        if divergence is not None:
            raise EquivalenceFailure(f"{name}: {divergence}")
        return emulator.report(base_counters, tag_counters,
                               (len(baseline.text), len(tagged.text)))

    result = {"program": name, **measure(None).to_dict()}
    if config.policy == "cfi" and config.labels_enabled:
        nolabel = measure(False)
        result["nolabel_tagged_dynamic"] = nolabel.tagged_dynamic
        result["nolabel_dynamic_overhead_pct"] = nolabel.dynamic_overhead_pct
        result["nolabel_tagged_text_bytes"] = nolabel.tagged_text_bytes
        result["nolabel_static_overhead_pct"] = nolabel.static_overhead_pct
    return result


def cmd_diff_run(args) -> int:
    config = _load_config(args)
    defsym = _parse_defsyms(args.defsym)
    programs = []
    if args.generate:
        seed = args.seed if args.seed is not None else random.randrange(1 << 30)
        print(f"corpus seed: {seed}")
        for i, text in enumerate(corpus.generate_corpus(seed, args.generate)):
            programs.append((f"gen-{seed}-{i}", [text]))
    for path in args.inputs:
        with open(path, "r", encoding="utf-8") as handle:
            programs.append((path, [handle.read()]))
    if not programs:
        raise CliError("nothing to run: pass inputs or --generate N")

    results = []
    try:
        for name, sources in programs:
            results.append(diff_one(
                name, sources, config, defsym=defsym, max_insns=args.max_insns,
                cfi_label_direct_calls=args.cfi_label_direct_calls))
    except EquivalenceFailure as exc:
        print(f"equivalence failure: {exc}", file=sys.stderr)
        return EXIT_EQUIV

    total_base = sum(r["baseline_dynamic"] for r in results)
    total_tagged = sum(r["tagged_dynamic"] for r in results)
    aggregate = {
        "programs": len(results),
        "baseline_dynamic": total_base,
        "tagged_dynamic": total_tagged,
        "dynamic_overhead_pct": (total_tagged - total_base) * 100.0 / total_base
        if total_base else 0.0,
    }
    if args.json:
        sys.stdout.write(_emit_json({"schema": emulator.REPORT_SCHEMA,
                                     "results": results, "aggregate": aggregate}))
    else:
        labelled = any("nolabel_dynamic_overhead_pct" in r for r in results)
        extra = f" {'no labels':>10}" if labelled else ""
        print(f"{'program':28} {'baseline':>9} {'tagged':>9} {'overhead':>9}{extra}")
        for r in results:
            row = (f"{r['program']:28} {r['baseline_dynamic']:>9} "
                   f"{r['tagged_dynamic']:>9} {r['dynamic_overhead_pct']:>8.2f}%")
            if "nolabel_dynamic_overhead_pct" in r:
                row += f" {r['nolabel_dynamic_overhead_pct']:>9.2f}%"
            print(row)
        print(f"{'aggregate':28} {total_base:>9} {total_tagged:>9} "
              f"{aggregate['dynamic_overhead_pct']:>8.2f}%")
        print(f"equivalence: {len(results)}/{len(results)} programs identical")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    schema = payload.get("schema")
    if schema != emulator.REPORT_SCHEMA:
        raise CliError(f"unknown report schema {schema!r}")
    if args.json:
        sys.stdout.write(_emit_json(payload))
        return EXIT_OK
    results = payload.get("results", [])
    print(f"{'program':28} {'baseline':>9} {'tagged':>9} {'overhead':>9}")
    for r in results:
        print(f"{r['program']:28} {r['baseline_dynamic']:>9} "
              f"{r['tagged_dynamic']:>9} {r['dynamic_overhead_pct']:>8.2f}%")
    aggregate = payload.get("aggregate")
    if aggregate:
        print(f"{'aggregate':28} {aggregate['baseline_dynamic']:>9} "
              f"{aggregate['tagged_dynamic']:>9} "
              f"{aggregate['dynamic_overhead_pct']:>8.2f}%")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def _add_build_flags(parser):
    parser.add_argument("--config", help="tag configuration file "
                                         "(default: $RVTAG_CONFIG)")
    parser.add_argument("--defsym", action="append", metavar="NAME=VALUE",
                        help="numeric symbol override (repeatable)")
    parser.add_argument("--policy", choices=tagplan.POLICIES,
                        help="override the config's policy")
    parser.add_argument("--cfi-label-direct-calls", action="store_true",
                        help="also label direct auipc/jalr call sites")
    parser.add_argument("--coverage-mode", choices=("all_branches", "computed_only"),
                        default="all_branches")
    parser.add_argument("--max-pair-gap", type=int, default=emitlink.MAX_PAIR_GAP,
                        help="words allowed between a HI/LO relocation pair")


def build_parser() -> _Parser:
    parser = _Parser(prog="rvtag",
                     description="RISC-V instruction tagging toolchain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="assemble sources and print a summary")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--defsym", action="append", metavar="NAME=VALUE")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("link", help="assemble and link one image")
    _add_build_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--no-tags", action="store_true",
                   help="produce an untagged baseline image")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("build", help="build baseline and tagged images")
    _add_build_flags(p)
    p.add_argument("--out", required=True, help="tagged image path")
    p.add_argument("--no-tags", action="store_true",
                   help="build only the baseline image")
    p.add_argument("--json", action="store_true")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("run", help="execute an image")
    p.add_argument("image")
    p.add_argument("--mode", choices=("compat", "aware"), default="compat")
    p.add_argument("--max-insns", type=int, default=10 ** 8)
    p.add_argument("--dump-coverage", metavar="OUT.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diff-run",
                       help="compare untagged baseline and tagged compat runs")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--config")
    p.add_argument("--defsym", action="append", metavar="NAME=VALUE")
    p.add_argument("--generate", type=int, metavar="N",
                   help="also test N generated corpus programs")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-insns", type=int, default=10 ** 8)
    p.add_argument("--cfi-label-direct-calls", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_diff_run)

    p = sub.add_parser("enforce", help="run tag-aware and report violations")
    p.add_argument("image")
    p.add_argument("--max-insns", type=int, default=10 ** 8)
    p.add_argument("--dump-coverage", metavar="OUT.json")
    p.set_defaults(func=cmd_enforce)

    p = sub.add_parser("report", help="validate and render a JSON report")
    p.add_argument("report")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BadInstruction, LimitExceeded) as exc:
        print(f"rvtag: run failed: {exc}", file=sys.stderr)
        return EXIT_BUILD
    except PolicyViolation as exc:
        print(f"rvtag: policy violation: {exc}", file=sys.stderr)
        return EXIT_POLICY
    except CliError as exc:
        print(f"rvtag: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RvtagError as exc:
        print(f"rvtag: build error: {exc}", file=sys.stderr)
        return EXIT_BUILD
    except OSError as exc:
        print(f"rvtag: {exc}", file=sys.stderr)
        return EXIT_BUILD


if __name__ == "__main__":
    sys.exit(main())
