"""Assemble -> instrument -> link orchestration shared by the CLI, demos,
and tests."""

from __future__ import annotations

from . import emitlink, frontend, instrument
from .emitlink import Image
from .frontend import Program
from .tagplan import TagConfig


def assemble_sources(sources, defsym=None) -> Program:
    """Assemble one or more source texts into a single link unit."""
    if isinstance(sources, str):
        sources = [sources]
    programs = [
        frontend.assemble(text, defsym=defsym, filename=f"<input {i}>")
        for i, text in enumerate(sources)
    ]
    return frontend.merge_programs(programs) if len(programs) > 1 else programs[0]


def apply_policy(program: Program, config: TagConfig, *,
                 with_labels=None, cfi_label_direct_calls=False,
                 coverage_mode="all_branches") -> Program:
    """Run the configured policy pass and lineage propagation in place."""
    labels = config.labels_enabled if with_labels is None else with_labels
    if config.policy == "cfi" and labels:
        instrument.pass_cfi(program, config, label_direct_calls=cfi_label_direct_calls)
    elif config.policy == "unarith":
        instrument.pass_unarith(program, config)
    elif config.policy == "coverage":
        instrument.pass_coverage(program, config, mode=coverage_mode)
    instrument.propagate_lineage(program)
    return program


def build_image(sources, config: TagConfig, *, tagged=True, with_labels=None,
                defsym=None, cfi_label_direct_calls=False,
                coverage_mode="all_branches",
                text_base=emitlink.TEXT_BASE, data_base=emitlink.DATA_BASE,
                max_pair_gap=emitlink.MAX_PAIR_GAP) -> Image:
    """Source text(s) to a linked image.

    Baseline builds (tagged=False) skip the policy passes entirely so they
    stay byte-comparable with an untouched assembly of the same source.
    """
    program = assemble_sources(sources, defsym=defsym)
    if tagged:
        apply_policy(program, config, with_labels=with_labels,
                     cfi_label_direct_calls=cfi_label_direct_calls,
                     coverage_mode=coverage_mode)
    return emitlink.link(program, config, tagged=tagged, text_base=text_base,
                         data_base=data_base, max_pair_gap=max_pair_gap)
