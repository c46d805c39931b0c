"""Tagging API and policy passes.

set/get tags on instructions, replicate tags across pseudo-expansion
lineages, insert metadata labels (lui x0 payload words), and the three
shipped policies: control-flow labels, unsigned-arithmetic checks, and
coverage tracking.
"""

from __future__ import annotations

from .codec import ADDSUB_MNEMONICS, BRANCH_MNEMONICS, Insn
from .errors import BuildError
from .frontend import Fragment, Program, TaggedInsn
from .tagplan import TagConfig


class UnknownTag(BuildError):
    """Tag name or value not declared in the active configuration."""


class InvalidRef(BuildError):
    """Instruction reference does not name an instruction."""


class LabelOverflow(BuildError):
    """Label payload does not fit the 20-bit immediate."""


class MissingSignature(BuildError):
    """A function or call site that needs a control-flow label has no
    signature annotation."""


class ConfigMismatch(BuildError):
    """The policy pass is incompatible with the tag configuration."""


# ---------------------------------------------------------------------------
# Tagging API

def _resolve_ref(program: Program, insn_ref) -> TaggedInsn:
    try:
        frag_index, insn_index = insn_ref
        fragment = program.fragments[frag_index]
        if insn_index < 0:
            raise IndexError(insn_index)
        return fragment.insns[insn_index]
    except (TypeError, ValueError, IndexError):
        raise InvalidRef(f"no instruction at {insn_ref!r}") from None


def _resolve_tag(config: TagConfig, tag) -> int:
    if isinstance(tag, str):
        value = config.value_of(tag)
        if value is None:
            raise UnknownTag(f"tag {tag!r} is not declared")
        return value
    if tag not in config.tag_values:
        raise UnknownTag(f"tag value {tag} is not declared")
    return tag


def set_tag(program: Program, insn_ref, tag, config: TagConfig) -> None:
    """Assign a declared tag to one instruction.

    The first assignment seen for a pseudo-expansion lineage is recorded so
    propagate_lineage can replicate it across the whole expansion.
    """
    insn = _resolve_ref(program, insn_ref)
    value = _resolve_tag(config, tag)
    insn.tag = value
    if insn.lineage is not None and insn.lineage not in program.lineage_first_tag:
        program.lineage_first_tag[insn.lineage] = value


def get_tag(program: Program, insn_ref, config: TagConfig) -> int:
    """Current tag of an instruction; untouched instructions report the
    configured default."""
    insn = _resolve_ref(program, insn_ref)
    return config.default_tag if insn.tag is None else insn.tag


def propagate_lineage(program: Program) -> Program:
    """Replicate each lineage's first-assigned tag onto every member."""
    if not program.lineage_first_tag:
        return program
    for fragment in program.fragments:
        for insn in fragment.insns:
            if insn.lineage in program.lineage_first_tag:
                insn.tag = program.lineage_first_tag[insn.lineage]
    return program


# ---------------------------------------------------------------------------
# Label insertion

def _local_branch_sites(fragment: Fragment):
    """(index, target byte offset) for branches resolved inside the fragment."""
    relocated = fragment.reloc_offsets()
    sites = []
    for index, tagged in enumerate(fragment.insns):
        mnemonic = tagged.insn.mnemonic
        if mnemonic in BRANCH_MNEMONICS or mnemonic == "jal":
            if 4 * index in relocated:
                continue
            sites.append((index, 4 * index + tagged.insn.imm))
    return sites


def insert_label(program: Program, position, label_value: int, tag) -> Program:
    """Insert a lui x0 metadata label at an instruction boundary.

    Downstream relocation sites and branch spans shift by one word within
    the untagged layout; a branch targeting the insertion point now lands on
    the label, so the label leads the block it covers.
    """
    if not 0 <= label_value < (1 << 20):
        raise LabelOverflow(f"label value {label_value:#x} does not fit 20 bits")
    try:
        frag_index, insn_index = position
        fragment = program.fragments[frag_index]
    except (TypeError, ValueError, IndexError):
        raise InvalidRef(f"no fragment at {position!r}") from None
    if not 0 <= insn_index <= len(fragment.insns):
        raise InvalidRef(f"index {insn_index} outside fragment {fragment.name!r}")

    point = 4 * insn_index
    moves = []
    for index, target in _local_branch_sites(fragment):
        site = 4 * index
        new_site = site + 4 if site >= point else site
        new_target = target + 4 if target > point else target
        moves.append((index, new_target - new_site))
    label = TaggedInsn(
        insn=Insn("lui", rd=0, imm=label_value),
        tag=tag,
        is_label=True,
        label_value=label_value,
    )
    fragment.insns.insert(insn_index, label)
    for index, new_imm in moves:
        shifted = index + 1 if index >= insn_index else index
        insn = fragment.insns[shifted].insn
        fragment.insns[shifted].insn = Insn(
            insn.mnemonic, rd=insn.rd, rs1=insn.rs1, rs2=insn.rs2, imm=new_imm)
    for reloc in fragment.relocations:
        if reloc.offset >= point:
            reloc.offset += 4
    return program


# ---------------------------------------------------------------------------
# Control-flow label policy

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x00000100000001B3


def cfi_label_value(signature: str) -> int:
    """20-bit label from a signature string: 64-bit FNV-1a xor-folded; zero
    is reserved as invalid and remaps to 1."""
    digest = FNV_OFFSET
    for byte in signature.encode("utf-8"):
        digest = ((digest ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    folded = (digest ^ (digest >> 20) ^ (digest >> 40) ^ (digest >> 60)) & 0xFFFFF
    return folded or 1


def is_computed_call(fragment: Fragment, index: int) -> bool:
    """A jalr with no Lo12I relocation, excluding the plain return form."""
    tagged = fragment.insns[index]
    if tagged.insn.mnemonic != "jalr":
        return False
    if any(r.offset == 4 * index and r.kind == "Lo12I" for r in fragment.relocations):
        return False
    if tagged.insn.rd == 0 and tagged.insn.rs1 == 1:
        return False  # ret: backward edges are not checked
    return True


def pass_cfi(program: Program, config: TagConfig, label_direct_calls: bool = False) -> Program:
    """Label non-internal function entries and computed call sites.

    Entry labels carry the hash of the function's signature; call-site
    labels carry the hash of the annotated call type.  With
    label_direct_calls, direct auipc/jalr pairs also receive the callee's
    label between the two instructions.
    """
    if config.policy != "cfi":
        raise ConfigMismatch(f"pass_cfi needs policy=cfi, config says {config.policy!r}")
    cfl = _resolve_tag(config, "CFL")
    signatures = {f.name: f.signature for f in program.fragments}

    for frag_index, fragment in enumerate(program.fragments):
        insertions = []  # (insn index, priority, label value)
        for index, tagged in enumerate(fragment.insns):
            if not is_computed_call(fragment, index):
                if not label_direct_calls or tagged.insn.mnemonic != "jalr":
                    continue
                lo = [r for r in fragment.relocations
                      if r.offset == 4 * index and r.kind == "Lo12I"]
                if not lo:
                    continue
                callee_sig = signatures.get(lo[0].target)
                if callee_sig is None:
                    raise MissingSignature(
                        f"direct call to {lo[0].target!r} in {fragment.name!r}: "
                        f"callee has no .signature")
                value = cfi_label_value(callee_sig)
            else:
                if tagged.calltype is None:
                    raise MissingSignature(
                        f"computed call at {fragment.name}+{4 * index:#x} "
                        f"has no .calltype annotation")
                value = cfi_label_value(tagged.calltype)
            # The checked transfer itself carries CFL so the enforcement side
            # can tell labelled call sites from plain jalr forms.
            tagged.tag = cfl
            prev = fragment.insns[index - 1] if index else None
            if prev is not None and prev.is_label and prev.tag == cfl:
                continue  # already labelled (idempotence)
            insertions.append((index, 1, value))

        wants_entry = (fragment.exported or fragment.address_taken) and not fragment.internal
        if wants_entry:
            first = fragment.insns[0] if fragment.insns else None
            if not (first is not None and first.is_label and first.tag == cfl):
                if fragment.signature is None:
                    raise MissingSignature(
                        f"non-internal function {fragment.name!r} has no .signature")
                insertions.append((0, 0, cfi_label_value(fragment.signature)))

        # Descending application keeps earlier indexes valid; entry labels
        # (priority 0) go in after a same-index callsite label so they end
        # up outermost.
        for index, _priority, value in sorted(insertions, reverse=True):
            insert_label(program, (frag_index, index), value, cfl)
    return program


# ---------------------------------------------------------------------------
# Unsigned-arithmetic policy

def pass_unarith(program: Program, config: TagConfig) -> Program:
    """Tag !unsigned add/sub forms for overflow checking; !optout wins."""
    if config.policy != "unarith":
        raise ConfigMismatch(
            f"pass_unarith needs policy=unarith, config says {config.policy!r}")
    un_arth = _resolve_tag(config, "UN_ARTH")
    for fragment in program.fragments:
        for tagged in fragment.insns:
            if tagged.insn.mnemonic not in ADDSUB_MNEMONICS:
                continue
            if "unsigned" in tagged.annotations and "optout" not in tagged.annotations:
                tagged.tag = un_arth
    return program


# ---------------------------------------------------------------------------
# Coverage policy

def _block_leaders(fragment: Fragment) -> set:
    """Instruction indexes that begin a basic block."""
    leaders = {0} if fragment.insns else set()
    relocated = fragment.reloc_offsets()
    for index, tagged in enumerate(fragment.insns):
        mnemonic = tagged.insn.mnemonic
        if mnemonic in BRANCH_MNEMONICS or mnemonic in ("jal", "jalr"):
            if index + 1 < len(fragment.insns):
                leaders.add(index + 1)
            if mnemonic != "jalr" and 4 * index not in relocated:
                leaders.add((4 * index + tagged.insn.imm) // 4)
    return leaders


def pass_coverage(program: Program, config: TagConfig, mode: str = "all_branches") -> Program:
    """Insert counting labels at block leaders and tag control flow.

    Needs the coverage-7 two-bit layout; CL labels start at zero and are
    incremented in place by the tag-aware emulator.
    """
    if config.policy != "coverage":
        raise ConfigMismatch(
            f"pass_coverage needs policy=coverage, config says {config.policy!r}")
    if config.coverage != 7:
        raise ConfigMismatch(
            f"coverage tracking needs coverage=7, config says {config.coverage}")
    if mode not in ("all_branches", "computed_only"):
        raise ConfigMismatch(f"unknown coverage mode {mode!r}")
    cl = _resolve_tag(config, "CL")
    ci = _resolve_tag(config, "CI")
    bcf = _resolve_tag(config, "BCF")

    for frag_index, fragment in enumerate(program.fragments):
        for index in sorted(_block_leaders(fragment), reverse=True):
            tagged = fragment.insns[index]
            if tagged.is_label and tagged.tag == cl:
                continue  # rerun: leader already counted
            insert_label(program, (frag_index, index), 0, cl)
        relocated_lo = {r.offset for r in fragment.relocations if r.kind == "Lo12I"}
        for index, tagged in enumerate(fragment.insns):
            mnemonic = tagged.insn.mnemonic
            if "count" in tagged.annotations and not tagged.is_label:
                tagged.tag = ci
                continue
            if mnemonic in BRANCH_MNEMONICS or mnemonic == "jal":
                if mode == "all_branches":
                    tagged.tag = bcf
            elif mnemonic == "jalr":
                computed = 4 * index not in relocated_lo
                if mode == "all_branches" or computed:
                    tagged.tag = bcf
    return program
