import pytest

from rvtag.frontend import assemble
from rvtag.instrument import (
    ConfigMismatch,
    InvalidRef,
    LabelOverflow,
    MissingSignature,
    UnknownTag,
    cfi_label_value,
    get_tag,
    insert_label,
    pass_cfi,
    pass_coverage,
    pass_unarith,
    propagate_lineage,
    set_tag,
)
from rvtag.tagplan import make_config

CFI = make_config(carrier="lui", coverage=3, policy="cfi")
UNARITH = make_config(carrier="lui", coverage=3, policy="unarith")
COVERAGE = make_config(carrier="lui", coverage=7, policy="coverage")


def indirect_call_source(callee_sig='"i64(i64)"', calltype='"i64(i64)"'):
    return (
        ".globl main\n"
        ".entry main\n"
        "main:\n"
        f'    .signature "i64()"\n'
        "    la t1, callee\n"
        f"    .calltype {calltype}\n"
        "    jalr ra, t1, 0\n"
        "    li a7, 93\n"
        "    ecall\n"
        ".globl callee\n"
        "callee:\n"
        f"    .signature {callee_sig}\n"
        "    addi a0, a0, 7\n"
        "    ret\n"
    )


# ---------------------------------------------------------------------------
# set / get / lineage

def test_set_get_tag():
    program = assemble("main:\n    addi a0, a0, 1\n    ecall\n")
    assert get_tag(program, (0, 0), CFI) == 0  # default N
    set_tag(program, (0, 0), "CFL", CFI)
    assert get_tag(program, (0, 0), CFI) == 1
    set_tag(program, (0, 0), 0, CFI)
    assert get_tag(program, (0, 0), CFI) == 0


def test_set_tag_rejects_unknown():
    program = assemble("main:\n    ecall\n")
    with pytest.raises(UnknownTag):
        set_tag(program, (0, 0), "BOGUS", CFI)
    with pytest.raises(UnknownTag):
        set_tag(program, (0, 0), 4, CFI)  # out of the 1-bit cfi set
    with pytest.raises(InvalidRef):
        set_tag(program, (0, 9), "N", CFI)
    with pytest.raises(InvalidRef):
        get_tag(program, (2, 0), CFI)


def test_lineage_propagation_on_call():
    program = assemble("main:\n    call f\n    ecall\nf:\n    ret\n")
    set_tag(program, (0, 0), "CFL", CFI)  # tag the auipc half
    propagate_lineage(program)
    assert get_tag(program, (0, 0), CFI) == 1
    assert get_tag(program, (0, 1), CFI) == 1  # jalr half follows


def test_lineage_first_set_wins():
    program = assemble("main:\n    call f\n    ecall\nf:\n    ret\n")
    set_tag(program, (0, 1), "CFL", CFI)
    set_tag(program, (0, 0), "N", CFI)  # second set on the same lineage
    propagate_lineage(program)
    assert get_tag(program, (0, 0), CFI) == 1
    assert get_tag(program, (0, 1), CFI) == 1


def test_propagate_without_lineages_is_identity():
    program = assemble("main:\n    addi a0, a0, 1\n    ecall\n")
    set_tag(program, (0, 0), "CFL", CFI)
    propagate_lineage(program)
    assert get_tag(program, (0, 0), CFI) == 1
    assert get_tag(program, (0, 1), CFI) == 0


# ---------------------------------------------------------------------------
# insert_label

def test_insert_label_at_function_start():
    program = assemble("main:\n    addi a0, a0, 1\n    ecall\n")
    insert_label(program, (0, 0), 0x5A3, 1)
    frag = program.fragments[0]
    first = frag.insns[0]
    assert first.is_label and first.label_value == 0x5A3 and first.tag == 1
    assert first.insn.mnemonic == "lui" and first.insn.rd == 0
    assert first.insn.imm == 0x5A3


def test_insert_label_shifts_relocations():
    program = assemble("main:\n    call f\n    ecall\nf:\n    ret\n")
    insert_label(program, (0, 1), 0x77, 1)  # between auipc and jalr
    frag = program.fragments[0]
    offsets = {(r.kind, r.offset) for r in frag.relocations}
    assert offsets == {("Hi20", 0), ("Lo12I", 8)}
    pair_ids = {r.pair_id for r in frag.relocations}
    assert len(pair_ids) == 1


def test_insert_label_keeps_backward_branch_on_target():
    # branch targets the insertion point: it must now land on the label
    program = assemble("main:\n    addi a0, a0, 1\n    bne a0, a1, main\n")
    insert_label(program, (0, 0), 1, 1)
    frag = program.fragments[0]
    branch = frag.insns[2].insn
    assert branch.imm == -8  # from index 2 back to the label at index 0


def test_insert_label_shifts_interior_branch_target():
    # branch over the insertion point stretches by one word
    program = assemble(
        "main:\n"
        "    beq a0, a1, out\n"
        "    addi a0, a0, 1\n"
        "out:\n"
        "    ecall\n"
    )
    insert_label(program, (0, 1), 2, 1)
    frag = program.fragments[0]
    assert frag.insns[0].insn.imm == 12  # was 8


def test_insert_label_stretches_backward_branch_over_point():
    # site after the insertion point, target before it: distance grows by 4
    program = assemble(
        "main:\n"
        "    addi a0, a0, 1\n"
        "back:\n"
        "    addi a1, a1, 1\n"
        "    addi a2, a2, 1\n"
        "    bne a0, a1, back\n"
    )
    insert_label(program, (0, 2), 3, 1)  # between 'back' and the branch
    frag = program.fragments[0]
    branch = frag.insns[4].insn
    assert branch.imm == -12  # was -8


def test_insert_label_rejects_overflow_and_bad_position():
    program = assemble("main:\n    ecall\n")
    with pytest.raises(LabelOverflow):
        insert_label(program, (0, 0), 1 << 20, 1)
    with pytest.raises(InvalidRef):
        insert_label(program, (0, 5), 1, 1)


# ---------------------------------------------------------------------------
# CFI label derivation

def test_cfi_label_deterministic_and_nonzero():
    a = cfi_label_value("i64(i64,ptr)")
    assert a == cfi_label_value("i64(i64,ptr)")
    assert 0 < a < (1 << 20)
    assert cfi_label_value("i64(i64)") != cfi_label_value("i64(ptr)")


def test_cfi_label_equal_signatures_equal_labels():
    program = assemble(
        ".globl f\nf:\n    .signature \"i64(i64)\"\n    ret\n"
        ".globl g\ng:\n    .signature \"i64(i64)\"\n    ret\n"
    )
    pass_cfi(program, CFI)
    f_label = program.fragment("f").insns[0]
    g_label = program.fragment("g").insns[0]
    assert f_label.is_label and g_label.is_label
    assert f_label.label_value == g_label.label_value == cfi_label_value("i64(i64)")


# ---------------------------------------------------------------------------
# pass_cfi

def test_pass_cfi_indirect_callsite():
    program = assemble(indirect_call_source())
    pass_cfi(program, CFI)
    main = program.fragment("main")
    mnemonics = [ti.insn.mnemonic for ti in main.insns]
    # entry label, la pair, site label, jalr, exit
    labels = [ti for ti in main.insns if ti.is_label]
    assert len(labels) == 2
    jalr_index = mnemonics.index("jalr")
    site_label = main.insns[jalr_index - 1]
    assert site_label.is_label and site_label.tag == 1
    assert site_label.label_value == cfi_label_value("i64(i64)")
    assert main.insns[jalr_index].tag == 1  # checked transfer carries CFL
    callee = program.fragment("callee")
    assert callee.insns[0].is_label
    assert callee.insns[0].label_value == cfi_label_value("i64(i64)")


def test_pass_cfi_internal_helper_gets_no_label():
    program = assemble(
        ".internal helper\n"
        "helper:\n"
        "    ret\n"
    )
    pass_cfi(program, CFI)
    assert not any(ti.is_label for ti in program.fragment("helper").insns)


def test_pass_cfi_direct_call_unlabelled_by_default():
    source = (
        ".globl main\nmain:\n    .signature \"i64()\"\n    call f\n    ecall\n"
        ".globl f\nf:\n    .signature \"i64(i64)\"\n    ret\n"
    )
    program = assemble(source)
    pass_cfi(program, CFI)
    main = program.fragment("main")
    labels = [ti for ti in main.insns if ti.is_label]
    assert len(labels) == 1  # only the entry label

    program = assemble(source)
    pass_cfi(program, CFI, label_direct_calls=True)
    main = program.fragment("main")
    labels = [ti for ti in main.insns if ti.is_label]
    assert len(labels) == 2  # entry label plus the between-pair label
    jalr_index = [ti.insn.mnemonic for ti in main.insns].index("jalr")
    assert main.insns[jalr_index - 1].is_label
    assert main.insns[jalr_index - 1].label_value == cfi_label_value("i64(i64)")
    offsets = {(r.kind, r.offset) for r in main.relocations}
    assert offsets == {("Hi20", 4), ("Lo12I", 12)}  # pair one word apart


def test_pass_cfi_missing_signature():
    program = assemble(
        ".globl main\nmain:\n    ecall\n")
    with pytest.raises(MissingSignature):
        pass_cfi(program, CFI)
    program = assemble(
        "main:\n    la t1, main\n    jalr ra, t1, 0\n    ecall\n")
    with pytest.raises(MissingSignature):
        pass_cfi(program, CFI)


def test_pass_cfi_entry_and_site_labels_at_index_zero():
    # a checked call as the very first instruction: the entry label must end
    # up outermost, the site label adjacent to the jalr
    program = assemble(
        ".globl f\n"
        "f:\n"
        '    .signature "i64()"\n'
        '    .calltype "i64(i64)"\n'
        "    jalr ra, t1, 0\n"
        "    ret\n"
    )
    pass_cfi(program, CFI)
    frag = program.fragment("f")
    assert [ti.insn.mnemonic for ti in frag.insns] == ["lui", "lui", "jalr", "jalr"]
    assert frag.insns[0].label_value == cfi_label_value("i64()")
    assert frag.insns[1].label_value == cfi_label_value("i64(i64)")


def test_pass_cfi_returns_are_not_callsites():
    program = assemble(
        ".internal f\nf:\n    ret\n")
    pass_cfi(program, CFI)  # must not demand a calltype for ret
    assert not any(ti.is_label for ti in program.fragment("f").insns)


def test_pass_cfi_idempotent():
    program = assemble(indirect_call_source())
    pass_cfi(program, CFI)
    snapshot = [
        (ti.insn, ti.tag, ti.is_label, ti.label_value)
        for frag in program.fragments for ti in frag.insns
    ]
    pass_cfi(program, CFI)
    again = [
        (ti.insn, ti.tag, ti.is_label, ti.label_value)
        for frag in program.fragments for ti in frag.insns
    ]
    assert snapshot == again


def test_pass_cfi_wrong_policy():
    program = assemble("main:\n    ecall\n")
    with pytest.raises(ConfigMismatch):
        pass_cfi(program, UNARITH)


# ---------------------------------------------------------------------------
# pass_unarith

def test_pass_unarith_tags_annotated_subs():
    program = assemble(
        "main:\n"
        "    sub a2, a0, a2 !unsigned\n"
        "    sub a1, a3, a1 !unsigned !optout\n"
        "    mul a4, a5, a6\n"
        "    ecall\n"
    )
    pass_unarith(program, UNARITH)
    frag = program.fragments[0]
    assert get_tag(program, (0, 0), UNARITH) == 1
    assert get_tag(program, (0, 1), UNARITH) == 0
    assert get_tag(program, (0, 2), UNARITH) == 0
    # only the six arithmetic mnemonics may carry the check
    tagged = [ti.insn.mnemonic for ti in frag.insns if ti.tag == 1]
    assert tagged == ["sub"]


def test_pass_unarith_idempotent():
    program = assemble("main:\n    add a0, a0, a1 !unsigned\n    ecall\n")
    pass_unarith(program, UNARITH)
    first = [ti.tag for ti in program.fragments[0].insns]
    pass_unarith(program, UNARITH)
    assert [ti.tag for ti in program.fragments[0].insns] == first


# ---------------------------------------------------------------------------
# pass_coverage

COVERAGE_SRC = (
    "main:\n"
    "    addi a0, a0, 1\n"
    "    beq a0, a1, done\n"
    "    addi a2, a2, 1\n"
    "done:\n"
    "    li a7, 93\n"
    "    ecall\n"
)


def test_pass_coverage_inserts_cl_labels():
    program = assemble(COVERAGE_SRC)
    pass_coverage(program, COVERAGE)
    frag = program.fragments[0]
    labels = [i for i, ti in enumerate(frag.insns) if ti.is_label]
    # leaders: entry, fall-through after the branch, branch target
    assert len(labels) == 3
    assert all(frag.insns[i].tag == 0 for i in labels)      # CL
    assert all(frag.insns[i].label_value == 0 for i in labels)
    branch_index = [ti.insn.mnemonic for ti in frag.insns].index("beq")
    assert frag.insns[branch_index].tag == 2                # BCF
    # branch lands on the CL label of its target block
    target = 4 * branch_index + frag.insns[branch_index].insn.imm
    assert frag.insns[target // 4].is_label


def test_pass_coverage_straight_line_single_label():
    program = assemble("main:\n    addi a0, a0, 1\n    ecall\n")
    pass_coverage(program, COVERAGE)
    frag = program.fragments[0]
    assert sum(1 for ti in frag.insns if ti.is_label) == 1
    assert frag.insns[0].is_label


def test_pass_coverage_computed_only_mode():
    program = assemble(COVERAGE_SRC)
    pass_coverage(program, COVERAGE, mode="computed_only")
    frag = program.fragments[0]
    assert not any(ti.tag == 2 for ti in frag.insns)  # no BCF on direct branches


def test_pass_coverage_count_annotation():
    program = assemble("main:\n    addi a0, a0, 1 !count\n    ecall\n")
    pass_coverage(program, COVERAGE)
    frag = program.fragments[0]
    counted = [ti for ti in frag.insns if ti.tag == 1]
    assert len(counted) == 1 and counted[0].insn.mnemonic == "addi"


def test_pass_coverage_requires_coverage7():
    program = assemble("main:\n    ecall\n")
    bad = make_config(carrier="lui", coverage=3, policy="coverage")
    with pytest.raises(ConfigMismatch):
        pass_coverage(program, bad)
    with pytest.raises(ConfigMismatch):
        pass_coverage(program, COVERAGE, mode="sometimes")


def test_pass_coverage_idempotent():
    program = assemble(COVERAGE_SRC)
    pass_coverage(program, COVERAGE)
    snapshot = [(ti.insn, ti.tag, ti.is_label)
                for ti in program.fragments[0].insns]
    pass_coverage(program, COVERAGE)
    assert [(ti.insn, ti.tag, ti.is_label)
            for ti in program.fragments[0].insns] == snapshot
