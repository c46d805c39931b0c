#!/usr/bin/env python3
"""Control-flow labels in action.

The cfi policy plants a 20-bit signature hash (a tagged lui x0 "label") at
every non-internal function entry and right before each computed call.  The
tag-aware emulator demands that the label armed at the call site matches the
first label at the landing point.
"""

from rvtag import PolicyViolation, build_image, cfi_label_value, make_config, run

TEMPLATE = """
.globl main
.entry main
main:
    .signature "i64()"
    la t1, callee
{fixup}    .calltype "i64(i64)"
    jalr ra, t1, 0
    li a7, 93
    ecall
.globl callee
callee:
    .signature "{callee_sig}"
    addi a0, a0, 7
    ret
"""

config = make_config(carrier="lui", coverage=3, policy="cfi")

print("label for signature i64(i64):", hex(cfi_label_value("i64(i64)")))
print("label for signature i64(ptr):", hex(cfi_label_value("i64(ptr)")))
print()


def attempt(title, callee_sig, fixup=""):
    image = build_image(TEMPLATE.format(callee_sig=callee_sig, fixup=fixup), config)
    try:
        state, _, _ = run(image, mode="aware")
        print(f"{title}: completed, a0 = {state.regs[10]}")
    except PolicyViolation as violation:
        print(f"{title}: {violation.kind} at pc={violation.pc:#x}")
        print(f"    {violation.detail}")


attempt("matched signatures     ", "i64(i64)")
attempt("retargeted to i64(ptr) ", "i64(ptr)")
attempt("jump into function body", "i64(i64)", fixup="    addi t1, t1, 8\n")

print()
print("the same three images run untroubled on tag-unaware hardware:")
for callee_sig, fixup in (("i64(i64)", ""), ("i64(ptr)", "")):
    image = build_image(TEMPLATE.format(callee_sig=callee_sig, fixup=fixup), config)
    state, _, _ = run(image, mode="compat")
    print(f"  compat run vs {callee_sig}: a0 = {state.regs[10]}")
