"""Bit-exact encoding/decoding of the supported RV64 subset and tag-carrier words.

Every instruction is a 32-bit uncompressed word (low two bits 0b11).  Tag
carriers are architectural no-ops (lui x0 / addi x0,x0) or a custom-0 opcode
word; their immediate fields hold packed per-instruction tag values, lowest
slot in the lowest-order bits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import BuildError


class OperandRange(BuildError):
    """An immediate or register index does not fit its encoding field."""


class PackOverflow(BuildError):
    """A tag value exceeds the per-tag bit width of the selected layout."""


class NotACarrier(BuildError):
    """A word's opcode/rd fields do not match the expected carrier pattern."""


# ---------------------------------------------------------------------------
# Instruction formats

OP_LUI = 0b0110111
OP_AUIPC = 0b0010111
OP_JAL = 0b1101111
OP_JALR = 0b1100111
OP_BRANCH = 0b1100011
OP_LOAD = 0b0000011
OP_STORE = 0b0100011
OP_IMM = 0b0010011
OP_IMM32 = 0b0011011
OP_REG = 0b0110011
OP_REG32 = 0b0111011
OP_SYSTEM = 0b1110011
OP_CUSTOM0 = 0b0001011

# mnemonic -> (format, opcode7, funct3, funct7)
_U, _J, _I, _B, _S, _R, _SHIFT, _SYS = range(8)

_ISA = {
    "lui":   (_U, OP_LUI, None, None),
    "auipc": (_U, OP_AUIPC, None, None),
    "jal":   (_J, OP_JAL, None, None),
    "jalr":  (_I, OP_JALR, 0b000, None),
    "beq":   (_B, OP_BRANCH, 0b000, None),
    "bne":   (_B, OP_BRANCH, 0b001, None),
    "blt":   (_B, OP_BRANCH, 0b100, None),
    "bge":   (_B, OP_BRANCH, 0b101, None),
    "bltu":  (_B, OP_BRANCH, 0b110, None),
    "bgeu":  (_B, OP_BRANCH, 0b111, None),
    "lb":    (_I, OP_LOAD, 0b000, None),
    "lh":    (_I, OP_LOAD, 0b001, None),
    "lw":    (_I, OP_LOAD, 0b010, None),
    "ld":    (_I, OP_LOAD, 0b011, None),
    "lbu":   (_I, OP_LOAD, 0b100, None),
    "lhu":   (_I, OP_LOAD, 0b101, None),
    "lwu":   (_I, OP_LOAD, 0b110, None),
    "sb":    (_S, OP_STORE, 0b000, None),
    "sh":    (_S, OP_STORE, 0b001, None),
    "sw":    (_S, OP_STORE, 0b010, None),
    "sd":    (_S, OP_STORE, 0b011, None),
    "addi":  (_I, OP_IMM, 0b000, None),
    "slti":  (_I, OP_IMM, 0b010, None),
    "sltiu": (_I, OP_IMM, 0b011, None),
    "xori":  (_I, OP_IMM, 0b100, None),
    "ori":   (_I, OP_IMM, 0b110, None),
    "andi":  (_I, OP_IMM, 0b111, None),
    "slli":  (_SHIFT, OP_IMM, 0b001, 0b000000),
    "srli":  (_SHIFT, OP_IMM, 0b101, 0b000000),
    "srai":  (_SHIFT, OP_IMM, 0b101, 0b010000),
    "addiw": (_I, OP_IMM32, 0b000, None),
    "add":   (_R, OP_REG, 0b000, 0b0000000),
    "sub":   (_R, OP_REG, 0b000, 0b0100000),
    "sll":   (_R, OP_REG, 0b001, 0b0000000),
    "slt":   (_R, OP_REG, 0b010, 0b0000000),
    "sltu":  (_R, OP_REG, 0b011, 0b0000000),
    "xor":   (_R, OP_REG, 0b100, 0b0000000),
    "srl":   (_R, OP_REG, 0b101, 0b0000000),
    "sra":   (_R, OP_REG, 0b101, 0b0100000),
    "or":    (_R, OP_REG, 0b110, 0b0000000),
    "and":   (_R, OP_REG, 0b111, 0b0000000),
    "mul":   (_R, OP_REG, 0b000, 0b0000001),
    "addw":  (_R, OP_REG32, 0b000, 0b0000000),
    "subw":  (_R, OP_REG32, 0b000, 0b0100000),
    "ecall":  (_SYS, OP_SYSTEM, 0b000, None),
    "ebreak": (_SYS, OP_SYSTEM, 0b000, None),
}

MNEMONICS = frozenset(_ISA)

# Subfamilies the policy passes and emulator care about.
BRANCH_MNEMONICS = frozenset({"beq", "bne", "blt", "bge", "bltu", "bgeu"})
LOAD_MNEMONICS = frozenset({"lb", "lh", "lw", "ld", "lbu", "lhu", "lwu"})
STORE_MNEMONICS = frozenset({"sb", "sh", "sw", "sd"})
ADDSUB_MNEMONICS = frozenset({"add", "sub", "addw", "subw", "addi", "addiw"})


@dataclass(frozen=True)
class Insn:
    """One decoded instruction.  Unused operand fields stay zero.

    Immediate conventions: U-type holds the raw 20-bit field (0..0xFFFFF);
    I/S-types hold the signed 12-bit value; B/J-types hold the signed byte
    offset from the instruction; shifts hold the shamt (0..63).
    """

    mnemonic: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0


def _check_reg(name: str, value: int) -> None:
    if not 0 <= value <= 31:
        raise OperandRange(f"{name}={value} is not a register index (0..31)")


def _check_range(mnemonic: str, imm: int, lo: int, hi: int, even: bool = False) -> None:
    if not lo <= imm <= hi:
        raise OperandRange(f"{mnemonic}: immediate {imm} outside [{lo}, {hi}]")
    if even and imm & 1:
        raise OperandRange(f"{mnemonic}: offset {imm} must be even")


def encode(insn: Insn) -> int:
    """Encode one instruction to its unique 32-bit word."""
    if insn.mnemonic not in _ISA:
        raise OperandRange(f"unsupported mnemonic {insn.mnemonic!r}")
    fmt, opcode, funct3, funct7 = _ISA[insn.mnemonic]
    _check_reg("rd", insn.rd)
    _check_reg("rs1", insn.rs1)
    _check_reg("rs2", insn.rs2)
    imm = insn.imm
    if fmt == _U:
        _check_range(insn.mnemonic, imm, 0, 0xFFFFF)
        return (imm << 12) | (insn.rd << 7) | opcode
    if fmt == _J:
        _check_range(insn.mnemonic, imm, -(1 << 20), (1 << 20) - 2, even=True)
        u = imm & 0x1FFFFF
        word = ((u >> 20) & 1) << 31
        word |= ((u >> 1) & 0x3FF) << 21
        word |= ((u >> 11) & 1) << 20
        word |= ((u >> 12) & 0xFF) << 12
        return word | (insn.rd << 7) | opcode
    if fmt == _I:
        _check_range(insn.mnemonic, imm, -2048, 2047)
        return ((imm & 0xFFF) << 20) | (insn.rs1 << 15) | (funct3 << 12) | (insn.rd << 7) | opcode
    if fmt == _SHIFT:
        _check_range(insn.mnemonic, imm, 0, 63)
        return (funct7 << 26) | (imm << 20) | (insn.rs1 << 15) | (funct3 << 12) | (insn.rd << 7) | opcode
    if fmt == _B:
        _check_range(insn.mnemonic, imm, -4096, 4094, even=True)
        u = imm & 0x1FFF
        word = ((u >> 12) & 1) << 31
        word |= ((u >> 5) & 0x3F) << 25
        word |= (insn.rs2 << 20) | (insn.rs1 << 15) | (funct3 << 12)
        word |= ((u >> 1) & 0xF) << 8
        word |= ((u >> 11) & 1) << 7
        return word | opcode
    if fmt == _S:
        _check_range(insn.mnemonic, imm, -2048, 2047)
        u = imm & 0xFFF
        word = ((u >> 5) & 0x7F) << 25
        word |= (insn.rs2 << 20) | (insn.rs1 << 15) | (funct3 << 12)
        word |= (u & 0x1F) << 7
        return word | opcode
    if fmt == _R:
        return (funct7 << 25) | (insn.rs2 << 20) | (insn.rs1 << 15) | (funct3 << 12) | (insn.rd << 7) | opcode
    # _SYS
    sysimm = 0 if insn.mnemonic == "ecall" else 1
    return (sysimm << 20) | opcode


def _sext(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


class BadEncoding(BuildError):
    """The word is not a valid encoding of any supported instruction."""


def decode(word: int) -> Insn:
    """Decode a 32-bit word; inverse of encode on the supported subset."""
    if not 0 <= word <= 0xFFFFFFFF:
        raise BadEncoding(f"word {word:#x} is not 32 bits")
    if word & 0b11 != 0b11:
        raise BadEncoding(f"word {word:#010x} is a compressed encoding")
    opcode = word & 0x7F
    rd = (word >> 7) & 0x1F
    funct3 = (word >> 12) & 0x7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    funct7 = (word >> 25) & 0x7F

    if opcode in (OP_LUI, OP_AUIPC):
        mn = "lui" if opcode == OP_LUI else "auipc"
        return Insn(mn, rd=rd, imm=(word >> 12) & 0xFFFFF)
    if opcode == OP_JAL:
        imm = (((word >> 31) & 1) << 20) | (((word >> 12) & 0xFF) << 12)
        imm |= (((word >> 20) & 1) << 11) | (((word >> 21) & 0x3FF) << 1)
        return Insn("jal", rd=rd, imm=_sext(imm, 21))
    if opcode == OP_BRANCH:
        imm = (((word >> 31) & 1) << 12) | (((word >> 7) & 1) << 11)
        imm |= (((word >> 25) & 0x3F) << 5) | (((word >> 8) & 0xF) << 1)
        for mn, spec in _ISA.items():
            if spec[0] == _B and spec[2] == funct3:
                return Insn(mn, rs1=rs1, rs2=rs2, imm=_sext(imm, 13))
        raise BadEncoding(f"branch funct3 {funct3:#05b} unsupported")
    if opcode == OP_STORE:
        imm = (((word >> 25) & 0x7F) << 5) | ((word >> 7) & 0x1F)
        for mn, spec in _ISA.items():
            if spec[0] == _S and spec[2] == funct3:
                return Insn(mn, rs1=rs1, rs2=rs2, imm=_sext(imm, 12))
        raise BadEncoding(f"store funct3 {funct3:#05b} unsupported")
    if opcode in (OP_JALR, OP_LOAD, OP_IMM, OP_IMM32):
        if opcode == OP_IMM and funct3 in (0b001, 0b101):
            funct6 = (word >> 26) & 0x3F
            shamt = (word >> 20) & 0x3F
            for mn, spec in _ISA.items():
                if spec[0] == _SHIFT and spec[2] == funct3 and spec[3] == funct6:
                    return Insn(mn, rd=rd, rs1=rs1, imm=shamt)
            raise BadEncoding(f"shift funct6 {funct6:#08b} unsupported")
        for mn, spec in _ISA.items():
            if spec[0] == _I and spec[1] == opcode and spec[2] == funct3:
                return Insn(mn, rd=rd, rs1=rs1, imm=_sext((word >> 20) & 0xFFF, 12))
        raise BadEncoding(f"I-type opcode {opcode:#09b} funct3 {funct3:#05b} unsupported")
    if opcode in (OP_REG, OP_REG32):
        for mn, spec in _ISA.items():
            if spec[0] == _R and spec[1] == opcode and spec[2] == funct3 and spec[3] == funct7:
                return Insn(mn, rd=rd, rs1=rs1, rs2=rs2)
        raise BadEncoding(f"R-type funct3/funct7 {funct3}/{funct7:#09b} unsupported")
    if opcode == OP_SYSTEM and word == 0x00000073:
        return Insn("ecall")
    if opcode == OP_SYSTEM and word == 0x00100073:
        return Insn("ebreak")
    raise BadEncoding(f"word {word:#010x}: opcode {opcode:#09b} unsupported")


# ---------------------------------------------------------------------------
# Tag carriers

class TagCarrier(enum.Enum):
    LUI_NOP = "lui"
    ADDI_NOP = "addi"
    CUSTOM = "custom"

    @property
    def bits_available(self) -> int:
        return {TagCarrier.LUI_NOP: 20, TagCarrier.ADDI_NOP: 12, TagCarrier.CUSTOM: 25}[self]

    @property
    def backward_compatible(self) -> bool:
        return self is not TagCarrier.CUSTOM


# Per-tag bit widths by (carrier, coverage); missing cells are not available.
TAG_BITS = {
    (TagCarrier.ADDI_NOP, 1): 12,
    (TagCarrier.ADDI_NOP, 3): 4,
    (TagCarrier.ADDI_NOP, 7): 1,
    (TagCarrier.LUI_NOP, 1): 20,
    (TagCarrier.LUI_NOP, 3): 6,
    (TagCarrier.LUI_NOP, 7): 2,
    (TagCarrier.LUI_NOP, 15): 1,
    (TagCarrier.CUSTOM, 1): 15,
    (TagCarrier.CUSTOM, 3): 8,
    (TagCarrier.CUSTOM, 7): 3,
    (TagCarrier.CUSTOM, 15): 1,
}

COVERAGE_VALUES = (1, 3, 7, 15, 31)


@dataclass(frozen=True)
class TagPack:
    """Coverage-many tag values destined for one carrier word."""

    coverage: int
    bits_per_tag: int
    tags: tuple

    def __post_init__(self):
        if len(self.tags) != self.coverage:
            raise PackOverflow(
                f"pack holds {len(self.tags)} tags, coverage is {self.coverage}"
            )


def pack_tags(carrier: TagCarrier, pack: TagPack) -> int:
    """Build the carrier word; tag i sits in payload bits [i*b, (i+1)*b)."""
    bits = TAG_BITS.get((carrier, pack.coverage))
    if bits is None or bits != pack.bits_per_tag:
        raise PackOverflow(
            f"{carrier.value} carrier does not provide {pack.bits_per_tag}-bit tags "
            f"at coverage {pack.coverage}"
        )
    payload = 0
    for i, tag in enumerate(pack.tags):
        if not 0 <= tag < (1 << bits):
            raise PackOverflow(f"tag value {tag} exceeds {bits} bits")
        payload |= tag << (i * bits)
    if carrier is TagCarrier.LUI_NOP:
        return encode(Insn("lui", rd=0, imm=payload))
    if carrier is TagCarrier.ADDI_NOP:
        # Raw 12-bit field; still writes only x0.
        return (payload << 20) | OP_IMM
    return (payload << 7) | OP_CUSTOM0


def unpack_tags(carrier: TagCarrier, coverage: int, word: int) -> TagPack:
    """Extract the coverage-many tag values from a carrier word."""
    bits = TAG_BITS.get((carrier, coverage))
    if bits is None:
        raise PackOverflow(f"{carrier.value} has no coverage-{coverage} layout")
    if carrier is TagCarrier.LUI_NOP:
        if word & 0x7F != OP_LUI or (word >> 7) & 0x1F != 0:
            raise NotACarrier(f"{word:#010x} is not a lui x0 word")
        payload = (word >> 12) & 0xFFFFF
    elif carrier is TagCarrier.ADDI_NOP:
        if (word & 0x7F != OP_IMM or (word >> 7) & 0x1F != 0
                or (word >> 12) & 0x7 != 0 or (word >> 15) & 0x1F != 0):
            raise NotACarrier(f"{word:#010x} is not an addi x0,x0 word")
        payload = (word >> 20) & 0xFFF
    else:
        if word & 0x7F != OP_CUSTOM0:
            raise NotACarrier(f"{word:#010x} is not a custom-0 word")
        payload = (word >> 7) & 0x1FFFFFF
    mask = (1 << bits) - 1
    tags = tuple((payload >> (i * bits)) & mask for i in range(coverage))
    return TagPack(coverage=coverage, bits_per_tag=bits, tags=tags)
