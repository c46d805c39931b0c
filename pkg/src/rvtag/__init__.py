"""rvtag: a self-contained RISC-V instruction-tagging toolchain.

Assembles an RV64 subset, interleaves configurable-width metadata tags
encoded as architectural NOPs, links with tag-aware relocation handling,
and executes the result in a bundled emulator that either ignores tags
(backward compatibility) or enforces tag policies.
"""

from .codec import Insn, TagCarrier, TagPack, decode, encode, pack_tags, unpack_tags
from .emitlink import Image, link, read_image, write_image
from .emulator import ExecCounters, MachineState, PolicyState, PolicyViolation, report, run
from .errors import BuildError, RvtagError
from .frontend import Fragment, Program, Relocation, TaggedInsn, assemble, expand_pseudo
from .instrument import (
    cfi_label_value,
    get_tag,
    insert_label,
    pass_cfi,
    pass_coverage,
    pass_unarith,
    propagate_lineage,
    set_tag,
)
from .pipeline import apply_policy, assemble_sources, build_image
from .tagplan import (
    TagConfig,
    load_config,
    loads_config,
    make_config,
    remap_offset,
    reach_check,
    tag_slot_addresses,
)

__version__ = "0.1.0"

__all__ = [
    "BuildError",
    "ExecCounters",
    "Fragment",
    "Image",
    "Insn",
    "MachineState",
    "PolicyState",
    "PolicyViolation",
    "Program",
    "Relocation",
    "RvtagError",
    "TagCarrier",
    "TagConfig",
    "TagPack",
    "TaggedInsn",
    "apply_policy",
    "assemble",
    "assemble_sources",
    "build_image",
    "cfi_label_value",
    "decode",
    "encode",
    "expand_pseudo",
    "get_tag",
    "insert_label",
    "link",
    "load_config",
    "loads_config",
    "make_config",
    "pack_tags",
    "pass_cfi",
    "pass_coverage",
    "pass_unarith",
    "propagate_lineage",
    "reach_check",
    "read_image",
    "remap_offset",
    "report",
    "run",
    "set_tag",
    "tag_slot_addresses",
    "unpack_tags",
    "write_image",
]
