"""Tag schedule configuration and the offset arithmetic shared by emission,
symbol adjustment, and branch-reach checks.

A carrier word precedes each group of `coverage` instructions.  For an offset
o in the untagged layout, remap_offset(o) = o + 4*floor(o / 4N): offsets at a
group boundary map to that group's carrier slot, and the instruction word
itself always sits one word past remap_offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codec import COVERAGE_VALUES, TAG_BITS, TagCarrier
from .errors import BuildError


class ConfigError(BuildError):
    """A configuration key is missing, malformed, or inconsistent."""


class TableNA(ConfigError):
    """The requested carrier/coverage combination has no tag layout."""


class Misaligned(BuildError):
    """An offset that must be word-aligned is not."""


INSN_SIZE = 4

POLICIES = ("none", "cfi", "unarith", "coverage")

# Built-in tag vocabularies, used when a config names a policy without an
# explicit tag list.
POLICY_TAG_SETS = {
    "none": (("N", 0),),
    "cfi": (("N", 0), ("CFL", 1)),
    "unarith": (("N", 0), ("UN_ARTH", 1)),
    "coverage": (("CL", 0), ("CI", 1), ("BCF", 2), ("N", 3)),
}

_CARRIER_NAMES = {
    "lui": TagCarrier.LUI_NOP,
    "addi": TagCarrier.ADDI_NOP,
    "custom": TagCarrier.CUSTOM,
}


@dataclass(frozen=True)
class TagConfig:
    """Validated tag schedule: carrier, coverage, tag vocabulary, policy."""

    carrier: TagCarrier
    coverage: int
    bits_per_tag: int
    labels_enabled: bool = True
    policy: str = "none"
    tag_names: tuple = (("N", 0),)
    default_tag: int = 0

    def value_of(self, name: str):
        for n, v in self.tag_names:
            if n == name:
                return v
        return None

    def name_of(self, value: int) -> str:
        for n, v in self.tag_names:
            if v == value:
                return n
        return str(value)

    @property
    def tag_values(self) -> frozenset:
        return frozenset(v for _, v in self.tag_names)


def make_config(carrier="lui", coverage=3, labels=True, policy="none",
                tags=None, default_tag=None) -> TagConfig:
    """Build and validate a TagConfig from plain values."""
    if isinstance(carrier, str):
        if carrier not in _CARRIER_NAMES:
            raise ConfigError(f"carrier: unknown carrier {carrier!r} (lui, addi, custom)")
        carrier = _CARRIER_NAMES[carrier]
    if coverage not in COVERAGE_VALUES:
        raise ConfigError(f"coverage: {coverage} is not one of {COVERAGE_VALUES}")
    bits = TAG_BITS.get((carrier, coverage))
    if bits is None:
        raise TableNA(f"{carrier.value} carrier does not support coverage {coverage}")
    if policy not in POLICIES:
        raise ConfigError(f"policy: unknown policy {policy!r}")
    tag_names = tuple(tags) if tags is not None else POLICY_TAG_SETS[policy]
    if not tag_names:
        raise ConfigError("tags: at least one tag must be declared")
    seen = set()
    for name, value in tag_names:
        if name in seen:
            raise ConfigError(f"tags: duplicate tag name {name!r}")
        seen.add(name)
        if not 0 <= value < (1 << bits):
            raise ConfigError(
                f"tags: value {value} of {name!r} does not fit {bits}-bit tags"
            )
    # Enforcement hardcodes the policy vocabularies, so a config may extend
    # them but not remap them.
    declared = dict(tag_names)
    for name, value in POLICY_TAG_SETS[policy]:
        if declared.get(name, value) != value:
            raise ConfigError(
                f"tags: policy {policy!r} requires {name}={value}, "
                f"config says {declared[name]}")
        if name not in declared:
            raise ConfigError(f"tags: policy {policy!r} requires tag {name!r}")
    if policy == "coverage" and not labels:
        raise ConfigError("policy=coverage needs labels enabled")
    if default_tag is None:
        default_tag = "N"
    if isinstance(default_tag, str):
        match = [v for n, v in tag_names if n == default_tag]
        if not match:
            raise ConfigError(f"default_tag: {default_tag!r} is not a declared tag")
        default_value = match[0]
    else:
        default_value = default_tag
        if default_value not in {v for _, v in tag_names}:
            raise ConfigError(f"default_tag: value {default_value} is not declared")
    return TagConfig(
        carrier=carrier,
        coverage=coverage,
        bits_per_tag=bits,
        labels_enabled=bool(labels),
        policy=policy,
        tag_names=tag_names,
        default_tag=default_value,
    )


_BOOL_WORDS = {"true": True, "on": True, "1": True, "yes": True,
               "false": False, "off": False, "0": False, "no": False}


def loads_config(text: str) -> TagConfig:
    """Parse `key = value` lines into a validated TagConfig."""
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in fields:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = value

    known = {"carrier", "coverage", "labels", "default_tag", "policy", "tags"}
    for key in fields:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")

    kwargs = {}
    if "carrier" in fields:
        kwargs["carrier"] = fields["carrier"]
    if "coverage" in fields:
        try:
            kwargs["coverage"] = int(fields["coverage"], 0)
        except ValueError:
            raise ConfigError(f"coverage: {fields['coverage']!r} is not an integer") from None
    if "labels" in fields:
        word = fields["labels"].lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"labels: {fields['labels']!r} is not a boolean")
        kwargs["labels"] = _BOOL_WORDS[word]
    if "policy" in fields:
        kwargs["policy"] = fields["policy"]
    if "tags" in fields:
        pairs = []
        for item in fields["tags"].split(","):
            item = item.strip()
            if not item:
                continue
            if ":" not in item:
                raise ConfigError(f"tags: entry {item!r} is not name:value")
            name, _, num = item.partition(":")
            try:
                pairs.append((name.strip(), int(num.strip(), 0)))
            except ValueError:
                raise ConfigError(f"tags: value of {name.strip()!r} is not an integer") from None
        kwargs["tags"] = tuple(pairs)
    if "default_tag" in fields:
        word = fields["default_tag"]
        try:
            kwargs["default_tag"] = int(word, 0)
        except ValueError:
            kwargs["default_tag"] = word
    return make_config(**kwargs)


def load_config(path) -> TagConfig:
    """Read and parse a tag configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads_config(text)


# ---------------------------------------------------------------------------
# Offset arithmetic

def remap_offset(offset: int, coverage: int) -> int:
    """Map an untagged fragment offset into the carrier-interleaved layout.

    Group-boundary offsets land on the carrier slot for their group; the
    instruction originally at `offset` always sits at remap_offset + 4.
    """
    if offset % INSN_SIZE:
        raise Misaligned(f"offset {offset} is not a multiple of {INSN_SIZE}")
    return offset + INSN_SIZE * (offset // (INSN_SIZE * coverage))


def insn_address(offset: int, coverage: int) -> int:
    """Tagged-layout address of the instruction word at untagged `offset`."""
    return remap_offset(offset, coverage) + INSN_SIZE


def landing_offset(offset: int, coverage: int) -> int:
    """Where control transfers targeting untagged `offset` should land.

    Group boundaries land on the carrier so the whole group's tags are
    fetched on entry; interior targets land on the instruction itself.
    """
    remapped = remap_offset(offset, coverage)
    if offset % (INSN_SIZE * coverage) == 0:
        return remapped
    return remapped + INSN_SIZE


def tag_slot_addresses(fragment_insn_count: int, coverage: int) -> list:
    """Tagged-layout offsets of the carrier slots for a fragment."""
    if fragment_insn_count < 0:
        raise ValueError("instruction count cannot be negative")
    groups = -(-fragment_insn_count // coverage)
    return [INSN_SIZE * (coverage + 1) * g for g in range(groups)]


def tagged_size(fragment_insn_count: int, coverage: int) -> int:
    """Byte size of a fragment once carriers are interleaved."""
    groups = -(-fragment_insn_count // coverage)
    return INSN_SIZE * (fragment_insn_count + groups)


_BRANCH_REACH = (-4096, 4094)
_JAL_REACH = (-(1 << 20), (1 << 20) - 2)


def reach_check(branch_site: int, target: int, coverage: int, kind: str) -> bool:
    """True when the remapped displacement still fits the branch encoding.

    Keeps a one-instruction margin: label insertions can displace the code
    further than carrier interleaving alone.
    """
    lo, hi = _BRANCH_REACH if kind == "Branch" else _JAL_REACH
    delta = remap_offset(target, coverage) - remap_offset(branch_site, coverage)
    margin = INSN_SIZE
    return lo + margin <= delta <= hi - margin
