"""Shared exception hierarchy for the rvtag toolchain."""


class RvtagError(Exception):
    """Base class for all toolchain errors."""


class BuildError(RvtagError):
    """Raised for any failure while turning source text into an image."""
