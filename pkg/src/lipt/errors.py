"""Exception hierarchy. The CLI maps each class to a one-line diagnostic."""


class LIPTError(Exception):
    kind = "error"


class ShapeError(LIPTError, ValueError):
    kind = "shape"


class MaskError(LIPTError, ValueError):
    kind = "mask"


class FormatError(LIPTError, ValueError):
    """Malformed file contents (PPM, weight file, mask text, config)."""

    kind = "parse"


class ConfigError(LIPTError, ValueError):
    kind = "config"
