"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (used by the CLI for the
``ERROR: <code>: <msg>`` line) and an ``exit_code``: 1 for input validation
problems, 2 for failures while doing the work.
"""


class HoloError(Exception):
    code = "HoloError"
    exit_code = 2

    def __init__(self, msg: str = ""):
        super().__init__(msg or self.code)


class ValidationError(HoloError):
    exit_code = 1


def _make(name: str, base: type) -> type:
    return type(name, (base,), {"code": name})


# field_core
BadMagic = _make("BadMagic", ValidationError)
TruncatedPayload = _make("TruncatedPayload", ValidationError)
NonFiniteValue = _make("NonFiniteValue", ValidationError)
SchemaMismatch = _make("SchemaMismatch", ValidationError)
ZeroBackground = _make("ZeroBackground", HoloError)
ShrinkNotAllowed = _make("ShrinkNotAllowed", ValidationError)
InvalidField = _make("InvalidField", ValidationError)

# propagation
EmptyZList = _make("EmptyZList", ValidationError)
BadZList = _make("BadZList", EmptyZList)

# hologram_sim
BadGeometry = _make("BadGeometry", ValidationError)

# registration
DegenerateInput = _make("DegenerateInput", HoloError)
DegenerateGeometry = _make("DegenerateGeometry", HoloError)
SingularTransform = _make("SingularTransform", HoloError)
NoValidBlocks = _make("NoValidBlocks", HoloError)
NoOverlap = _make("NoOverlap", HoloError)

# dataset
NoPatches = _make("NoPatches", HoloError)
BadCode = _make("BadCode", ValidationError)

# crossmodal_net
ShapeMismatch = _make("ShapeMismatch", ValidationError)
EmptyDataset = _make("EmptyDataset", ValidationError)
BadDims = _make("BadDims", ValidationError)

# metrics
IdenticalImagesInfinity = _make("IdenticalImagesInfinity", HoloError)

# cli
ConfigError = _make("ConfigError", ValidationError)
