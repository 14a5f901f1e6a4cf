"""Exception hierarchy shared across the package.

Every error carries a stable machine-readable ``code`` (the class name);
the CLI prints ``<code>: <detail>`` on a single line and exits nonzero.
"""


class SrmnetError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- tensor / autodiff ---

class ShapeMismatch(SrmnetError):
    pass


class NonScalarLoss(SrmnetError):
    pass


class NonFiniteGradient(SrmnetError):
    pass


# --- neural ops / model assembly ---

class IndivisibleSize(SrmnetError):
    pass


class BranchCountMismatch(SrmnetError):
    pass


class UnresolvedShape(SrmnetError):
    pass


# --- serialization ---

class CorruptFile(SrmnetError):
    pass


class TensorCountMismatch(SrmnetError):
    pass


# --- data / metrics ---

class UnsupportedFormat(SrmnetError):
    pass


class TruncatedPayload(SrmnetError):
    pass


class PatchTooLarge(SrmnetError):
    pass


class ImageTooSmall(SrmnetError):
    pass


# --- CLI / training ---

class ConfigInvalid(SrmnetError):
    pass


class EmptyDataset(SrmnetError):
    pass


class NonFiniteLoss(SrmnetError):
    pass


class ModelTooLarge(SrmnetError):
    pass
