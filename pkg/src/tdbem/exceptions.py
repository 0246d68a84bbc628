from __future__ import annotations


class UnknownPresetError(Exception):
    """Raised when a geometry, datum or experiment name is not registered"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class IncompatibleMeshError(Exception):
    """Raised when an element count does not fit the segment structure of a preset"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class MeshFloorError(Exception):
    """Raised when a bisection would produce an element or step below its floor"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class KernelDomainError(Exception):
    """Raised when a kernel is evaluated on or inside its singular set"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class QuadratureContractError(Exception):
    """Raised when a point is routed to the wrong inner integration path"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class BlockIndexError(Exception):
    """Raised when a time block outside the lower triangle is requested"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class StaleProvenanceError(Exception):
    """Raised when a refinement provenance does not match the system meshes"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class SingularBlockError(Exception):
    """Raised when a diagonal block is singular to working precision"""

    def __init__(self, message, block_index: int | None = None):
        self.message = message
        self.block_index = block_index
        super().__init__(self.message)


class ConfigurationError(Exception):
    """Raised when a run configuration cannot be built"""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)
