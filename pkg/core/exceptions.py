from typing import Optional


class SplatException(Exception):
    """Base exception for the splatting pipeline"""
    pass

class ConfigurationException(SplatException):
    """Exception in configuration"""
    pass

class UsageException(SplatException):
    """Exception in command line usage"""
    pass

class IngestException(SplatException):
    """Exception while reading reconstructions, images or masks"""
    pass

class UnsupportedCameraModelException(IngestException):
    """Camera model other than pinhole / simple radial"""
    pass

class InitializationException(SplatException):
    """Exception while building the initial splat set"""
    pass

class FormatException(SplatException):
    """Malformed or truncated file"""

    def __init__(self, message: str, byte_offset: Optional[int] = None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset

class CheckpointException(SplatException):
    """Exception while saving or restoring a checkpoint"""
    pass

class ParameterCorruptionException(SplatException):
    """Non-finite raw splat parameter"""
    pass

class RenderException(SplatException):
    """Exception during rasterization"""

    def __init__(self, message: str, splat_index: Optional[int] = None):
        if splat_index is not None:
            message = f"{message} (splat {splat_index})"
        super().__init__(message)
        self.splat_index = splat_index

class ContractException(SplatException):
    """Buffer shapes do not match"""
    pass

class NumericalException(SplatException):
    """Non-finite loss during optimization"""

    def __init__(self, message: str, snapshot_path: Optional[str] = None):
        if snapshot_path:
            message = f"{message} (diagnostics: {snapshot_path})"
        super().__init__(message)
        self.snapshot_path = snapshot_path

class ResourceException(SplatException):
    """Requested work exceeds a configured resource budget"""
    pass

class UndefinedMetricException(SplatException):
    """Metric undefined for the given inputs"""
    pass
