"""Exception types raised across the package.

Everything derives from :class:`SolarisError` so callers (and the CLI) can
catch the whole family at once.
"""

from __future__ import annotations


class SolarisError(Exception):
    pass


# geometry


class GeometryError(SolarisError, ValueError):
    pass


class EmptyExtent(GeometryError):
    pass


class ResolutionMismatch(GeometryError):
    pass


class InvalidGeometry(GeometryError):
    pass


class CrsMismatch(GeometryError):
    pass


# WMS / HTTP


class WmsError(SolarisError):
    pass


class XmlMalformed(WmsError):
    pass


class NotACapabilitiesDocument(WmsError):
    pass


class NoLayers(WmsError):
    pass


class LayerNotFound(WmsError):
    pass


class FormatUnsupported(WmsError):
    pass


class CrsUnsupported(WmsError):
    pass


class DimensionOutOfRange(WmsError):
    pass


class HttpError(WmsError):
    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(f"HTTP {status}" + (f": {message}" if message else ""))


class RetriesExceeded(WmsError):
    pass


class Exhausted(SolarisError):
    """The monthly request budget would be exceeded."""


class LedgerIo(SolarisError):
    pass


# raster


class RasterError(SolarisError):
    pass


class DecodeError(RasterError):
    pass


class UnsupportedDepth(RasterError):
    pass


class DimensionMismatch(RasterError, ValueError):
    pass


class FactorMismatch(RasterError, ValueError):
    pass


# ingestion


class ParseError(SolarisError):
    pass


class MissingId(ParseError):
    pass


class UnsupportedGeometry(ParseError):
    pass


class EmptyInput(SolarisError):
    pass


class ConfigError(SolarisError):
    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}" if field else reason)
