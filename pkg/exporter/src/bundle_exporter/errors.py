"""Exporter error categories."""


class ExporterError(Exception):
    code = 1


class ModelLoadError(ExporterError):
    """Backbone or segmenter model is not available locally."""

    code = 2


class UnreadableImageError(ExporterError):
    code = 3


class InvalidJobError(ExporterError):
    code = 4
