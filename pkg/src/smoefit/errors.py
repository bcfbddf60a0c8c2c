"""Exception types shared across the package."""


class SmoefitError(Exception):
    """Base class for all package-specific failures."""


class DegenerateGateError(SmoefitError):
    """Gate denominator fell below the numerical guard at some point.

    Carries the offending evaluation point and, when raised from a raster
    operation, the flat pixel index.
    """

    def __init__(self, point, pixel_index=None):
        self.point = (float(point[0]), float(point[1]))
        self.pixel_index = pixel_index
        where = f"x=({self.point[0]:.6g}, {self.point[1]:.6g})"
        if pixel_index is not None:
            where += f", pixel index {pixel_index}"
        super().__init__(f"gate denominator magnitude below 1e-12 at {where}")


class EmptyModelError(SmoefitError):
    """An operation would leave the model with no kernels."""


class AllBlocksFailedError(SmoefitError):
    """Every per-segment local optimization failed."""

    def __init__(self, causes):
        self.causes = list(causes)
        super().__init__(
            f"all {len(self.causes)} segment optimizations failed; "
            f"first cause: {self.causes[0][1]!r}" if self.causes else "no blocks to run"
        )


class ModelFileError(SmoefitError):
    """A model file could not be parsed; reports the failing line."""

    def __init__(self, path, line_number, reason):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")
