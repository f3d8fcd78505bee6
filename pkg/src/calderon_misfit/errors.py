"""Exception types shared across the package.

Every operation that can reject its input raises one of these named
errors; generic ValueError/RuntimeError never escape the public API.
"""


class CalderonError(Exception):
    """Base class for all package errors."""


# -- geometry -----------------------------------------------------------

class GeometryError(CalderonError):
    """Base class for geometry construction/validation failures."""


class NonMonotoneHeights(GeometryError):
    pass


class D0NotAboveSigma(GeometryError):
    pass


class FlatPortionTooSmall(GeometryError):
    pass


class IncommensurateGeometry(GeometryError):
    pass


class DegenerateCell(GeometryError):
    pass


class RegionTouchesBoundary(GeometryError):
    pass


# -- conductivity -------------------------------------------------------

class ConductivityError(CalderonError):
    pass


class IndexOutOfRange(ConductivityError):
    pass


class IncompatibleFields(ConductivityError):
    pass


# -- kernels ------------------------------------------------------------

class KernelError(CalderonError):
    pass


class DimensionTooSmall(KernelError):
    pass


class CoincidentPoints(KernelError):
    pass


class OnInterface(KernelError):
    pass


class NotPositiveDefinite(KernelError):
    pass


class AsymmetricInput(KernelError):
    pass


class ProbeTooCloseToSingularity(KernelError):
    pass


# -- log-convexity calculus ---------------------------------------------

class SmallnessError(CalderonError):
    pass


class NonPositiveInput(SmallnessError):
    pass


class InvalidExponentForZeroIter(SmallnessError):
    pass


class OutOfRange(SmallnessError):
    pass


# -- finite elements ----------------------------------------------------

class FemError(CalderonError):
    pass


class SingularSystem(FemError):
    pass


class SolveFailure(FemError):
    pass


class PoleTooCloseToInterface(FemError):
    pass


# -- misfit functionals --------------------------------------------------

class MisfitError(CalderonError):
    pass


class MismatchedMesh(MisfitError):
    pass


class PoleInsideRegion(MisfitError):
    pass


class DataNotSupportedOnSigma(MisfitError):
    pass


class PowerIterationStall(MisfitError):
    pass


# -- experiments ---------------------------------------------------------

class ExperimentError(CalderonError):
    pass


class SamplerExhausted(ExperimentError):
    pass


class ZeroPerturbation(ExperimentError):
    pass


class ChainPointOutsideMesh(ExperimentError):
    pass


class RadiiBelowResolution(ExperimentError):
    pass


class LineSearchFailure(ExperimentError):
    pass


# -- configuration / CLI --------------------------------------------------

class ConfigError(CalderonError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass
