"""Exception types shared across the package."""


class ScatlabError(Exception):
    """Base class for all scatlab errors."""


class GridResolutionError(ScatlabError):
    """Requested state cannot be represented on the grid (too narrow / too fast)."""


class GridMismatchError(ScatlabError):
    """Two fields live on incompatible grids."""


class StabilityError(ScatlabError):
    """Propagation configuration violates the stability/accuracy bound."""


class WrapGuardViolation(ScatlabError):
    """Probability mass came too close to the periodic boundary."""


class NotConvergedError(ScatlabError):
    """An asymptotic (finite-time / finite-R) limit did not reach its Cauchy criterion."""


class GeometryError(ScatlabError):
    """A detection sphere or region does not fit inside the grid."""


class NodeProximityError(ScatlabError):
    """Velocity requested at a point where |psi| is below the node floor."""


class ExcessNodeAborts(ScatlabError):
    """Too many trajectories aborted near wave-function nodes."""


class OffShellError(ScatlabError):
    """On-shell amplitude requested at off-shell arguments."""


class MatchRadiusError(ScatlabError):
    """Partial-wave matching radius lies inside the potential's support."""


class SupportError(ScatlabError):
    """Momentum amplitude violates the required half-space support condition."""


class UnsupportedVariantError(ScatlabError):
    """Operation not available for this potential variant."""


class WindowTooSmall(ScatlabError):
    """Impact-parameter window truncates a non-negligible part of the integrand."""


class SchemaMismatch(ScatlabError):
    """Two reports cannot be compared (different patch partitions / columns)."""


class ConfigError(ScatlabError):
    """Invalid or incomplete experiment configuration."""
