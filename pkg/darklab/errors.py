"""Exception hierarchy shared by the library and the command line."""


class DarklabError(Exception):
    """Base class for every error raised by darklab.

    ``exit_code`` is what the CLI returns when the error escapes a command.
    """

    exit_code = 70


class ConfigurationError(DarklabError):
    """An environment variable holds a value that cannot be parsed."""


class SpecFormatError(DarklabError):
    """A system, coupling or target file is malformed."""

    exit_code = 64


class DimensionMismatch(DarklabError):
    """Array shapes disagree with the declared dimensions."""

    exit_code = 65


class CertificateFormatError(DarklabError):
    """A certificate file is malformed."""

    exit_code = 66


class KernelError(DarklabError):
    """A memory kernel cannot be represented as a function of time."""

    exit_code = 64


class DegenerateSubspace(DarklabError):
    """The symplectic form restricted to the subspace is degenerate."""


class OddDimension(DarklabError):
    """A subspace that must carry canonical pairs has odd dimension."""


class NotSymplectic(DarklabError):
    """A matrix fails S J S^T = J within tolerance."""


class NotInvariant(DarklabError):
    """A subspace is not invariant under the required operator."""


class NonSymmetricTarget(DarklabError):
    """The requested dark Hamiltonian matrix is not symmetric."""

    exit_code = 65


class InsufficientDarkCapacity(DarklabError):
    """The coupling leaves too little room for the requested dark mode."""

    exit_code = 3


class MethodKernelMismatch(DarklabError):
    """The integrator cannot handle the kernels of the system."""

    exit_code = 4


class StepTooLarge(DarklabError):
    """The time step is not positive, exceeds the horizon or does not divide it."""

    exit_code = 65


class UsageError(DarklabError):
    """Command-line arguments that cannot be parsed."""

    exit_code = 64
