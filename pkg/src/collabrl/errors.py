"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or unresolvable configuration (exit code 2 at the CLI)."""


class EnvironmentFailure(RuntimeError):
    """The host cannot provide something the run needs (exit code 3)."""


class BackendError(RuntimeError):
    """A completion backend failed after its retry budget."""


class FixtureMissError(BackendError):
    """A replay fixture has no entry for the requested key."""

    def __init__(self, role, digest, sample_index):
        self.role = role
        self.digest = digest
        self.sample_index = sample_index
        super().__init__(
            f"replay fixture has no completion for role={role!r} "
            f"prompt_digest={digest} sample_index={sample_index}"
        )


class RecordWriteError(OSError):
    """Writing training records failed part way through."""

    def __init__(self, written, cause):
        self.written = written
        super().__init__(f"record sink failed after {written} records: {cause}")
