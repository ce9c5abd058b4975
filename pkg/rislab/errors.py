from .labels import EXIT_NUMERICAL, EXIT_PROVENANCE, EXIT_VALIDATION


class LabError(Exception):
    exit_code = 1


# ============================================================
# VALIDATION (exit 2)
# ============================================================

class ValidationFailure(LabError):
    exit_code = EXIT_VALIDATION


class DomainError(ValidationFailure, ValueError):
    """Argument outside the domain of a numeric operation."""


class CoincidentPointsError(DomainError):
    pass


class ShapeMismatchError(ValidationFailure, ValueError):
    pass


class InfeasibleRequestError(ValidationFailure):
    pass


class PlacementError(ValidationFailure):
    pass


class MissingArtifactError(ValidationFailure):
    pass


class SceneFormatError(ValidationFailure):
    def __init__(self, message: str, line: int | None = None, section: str | None = None):
        self.line = line
        self.section = section
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class DatasetFormatError(ValidationFailure):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class ArtifactFormatError(ValidationFailure):
    """Checkpoint or codebook file that cannot be read back."""


# ============================================================
# NUMERICAL (exit 3)
# ============================================================

class NumericalFailure(LabError):
    exit_code = EXIT_NUMERICAL


class SingularSystemError(NumericalFailure):
    def __init__(self, frequency: float, cond: float):
        self.frequency = frequency
        self.cond = cond
        super().__init__(f"interaction matrix is singular at f={frequency!r} (cond~{cond:.3e})")


class NonFiniteError(NumericalFailure):
    pass


class CalibrationGapError(NumericalFailure):
    def __init__(self, gaps: list[tuple[int, ...]]):
        self.gaps = gaps
        shown = ", ".join(str(g) for g in gaps[:5])
        more = f" (+{len(gaps) - 5} more)" if len(gaps) > 5 else ""
        super().__init__(f"calibration left {len(gaps)} bucket(s) without an entry: {shown}{more}")


# ============================================================
# PROVENANCE (exit 4)
# ============================================================

class ProvenanceError(LabError):
    exit_code = EXIT_PROVENANCE
