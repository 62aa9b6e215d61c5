"""Exception types. Each carries a short machine-readable ``code``."""


class GraspFieldError(Exception):
    code = "Error"


class BehindCamera(GraspFieldError):
    code = "BehindCamera"


class OutOfImage(GraspFieldError):
    code = "OutOfImage"


class DegenerateRange(GraspFieldError):
    code = "DegenerateRange"


class JointLimit(GraspFieldError):
    code = "JointLimit"


class GraspInfeasible(GraspFieldError):
    code = "GraspInfeasible"


class ShapeMismatch(GraspFieldError):
    code = "ShapeMismatch"


class EmptyVolume(GraspFieldError):
    code = "EmptyVolume"


class DimMismatch(GraspFieldError):
    code = "DimMismatch"


class MaskMismatch(GraspFieldError):
    code = "MaskMismatch"


class NoObjectPixels(GraspFieldError):
    code = "NoObjectPixels"


class DivergedTraining(GraspFieldError):
    code = "DivergedTraining"


class EmptyMesh(GraspFieldError):
    code = "EmptyMesh"


class EmptyCloud(GraspFieldError):
    code = "EmptyCloud"


class ConfigError(GraspFieldError):
    code = "ConfigError"


class CheckpointError(GraspFieldError):
    code = "CheckpointError"
