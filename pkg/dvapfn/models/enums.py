"""
Enumerations shared by configuration schemas and services.
"""
import enum


class KernelKind(str, enum.Enum):
    """GP prior kernel families."""
    RBF_FIXED = "rbf_fixed"
    RBF_SAMPLED = "rbf_sampled"
    SUM_OF_TWO_RBF = "sum_of_two_rbf"
    LINEAR_PERIODIC = "linear_periodic"


class InputNormalization(str, enum.Enum):
    UNIFORM01 = "uniform01"
    ZSCORE = "zscore"


class RobustnessPrior(str, enum.Enum):
    """Smooth / wiggly / mixed function priors and their per-dataset mixture."""
    SMOOTH = "smooth"
    WIGGLY = "wiggly"
    MIXED = "mixed"
    ALL = "all"


class AttentionKind(str, enum.Enum):
    """Attention rules."""
    VA = "VA"
    DVA = "DVA"
    KERNEL_RBF = "KernelRBF"
    LINEAR_VA = "LinearVA"
    LINEAR_DVA = "LinearDVA"

    @property
    def decoupled(self) -> bool:
        """Queries/keys from inputs only, values from targets only."""
        return self in (AttentionKind.DVA, AttentionKind.KERNEL_RBF, AttentionKind.LINEAR_DVA)


class EncoderKind(str, enum.Enum):
    LINEAR = "linear"
    MLP2 = "mlp2"
    BROADCAST = "broadcast"


class HeadKind(str, enum.Enum):
    MLP = "mlp"
    LINEAR = "linear"
    BROADCAST = "broadcast"


class BackboneKind(str, enum.Enum):
    TRANSFORMER = "transformer"
    CNN = "cnn"


class FilterKind(str, enum.Enum):
    """Post-hoc context filters."""
    KNN = "knn"
    EXPONENTIAL = "exponential"


class EvaluationSuite(str, enum.Enum):
    PRIOR = "prior"
    POWERFLOW = "powerflow"
    ROSENBROCK = "rosenbrock"
