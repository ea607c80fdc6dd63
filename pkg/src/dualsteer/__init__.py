"""Information geometry of softmax representations and dual steering."""

from .concepts import (
    ConceptScheme,
    FactorizableModelSpec,
    FactorizedView,
    factorization_residual,
    factorize,
    random_factorizable_spec,
    synthesize_factorizable,
)
from .geometry import (
    conjugate,
    dual_map,
    hessian,
    inverse_dual_map,
    kl,
    log_normalizer,
    softmax_probs,
)
from .interpolation import InterpolationPath, e_interpolate, m_interpolate
from .metrics import BinnedSummary, StepMetrics, bin_and_summarize
from .model import SoftmaxModel, load_model, make_model, restrict_top_k, save_model
from .probes import LinearProbe, dual_mean_difference, primal_mean_difference
from .steering import SteeringConfig, SteeringPath, dual_projection_target, dual_steer, euclidean_steer

__version__ = "0.1.0"

__all__ = [
    "bin_and_summarize",
    "BinnedSummary",
    "ConceptScheme",
    "conjugate",
    "dual_map",
    "dual_mean_difference",
    "dual_projection_target",
    "dual_steer",
    "e_interpolate",
    "euclidean_steer",
    "FactorizableModelSpec",
    "factorization_residual",
    "factorize",
    "FactorizedView",
    "hessian",
    "InterpolationPath",
    "inverse_dual_map",
    "kl",
    "LinearProbe",
    "load_model",
    "log_normalizer",
    "m_interpolate",
    "make_model",
    "primal_mean_difference",
    "random_factorizable_spec",
    "restrict_top_k",
    "save_model",
    "softmax_probs",
    "SoftmaxModel",
    "SteeringConfig",
    "SteeringPath",
    "StepMetrics",
    "synthesize_factorizable",
]
