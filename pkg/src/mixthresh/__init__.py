"""Mixed thresholds models: P(Y > y | b) = F(z'b + x'beta_j - delta_j(y))."""

from .families import GOMPERTZ, GUMBEL, LOGISTIC, NORMAL, DomainError, ResponseFamily, get_family
from .model import Covariate, Dataset, Measurement, ModelSpec, Observation, ParamLayout, Params, make_dataset
from .quadrature import QuadratureRule, ResourceError
from .thresholds import ThresholdsCoeffs, ThresholdsSpec, parse_basis

__version__ = "0.1.0"
