"""Deep Gaussian processes with soft constraints on their dynamics."""
from .constraints import ConstraintSpec, ThetaPosterior, default_grid
from .dgp import DgpModel, forward_with_derivative, kl_weights, sample_weights
from .features import KernelConfig, features, features_with_input_derivative, sample_spectral
from .inference import TrainConfig, build_model, elbo_estimate, predict, train
from .ode import TimeSeriesDataset, generate_dataset, get_scenario, integrate_rk4

__version__ = "0.1.0"
