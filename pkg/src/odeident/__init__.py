"""Identification of ODE right-hand sides from noisy trajectory samples.

The main pipeline trains a per-timestep generator ensemble on Euler
residuals, distills its velocity estimates into a Lipschitz-regularized
interpolation network, and evaluates the learned field against the truth.
Comparison methods (smoothing splines, a single multistep network,
polynomial least squares, sparse regression) share the same data layout
and metrics.
"""

from .ode import (IntegratorConfig, IntegrationError, ProblemSpec,
                  RhsFunction, catalog_labels, catalog_lookup, integrate,
                  register_rhs)
from .data import (TrajectoryDataset, add_noise, build_generator_samples,
                   build_interp_samples, derive_seed, generate_dataset,
                   load_dataset, mean_range, save_dataset)
from .nn_core import (MlpModel, MlpSpec, TrainingError, fit, load_model,
                      mlp_forward, mlp_init, save_model)
from .generator import (GeneratorConfig, GeneratorEnsemble, load_ensemble,
                        predict_velocities, residual_noise_floor,
                        save_ensemble, train_generator)
from .interpolation import (InterpConfig, InterpolationModel,
                            estimate_lipschitz, load_interpolation,
                            save_interpolation, train_interpolation,
                            train_matched)
from .metrics import (EvaluationGrid, EvaluationReport, hoeffding_bound,
                      recovery_error, relative_mse, solution_error)
from .baselines import (FunctionLibrary, LibraryTerm, MultistepConfig,
                        elementary_library, multistep_train, polyfit,
                        polynomial_library, sindy_stlsq, splines_targets)
from .harness import ExperimentConfig, load_config, run_compare, run_generate, run_train

__version__ = "0.1.0"
