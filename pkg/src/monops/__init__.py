"""monops: learning monotone operator networks and solving monotone inclusions.

A spectral penalty on the symmetrized Jacobian of the reflected operator makes
trained networks provably monotone, which a projected forward-backward-forward
(Tseng) solver then exploits to solve constrained inclusion problems such as
nonlinear (saturated-blur) image deconvolution.
"""

from .autodiff import Var, no_grad, param_gradient
from .fbf import (ArmijoConfig, BoxConstraint, FbfTrace, MonotoneInclusion,
                  NonFiniteIterateError, StepSearchError, armijo_step,
                  fbf_solve, invert_operator, project_box)
from .models import (NoiseModel, SaturatedBlurModel, SaturatedComposite,
                     SaturationParams, add_noise, apply_affine_approx,
                     apply_forward, apply_linear_approx,
                     generate_motion_kernel, saturate, saturate_deriv,
                     simulate_dataset)
from .network import ParameterVector, ResidualConvNet
from .operators import (AdjointKernelCompose, DifferentiableMap,
                        KernelConvMap, LinearMatrixMap, ReflectedMap,
                        ScaledIdentityMap)
from .restoration import (MetricsReport, RestorationSpec, SweepResult,
                          assemble_direct, assemble_least_squares, mae, psnr,
                          rho_sweep, solve_restoration, ssim)
from .spectral import (CertificateReport, PowerIterationError, ProbeConfig,
                       SpectralEstimate, lambda_min_sym_jacobian,
                       monotonicity_certificate, power_max_abs_eig)
from .tensorops import (DimensionError, conv2d_adjoint, conv2d_circular,
                        delta_kernel, kernel_is_normalized, normalize_kernel,
                        rot180)
from .training import (AdamState, TrainConfig, TrainHistory, TrainingPair,
                       adam_step, l1_loss, load_training_pairs, penalty,
                       sample_penal_point, train, train_linear_kernel)
from .tv import TvConfig, TvGradientMap, tv_gradient, tv_hessian_apply, tv_value

__version__ = "0.1.0"
