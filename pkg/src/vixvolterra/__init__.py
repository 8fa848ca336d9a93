"""VIX option pricing, hedging and calibration in Gaussian-Volterra and
affine-modulated Volterra volatility models."""

from .black import black_implied_vol
from .calibration import (CalibrationProblem, CalibrationResult, SmilePoint,
                          calibrate, implied_smile)
from .curves import ForwardVarianceCurve
from .hedging import (HedgeReport, cir_two_swap_hedge, frechet_delta_mc,
                      simulate_toy_delta_hedge, volterra_single_swap_hedge)
from .kernels import (CovarianceSpec, PowerLawKernel, ZeroKernel,
                      covariance_matrix, cumulative_energy, hyp2f1)
from .lognormal import (DiscretizationGrid, GaussianLaw, McConfig, McPrice,
                        ToyModel, VixPayoff, build_law, control_variate_price,
                        convergence_study, price_vix_option_mc,
                        toy_call_price, toy_hedge_ratio)
from .marketdata import (MarketConventions, ModelBundle, VixOptionQuote,
                         load_model_config, load_quotes, load_result,
                         persist_result)
from .modulated import (CharacteristicExponent, CirModulator,
                        LevyOuModulator, ModulatedModel, PsiPhiSolution,
                        approximate_price_fourier, characteristic_exponent,
                        conditional_law, laplace_transform,
                        price_vix_option_mc_modulated, simulate_modulator,
                        solve_psi_phi)

__version__ = "0.1.0"
