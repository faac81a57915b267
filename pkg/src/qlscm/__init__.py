"""Quantile-based latent spatial confounder models.

Site-wise linear quantile regression on spatio-temporal panels, aggregated
into an area-weighted spatial quantile partial effect (tau-QPE), with the
mean-based average causal effect (ACE) as a baseline, stationary-bootstrap
inference and the simulation designs used to check them.
"""
from .distributions import make_rng, derive_seed
from .stgrid import Grid, Site, PanelDataset, load_panel_csv, write_panel_csv, validate_panel, cell_areas
from .qreg import fit_quantile, fit_quantile_batch, fit_ols, pinball_loss, SingularDesignError
from .estimators import spatial_qpe, spatial_ace, spatial_effect, regional_effects, site_qpe, EstimationError
from .inference import BootstrapSpec, bootstrap_effect, zero_effect_verdicts, hill_estimator, hill_curve
from .gpsim import gen_case1, gen_case2, gen_case3, gen_example1, oracle_case3_qpe

__version__ = "0.1.0"
