//! Separation metrics, the KL NMF baseline and the Monte-Carlo flux sweep.

mod assignment;
mod nmf;
mod sad;
mod svg;
mod sweep;

pub use assignment::min_cost_assignment;
pub use nmf::{beta_nmf_kl, beta_nmf_kl_from, kl_divergence, NmfOutput};
pub use sad::{angle_matrix, sad, sad_with_matching};
pub use svg::sad_vs_flux_svg;
pub use sweep::{run_flux_sweep, CellResult, Method, MethodSummary, SweepResult, SweepSpec};
