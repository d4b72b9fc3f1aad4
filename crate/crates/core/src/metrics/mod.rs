//! Evaluation quantities: histogram KL divergence, overlap, surface distance,
//! volume ratio, robust growth slopes and the paired growth-rate test.
//!
//! Every function here is pure and safe to call concurrently.

mod growth;
mod histogram;
mod overlap;
mod surface;

pub use growth::{growth_rate_ttest, theil_sen_growth, LongitudinalSeries, SeriesSource, TTestResult};
pub use histogram::{kl_divergence, tumor_histogram, IntensityHistogram, DEFAULT_BINS, DEFAULT_KL_EPS};
pub use overlap::{dsc, mask_volume_cc, volume_ratio, ConfusionCounts};
pub use surface::{hd95, percentile_linear, surface_points, SurfacePointSet};
