//! Event-aligned statistics and fits: recovery curves, QP density
//! extraction, MKID conditional matrices and TLS–radiation correlation.

mod align;
mod coincidence;
mod fit;
mod nqp;
mod tls;

pub use align::{align_and_tally, AlignedHistogram};
pub use coincidence::{conditional_matrix, ConditionalMatrix};
pub use fit::{fit_exp_recovery, fit_points, fit_points_reweighted, Direction, FitPoint, RecoveryFit};
pub use nqp::{extract_nqp_trace, fit_nqp_peak, NqpExtraction};
pub use tls::{
    correlation_report, detect_tls_scrambles, CorrelationOptions, CorrelationReport, HistogramBin, ScrambleEvent,
};
