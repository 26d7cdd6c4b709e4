//! Time-varying undirected weighted graphs.

mod connectivity;
mod precompact;
mod schedule;
mod signal;

pub use connectivity::{
    algebraic_connectivity, check_joint_connectivity, is_connected, lambda2_cut_bound, smallest_connected_window,
    window_report, ConnectivityReport, WindowReport,
};
pub use precompact::{validate_precompactness, Certificate, PrecompactConfig, PrecompactnessReport};
pub use schedule::{Profile, WeightSchedule, WeightSegment};
pub use signal::{augmented_laplacian, laplacian_from_weights, GraphSignal, Periodicity};
