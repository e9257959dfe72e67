//! Zone learning, correspondence gathering and transit-distribution fitting.

pub mod fit;
pub mod gather;
pub mod zones;

pub use fit::{
    build_histogram, connectivity_confidence, empirical_bounds, fit_gaussian, time_bounds,
    transit_distribution, update_window, GaussianFit, Histogram,
};
pub use gather::{filter_reliable, gather_correspondences, Gathered, TransitRange};
pub use zones::{assign_zone, learn_zones, learn_zones_from_stream};
