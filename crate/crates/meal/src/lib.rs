//! Meal-event detection from CGM alone.
//!
//! Meal times become soft trapezoid labels; a dilated CNN with a
//! bidirectional LSTM scores fixed-length windows; overlapping window scores
//! are thresholded and merged by ratio voting into a binary timeline, which
//! is evaluated at the event level.

pub mod detector;
mod error;
pub mod events;
pub mod labels;
pub mod sweep;
pub mod train;
pub mod vote;

pub use detector::{normalize_series, Detector, DetectorConfig};
pub use error::{MealError, Result};
pub use events::{event_metrics, EventMetrics, EventSet};
pub use labels::{trapezoid_labels, SmoothedLabels};
pub use sweep::{sweep, ScoredTimeline, SweepResult};
pub use train::{split_subjects, subjects_from_cohort, train_detector, MealSubject};
pub use vote::{reconstruct, WindowProbs};
