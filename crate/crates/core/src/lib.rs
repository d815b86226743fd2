//! Ability-based assessment of AI systems and humans.
//!
//! * [`battery`]: test batteries grouped by the four abilities (input, output,
//!   mastery, creation).
//! * [`adapters`]: HTTP, subprocess and manual-transcript channels to a subject.
//! * [`administration`]: sessions and the file-backed [`Store`].
//! * [`scoring`]: item scores, ability scores and the weighted IQ.
//! * [`grading`]: intelligence grades 0 to 6 from a capability profile.
//! * [`reporting`]: rank tables, trend assessments and CSV export.

pub mod adapters;
pub mod administration;
pub mod battery;
pub mod canonical;
pub mod clock;
pub mod grading;
pub mod reporting;
pub mod scoring;

pub use administration::Store;
