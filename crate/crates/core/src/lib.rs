//! Rigid point-cloud registration as denoising diffusion on SE(3).
//!
//! The forward process ([`forward`]) drags a ground-truth pose toward the
//! identity while injecting tangent-space noise. The reverse process
//! ([`reverse`]) starts at the identity and repeatedly asks a registration
//! model ([`surrogate`]) for the remaining relative transform, blending its
//! answer with the current pose using posterior weights from [`schedule`].

pub mod bench;
pub mod data;
pub mod error;
pub mod forward;
pub mod kdtree;
pub mod lie;
pub mod metrics;
pub mod reverse;
pub mod schedule;
pub mod seeding;
pub mod surrogate;

pub use data::{PointCloud, RegistrationPair};
pub use error::{Error, Result};
pub use lie::{RigidTransform, Rotation, TangentMap, Twist};
pub use schedule::{make_schedule, Schedule, ScheduleKind};
pub use surrogate::{RegistrationResult, Surrogate, SurrogateKind};
