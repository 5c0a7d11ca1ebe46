pub mod elasticity;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod hash;
pub mod ifenn;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod nonlocal_ref;
pub mod optim;
pub mod pinn;
pub mod specimen;

pub use error::{Error, Result};
