pub mod bnb;
pub mod linalg;
pub mod model;
pub mod relax;
pub mod separation;
