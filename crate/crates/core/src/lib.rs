pub mod flsim;
pub mod hssp;
pub mod lattice;
pub mod linalg;
pub mod pipeline;
