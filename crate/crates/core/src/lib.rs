pub mod allocation;
pub mod error;
pub mod harness;
pub mod linear;
pub mod mpc;
pub mod nfd;
pub mod plant;
pub mod qp;
