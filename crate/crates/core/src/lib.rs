pub mod attack;
pub mod harness;
pub mod models;
pub mod nn;
pub mod par;
pub mod protocol;
pub mod puf;
pub mod split;
pub mod transport;
