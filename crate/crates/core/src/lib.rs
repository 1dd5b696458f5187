pub mod bake;
pub mod cli;
pub mod critic;
pub mod diffcore;
pub mod optim;
pub mod scene;
pub mod seeds;
pub mod texfield;
pub mod verify;
pub mod xattn;
