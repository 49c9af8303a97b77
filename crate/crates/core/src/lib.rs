pub mod geometry;
pub mod image;
pub mod imgproc;
pub mod io;
pub mod marker;
pub mod par;
pub mod recon;
pub mod sim;
pub mod tracking;
