pub mod fft;
pub mod linalg;
pub mod special;
