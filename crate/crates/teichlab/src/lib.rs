pub mod hyperbolic;
pub mod group;
pub mod ps;
pub mod bm;
pub mod traintrack;
pub mod lab;
