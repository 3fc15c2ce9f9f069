pub mod autodiff;
pub mod geometry;
pub mod manifold;
pub mod spectral;
pub mod tensor;
pub mod data;
pub mod graph;
pub mod hfan;
pub mod hgcn;
pub mod csht;
pub mod metrics;
pub mod model;
pub mod train;
