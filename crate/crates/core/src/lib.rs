pub mod bann;
pub mod bounds;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod lasso;
pub mod trainer;
pub mod tree;
