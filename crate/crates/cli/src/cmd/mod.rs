pub mod audit;
pub mod data;
pub mod model;
pub mod psa;
pub mod serve;
