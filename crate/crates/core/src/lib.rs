pub mod tensor;
pub mod graph;
pub mod interp;
pub mod vectorize;
pub mod autodiff;
pub mod apps;
pub mod models;
pub mod gen;
