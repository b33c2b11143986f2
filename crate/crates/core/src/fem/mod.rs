pub mod assemble;
pub mod project;
pub mod quadrature;
pub mod sigma;
pub mod space;
pub mod sparse;
