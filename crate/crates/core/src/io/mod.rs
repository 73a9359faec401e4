pub mod dataset;
pub mod svg;
pub mod table;
