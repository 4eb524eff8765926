pub mod corpus;
pub mod dng;
pub mod eng;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod refiner;
pub mod retrieval;
pub mod section_id;
pub mod store;
pub mod vector;
