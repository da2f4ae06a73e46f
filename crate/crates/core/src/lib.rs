pub mod extraction;
pub mod dataset;
pub mod evaluation;
pub mod gateway;
pub mod maintenance;
pub mod prefstore;
pub mod retrieval;
pub mod selftest;
pub mod taxonomy;
