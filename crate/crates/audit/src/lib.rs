pub mod http;
pub mod signature;
pub mod wire;
pub mod persist;
pub mod corpus;
pub mod extract;
pub mod annotations;
pub mod config;
pub mod backends;
pub mod manifest;
pub mod pool;
pub mod cli;
