pub mod numcore;
pub mod data;
pub mod embedding;
pub mod models;
pub mod seed;
pub mod augment;
pub mod fi_encoder;
pub mod ssl_loss;
pub mod metrics;
pub mod trainer;
