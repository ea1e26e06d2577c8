pub mod eval;
pub mod ingest_via;
pub mod preprocess;
pub mod synth;
pub mod train;
