pub mod analyze;
pub mod gen;
pub mod prune;
pub mod skip_sweep;
pub mod trace_analyze;
pub mod trace_dump;
