//! Benchmarks live in `benches/`; run them with `cargo bench -p lowrank-bench`.
