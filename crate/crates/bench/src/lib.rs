//! Criterion benchmarks for qillum; see benches/.
