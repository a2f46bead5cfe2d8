//! Independent reference implementations for `wsbo` and the suites and
//! experiments built on them.

pub mod experiments;
pub mod oracle;
pub mod suites;

pub use suites::Check;

/// Oracle and property suites that finish in a few minutes.
pub fn oracle_suites() -> Vec<Check> {
    vec![
        suites::gp_oracle(60, 1),
        suites::kg_oracle(50, 1_000_000, 10, 100_000, 2),
        suites::gradient_oracle(10, 3),
        suites::invariants(),
    ]
}
