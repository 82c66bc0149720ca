//! Symbolic index formulas: grammar, enumeration, evaluation and
//! equivalence partitioning.

mod enumerate;
mod expr;
mod partition;
mod signature;

pub use enumerate::{atoms, count_by_length, count_formulas, enumerate_formulas, FormulaEnumerator};
pub use expr::{
    parse_formula, BinaryOp, Formula, FormulaIndex, Point, Token, UnaryOp, Var, BINARY_OPS,
    CONSTANTS, UNARY_OPS, VARIABLES,
};
pub use partition::{
    partition, partition_fast, ranks_of, read_classes, write_classes, FormulaClass, Partition,
};
pub use signature::{
    dense_ranks, draw_samples, eval_on_samples, signature_of, SampleDomain, SamplePoint,
    Signature, StatisticsLaw, TIE_TOLERANCE,
};
