use thiserror::Error;

use crate::filtration::AtomId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tree construction: {0}")]
    Tree(String),
    #[error("condition A fails: {0}")]
    ConditionA(String),
    #[error("measure family: {0}")]
    Measures(String),
    #[error("measures are not equivalent: measure {measure} has probability {value} on leaf {leaf}")]
    Equivalence { measure: usize, leaf: usize, value: f64 },
    #[error("invalid mixture weights: {0}")]
    Weights(String),
    #[error("unknown atom {0}")]
    UnknownAtom(AtomId),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stopping level {level} out of range 0..={depth}")]
    StopLevel { level: usize, depth: usize },
    #[error("vectors are linearly dependent: vector {index} lies in the span of the preceding ones")]
    Singular { index: usize },
    #[error("target is not strictly inside the cone of the chosen basis: {0}")]
    ConeMembership(String),
    #[error("mixing weights violate the positivity constraint for dual index {l} (margin {margin:e})")]
    Ap4Violation { l: usize, margin: f64 },
    #[error("homogeneous system has only the trivial solution (rank {rank} = number of vectors)")]
    NoKernel { rank: usize },
    #[error("process is not regular: infeasible cells at {}", format_cells(.cells))]
    NotRegular {
        cells: Vec<(usize, usize)>,
        report: Box<crate::decomposition::RegularityReport>,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_cells(cells: &[(usize, usize)]) -> String {
    cells
        .iter()
        .map(|(level, parent)| format!("(level {level}, parent {parent})"))
        .collect::<Vec<_>>()
        .join(", ")
}
