//! Supermartingales relative to finite families of equivalent measures on
//! atomic filtration trees.
//!
//! The crate covers the whole pipeline on a finite tree:
//!
//! * [`filtration`]: leveled atom partitions and the structural checks on them,
//! * [`measures`]: a family of equivalent measures stored on leaf atoms,
//! * [`conditional`]: conditional expectations under single measures, mixtures
//!   and the upper envelope over the family,
//! * [`process`]: adapted processes, (super)martingale classification, stopping,
//! * [`cone`]: nonnegative and strictly positive solutions of moment systems
//!   `sum_j a_j x_j = a_0`,
//! * [`decomposition`]: regularity testing and the optional Doob decomposition,
//! * [`gzero`]: normalized densities and the local regular supermartingales
//!   generated from them,
//! * [`harness`]: the lemma/theorem verification report used by the CLI.
//!
//! Positions of atoms are 0-based everywhere in the API and in JSON. Human
//! readable tables print them 1-based (`A^n_s`).

pub mod conditional;
pub mod cone;
pub mod decomposition;
mod error;
pub mod exec;
pub mod filtration;
pub mod fixtures;
pub mod gzero;
pub mod harness;
pub mod instance;
mod lp;
pub mod measures;
pub mod process;
mod tolerance;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tolerance::Tolerances;
