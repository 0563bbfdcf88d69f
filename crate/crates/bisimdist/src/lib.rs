//! Behavioural pseudometrics for labelled probabilistic automata.
//!
//! The distance between two states is the least fixed point of a one-step
//! operator built from the Kantorovich lifting (over probabilistic choices)
//! and the Hausdorff lifting (over nondeterministic ones). The crate
//! computes it by simple policy iteration over coupling structures, with a
//! value-iteration baseline, an explicit-game brute-force oracle for tiny
//! instances, and a reachability-bound checker relating the distance to
//! optimal scheduler probabilities.

pub mod automaton;
pub mod bench;
pub mod bisim;
pub mod coupling;
pub mod lifting;
pub mod modelcheck;
pub mod policy_iter;
pub mod selfclosed;
pub mod ssg;
pub mod transport;
pub mod value_iter;

pub use automaton::{generate, parse, serialize, Automaton, Dist, GenParams};
pub use lifting::{Counters, DistMatrix, SetCoupling};
pub use policy_iter::{spi_discounted, spi_undiscounted, SpiError, SpiTrace};
pub use transport::{Coupling, CostView};
pub use value_iter::{vi_run, Budget, ViTrace};

/// Default comparison tolerance of the solvers.
pub const DEFAULT_EPS: f64 = 1e-6;
