//! Network manipulation by inexact alternating minimization.
//!
//! Agents choose among organizations through discrete-choice probabilities
//! and organizations choose starting distributions on a Markov interaction
//! network. The crate implements both blocks, the exact and inexact
//! alternating schemes over them, the convergence constants of the scheme,
//! and brute-force oracles to check all of it on concrete instances.
//!
//! ```
//! use netmanip::altmin::{constants, run_inexact};
//! use netmanip::synth::{random_scenario, SynthConfig};
//!
//! let s = random_scenario(&SynthConfig { lambda: 0.8, ..Default::default() })?
//!     .with_deltas(1e-3, 1e-3)?;
//! let c = constants(&s)?;
//! let trace = run_inexact(&s)?;
//! assert!(trace.bound_violations().is_empty());
//! println!("lambda {} after {} sweeps", c.lambda, trace.last().iter);
//! # Ok::<(), netmanip::Error>(())
//! ```

pub mod agents;
pub mod altmin;
pub mod choice;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod net;
pub mod oracle;
pub mod orgs;
pub mod par;
pub mod synth;

pub use error::{Error, Result};
