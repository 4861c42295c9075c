//! Discrete signaling for the downlink broadcast channel with heterogeneous
//! blocklengths, decoded by treating interference as noise.
//!
//! The transmitter superimposes Gray-labeled QAM constellations so that every
//! sub-block of the frame is itself a regular QAM, and each receiver decodes
//! its own codeword with single-user decoding. The crate covers:
//!
//! - [`constellation`]: building, scaling and superimposing labeled QAM.
//! - [`scheme`]: sub-block layout, modulation-order feasibility, power
//!   assignment, bit mapping and frame synthesis.
//! - [`rate`]: mutual information and dispersion estimation, second-order
//!   rates and Gaussian/shell benchmarks.
//! - [`design`]: exhaustive search over feasible modulation orders.
//! - [`link`]: channel simulation, LLR demapping and empirical checks.
//!
//! ```
//! use tinbc::scheme::{plan, OrderMatrix, SystemSpec};
//!
//! let spec = SystemSpec::from_snr_db(1.0, &[(128, 1e-6, 18.0), (256, 1e-4, 5.0)]);
//! let orders = OrderMatrix::from_flat(2, &[2, 4, 4]).unwrap();
//! let plan = plan(&spec, &orders).unwrap();
//! assert_eq!(plan.codeword_lengths, vec![256, 1024]);
//! ```

pub mod constellation;
pub mod design;
pub mod link;
pub mod rate;
pub mod scheme;
