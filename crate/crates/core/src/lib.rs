//! Cardinality estimation for Euclidean range queries over high-dimensional
//! vectors, built on an E2LSH partition, a Hamming-neighbor lookup table and
//! adaptive progressive sampling.

pub mod bench;
pub mod bundle;
mod codec;
pub mod distance;
pub mod error;
pub mod io;
pub mod lsh;
pub mod neighbors;
pub mod pq;
pub mod prober;
pub mod types;

pub use bundle::{BuildConfig, DistanceSource, IndexBundle};
pub use distance::{hamming_distance, squared_l2_distance};
pub use error::{Error, Result};
pub use io::QueryRecord;
pub use lsh::{HashCode, LshIndex, LshParams};
pub use neighbors::NeighborTable;
pub use pq::{PqIndex, PqParams};
pub use prober::{AdcDistance, ExactDistance, PointDistance, Prober};
pub use types::{Dataset, DistanceMode, Estimate, ProberConfig, RangeQuery, Termination};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    mod partitioning {}
    #[doc = include_str!("../../../book/src/neighbors.md")]
    mod neighbors {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/updates.md")]
    mod updates {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
