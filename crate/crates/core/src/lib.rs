//! Distribution-matched training set search.
//!
//! Given a pool of feature vectors grouped into identities and a target
//! feature set, the pool's identities are clustered with k-means, each
//! cluster is scored by its Fréchet distance to the target, and a training
//! set is drawn with cluster weights `softmax(-FID)`.
//!
//! * [`features`]: feature tables, identity manifests and file formats.
//! * [`fid`]: Gaussian summaries and the Fréchet distance.
//! * [`clustering`]: identity-averaged features and seeded k-means.
//! * [`search`]: cluster scoring, weighted sampling, manifests.
//! * [`synth`]: synthetic biased populations with known subgroups.
//! * [`eval`]: greedy-vs-random comparisons and cluster-count sweeps.

pub mod clustering;
pub mod eval;
pub mod features;
pub mod fid;
pub mod rng;
pub mod search;
pub mod synth;

pub use clustering::{ClusterError, Clustering, KMeansParams};
pub use features::{FeatureError, FeatureFormat, FeatureTable, IdentityIndex};
pub use fid::{fid, summarize, FidError, GaussianStats};
pub use search::{run_search, SearchError, SearchManifest, SearchParams, Strategy};
pub use synth::{PopulationSpec, SynthError};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Fid(#[from] FidError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl Error {
    /// True when the failure came from the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Features(e) => e.is_io(),
            Error::Cluster(ClusterError::Features(e))
            | Error::Search(SearchError::Cluster(ClusterError::Features(e)))
            | Error::Synth(SynthError::Features(e)) => e.is_io(),
            _ => false,
        }
    }
}
