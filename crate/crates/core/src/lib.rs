pub(crate) mod binfmt;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod net;
pub mod precision;
pub mod refine;
pub mod fmaps;
pub mod geodesic;
pub mod shot;
pub mod spectral;
pub mod train;

pub use nalgebra;
pub use error::{Error, ErrorKind, Result};
pub use mesh::TriMesh;
pub use net::Network;
pub use precision::Precision;
pub use spectral::SpectralBasis;
