//! Spectral low-pass filtering on positive-graph Laplacians, exact and
//! Lanczos-approximated.

mod eigen;
mod filter;
mod lanczos;

pub use eigen::{eigh, eigh_matrix, eigh_tridiagonal, EigenPair};
pub use filter::{
    apply_spectral_filter, lp_filter_exact, sigmoid, sigmoid_response_domega, Backend, FilterMode, FilterSpec,
    DEFAULT_STEEPNESS,
};
pub use lanczos::{lanczos_basis, lp_filter_lanczos, LanczosBasis, SymmetricOperator};
