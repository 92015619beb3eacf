//! Words, the shuffle product and the truncated tensor algebra `T^{≤K}(ℝ^e)`.
//!
//! Signature coordinates are indexed by words over `{1, …, e}`. A truncated
//! tensor stores one dense block per level; the shuffle product turns products
//! of coordinates of a group-like tensor into linear combinations of
//! coordinates.

mod tensor;
mod word;

pub(crate) use tensor::{exp_into, mul_into, normalize_in_place};
pub use tensor::{tensor_dim, TruncatedTensor};
pub use word::{all_words, shuffle, shuffle_lin, LinearFunctional, Word};

/// Default radius of the ball used by robust normalization.
pub const DEFAULT_NORMALIZE_RADIUS: f64 = 4.0;
