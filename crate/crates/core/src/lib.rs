//! Quasisymmetric uniformization of trivalent metric trees onto the
//! continuum self-similar tree (CSST).
//!
//! The crate is split along the construction:
//!
//! * [`tree`] holds finite simplicial metric trees, arcs, heights and
//!   decompositions by cut sets.
//! * [`csst`] is the exact model of the CSST: words, tiles, branch points,
//!   the intrinsic metric and the finite trees `J_n`.
//! * [`quasivisual`] checks quasi-visual and visual conditions on tile
//!   sequences and fits distortion functions.
//! * [`subdivision`] builds the height-threshold subdivisions of a tree.
//! * [`homeo`] builds tile homeomorphisms and refines them level by level.
//! * [`generators`] produces model trees and Brownian CRT samples.
//!
//! Data-parallel sweeps run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Results do not
//! depend on the thread count.

pub mod csst;
pub mod dyadic;
pub mod generators;
pub mod homeo;
pub mod io;
pub mod quasivisual;
pub mod subdivision;
pub mod tree;

#[doc(hidden)]
pub mod par;

/// Exact rational numbers used for lengths, heights and thresholds.
pub type Rational = num::rational::Ratio<i128>;

pub use csst::{apply_word, build_jn, tile_info, Anchor, CsstPoint, JnModel, Word};
pub use dyadic::DyadicPoint;
pub use tree::{Dist, MetricMode, SimplicialMetricTree, TreePoint};

pub(crate) mod serde_rational {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::dyadic::{fmt_rational, parse_rational};
    use crate::Rational;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}
