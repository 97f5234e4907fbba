//! Symmetric Gauss-type quadrature rules on triangles.
//!
//! Points are barycentric triples and weights sum to one; multiply by the
//! physical triangle area at use.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    degree: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

pub const MAX_QUAD_DEGREE: usize = 8;

/// Rule exact up to `degree` used for assembling P2 operators.
pub const ASSEMBLY_DEGREE: usize = 5;
/// Rule used for error norms against analytic solutions.
pub const ERROR_DEGREE: usize = 8;

impl QuadratureRule {
    /// Degree of polynomial integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

#[derive(Default)]
struct Builder {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl Builder {
    fn centroid(mut self, w: f64) -> Self {
        let c = 1.0 / 3.0;
        self.points.push([c, c, c]);
        self.weights.push(w);
        self
    }

    /// Orbit of `(a, b, b)`.
    fn orbit3(mut self, w: f64, a: f64) -> Self {
        let b = 0.5 * (1.0 - a);
        for p in [[a, b, b], [b, a, b], [b, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
        self
    }

    /// Orbit of `(a, b, c)` with distinct entries.
    fn orbit6(mut self, w: f64, a: f64, b: f64) -> Self {
        let c = 1.0 - a - b;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
        self
    }

    fn finish(self, degree: usize) -> QuadratureRule {
        QuadratureRule {
            degree,
            points: self.points,
            weights: self.weights,
        }
    }
}

/// Returns a rule exact for all polynomials of total degree `<= degree`.
///
/// The returned rule may be of higher degree than requested.
pub fn quad_rule(degree: usize) -> Result<QuadratureRule> {
    let rule = match degree {
        0 | 1 => Builder::default().centroid(1.0).finish(1),
        2 => Builder::default().orbit3(1.0 / 3.0, 2.0 / 3.0).finish(2),
        3 | 4 => Builder::default()
            .orbit3(0.223_381_589_678_011, 0.108_103_018_168_070)
            .orbit3(0.109_951_743_655_322, 0.816_847_572_980_459)
            .finish(4),
        5 => {
            let s = 15f64.sqrt();
            Builder::default()
                .centroid(9.0 / 40.0)
                .orbit3((155.0 - s) / 1200.0, 1.0 - 2.0 * (6.0 - s) / 21.0)
                .orbit3((155.0 + s) / 1200.0, 1.0 - 2.0 * (6.0 + s) / 21.0)
                .finish(5)
        }
        6 => Builder::default()
            .orbit3(0.116_786_275_726_379, 0.501_426_509_658_179)
            .orbit3(0.050_844_906_370_207, 0.873_821_971_016_996)
            .orbit6(0.082_851_075_618_374, 0.053_145_049_844_817, 0.310_352_451_033_784)
            .finish(6),
        7 | 8 => Builder::default()
            .centroid(0.144_315_607_677_787)
            .orbit3(0.095_091_634_267_285, 0.081_414_823_414_554)
            .orbit3(0.103_217_370_534_718, 0.658_861_384_496_480)
            .orbit3(0.032_458_497_623_198, 0.898_905_543_365_938)
            .orbit6(0.027_230_314_174_435, 0.008_394_777_409_958, 0.263_112_829_634_638)
            .finish(8),
        d => return Err(Error::UnsupportedDegree(d)),
    };
    Ok(rule)
}
