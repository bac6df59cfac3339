//! Per-vertex integration of texture change (d1) and geometric change (d2).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{channel, ChannelRange, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `d1 * d2`
    Multiply,
    /// `d1 + epsilon * d2`
    Linear,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Multiply => "multiply",
            FusionMode::Linear => "linear",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiply" => Ok(FusionMode::Multiply),
            "linear" => Ok(FusionMode::Linear),
            other => Err(Error::InvalidParameter(format!("unknown fusion mode '{other}'"))),
        }
    }
}

/// Epsilon values swept by default.
pub const DEFAULT_SWEEP: [f64; 3] = [1.0, 0.5, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub mode: FusionMode,
    pub epsilon: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            mode: FusionMode::Multiply,
            epsilon: 1.0,
        }
    }
}

fn check_lengths(d1: &ScalarField, d2: &ScalarField) -> Result<()> {
    if d1.len() != d2.len() {
        return Err(Error::LengthMismatch {
            left: d1.len(),
            right: d2.len(),
        });
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    Ok(())
}

/// `d1 * d2` as channel `fused`. NaN in either input gives NaN.
pub fn fuse_multiply(d1: &ScalarField, d2: &ScalarField) -> Result<ScalarField> {
    check_lengths(d1, d2)?;
    let values: Vec<f64> = d1.values().iter().zip(d2.values()).map(|(a, b)| a * b).collect();
    let range = if values.iter().all(|v| ChannelRange::Signed.admits(*v)) {
        ChannelRange::Signed
    } else {
        ChannelRange::Unbounded
    };
    ScalarField::new(channel::FUSED, values, range)
}

/// `d1 + epsilon * d2` as channel `fused_eps_<epsilon>`, not clamped.
pub fn fuse_linear(d1: &ScalarField, d2: &ScalarField, epsilon: f64) -> Result<ScalarField> {
    check_lengths(d1, d2)?;
    check_epsilon(epsilon)?;
    let values = d1
        .values()
        .iter()
        .zip(d2.values())
        .map(|(a, b)| a + epsilon * b)
        .collect();
    ScalarField::new(channel::fused_eps(epsilon), values, ChannelRange::Unbounded)
}

pub fn fuse(d1: &ScalarField, d2: &ScalarField, params: &FusionParams) -> Result<ScalarField> {
    match params.mode {
        FusionMode::Multiply => fuse_multiply(d1, d2),
        FusionMode::Linear => fuse_linear(d1, d2, params.epsilon),
    }
}

/// Parse a comma separated epsilon list such as `"1,0.5,0.2"`.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let values = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad epsilon '{}'", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    for &e in &values {
        check_epsilon(e)?;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(name: &str, v: Vec<f64>, r: ChannelRange) -> ScalarField {
        ScalarField::new(name, v, r).unwrap()
    }

    #[test]
    fn multiply_examples() {
        let d1 = field("d1", vec![0.0, 0.9, -0.5, f64::NAN], ChannelRange::Signed);
        let d2 = field("d2", vec![0.7, 0.8, 0.6, 0.5], ChannelRange::Unit);
        let f = fuse_multiply(&d1, &d2).unwrap();
        assert_eq!(f.name(), "fused");
        assert_eq!(f.values()[0], 0.0);
        assert!((f.values()[1] - 0.72).abs() < 1e-15);
        assert!((f.values()[2] + 0.30).abs() < 1e-15);
        assert!(f.values()[3].is_nan());
        let ones = field("d2", vec![1.0; 4], ChannelRange::Unit);
        let same = fuse_multiply(&d1, &ones).unwrap();
        assert_eq!(&same.values()[..3], &d1.values()[..3]);
    }

    #[test]
    fn linear_examples() {
        let d1 = field("d1", vec![0.4, -0.2], ChannelRange::Signed);
        let d2 = field("d2", vec![0.2, 0.0], ChannelRange::Unit);
        let f = fuse_linear(&d1, &d2, 0.5).unwrap();
        assert_eq!(f.name(), "fused_eps_0.5");
        assert!((f.values()[0] - 0.5).abs() < 1e-15);
        let zeros = field("d2", vec![0.0; 2], ChannelRange::Unit);
        assert_eq!(fuse_linear(&d1, &zeros, 1.0).unwrap().values(), d1.values());
        assert_eq!(fuse_linear(&d1, &d2, 1.0).unwrap().name(), "fused_eps_1");
        assert_eq!(fuse_linear(&d1, &d2, 0.2).unwrap().name(), "fused_eps_0.2");
        assert!(matches!(fuse_linear(&d1, &d2, 0.0), Err(Error::InvalidEpsilon(_))));
        assert!(matches!(fuse_linear(&d1, &d2, -1.0), Err(Error::InvalidEpsilon(_))));
        let short = field("d2", vec![0.0], ChannelRange::Unit);
        assert!(matches!(fuse_multiply(&d1, &short), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("1,0.5,0.2").unwrap(), DEFAULT_SWEEP.to_vec());
        assert!(parse_sweep("1,0").is_err());
        assert!(parse_sweep("a").is_err());
    }

    fn top_k(values: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx.sort_unstable();
        idx
    }

    proptest! {
        #[test]
        fn linear_is_increasing_in_epsilon(
            pairs in prop::collection::vec((-1.0..=1.0f64, 0.0..=1.0f64), 1..50),
            e1 in 0.01..2.0f64,
            de in 0.01..2.0f64,
        ) {
            let d1 = field("d1", pairs.iter().map(|p| p.0).collect(), ChannelRange::Signed);
            let d2 = field("d2", pairs.iter().map(|p| p.1).collect(), ChannelRange::Unit);
            let lo = fuse_linear(&d1, &d2, e1).unwrap();
            let hi = fuse_linear(&d1, &d2, e1 + de).unwrap();
            for ((a, b), w) in lo.values().iter().zip(hi.values()).zip(d2.values()) {
                if *w > 0.0 { prop_assert!(b > a); } else { prop_assert_eq!(a, b); }
            }
        }

        #[test]
        fn tiny_epsilon_keeps_d1_ranking(
            d1v in prop::collection::hash_set(-1000i32..=1000, 10..40),
            d2v in prop::collection::vec(0.0..=1.0f64, 40),
        ) {
            // Distinct d1 values at least 1e-3 apart.
            let d1v: Vec<f64> = d1v.into_iter().map(|v| v as f64 / 1000.0).collect();
            let n = d1v.len();
            let d1 = field("d1", d1v, ChannelRange::Signed);
            let d2 = field("d2", d2v[..n].to_vec(), ChannelRange::Unit);
            let fused = fuse_linear(&d1, &d2, 1e-9).unwrap();
            prop_assert_eq!(top_k(fused.values(), 5), top_k(d1.values(), 5));
        }

        #[test]
        fn zero_d1_multiplies_to_zero(d2v in prop::collection::vec(0.0..=1.0f64, 1..30)) {
            let d1 = field("d1", vec![0.0; d2v.len()], ChannelRange::Signed);
            let d2 = field("d2", d2v, ChannelRange::Unit);
            prop_assert!(fuse_multiply(&d1, &d2).unwrap().values().iter().all(|v| *v == 0.0));
        }
    }
}
