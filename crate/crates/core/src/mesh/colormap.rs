use serde::{Deserialize, Serialize};

use super::{ChannelRange, ScalarField};

/// Vertex colouring schemes for exported meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Colormap {
    /// Blue (low) through cyan, green and yellow to red (high).
    WarmCold,
    /// Blue (low) through white to red (high), for signed channels.
    Diverging,
    /// Categorical: 0 red (body), 1 blue (arch), 2 green (process).
    Regions,
}

const WARM_COLD: [[f64; 3]; 5] = [
    [0.0, 0.0, 255.0],
    [0.0, 255.0, 255.0],
    [0.0, 255.0, 0.0],
    [255.0, 255.0, 0.0],
    [255.0, 0.0, 0.0],
];

const DIVERGING: [[f64; 3]; 3] = [[0.0, 0.0, 255.0], [255.0, 255.0, 255.0], [255.0, 0.0, 0.0]];

/// Colour for unmapped (NaN) vertices.
pub const UNMAPPED_COLOR: [u8; 3] = [128, 128, 128];

fn ramp(stops: &[[f64; 3]], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let segments = (stops.len() - 1) as f64;
    let pos = t * segments;
    let k = (pos.floor() as usize).min(stops.len() - 2);
    let f = pos - k as f64;
    std::array::from_fn(|c| (stops[k][c] + (stops[k + 1][c] - stops[k][c]) * f).round() as u8)
}

impl Colormap {
    /// Default scheme for a declared channel range.
    pub fn for_range(range: ChannelRange) -> Self {
        match range {
            ChannelRange::Signed => Colormap::Diverging,
            ChannelRange::Label => Colormap::Regions,
            ChannelRange::Unit | ChannelRange::Unbounded => Colormap::WarmCold,
        }
    }

    pub fn color(self, value: f64, lo: f64, hi: f64) -> [u8; 3] {
        if value.is_nan() {
            return UNMAPPED_COLOR;
        }
        let t = if hi > lo { (value - lo) / (hi - lo) } else { 0.0 };
        match self {
            Colormap::WarmCold => ramp(&WARM_COLD, t),
            Colormap::Diverging => ramp(&DIVERGING, t),
            Colormap::Regions => match value as i64 {
                0 => [255, 0, 0],
                1 => [0, 0, 255],
                2 => [0, 255, 0],
                _ => UNMAPPED_COLOR,
            },
        }
    }

    /// Colours for every vertex of `field`, scaled over its declared range
    /// (or the finite data extent for unbounded channels).
    pub fn colorize(self, field: &ScalarField) -> Vec<[u8; 3]> {
        let (lo, hi) = field
            .range()
            .bounds()
            .or_else(|| field.finite_extent())
            .unwrap_or((0.0, 1.0));
        field.values().iter().map(|&v| self.color(v, lo, hi)).collect()
    }
}
