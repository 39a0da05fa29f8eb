//! Per-pixel spectral indices.

/// Reflectance band order used by [`TasseledCapCoefficients`].
pub const BAND_NAMES: [&str; 6] = ["BLUE", "GREEN", "RED", "NIR", "SWIR1", "SWIR2"];
pub const NIR: usize = 3;
pub const SWIR2: usize = 5;

/// Normalized burn ratio. `None` when the denominator vanishes.
pub fn nbr(nir: f64, swir2: f64) -> Option<f64> {
    let den = nir + swir2;
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    Some((nir - swir2) / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TasseledCapCoefficients {
    pub brightness: [f64; 6],
    pub greenness: [f64; 6],
    pub wetness: [f64; 6],
}

impl Default for TasseledCapCoefficients {
    /// Reflectance-factor coefficients for six-band (TM-like) surface
    /// reflectance, as commonly used for Landsat trajectory work.
    fn default() -> Self {
        Self {
            brightness: [0.2043, 0.4158, 0.5524, 0.5741, 0.3124, 0.2303],
            greenness: [-0.1603, -0.2819, -0.4934, 0.7940, -0.0002, -0.1446],
            wetness: [0.0315, 0.2021, 0.3102, 0.1594, -0.6806, -0.6109],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TasseledCap {
    pub tcb: f64,
    pub tcg: f64,
    pub tcw: f64,
}

pub fn tasseled_cap(bands: &[f64; 6], coeffs: &TasseledCapCoefficients) -> TasseledCap {
    let dot = |c: &[f64; 6]| c.iter().zip(bands).map(|(a, b)| a * b).sum::<f64>();
    TasseledCap {
        tcb: dot(&coeffs.brightness),
        tcg: dot(&coeffs.greenness),
        tcw: dot(&coeffs.wetness),
    }
}
