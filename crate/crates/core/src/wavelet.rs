//! Orthonormal Haar transform for half-hourly day curves.
//!
//! A day holds 48 half-hour readings, which factors as 16 * 3, so the Haar
//! cascade runs exactly four levels deep. Both analysis and synthesis use the
//! 1/sqrt(2) taps, making the transform an isometry: energy is preserved and
//! the inverse is the transpose.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

/// Number of half-hour slots in one day curve.
pub const CURVE_LEN: usize = 48;

/// Haar coefficients of one curve, coarse to fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletDecomp {
    pub a4: [f64; 3],
    pub d4: [f64; 3],
    pub d3: [f64; 6],
    pub d2: [f64; 12],
    pub d1: [f64; 24],
}

impl WaveletDecomp {
    pub fn zero() -> Self {
        WaveletDecomp {
            a4: [0.0; 3],
            d4: [0.0; 3],
            d3: [0.0; 6],
            d2: [0.0; 12],
            d1: [0.0; 24],
        }
    }

    /// All 48 coefficients in order (a4, d4, d3, d2, d1).
    pub fn flatten(&self) -> [f64; CURVE_LEN] {
        let mut out = [0.0; CURVE_LEN];
        let mut i = 0;
        for part in [
            &self.a4[..],
            &self.d4[..],
            &self.d3[..],
            &self.d2[..],
            &self.d1[..],
        ] {
            out[i..i + part.len()].copy_from_slice(part);
            i += part.len();
        }
        out
    }
}

/// One resolution band of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    A4,
    D4,
    D3,
    D2,
    D1,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::A4, Band::D4, Band::D3, Band::D2, Band::D1];
}

fn check_len(curve: &[f64]) -> Result<()> {
    if curve.len() != CURVE_LEN {
        return Err(Error::Dim {
            what: "day curve",
            expected: CURVE_LEN,
            got: curve.len(),
        });
    }
    Ok(())
}

fn analyze_level(input: &[f64], approx: &mut [f64], detail: &mut [f64]) {
    for i in 0..approx.len() {
        let even = input[2 * i];
        let odd = input[2 * i + 1];
        approx[i] = (even + odd) * FRAC_1_SQRT_2;
        detail[i] = (even - odd) * FRAC_1_SQRT_2;
    }
}

fn synthesize_level(approx: &[f64], detail: &[f64], output: &mut [f64]) {
    for i in 0..approx.len() {
        output[2 * i] = (approx[i] + detail[i]) * FRAC_1_SQRT_2;
        output[2 * i + 1] = (approx[i] - detail[i]) * FRAC_1_SQRT_2;
    }
}

/// Four-level Haar analysis of a 48-sample curve.
pub fn haar_dwt(curve: &[f64]) -> Result<WaveletDecomp> {
    check_len(curve)?;
    let mut out = WaveletDecomp::zero();
    let mut a1 = [0.0; 24];
    let mut a2 = [0.0; 12];
    let mut a3 = [0.0; 6];
    analyze_level(curve, &mut a1, &mut out.d1);
    analyze_level(&a1, &mut a2, &mut out.d2);
    analyze_level(&a2, &mut a3, &mut out.d3);
    analyze_level(&a3, &mut out.a4, &mut out.d4);
    Ok(out)
}

/// Exact inverse of [`haar_dwt`].
pub fn haar_idwt(decomp: &WaveletDecomp) -> [f64; CURVE_LEN] {
    let mut a3 = [0.0; 6];
    let mut a2 = [0.0; 12];
    let mut a1 = [0.0; 24];
    let mut curve = [0.0; CURVE_LEN];
    synthesize_level(&decomp.a4, &decomp.d4, &mut a3);
    synthesize_level(&a3, &decomp.d3, &mut a2);
    synthesize_level(&a2, &decomp.d2, &mut a1);
    synthesize_level(&a1, &decomp.d1, &mut curve);
    curve
}

/// Time-domain contribution of a single band. The five bands sum to the
/// original curve.
pub fn reconstruct_band(decomp: &WaveletDecomp, band: Band) -> [f64; CURVE_LEN] {
    let mut only = WaveletDecomp::zero();
    match band {
        Band::A4 => only.a4 = decomp.a4,
        Band::D4 => only.d4 = decomp.d4,
        Band::D3 => only.d3 = decomp.d3,
        Band::D2 => only.d2 = decomp.d2,
        Band::D1 => only.d1 = decomp.d1,
    }
    haar_idwt(&only)
}

/// Feature extraction applied to each curve before regression.
///
/// `Centered` removes the daily mean and keeps the coarse approximation plus
/// the two coarsest detail bands (12 features). `Details` keeps only those
/// two detail bands of the raw curve (9 features), which are unchanged by
/// any level shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrepMode {
    Centered,
    Details,
}

impl PrepMode {
    pub fn feature_len(self) -> usize {
        match self {
            PrepMode::Centered => 12,
            PrepMode::Details => 9,
        }
    }

    /// Coefficient names in feature order, e.g. `a4_0` or `d3_5`.
    pub fn feature_labels(self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.feature_len());
        if self == PrepMode::Centered {
            labels.extend((0..3).map(|i| format!("a4_{i}")));
        }
        labels.extend((0..3).map(|i| format!("d4_{i}")));
        labels.extend((0..6).map(|i| format!("d3_{i}")));
        labels
    }

    /// Numeric id used in files and on the command line: 1 centered, 2 details.
    pub fn id(self) -> u8 {
        match self {
            PrepMode::Centered => 1,
            PrepMode::Details => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(PrepMode::Centered),
            2 => Ok(PrepMode::Details),
            other => Err(Error::config(format!(
                "unknown preprocessing mode {other}, expected 1 or 2"
            ))),
        }
    }
}

/// Map a 48-sample curve to its regression features.
pub fn preprocess(curve: &[f64], mode: PrepMode) -> Result<Vec<f64>> {
    check_len(curve)?;
    let mut features = Vec::with_capacity(mode.feature_len());
    match mode {
        PrepMode::Centered => {
            let mean = curve.iter().sum::<f64>() / CURVE_LEN as f64;
            let centered: Vec<f64> = curve.iter().map(|v| v - mean).collect();
            let d = haar_dwt(&centered)?;
            features.extend_from_slice(&d.a4);
            features.extend_from_slice(&d.d4);
            features.extend_from_slice(&d.d3);
        }
        PrepMode::Details => {
            let d = haar_dwt(curve)?;
            features.extend_from_slice(&d.d4);
            features.extend_from_slice(&d.d3);
        }
    }
    Ok(features)
}
