//! Point errors, interval coverage and calibration of Gaussian predictions.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianPrediction;

/// Inverse of the standard normal CDF (Wichura's AS241, PPND16).
/// Relative accuracy is about 1e-16 over (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_5,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_4e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_545e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_8e-15,
];

/// Half-width of the central interval at `level`, in standard deviations.
pub fn central_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("coverage level must lie in (0, 1), got {level}")));
    }
    Ok(inverse_normal_cdf(0.5 * (1.0 + level)))
}

fn check_lengths(preds: &[GaussianPrediction], y: &[f64]) -> Result<()> {
    if preds.len() != y.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), y.len())));
    }
    if preds.is_empty() {
        return Err(Error::Data("no rows to evaluate".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointErrors {
    pub rmse: f64,
    pub mae: f64,
    pub nrmse: f64,
    pub nmae: f64,
}

pub fn point_errors(preds: &[GaussianPrediction], y: &[f64], rated_power: f64) -> Result<PointErrors> {
    check_lengths(preds, y)?;
    if !(rated_power > 0.0) {
        return Err(Error::Domain(format!("rated power must be positive, got {rated_power}")));
    }
    let n = y.len() as f64;
    let (sq, abs) = preds.iter().zip(y).fold((0.0, 0.0), |(sq, abs), (p, &y)| {
        let r = y - p.mean;
        (sq + r * r, abs + r.abs())
    });
    let rmse = (sq / n).sqrt();
    let mae = abs / n;
    Ok(PointErrors {
        rmse,
        mae,
        nrmse: 100.0 * rmse / rated_power,
        nmae: 100.0 * mae / rated_power,
    })
}

fn coverage_at_z(preds: &[GaussianPrediction], y: &[f64], z: f64) -> f64 {
    let hits = preds.iter().zip(y).filter(|(p, &y)| (y - p.mean).abs() <= z * p.stddev).count();
    hits as f64 / y.len() as f64
}

/// Fraction of targets inside the central Gaussian interval at `level`.
pub fn coverage(preds: &[GaussianPrediction], y: &[f64], level: f64) -> Result<f64> {
    let z = central_z(level)?;
    check_lengths(preds, y)?;
    Ok(coverage_at_z(preds, y, z))
}

/// `k / n_bins` for `k = 1..n_bins`, plus 0.95 and 0.99 when missing, ascending.
pub fn calibration_levels(n_bins: usize) -> Result<Vec<f64>> {
    if n_bins < 2 {
        return Err(Error::Config(format!("calibration needs at least 2 bins, got {n_bins}")));
    }
    let mut levels: Vec<f64> = (1..n_bins).map(|k| k as f64 / n_bins as f64).collect();
    for extra in [0.95, 0.99] {
        if !levels.iter().any(|l| (l - extra).abs() < 1e-12) {
            levels.push(extra);
        }
    }
    levels.sort_by(f64::total_cmp);
    Ok(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub nominal: f64,
    pub empirical: f64,
    pub error: f64,
}

/// Returns the per-level bins and the maximum absolute error in percent.
pub fn calibration_curve(preds: &[GaussianPrediction], y: &[f64], n_bins: usize) -> Result<(Vec<CalibrationBin>, f64)> {
    let levels = calibration_levels(n_bins)?;
    calibration_at(preds, y, &levels)
}

pub fn calibration_at(preds: &[GaussianPrediction], y: &[f64], levels: &[f64]) -> Result<(Vec<CalibrationBin>, f64)> {
    check_lengths(preds, y)?;
    let bins = levels
        .iter()
        .map(|&nominal| {
            let empirical = coverage_at_z(preds, y, central_z(nominal)?);
            Ok(CalibrationBin {
                nominal,
                empirical,
                error: empirical - nominal,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mce = bins.iter().map(|b| b.error.abs()).fold(0.0, f64::max) * 100.0;
    Ok((bins, mce))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub rated_power: f64,
    pub rmse: f64,
    pub mae: f64,
    pub nrmse: f64,
    pub nmae: f64,
    /// Mean negative log-likelihood per row.
    pub mean_nll: f64,
    /// Keys are levels formatted with two decimals, e.g. `"0.95"`.
    pub coverage: BTreeMap<String, f64>,
    pub calibration_bins: Vec<CalibrationBin>,
    pub mce: f64,
}

pub fn evaluate(preds: &[GaussianPrediction], y: &[f64], rated_power: f64, n_bins: usize) -> Result<EvaluationReport> {
    let pe = point_errors(preds, y, rated_power)?;
    let (bins, mce) = calibration_curve(preds, y, n_bins)?;
    let mut nll = 0.0;
    for (p, &y) in preds.iter().zip(y) {
        nll += crate::nn::nll_gaussian(y, p.mean, p.stddev)?;
    }
    let coverage = bins.iter().map(|b| (format!("{:.2}", b.nominal), b.empirical)).collect();
    Ok(EvaluationReport {
        n: y.len(),
        rated_power,
        rmse: pe.rmse,
        mae: pe.mae,
        nrmse: pe.nrmse,
        nmae: pe.nmae,
        mean_nll: nll / y.len() as f64,
        coverage,
        calibration_bins: bins,
        mce,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per calibration level; summary metrics repeat on each row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["nominal", "empirical", "error", "rmse", "mae", "nrmse", "nmae", "mce"])?;
        for b in &self.calibration_bins {
            w.write_record(
                [b.nominal, b.empirical, b.error, self.rmse, self.mae, self.nrmse, self.nmae, self.mce].map(|v| v.to_string()),
            )?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }
}
