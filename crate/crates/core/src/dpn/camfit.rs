//! Gain tables and their conversion to piecewise-linear gain parameters.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{breakpoint_levels_db, breakpoints};
use crate::error::{Error, Result};
use crate::hl::{catch_up_exponent, Audiogram, CATCH_UP_DB};

/// Per-band gain (dB) as a function of band input level (dB SPL).
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    /// Band centre frequencies, Hz.
    pub centers: Vec<f64>,
    /// Input levels, dB SPL, strictly increasing.
    pub levels: Vec<f64>,
    /// `gains[level][band]`, dB.
    pub gains: Vec<Vec<f64>>,
}

impl GainTable {
    pub fn new(centers: Vec<f64>, levels: Vec<f64>, gains: Vec<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() || levels.is_empty() {
            return Err(Error::param("gain table needs at least one band and one level"));
        }
        if !levels.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::param("gain table levels must be strictly increasing"));
        }
        if gains.len() != levels.len() || gains.iter().any(|row| row.len() != centers.len()) {
            return Err(Error::param(format!(
                "gain table must be {} levels x {} bands",
                levels.len(),
                centers.len()
            )));
        }
        if gains.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::param("gain table entries must be finite"));
        }
        Ok(GainTable { centers, levels, gains })
    }

    pub fn bands(&self) -> usize {
        self.centers.len()
    }

    /// Gain of `band` at `level`, linear between table levels and held
    /// constant beyond the first and last.
    pub fn gain_at(&self, band: usize, level: f64) -> f64 {
        let l = &self.levels;
        let g = |i: usize| self.gains[i][band];
        if level <= l[0] {
            return g(0);
        }
        if level >= l[l.len() - 1] {
            return g(l.len() - 1);
        }
        let j = l.iter().position(|&v| v >= level).unwrap();
        let u = (level - l[j - 1]) / (l[j] - l[j - 1]);
        g(j - 1) + u * (g(j) - g(j - 1))
    }

    /// The table resampled onto the breakpoint levels.
    pub fn on_breakpoints(&self) -> GainTable {
        let levels: Vec<f64> = breakpoint_levels_db();
        let gains = levels.iter().map(|&lv| (0..self.bands()).map(|c| self.gain_at(c, lv)).collect()).collect();
        GainTable {
            centers: self.centers.clone(),
            levels,
            gains,
        }
    }

    /// CSV: header `level_db,<centre Hz>...`, then one row per level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level_db");
        for c in &self.centers {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (l, row) in self.levels.iter().zip(&self.gains) {
            out.push_str(&l.to_string());
            for g in row {
                out.push_str(&format!(",{g}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let bad = |m: String| Error::format(path, m);
        let header = rows.next().ok_or_else(|| bad("empty gain table".into()))?.map_err(|e| bad(e.to_string()))?;
        let centers = header
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad band frequency `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut levels = Vec::new();
        let mut gains = Vec::new();
        for (i, row) in rows.enumerate() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let vals = row
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("row {}: bad number `{v}`", i + 2))))
                .collect::<Result<Vec<_>>>()?;
            levels.push(vals[0]);
            gains.push(vals[1..].to_vec());
        }
        GainTable::new(centers, levels, gains).map_err(|e| bad(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GainTable::from_csv(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Slopes and offset per band such that the piecewise-linear gain passes
/// through every table entry at the breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseInit {
    /// `slopes[band][i]`, dB per unit RMS.
    pub slopes: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

/// Solves `A a = L_j - L_0` with `A[j][i] = relu(l_j - l_{i-1})`, which is
/// lower triangular with a positive diagonal.
pub fn camfit_init(table: &GainTable, knots: &[f64]) -> Result<PiecewiseInit> {
    if table.levels.len() != knots.len() {
        return Err(Error::TableMismatch {
            got: table.levels.len(),
            expected: knots.len(),
        });
    }
    if knots.len() < 2 || !knots.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::param("breakpoints must be strictly increasing"));
    }
    let h = knots.len() - 1;
    let a = DMatrix::from_fn(h, h, |j, i| (knots[j + 1] - knots[i]).max(0.0));
    let mut slopes = Vec::with_capacity(table.bands());
    let mut offsets = Vec::with_capacity(table.bands());
    for c in 0..table.bands() {
        let z = table.gains[0][c];
        let rhs = DVector::from_fn(h, |j, _| table.gains[j + 1][c] - z);
        let sol = a.solve_lower_triangular(&rhs).ok_or(Error::Singular("breakpoint matrix"))?;
        slopes.push(sol.iter().copied().collect());
        offsets.push(z);
    }
    Ok(PiecewiseInit { slopes, offsets })
}

/// Convenience: resample `table` to the standard breakpoints and solve.
pub fn camfit_init_standard(table: &GainTable) -> Result<PiecewiseInit> {
    camfit_init(&table.on_breakpoints(), &breakpoints())
}

/// Direct evaluation of one band's gain at RMS `j`.
pub fn piecewise_gain_at(slopes: &[f64], offset: f64, knots: &[f64], j: f64) -> f64 {
    offset + slopes.iter().zip(knots).map(|(a, l)| a * (j - l).max(0.0)).sum::<f64>()
}

/// Loudness-recruitment inverse used when no fitted table is available:
/// a band at `L` dB SPL with expansion exponent `g` reaches its normal
/// loudness after `(g - 1)(105 - L) / g` dB of gain.
pub fn prescribe(audiogram: &Audiogram, centers: &[f64]) -> Result<GainTable> {
    let exps = centers
        .iter()
        .map(|&f| catch_up_exponent(audiogram.at(f)))
        .collect::<Result<Vec<_>>>()?;
    let levels: Vec<f64> = breakpoint_levels_db();
    let gains = levels
        .iter()
        .map(|&l| exps.iter().map(|&g| (g - 1.0) * (CATCH_UP_DB - l).max(0.0) / g).collect())
        .collect();
    GainTable::new(centers.to_vec(), levels, gains)
}
