//! Power allocations across sections.
//!
//! Besides the flat and exponentially decaying allocations, an allocation can
//! be designed from the design spectrum: with `F(x) = 1/(snr Psi(-snr(1-x)))`
//! the profile `G` is defined through `G^{-1}(2t) = int_{F(0)}^t [F^{-1}]'(xi)
//! / (2 R_IT xi) dxi`, and `P_l = P R_IT G(l/L) / L`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sparc::SparcParams;
use crate::spectra::{self, SpectrumModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationKind {
    Flat,
    Exponential,
    SpectrumDesigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub values: Vec<f64>,
    pub kind: AllocationKind,
}

impl PowerAllocation {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// CSV with a `section,power` header; sections are numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,power\n");
        for (l, p) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{:.17e}\n", l + 1, p));
        }
        out
    }

    /// Parses the format written by [`PowerAllocation::to_csv`].
    pub fn from_csv(text: &str, kind: AllocationKind) -> Result<Self> {
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("section")) {
                continue;
            }
            let mut fields = line.split(',');
            let (Some(idx), Some(val), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::Parse(format!(
                    "line {}: expected two fields",
                    lineno + 1
                )));
            };
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad section index", lineno + 1)))?;
            if idx != values.len() + 1 {
                return Err(Error::Parse(format!(
                    "line {}: sections must be numbered consecutively from 1",
                    lineno + 1
                )));
            }
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad power value", lineno + 1)))?;
            values.push(val);
        }
        Ok(Self { values, kind })
    }
}

/// `P_l = P / L`.
pub fn flat(params: &SparcParams) -> PowerAllocation {
    let l = params.sections;
    PowerAllocation {
        values: vec![params.power / l as f64; l],
        kind: AllocationKind::Flat,
    }
}

/// `P_l = P (e^{2C/L} - 1) / (1 - e^{-2C}) e^{-2C l / L}` for `l = 1..L`.
pub fn exponential(params: &SparcParams) -> PowerAllocation {
    let l = params.sections as f64;
    let two_c = 2.0 * params.capacity;
    let scale = params.power * (two_c / l).exp_m1() / -(-two_c).exp_m1();
    let values = (1..=params.sections)
        .map(|k| scale * (-two_c * k as f64 / l).exp())
        .collect();
    PowerAllocation {
        values,
        kind: AllocationKind::Exponential,
    }
}

/// Tabulated `F` and `G` behind a spectrum-designed allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDesign {
    /// Uniform grid on `[0, 1]`.
    pub x_grid: Vec<f64>,
    /// `F` on `x_grid`, strictly decreasing.
    pub f_grid: Vec<f64>,
    /// `G^{-1}(2 F(x))` on `x_grid`; `G(h_grid[i]) = 2 f_grid[i]`.
    pub h_grid: Vec<f64>,
    pub r_it: f64,
    /// `R_IT int_0^1 G - 1` as seen by the grid quadrature.
    pub quadrature_defect: f64,
    /// `sum_l P_l / P - 1` before the final renormalization.
    pub section_sum_defect: f64,
}

impl AllocationDesign {
    pub fn f(&self, x: f64) -> f64 {
        interp(&self.x_grid, &self.f_grid, x)
    }

    /// Piecewise-linear inverse of `F`.
    pub fn f_inverse(&self, xi: f64) -> f64 {
        // f_grid is decreasing; interpolate on the reversed table
        let fs: Vec<f64> = self.f_grid.iter().rev().cloned().collect();
        let xs: Vec<f64> = self.x_grid.iter().rev().cloned().collect();
        interp(&fs, &xs, xi)
    }

    /// `G(y)`, clamped to the end values outside the tabulated range.
    pub fn g(&self, y: f64) -> f64 {
        let g: Vec<f64> = self.f_grid.iter().map(|f| 2.0 * f).collect();
        interp(&self.h_grid, &g, y)
    }
}

// Linear interpolation on an increasing abscissa, clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x).min(n - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

pub const DEFAULT_DESIGN_GRID: usize = 4096;

/// Builds the spectrum-designed allocation and the tables behind it.
pub fn design_from_spectrum(
    model: &SpectrumModel,
    params: &SparcParams,
    grid_size: usize,
) -> Result<(AllocationDesign, PowerAllocation)> {
    if grid_size < 2 {
        return invalid("design grid needs at least two points");
    }
    let snr = params.snr;
    let x_grid: Vec<f64> = (0..grid_size)
        .map(|i| i as f64 / (grid_size - 1) as f64)
        .collect();
    let f_grid: Vec<f64> = x_grid
        .iter()
        .map(|&x| spectra::f_curve(model, snr, x))
        .collect();
    if let Some(bad) = f_grid.iter().position(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Design(format!(
            "F is not positive and finite at x = {}",
            x_grid[bad]
        )));
    }
    if let Some(i) = f_grid.windows(2).position(|w| w[1] >= w[0]) {
        return Err(Error::Design(format!(
            "F is not strictly decreasing on [{}, {}] (F = {} -> {}); cannot invert",
            x_grid[i],
            x_grid[i + 1],
            f_grid[i],
            f_grid[i + 1]
        )));
    }
    let r_it = spectra::r_it(model, snr);

    // G^{-1}(2t) = int_{F(0)}^{t} [F^{-1}]'(xi) / (2 R_IT xi) dxi, composite
    // trapezoid in xi; [F^{-1}]' is the exact slope of each interpolant segment.
    let mut h_grid = Vec::with_capacity(grid_size);
    h_grid.push(0.0);
    for i in 0..grid_size - 1 {
        let (f0, f1) = (f_grid[i], f_grid[i + 1]);
        let slope = (x_grid[i + 1] - x_grid[i]) / (f1 - f0);
        let segment = slope * (f1 - f0) * 0.5 * (1.0 / f0 + 1.0 / f1) / (2.0 * r_it);
        h_grid.push(h_grid[i] + segment);
    }
    let quadrature_defect = h_grid[grid_size - 1] - 1.0;
    if quadrature_defect.abs() > 1e-3 {
        return Err(Error::Design(format!(
            "normalization defect {quadrature_defect:.3e} exceeds 1e-3; refine the grid"
        )));
    }

    let mut design = AllocationDesign {
        x_grid,
        f_grid,
        h_grid,
        r_it,
        quadrature_defect,
        section_sum_defect: 0.0,
    };
    let l = params.sections as f64;
    let mut values: Vec<f64> = (1..=params.sections)
        .map(|k| params.power * r_it / l * design.g(k as f64 / l))
        .collect();
    let sum: f64 = values.iter().sum();
    design.section_sum_defect = sum / params.power - 1.0;
    let fix = params.power / sum;
    values.iter_mut().for_each(|v| *v *= fix);
    Ok((
        design,
        PowerAllocation {
            values,
            kind: AllocationKind::SpectrumDesigned,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub sum: f64,
    /// Smallest `kappa` with every `P_l` in `[P/(kappa L), kappa P/L]`.
    pub kappa: f64,
    pub min: f64,
    pub max: f64,
}

/// Checks positivity, normalization and the `Theta(1/L)` spread.
pub fn validate(pa: &PowerAllocation, params: &SparcParams) -> Result<AllocationReport> {
    if pa.values.len() != params.sections {
        return Err(Error::DimensionMismatch {
            what: "power allocation length",
            expected: params.sections,
            actual: pa.values.len(),
        });
    }
    if let Some(l) = pa.values.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
        return invalid(format!(
            "section {} has non-positive power {}",
            l + 1,
            pa.values[l]
        ));
    }
    let sum = pa.total();
    if (sum - params.power).abs() > 1e-9 * params.power {
        return invalid(format!(
            "allocation sums to {sum}, expected {}",
            params.power
        ));
    }
    let flat = params.power / params.sections as f64;
    let min = pa.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = pa.values.iter().cloned().fold(0.0, f64::max);
    let kappa = (max / flat).max(flat / min);
    Ok(AllocationReport {
        sum,
        kappa,
        min,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparc::Rate;

    fn params(l: usize, snr: f64, p: f64) -> SparcParams {
        SparcParams::new(l, 16, Rate::Bits(1.0), snr, p).unwrap()
    }

    #[test]
    fn flat_values() {
        let pa = flat(&params(4, 3.0, 2.0));
        assert_eq!(pa.values, vec![0.5; 4]);
        assert_eq!(pa.total(), 2.0);
        assert_eq!(pa.kind, AllocationKind::Flat);
        assert_eq!(validate(&pa, &params(4, 3.0, 2.0)).unwrap().kappa, 1.0);
    }

    #[test]
    fn exponential_sums_and_ratio() {
        for (l, snr, p) in [
            (1, 3.0, 1.0),
            (4, 15.0, 2.5),
            (1000, 11.1, 1.0),
            (37, 0.7, 3.0),
        ] {
            let q = params(l, snr, p);
            let pa = exponential(&q);
            assert!((pa.total() - p).abs() < 1e-12 * p);
            assert!(pa.values.windows(2).all(|w| w[1] < w[0]));
        }
        assert!((exponential(&params(1, 3.0, 1.7)).values[0] - 1.7).abs() < 1e-14);
        let pa = exponential(&params(4, 15.0, 1.0));
        assert!((pa.values[0] / pa.values[3] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_kappa() {
        let q = params(2000, 11.1, 1.0);
        let rep = validate(&exponential(&q), &q).unwrap();
        let two_c = 2.0 * q.capacity;
        let head = two_c / (1.0 - (-two_c).exp());
        let tail = two_c.exp_m1() / two_c;
        assert!((rep.kappa - head.max(tail)).abs() < 5.0 / 2000.0 * rep.kappa);
        assert!(rep.kappa.is_finite());
    }

    #[test]
    fn validate_rejects() {
        let q = params(3, 1.0, 1.0);
        let mut pa = flat(&q);
        pa.values[1] = 0.0;
        assert!(validate(&pa, &q).is_err());
        let pa = PowerAllocation {
            values: vec![0.5, 0.5],
            kind: AllocationKind::Flat,
        };
        assert!(validate(&pa, &q).is_err());
        let pa = PowerAllocation {
            values: vec![0.5; 3],
            kind: AllocationKind::Flat,
        };
        assert!(validate(&pa, &q).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let q = params(5, 7.0, 1.0);
        let pa = exponential(&q);
        let back = PowerAllocation::from_csv(&pa.to_csv(), AllocationKind::Exponential).unwrap();
        assert_eq!(back, pa);
        assert!(PowerAllocation::from_csv("section,power\n2,0.1\n", AllocationKind::Flat).is_err());
        assert!(PowerAllocation::from_csv("1;0.1\n", AllocationKind::Flat).is_err());
    }

    #[test]
    fn unit_design_closed_forms() {
        let q = params(256, 7.0, 1.0);
        let (design, pa) = design_from_spectrum(&SpectrumModel::unit(), &q, 4096).unwrap();
        let snr = q.snr;
        let c = q.capacity;
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert!((design.f(x) - (1.0 / snr + 1.0 - x)).abs() < 1e-12);
            let y = x;
            let g = 2.0 * (1.0 + snr) / snr * (-2.0 * c * y).exp();
            assert!((design.g(y) - g).abs() < 1e-5 * g, "y = {y}");
        }
        // boundary identities
        assert!(design.f_inverse(0.5 * design.g(0.0)).abs() < 1e-12);
        assert!((design.f_inverse(0.5 * design.g(1.0)) - 1.0).abs() < 1e-6);
        assert!(validate(&pa, &q).is_ok());
        assert_eq!(pa.kind, AllocationKind::SpectrumDesigned);
    }

    #[test]
    fn quadrature_defect_shrinks_with_grid() {
        let q = params(64, 11.1, 1.0);
        let unit = SpectrumModel::unit();
        let mut prev = f64::INFINITY;
        for grid in [128, 512, 2048, 10_000] {
            let (d, _) = design_from_spectrum(&unit, &q, grid).unwrap();
            assert!(d.quadrature_defect.abs() < prev);
            prev = d.quadrature_defect.abs();
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn design_for_non_unit_spectrum() {
        let q = params(128, 11.1, 1.0);
        let m = SpectrumModel::marchenko_pastur(0.3, 64).unwrap();
        let (d, pa) = design_from_spectrum(&m, &q, 2048).unwrap();
        assert!(validate(&pa, &q).is_ok());
        assert!(d.r_it < q.capacity);
        assert!(pa.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn coarse_grid_rejected() {
        let q = params(64, 11.1, 1.0);
        assert!(design_from_spectrum(&SpectrumModel::unit(), &q, 3).is_err());
        assert!(design_from_spectrum(&SpectrumModel::unit(), &q, 1).is_err());
    }
}
