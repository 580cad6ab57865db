//! Offset correction and error measures.

use serde::{Deserialize, Serialize};

use crate::grid::{trapz, trapz_space, Field, Grid};

/// Number of points at which recovered and true nonlinearities are compared.
pub const RANGE_POINTS: usize = 201;

/// `n` uniform points covering `[lo, hi]`.
pub fn range_samples(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Result of moving the constant `c★` from the nonlinearity to the source.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetCorrection {
    pub c: f64,
    /// `f − c★` on the comparison range.
    pub f: Vec<f64>,
    /// `φ^k + c★`, one entry per estimated source.
    pub phi: Vec<Vec<f64>>,
}

/// Closed-form minimiser of
/// `‖f − c − f_true‖²_{L²(Ω_y)} + Σ_k ‖φ^k + c − φ^k_true‖²_{L²(Ω)}`.
///
/// `f_rec` and `f_true` are sampled uniformly on `Ω_y = [lo, hi]`. Sources
/// are only included when they were estimated; pass empty slices otherwise.
/// A degenerate range counts as unit length so the pointwise mean is used.
pub fn offset_correction(
    f_rec: &[f64],
    f_true: &[f64],
    range: (f64, f64),
    phi_rec: &[Vec<f64>],
    phi_true: &[Vec<f64>],
    grid: &Grid,
) -> OffsetCorrection {
    assert_eq!(f_rec.len(), f_true.len(), "nonlinearity samples must align");
    assert_eq!(
        phi_rec.len(),
        phi_true.len(),
        "one true source per estimate"
    );
    let diff: Vec<f64> = f_rec.iter().zip(f_true).map(|(a, b)| a - b).collect();
    let width = range.1 - range.0;
    let (f_int, f_len) = if width > 0.0 && diff.len() > 1 {
        (trapz(&diff, width / (diff.len() - 1) as f64), width)
    } else {
        (diff.iter().sum::<f64>() / diff.len().max(1) as f64, 1.0)
    };
    let mut num = f_int;
    let mut den = f_len;
    for (p, q) in phi_rec.iter().zip(phi_true) {
        let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
        num -= trapz_space(&d, grid);
        den += grid.length();
    }
    let c = num / den;
    OffsetCorrection {
        c,
        f: f_rec.iter().map(|v| v - c).collect(),
        phi: phi_rec
            .iter()
            .map(|p| p.iter().map(|v| v + c).collect())
            .collect(),
    }
}

/// Error measures of one run. `*_error` are mean squared errors over the
/// sample points; `*_rel_l2` are relative `L²` errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Offset-corrected nonlinearity MSE on the recovered value range.
    pub nonlinearity_error: f64,
    /// State MSE over all space–time nodes and samples.
    pub state_error: f64,
    /// Offset-corrected source MSE; zero when the source is known.
    pub parameter_error: f64,
    /// `sqrt(Σ_k ‖e^k‖²_𝒲)` at the solution.
    pub pde_residual: f64,
    pub nonlinearity_rel_l2: f64,
    pub state_rel_l2: f64,
    pub parameter_rel_l2: f64,
    /// Constant moved from the nonlinearity to the source.
    pub offset: f64,
    /// Comparison range `Ω_y`.
    pub range_lo: f64,
    pub range_hi: f64,
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// `‖a − b‖ / ‖b‖` in the discrete `ℓ²` sense (uniform weights), `‖a − b‖`
/// when `b` vanishes.
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// `[min, max]` over all nodes of all states.
pub fn value_range(states: &[Field]) -> (f64, f64) {
    states
        .iter()
        .map(Field::min_max)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        })
}

pub fn flatten(fields: &[Field]) -> Vec<f64> {
    fields
        .iter()
        .flat_map(|f| f.as_slice().iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Grid, Vec<f64>, Vec<f64>, Vec<f64>) {
        let grid = Grid::unit(21, 10).unwrap();
        let ys = range_samples(0.0, 1.0, RANGE_POINTS);
        let f: Vec<f64> = ys.iter().map(|y| y * y - 1.0).collect();
        let phi = grid.sample(|x| (3.0 * x).sin());
        (grid, ys, f, phi)
    }

    #[test]
    fn exact_pair_has_zero_offset() {
        let (grid, _, f, phi) = setup();
        let c = offset_correction(
            &f,
            &f,
            (0.0, 1.0),
            std::slice::from_ref(&phi),
            std::slice::from_ref(&phi),
            &grid,
        );
        assert_eq!(c.c, 0.0);
    }

    #[test]
    fn injected_offset_is_recovered() {
        let (grid, _, f, phi) = setup();
        let fs: Vec<f64> = f.iter().map(|v| v + 0.7).collect();
        let ps: Vec<f64> = phi.iter().map(|v| v - 0.7).collect();
        let c = offset_correction(
            &fs,
            &f,
            (0.0, 1.0),
            &[ps],
            std::slice::from_ref(&phi),
            &grid,
        );
        assert!((c.c - 0.7).abs() <= 1e-12);
        assert!(mse(&c.f, &f) <= 1e-24);
        assert!(mse(&c.phi[0], &phi) <= 1e-24);
        // nonlinearity only
        let c = offset_correction(&fs, &f, (0.0, 1.0), &[], &[], &grid);
        assert!((c.c - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn correction_never_increases_error() {
        let (grid, _, f, phi) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = 1.0 / (RANGE_POINTS - 1) as f64;
        let err = |fv: &[f64], pv: &[f64]| {
            let df: Vec<f64> = fv.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).collect();
            let dp: Vec<f64> = pv.iter().zip(&phi).map(|(a, b)| (a - b).powi(2)).collect();
            trapz(&df, w) + trapz_space(&dp, &grid)
        };
        for _ in 0..50 {
            let fs: Vec<f64> = f
                .iter()
                .map(|v| v + rng.gen_range(-0.5..0.5) + 0.3)
                .collect();
            let ps: Vec<f64> = phi.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
            let c = offset_correction(
                &fs,
                &f,
                (0.0, 1.0),
                std::slice::from_ref(&ps),
                std::slice::from_ref(&phi),
                &grid,
            );
            let before = err(&fs, &ps);
            let after = err(&c.f, &c.phi[0]);
            assert!(after <= before + 1e-15);
            for dc in [-1e-3, 1e-3] {
                let fo: Vec<f64> = c.f.iter().map(|v| v - dc).collect();
                let po: Vec<f64> = c.phi[0].iter().map(|v| v + dc).collect();
                assert!(err(&fo, &po) >= after);
            }
        }
    }

    #[test]
    fn degenerate_range_uses_mean() {
        let (grid, _, _, _) = setup();
        let c = offset_correction(&[1.5, 1.5], &[1.0, 1.0], (0.2, 0.2), &[], &[], &grid);
        assert_eq!(c.c, 0.5);
    }

    #[test]
    fn error_helpers() {
        assert_eq!(mse(&[1.0, 3.0], &[1.0, 1.0]), 2.0);
        assert_eq!(rel_l2(&[2.0], &[1.0]), 1.0);
        assert_eq!(rel_l2(&[2.0], &[0.0]), 2.0);
        let g = Grid::unit(5, 2).unwrap();
        let a = Field::from_fn(&g, |t, x| t - x);
        assert_eq!(value_range(&[a]), (-1.0, 0.1));
    }
}
