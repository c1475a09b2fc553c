//! One-dimensional demonstration grids on `[0, 6]`.
//!
//! For `x sin x` and the three-peak piecewise-linear target this writes one
//! CSV per construction with columns `x, f, fhat, fcheck, band_lo, band_hi,
//! fvu`, where `band_lo <= f - fhat <= band_hi` is the guaranteed band and
//! `fvu` is the FVU of `fhat`. For fitted models `fhat` is the final fit,
//! `fcheck` the unrefined initial fit, and the band columns hold the
//! observed range of `f - fhat`.

use std::fs;
use std::path::Path;

use super::data::{fmt_f64, write_csv};
use crate::approx::{
    fvu, linspace, mcshane_band, mcshane_lower, min_convex_upper, quad_lower, quad_upper, smooth_lower, smooth_upper,
    CoverSpec, TargetFunction,
};
use crate::error::Result;
use crate::features::FeatureKind;
use crate::fit::{fit_dcf, FitConfig, Theta2Mode};
use crate::model::Variant;
use crate::partition::Dataset;

pub const GRID_POINTS: usize = 1000;
pub const COVER_CENTERS: usize = 10;

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoEntry {
    pub file: String,
    pub target: String,
    pub construction: String,
    pub fvu_lower: f64,
    pub fvu_upper: f64,
}

struct Curve {
    fhat: Vec<f64>,
    fcheck: Vec<f64>,
    band: Option<(f64, f64)>,
}

fn write_grid(dir: &Path, file: &str, xs: &[f64], f: &[f64], curve: &Curve) -> Result<(f64, f64)> {
    let fvu_hat = fvu(&curve.fhat, f)?;
    let fvu_check = fvu(&curve.fcheck, f)?;
    let (lo, hi) = curve.band.unwrap_or_else(|| {
        let r = f.iter().zip(&curve.fhat).map(|(a, b)| a - b);
        r.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)))
    });
    let rows = (0..xs.len()).map(|i| {
        vec![
            fmt_f64(xs[i]),
            fmt_f64(f[i]),
            fmt_f64(curve.fhat[i]),
            fmt_f64(curve.fcheck[i]),
            fmt_f64(lo),
            fmt_f64(hi),
            fmt_f64(fvu_hat),
        ]
    });
    write_csv(fs::File::create(dir.join(file))?, &["x", "f", "fhat", "fcheck", "band_lo", "band_hi", "fvu"], rows)?;
    Ok((fvu_hat, fvu_check))
}

/// Writes the demo grids and `summary.csv` into `dir`. Set `with_fits` to
/// false to skip the three model fits per target.
pub fn demo_figures(dir: &Path, with_fits: bool) -> Result<Vec<DemoEntry>> {
    fs::create_dir_all(dir)?;
    let xs = linspace(0.0, 6.0, GRID_POINTS);
    let points: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
    let cover = CoverSpec::interval(0.0, 6.0, COVER_CENTERS)?;
    let eps = cover.eps();
    let mut entries = Vec::new();
    for (tname, target) in [("xsinx", TargetFunction::x_sin_x()), ("pw_linear", TargetFunction::three_peaks())] {
        let f: Vec<f64> = points.iter().map(|p| target.eval(p)).collect();
        let lam = target.lipschitz();
        let mut curves: Vec<(String, Curve)> = Vec::new();

        let lo = mcshane_lower(&target, &cover, FeatureKind::L2)?;
        let up = min_convex_upper(&target, &cover, FeatureKind::L2)?;
        curves.push((
            "lipschitz".into(),
            Curve {
                fhat: points.iter().map(|p| lo.eval_max(p)).collect::<Result<_>>()?,
                fcheck: points.iter().map(|p| up.eval(p)).collect::<Result<_>>()?,
                band: Some((0.0, mcshane_band(FeatureKind::L2, 1, lam, eps)?)),
            },
        ));

        let ql = quad_lower(&target, &cover)?;
        let qu = quad_upper(&target, &cover)?;
        curves.push((
            "quadratic".into(),
            Curve {
                fhat: points.iter().map(|p| ql.eval(p)).collect(),
                fcheck: points.iter().map(|p| qu.eval(p)).collect(),
                band: Some((-lam * eps / 4.0, 2.0 * lam * eps)),
            },
        ));

        if let Some(nu) = target.smoothness() {
            let sl = smooth_lower(&target, &cover)?;
            let su = smooth_upper(&target, &cover)?;
            curves.push((
                "smooth".into(),
                Curve {
                    fhat: points.iter().map(|p| sl.eval(p)).collect(),
                    fcheck: points.iter().map(|p| su.eval(p)).collect(),
                    band: Some((0.0, 2.0 * nu * eps * eps)),
                },
            ));
        }

        if with_fits {
            let data = Dataset::from_rows(&points, f.clone())?;
            for variant in [Variant::Single, Variant::Symmetric, Variant::MaxMinAffine] {
                let cfg = FitConfig { theta2_mode: Theta2Mode::Strong, ..FitConfig::new(variant, FeatureKind::Linf) };
                let res = fit_dcf(&data, &cfg)?;
                curves.push((
                    format!("dcf_{}", variant.name()),
                    Curve {
                        fhat: res.final_model.predict(&data)?,
                        fcheck: res.initial_model.predict(&data)?,
                        band: None,
                    },
                ));
            }
        }

        for (cname, curve) in curves {
            let file = format!("{tname}_{cname}.csv");
            let (fvu_lower, fvu_upper) = write_grid(dir, &file, &xs, &f, &curve)?;
            entries.push(DemoEntry { file, target: tname.into(), construction: cname, fvu_lower, fvu_upper });
        }
    }
    write_csv(
        fs::File::create(dir.join("summary.csv"))?,
        &["file", "target", "construction", "fvu_fhat", "fvu_fcheck"],
        entries.iter().map(|e| {
            vec![e.file.clone(), e.target.clone(), e.construction.clone(), fmt_f64(e.fvu_lower), fmt_f64(e.fvu_upper)]
        }),
    )?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_columns_hold_and_grids_have_1000_rows() {
        let dir = tempfile::tempdir().unwrap();
        let entries = demo_figures(dir.path(), false).unwrap();
        assert_eq!(entries.len(), 5);
        for e in &entries {
            let mut rdr = csv::Reader::from_path(dir.path().join(&e.file)).unwrap();
            let mut rows = 0;
            for rec in rdr.records() {
                let rec = rec.unwrap();
                let v: Vec<f64> = rec.iter().map(|s| s.parse().unwrap()).collect();
                let gap = v[1] - v[2];
                assert!(gap >= v[4] - 1e-12 && gap <= v[5] + 1e-12, "{}: {v:?}", e.file);
                rows += 1;
            }
            assert_eq!(rows, GRID_POINTS);
        }
    }

    #[test]
    fn exact_curve_has_zero_fvu() {
        let dir = tempfile::tempdir().unwrap();
        let xs = linspace(0.0, 1.0, 5);
        let f: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let curve = Curve { fhat: f.clone(), fcheck: f.clone(), band: None };
        let (a, b) = write_grid(dir.path(), "t.csv", &xs, &f, &curve).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
    }
}
