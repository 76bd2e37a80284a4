//! Observed data `(W, A, Y)`, outcome scaling and CSV ingestion.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map that took the raw outcome onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub lower: f64,
    pub upper: f64,
    pub applied: bool,
}

impl OutcomeScale {
    pub fn identity() -> Self {
        OutcomeScale {
            lower: 0.0,
            upper: 1.0,
            applied: false,
        }
    }

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::DegenerateRange { lower, upper });
        }
        Ok(OutcomeScale {
            lower,
            upper,
            applied: true,
        })
    }

    /// `b - a` when applied, otherwise 1.
    pub fn width(&self) -> f64 {
        if self.applied {
            self.upper - self.lower
        } else {
            1.0
        }
    }
}

impl Default for OutcomeScale {
    fn default() -> Self {
        Self::identity()
    }
}

/// Validated sample of `n` subjects with `p` covariates; `y` is on the `[0, 1]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset {
    w: DMatrix<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
    scale: OutcomeScale,
}

impl ObservedDataset {
    /// Builds a dataset from an already scaled outcome.
    pub fn new(w: DMatrix<f64>, a: Vec<f64>, y: Vec<f64>, scale: OutcomeScale) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        if w.nrows() != n || a.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "w has {} rows, a has {}, y has {}",
                w.nrows(),
                a.len(),
                n
            )));
        }
        if w.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one covariate".into()));
        }
        if let Some((i, _)) = w.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::MissingValue {
                column: format!("w{}", i / n + 1),
                row: i % n,
            });
        }
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 && ai != 1.0 {
                return Err(Error::NonBinaryTreatment {
                    column: "a".into(),
                    row: i,
                    value: ai,
                });
            }
        }
        for (i, &yi) in y.iter().enumerate() {
            if !(0.0..=1.0).contains(&yi) {
                return Err(Error::OutOfRange {
                    index: i,
                    value: yi,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
        Ok(ObservedDataset { w, a, y, scale })
    }

    /// Builds a dataset from a raw outcome, scaling it when it is not already in `[0, 1]`
    /// or when explicit bounds are given.
    pub fn from_raw_outcome(
        w: DMatrix<f64>,
        a: Vec<f64>,
        y_raw: Vec<f64>,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        let (y, scale) = match bounds {
            Some((lo, hi)) => (scale_outcome(&y_raw, lo, hi)?, OutcomeScale::new(lo, hi)?),
            None if y_raw.iter().all(|v| (0.0..=1.0).contains(v)) => {
                (y_raw, OutcomeScale::identity())
            }
            None => {
                let lo = y_raw.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = y_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (scale_outcome(&y_raw, lo, hi)?, OutcomeScale::new(lo, hi)?)
            }
        };
        Self::new(w, a, y, scale)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn scale(&self) -> OutcomeScale {
        self.scale
    }

    /// Covariate row `i` as an owned vector.
    pub fn w_row(&self, i: usize) -> Vec<f64> {
        self.w.row(i).iter().copied().collect()
    }

    /// Subset of rows, preserving order of `idx`.
    pub fn subset(&self, idx: &[usize]) -> ObservedDataset {
        let w = self.w.select_rows(idx.iter());
        ObservedDataset {
            w,
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            scale: self.scale,
        }
    }
}

/// Elementwise `(y - lower) / (upper - lower)`.
pub fn scale_outcome(y: &[f64], lower: f64, upper: f64) -> Result<Vec<f64>> {
    if !(upper > lower) {
        return Err(Error::DegenerateRange { lower, upper });
    }
    let width = upper - lower;
    y.iter()
        .enumerate()
        .map(|(index, &value)| {
            if value < lower || value > upper || !value.is_finite() {
                Err(Error::OutOfRange {
                    index,
                    value,
                    lower,
                    upper,
                })
            } else {
                Ok(((value - lower) / width).clamp(0.0, 1.0))
            }
        })
        .collect()
}

/// Point estimates and standard errors for (ATE, VTE).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteVte {
    pub ate: f64,
    pub vte: f64,
    pub se_ate: f64,
    pub se_vte: f64,
}

/// Maps estimates on the `[0, 1]` outcome scale back to original units:
/// ATE and its SE scale by `b - a`, VTE and its SE by `(b - a)^2`.
pub fn unscale_estimates(scaled: AteVte, scale: OutcomeScale) -> AteVte {
    let w = scale.width();
    AteVte {
        ate: scaled.ate * w,
        vte: scaled.vte * w * w,
        se_ate: scaled.se_ate * w,
        se_vte: scaled.se_vte * w * w,
    }
}

/// Reads `(W, A, Y)` from a CSV file with a header row.
///
/// Binary outcomes are kept as is. Other outcomes are scaled with `bounds` when
/// given, otherwise with the column minimum and maximum.
pub fn load_csv(
    path: impl AsRef<Path>,
    y_col: &str,
    a_col: &str,
    w_cols: &[String],
    bounds: Option<(f64, f64)>,
) -> Result<ObservedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    if w_cols.is_empty() {
        return Err(Error::InvalidArgument("at least one covariate column is required".into()));
    }
    let yi = index_of(y_col)?;
    let ai = index_of(a_col)?;
    let wi: Vec<usize> = w_cols.iter().map(|c| index_of(c)).collect::<Result<_>>()?;

    let parse = |record: &csv::StringRecord, col: usize, name: &str, row: usize| -> Result<f64> {
        let raw = record.get(col).unwrap_or("");
        if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
            return Err(Error::MissingValue {
                column: name.to_string(),
                row,
            });
        }
        raw.parse::<f64>().map_err(|_| Error::NonNumeric {
            column: name.to_string(),
            row,
            value: raw.to_string(),
        })
    };

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut w_flat = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let yv = parse(&record, yi, y_col, row)?;
        let av = parse(&record, ai, a_col, row)?;
        if av != 0.0 && av != 1.0 {
            return Err(Error::NonBinaryTreatment {
                column: a_col.to_string(),
                row,
                value: av,
            });
        }
        y.push(yv);
        a.push(av);
        for (&c, name) in wi.iter().zip(w_cols) {
            w_flat.push(parse(&record, c, name, row)?);
        }
    }
    let n = y.len();
    let w = DMatrix::from_row_slice(n, wi.len(), &w_flat);
    ObservedDataset::from_raw_outcome(w, a, y, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn cols(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn binary_outcome_is_not_scaled() {
        let f = write_tmp("y,a,w1\n1,0,0.5\n0,1,1.5\n1,1,-2\n");
        let d = load_csv(f.path(), "y", "a", &cols(&["w1"]), None).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 1);
        assert!(!d.scale().applied);
        assert_eq!(d.y(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn continuous_outcome_uses_min_max() {
        let f = write_tmp("y,a,w1\n2,0,0\n7,1,1\n12,1,2\n");
        let d = load_csv(f.path(), "y", "a", &cols(&["w1"]), None).unwrap();
        let s = d.scale();
        assert!(s.applied);
        assert_eq!((s.lower, s.upper), (2.0, 12.0));
        assert_eq!(d.y(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn supplied_bounds_override_data_range() {
        let f = write_tmp("y,a,w1\n2,0,0\n7,1,1\n");
        let d = load_csv(f.path(), "y", "a", &cols(&["w1"]), Some((0.0, 10.0))).unwrap();
        assert_eq!(d.y(), &[0.2, 0.7]);
    }

    #[test]
    fn ingestion_errors_are_distinct() {
        let missing = load_csv("/nonexistent/file.csv", "y", "a", &cols(&["w1"]), None);
        assert!(matches!(missing, Err(Error::Io { .. })));

        let f = write_tmp("y,a,w1\n1,2,0\n");
        let err = load_csv(f.path(), "y", "a", &cols(&["w1"]), None).unwrap_err();
        assert!(matches!(err, Error::NonBinaryTreatment { row: 0, .. }));

        let f = write_tmp("y,a,w1\n1,0,abc\n");
        let err = load_csv(f.path(), "y", "a", &cols(&["w1"]), None).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { .. }));

        let f = write_tmp("y,a,w1\n1,0,\n");
        let err = load_csv(f.path(), "y", "a", &cols(&["w1"]), None).unwrap_err();
        assert!(matches!(err, Error::MissingValue { .. }));

        let f = write_tmp("y,a,w1\n1,0,1\n");
        let err = load_csv(f.path(), "y", "a", &cols(&["w9"]), None).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "w9"));
    }

    #[test]
    fn scale_outcome_linear_map() {
        assert_eq!(scale_outcome(&[5.0], 0.0, 10.0).unwrap(), vec![0.5]);
        assert_eq!(
            scale_outcome(&[2.0, 7.0, 12.0], 2.0, 12.0).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert!(matches!(
            scale_outcome(&[1.0], 3.0, 3.0),
            Err(Error::DegenerateRange { .. })
        ));
        assert!(matches!(
            scale_outcome(&[13.0], 2.0, 12.0),
            Err(Error::OutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn unscale_multiplies_by_width_and_its_square() {
        let scale = OutcomeScale::new(0.0, 10.0).unwrap();
        let out = unscale_estimates(
            AteVte {
                ate: 0.05,
                vte: 0.01,
                se_ate: 0.02,
                se_vte: 0.004,
            },
            scale,
        );
        assert!((out.ate - 0.5).abs() < 1e-12);
        assert!((out.vte - 1.0).abs() < 1e-12);
        assert!((out.se_ate - 0.2).abs() < 1e-12);
        assert!((out.se_vte - 0.4).abs() < 1e-12);

        let same = AteVte {
            ate: 0.05,
            vte: 0.01,
            se_ate: 0.02,
            se_vte: 0.004,
        };
        assert_eq!(unscale_estimates(same, OutcomeScale::identity()), same);
    }

    #[test]
    fn load_is_deterministic() {
        let f = write_tmp("y,a,w1,w2\n3.5,0,0.1,2\n7.25,1,1,3\n4,1,2,-1\n");
        let w = cols(&["w1", "w2"]);
        let d1 = load_csv(f.path(), "y", "a", &w, None).unwrap();
        let d2 = load_csv(f.path(), "y", "a", &w, None).unwrap();
        assert_eq!(d1, d2);
    }

    proptest::proptest! {
        #[test]
        fn scale_then_unscale_is_identity(
            lower in -1e3f64..1e3,
            log_width in -3.0f64..6.0,
            ate_s in -1.0f64..1.0,
            vte_s in 0.0f64..0.25,
        ) {
            let scale = OutcomeScale::new(lower, lower + 10f64.powf(log_width)).unwrap();
            let width = scale.width();
            let raw = AteVte { ate: ate_s * width, vte: vte_s * width * width, se_ate: 0.1 * width, se_vte: 0.01 * width * width };
            let scaled = AteVte { ate: raw.ate / width, vte: raw.vte / (width * width), se_ate: raw.se_ate / width, se_vte: raw.se_vte / (width * width) };
            let back = unscale_estimates(scaled, scale);
            let rel = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs().max(1e-300);
            proptest::prop_assert!(rel(back.ate, raw.ate) || (back.ate - raw.ate).abs() < 1e-300);
            proptest::prop_assert!(rel(back.vte, raw.vte) || raw.vte == 0.0);
            proptest::prop_assert!(rel(back.se_ate, raw.se_ate));
            proptest::prop_assert!(rel(back.se_vte, raw.se_vte));
        }
    }
}
