//! Base learners for conditional means of a `[0, 1]` outcome and a
//! cross-validated convex stacking ensemble over them.

mod basis;
mod ensemble;
mod knn;
mod logistic;

pub use basis::{Basis, Standardizer};
pub use ensemble::{fit_ensemble, EnsembleFit, EnsembleOptions, Selector};
pub use knn::KnnFit;
pub use logistic::{fit_logistic_mle, LogisticFit, LogisticOptions};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mean;

/// One entry of a learner library, as written in campaign configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LearnerSpec {
    Mean,
    LogisticMain,
    LogisticMainInteractions,
    LogisticL1 { lambda: f64 },
    LogisticL2 { lambda: f64 },
    Knn { k: usize },
    PolynomialLogistic { degree: u8 },
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LearnerSpec::LogisticL1 { lambda } | LearnerSpec::LogisticL2 { lambda }
                if !(lambda >= 0.0) =>
            {
                Err(Error::InvalidArgument(format!("penalty must be >= 0, got {lambda}")))
            }
            LearnerSpec::Knn { k: 0 } => Err(Error::InvalidArgument("knn needs k >= 1".into())),
            LearnerSpec::PolynomialLogistic { degree } if !(1..=3).contains(&degree) => Err(
                Error::InvalidArgument(format!("polynomial degree must be 1, 2 or 3, got {degree}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            LearnerSpec::Mean => "mean".into(),
            LearnerSpec::LogisticMain => "logistic-main".into(),
            LearnerSpec::LogisticMainInteractions => "logistic-main-interactions".into(),
            LearnerSpec::LogisticL1 { lambda } => format!("logistic-l1({lambda})"),
            LearnerSpec::LogisticL2 { lambda } => format!("logistic-l2({lambda})"),
            LearnerSpec::Knn { k } => format!("knn({k})"),
            LearnerSpec::PolynomialLogistic { degree } => format!("polynomial-logistic({degree})"),
        }
    }

    /// Fits the learner on raw features `x` (no intercept column).
    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<FittedLearner> {
        self.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {} outcomes",
                x.nrows(),
                y.len()
            )));
        }
        let logistic = |basis: Basis, l1: f64, l2: f64| -> Result<FittedLearner> {
            let design = basis.expand(x);
            let standardizer = Standardizer::fit(&design);
            let z = standardizer.transform(&design);
            let opts = LogisticOptions {
                l1,
                l2,
                ..Default::default()
            };
            let fit = fit_logistic_mle(&z, y, &opts)?;
            Ok(FittedLearner::Logistic {
                basis,
                standardizer,
                fit,
                p: x.ncols(),
            })
        };
        match *self {
            LearnerSpec::Mean => Ok(FittedLearner::Mean {
                value: mean(y),
                p: x.ncols(),
            }),
            LearnerSpec::LogisticMain => logistic(Basis::Main, 0.0, 0.0),
            LearnerSpec::LogisticMainInteractions => logistic(Basis::MainInteractions, 0.0, 0.0),
            LearnerSpec::LogisticL1 { lambda } => logistic(Basis::MainInteractions, lambda, 0.0),
            LearnerSpec::LogisticL2 { lambda } => logistic(Basis::MainInteractions, 0.0, lambda),
            LearnerSpec::PolynomialLogistic { degree } => logistic(Basis::Polynomial(degree), 0.0, 0.0),
            LearnerSpec::Knn { k } => Ok(FittedLearner::Knn(KnnFit::fit(x, y, k)?)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedLearner {
    Mean {
        value: f64,
        p: usize,
    },
    Logistic {
        basis: Basis,
        standardizer: Standardizer,
        fit: LogisticFit,
        p: usize,
    },
    Knn(KnnFit),
}

impl FittedLearner {
    /// Raw (unclipped) predictions.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            FittedLearner::Mean { value, p } => {
                if x.ncols() != *p {
                    return Err(Error::DimensionMismatch(format!(
                        "expected {p} feature columns, got {}",
                        x.ncols()
                    )));
                }
                Ok(vec![*value; x.nrows()])
            }
            FittedLearner::Logistic {
                basis,
                standardizer,
                fit,
                p,
            } => {
                if x.ncols() != *p {
                    return Err(Error::DimensionMismatch(format!(
                        "expected {p} feature columns, got {}",
                        x.ncols()
                    )));
                }
                fit.predict(&standardizer.transform(&basis.expand(x)))
            }
            FittedLearner::Knn(k) => k.predict(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(LearnerSpec::Knn { k: 0 }.validate().is_err());
        assert!(LearnerSpec::PolynomialLogistic { degree: 4 }.validate().is_err());
        assert!(LearnerSpec::LogisticL2 { lambda: -1.0 }.validate().is_err());
        assert!(LearnerSpec::LogisticL1 { lambda: 0.0 }.validate().is_ok());
    }

    #[test]
    fn spec_json_shape() {
        let lib: Vec<LearnerSpec> = serde_json::from_str(
            r#"[{"kind":"mean"},{"kind":"knn","k":15},{"kind":"logistic-l1","lambda":0.01},{"kind":"polynomial-logistic","degree":2}]"#,
        )
        .unwrap();
        assert_eq!(lib[1], LearnerSpec::Knn { k: 15 });
        assert_eq!(lib[3], LearnerSpec::PolynomialLogistic { degree: 2 });
        assert!(serde_json::from_str::<LearnerSpec>(r#"{"kind":"forest"}"#).is_err());
    }

    #[test]
    fn mean_learner_predicts_sample_mean() {
        let x = DMatrix::from_row_slice(4, 1, &[1., 2., 3., 4.]);
        let fit = LearnerSpec::Mean.fit(&x, &[0., 1., 1., 0.]).unwrap();
        assert_eq!(fit.predict(&x).unwrap(), vec![0.5; 4]);
        assert!(fit.predict(&DMatrix::zeros(2, 3)).is_err());
    }
}
