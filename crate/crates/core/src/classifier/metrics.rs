use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::telemetry::EfficiencyLabel;

/// One held-out prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub truth: EfficiencyLabel,
    pub predicted: EfficiencyLabel,
    /// Probability the model assigned to `predicted`.
    pub confidence: f64,
}

impl Prediction {
    /// Probability of the positive (inefficient) class.
    fn positive_probability(&self) -> f64 {
        if self.predicted == EfficiencyLabel::Inefficient {
            self.confidence
        } else {
            1.0 - self.confidence
        }
    }
}

/// Classification statistics. Rates are fractions, not percentages.
///
/// The positive class for the error measures is `Inefficient`; precision and
/// recall are averaged over both classes weighted by class support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub kappa: f64,
    pub mean_absolute_error: f64,
    pub root_mean_squared_error: f64,
    /// `None` when every truth is the same class (base-rate error is 0).
    pub relative_absolute_error: Option<f64>,
    pub root_relative_squared_error: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    /// Rows are truth, columns prediction, both `[Efficient, Inefficient]`.
    pub confusion_matrix: [[u64; 2]; 2],
    pub evaluated: u64,
    /// Chance agreement was 1, kappa reported as 0.
    #[serde(default)]
    pub kappa_degenerate: bool,
}

fn class(label: EfficiencyLabel) -> Result<usize, ClassifierError> {
    match label {
        EfficiencyLabel::Efficient => Ok(0),
        EfficiencyLabel::Inefficient => Ok(1),
        EfficiencyLabel::Unlabeled => Err(ClassifierError::UnlabeledData { count: 1 }),
    }
}

pub fn compute_metrics(predictions: &[Prediction]) -> Result<EvaluationReport, ClassifierError> {
    if predictions.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let n = predictions.len() as f64;
    let mut cm = [[0u64; 2]; 2];
    for p in predictions {
        cm[class(p.truth)?][class(p.predicted)?] += 1;
    }
    let correct = (cm[0][0] + cm[1][1]) as f64;
    let accuracy = correct / n;

    let row = |c: usize| (cm[c][0] + cm[c][1]) as f64;
    let col = |c: usize| (cm[0][c] + cm[1][c]) as f64;
    let p_e = (0..2).map(|c| row(c) / n * (col(c) / n)).sum::<f64>();
    let (kappa, kappa_degenerate) = if (1.0 - p_e).abs() < 1e-15 {
        (0.0, true)
    } else {
        ((accuracy - p_e) / (1.0 - p_e), false)
    };

    let mut precision = 0.0;
    let mut recall = 0.0;
    for (c, counts) in cm.iter().enumerate() {
        let support = row(c);
        if support == 0.0 {
            continue;
        }
        let hits = counts[c] as f64;
        let prec_c = if col(c) > 0.0 { hits / col(c) } else { 0.0 };
        precision += support / n * prec_c;
        recall += support / n * (hits / support);
    }

    let truth_pos: Vec<f64> = predictions
        .iter()
        .map(|p| {
            if p.truth == EfficiencyLabel::Inefficient {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let base_rate = truth_pos.iter().sum::<f64>() / n;
    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    let mut base_abs = 0.0;
    let mut base_sq = 0.0;
    for (p, t) in predictions.iter().zip(&truth_pos) {
        let e = t - p.positive_probability();
        abs_err += e.abs();
        sq_err += e * e;
        base_abs += (t - base_rate).abs();
        base_sq += (t - base_rate) * (t - base_rate);
    }
    Ok(EvaluationReport {
        accuracy,
        kappa,
        mean_absolute_error: abs_err / n,
        root_mean_squared_error: (sq_err / n).sqrt(),
        relative_absolute_error: (base_abs > 0.0).then(|| abs_err / base_abs),
        root_relative_squared_error: (base_sq > 0.0).then(|| (sq_err / base_sq).sqrt()),
        precision,
        recall,
        confusion_matrix: cm,
        evaluated: predictions.len() as u64,
        kappa_degenerate,
    })
}

impl EvaluationReport {
    /// Human-readable table in the usual statistics-summary layout.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", v * 100.0));
        format!(
            "Accuracy\t{:.2}%\nKappa statistic\t{:.4}\nMean absolute error\t{:.4}\nRoot mean squared error\t{:.4}\n\
             Relative absolute error\t{}\nRoot relative squared error\t{}\nPrecision\t{:.3}\nRecall\t{:.3}\n",
            self.accuracy * 100.0,
            self.kappa,
            self.mean_absolute_error,
            self.root_mean_squared_error,
            pct(self.relative_absolute_error),
            pct(self.root_relative_squared_error),
            self.precision,
            self.recall
        )
    }
}
