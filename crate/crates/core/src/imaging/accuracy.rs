use serde::Serialize;

use crate::error::{Error, Result};

/// Largest label set the exhaustive matching will handle.
pub const MAX_MATCH_CLASSES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    /// Fraction of pixels whose mapped predicted label equals the truth.
    pub accuracy: f64,
    /// `(predicted, truth)` pairs of the best one-to-one matching, sorted by
    /// predicted label. Predicted labels left unmatched map to `None`.
    pub mapping: Vec<(usize, Option<usize>)>,
    pub correct: usize,
    pub total: usize,
}

/// Segmentation accuracy under the best one-to-one relabelling.
///
/// Class indices produced by unsupervised segmentation are arbitrary, so the
/// predicted labels are matched to truth labels by the injective mapping that
/// maximises the number of agreeing pixels (exhaustive search). When there
/// are more predicted than truth labels the surplus ones stay unmatched and
/// count as errors.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<AccuracyReport> {
    if pred.len() != truth.len() {
        return Err(Error::arg(format!(
            "prediction has {} pixels, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("cannot score an empty labeling"));
    }
    let p_labels = distinct(pred);
    let t_labels = distinct(truth);
    if p_labels.len() > MAX_MATCH_CLASSES || t_labels.len() > MAX_MATCH_CLASSES {
        return Err(Error::arg(format!(
            "label matching is limited to {MAX_MATCH_CLASSES} classes ({} predicted, {} truth)",
            p_labels.len(),
            t_labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; t_labels.len()]; p_labels.len()];
    for (p, t) in pred.iter().zip(truth) {
        let pi = p_labels.binary_search(p).unwrap();
        let ti = t_labels.binary_search(t).unwrap();
        confusion[pi][ti] += 1;
    }

    // Assign each element of the smaller side to a distinct element of the larger.
    let transpose = p_labels.len() > t_labels.len();
    let (rows, cols) = if transpose {
        (t_labels.len(), p_labels.len())
    } else {
        (p_labels.len(), t_labels.len())
    };
    let weight = |r: usize, c: usize| if transpose { confusion[c][r] } else { confusion[r][c] };
    let mut best = (0usize, Vec::new());
    let mut current = Vec::with_capacity(rows);
    let mut used = vec![false; cols];
    search(rows, cols, &weight, &mut current, &mut used, 0, &mut best);

    let mut mapping: Vec<(usize, Option<usize>)> = p_labels.iter().map(|&p| (p, None)).collect();
    for (r, &c) in best.1.iter().enumerate() {
        let (pi, ti) = if transpose { (c, r) } else { (r, c) };
        mapping[pi].1 = Some(t_labels[ti]);
    }
    Ok(AccuracyReport {
        accuracy: best.0 as f64 / pred.len() as f64,
        mapping,
        correct: best.0,
        total: pred.len(),
    })
}

fn distinct(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn search(
    rows: usize,
    cols: usize,
    weight: &dyn Fn(usize, usize) -> usize,
    current: &mut Vec<usize>,
    used: &mut [bool],
    score: usize,
    best: &mut (usize, Vec<usize>),
) {
    let r = current.len();
    if r == rows {
        if score > best.0 || best.1.is_empty() {
            *best = (score, current.clone());
        }
        return;
    }
    for c in 0..cols {
        if !used[c] {
            used[c] = true;
            current.push(c);
            search(rows, cols, weight, current, used, score + weight(r, c), best);
            current.pop();
            used[c] = false;
        }
    }
}
