use crate::error::{Error, Result};

/// `K x K` counts, rows indexed by true class, columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidConfig("confusion matrix must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for c in [truth, pred] {
            if c >= self.k {
                return Err(Error::LabelOutOfRange { label: c, classes: self.k });
            }
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::InvalidConfig(format!("cannot merge {}-class and {}-class matrices", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    fn predicted(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum()
    }

    /// Recall of each class; 0 for a class without examples.
    pub fn recalls(&self) -> Vec<f64> {
        (0..self.k).map(|c| ratio(self.get(c, c), self.support(c))).collect()
    }

    /// Precision of each class; 0 for a class never predicted.
    pub fn precisions(&self) -> Vec<f64> {
        (0..self.k).map(|c| ratio(self.get(c, c), self.predicted(c))).collect()
    }

    /// F1 of each class; 0 when precision and recall are both 0.
    pub fn f1s(&self) -> Vec<f64> {
        self.precisions()
            .into_iter()
            .zip(self.recalls())
            .map(|(p, r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
            .collect()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["true\\pred".to_string()];
        header.extend((0..self.k).map(|c| c.to_string()));
        w.write_record(&header)?;
        for (t, row) in self.rows().iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn nonempty(cm: &ConfusionMatrix) -> Result<()> {
    if cm.k == 0 || cm.total() == 0 {
        return Err(Error::EmptyConfusionMatrix);
    }
    Ok(())
}

/// Unweighted average recall.
pub fn uar(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    Ok(cm.recalls().iter().sum::<f64>() / cm.k as f64)
}

/// Unweighted average F1.
pub fn uaf1(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    Ok(cm.f1s().iter().sum::<f64>() / cm.k as f64)
}
