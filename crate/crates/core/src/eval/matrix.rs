use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluate;
use crate::data::{FakeKind, SplitDataset};
use crate::error::{Result, TarError};
use crate::model::ModelParams;
use crate::train::Snapshot;

const NONE: &str = "—";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub name: String,
    pub cells: Vec<f64>,
    /// Column of the domain the row's model was trained on first.
    pub base: Option<usize>,
}

/// Accuracy per model state (rows) and test domain (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl AccuracyMatrix {
    pub fn new(columns: Vec<String>) -> Self {
        AccuracyMatrix { columns, rows: Vec::new() }
    }

    pub fn push_row(&mut self, name: impl Into<String>, cells: Vec<f64>, base: Option<usize>) -> Result<()> {
        let name = name.into();
        if cells.len() != self.columns.len() {
            return Err(TarError::contract(format!(
                "row {name}: {} cells for {} columns",
                cells.len(),
                self.columns.len()
            )));
        }
        if let Some(c) = cells.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(TarError::contract(format!("row {name}: accuracy {c} outside [0, 1]")));
        }
        if base.is_some_and(|b| b >= cells.len()) {
            return Err(TarError::contract(format!("row {name}: base column out of range")));
        }
        self.rows.push(MatrixRow { name, cells, base });
        Ok(())
    }

    pub fn average(&self, row: usize) -> f64 {
        let c = &self.rows[row].cells;
        c.iter().sum::<f64>() / c.len().max(1) as f64
    }

    /// Per-column change against the previous row; `None` for the first.
    pub fn delta(&self, row: usize) -> Option<Vec<f64>> {
        let prev = self.rows.get(row.checked_sub(1)?)?;
        Some(self.rows[row].cells.iter().zip(&prev.cells).map(|(a, b)| a - b).collect())
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.name == row).map(|r| r.cells[c])
    }

    /// Cells at six decimals; the derived columns are computed from the
    /// rounded cells so that parsing and re-emitting is byte-stable.
    pub fn to_csv(&self) -> String {
        let m = self.rounded();
        m.csv_body()
    }

    fn csv_body(&self) -> String {
        let mut s = String::from("model,base");
        for c in &self.columns {
            let _ = write!(s, ",{c}");
        }
        s.push_str(",average");
        for c in &self.columns {
            let _ = write!(s, ",delta_{c}");
        }
        s.push_str(",delta_average\n");
        for (i, r) in self.rows.iter().enumerate() {
            let base = r.base.map_or(String::new(), |b| self.columns[b].clone());
            let _ = write!(s, "{},{base}", r.name);
            for v in &r.cells {
                let _ = write!(s, ",{v:.6}");
            }
            let _ = write!(s, ",{:.6}", self.average(i));
            match self.delta(i) {
                Some(d) => {
                    for v in &d {
                        let _ = write!(s, ",{v:.6}");
                    }
                    let _ = write!(s, ",{:.6}", d.iter().sum::<f64>() / d.len().max(1) as f64);
                }
                None => {
                    for _ in 0..=self.columns.len() {
                        let _ = write!(s, ",{NONE}");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    /// Parse the output of [`AccuracyMatrix::to_csv`]. Derived columns are
    /// recomputed rather than read.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| TarError::format(0, "empty table"))?;
        let h: Vec<&str> = header.split(',').collect();
        let n = h.iter().position(|c| *c == "average").ok_or_else(|| TarError::format(0, "no average column"))?;
        if n < 2 || h[..2] != ["model", "base"] {
            return Err(TarError::format(0, "table header must start with model,base"));
        }
        let columns: Vec<String> = h[2..n].iter().map(|c| c.to_string()).collect();
        let mut m = AccuracyMatrix::new(columns);
        let mut offset = header.len() + 1;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| TarError::format(offset, format!("table row: {what}"));
            if f.len() < n {
                return Err(bad("too few fields"));
            }
            let cells = f[2..n]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            let base = if f[1].is_empty() {
                None
            } else {
                Some(m.columns.iter().position(|c| c == f[1]).ok_or_else(|| bad("unknown base column"))?)
            };
            m.push_row(f[0], cells, base).map_err(|e| bad(&e.to_string()))?;
            offset += line.len() + 1;
        }
        Ok(m)
    }

    /// Copy with every cell rounded to the six decimals of the CSV form.
    pub fn rounded(&self) -> Self {
        let mut m = self.clone();
        for r in &mut m.rows {
            for c in &mut r.cells {
                *c = round6(*c);
            }
        }
        m
    }

    /// Markdown table; the base-domain cell of each row is bold.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| model |");
        for c in &self.columns {
            let _ = write!(s, " {c} |");
        }
        s.push_str(" average |");
        for c in &self.columns {
            let _ = write!(s, " Δ {c} |");
        }
        s.push_str(" Δ average |\n|---|");
        for _ in 0..2 * self.columns.len() + 2 {
            s.push_str("---:|");
        }
        s.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(s, "| {} |", r.name);
            for (j, v) in r.cells.iter().enumerate() {
                if r.base == Some(j) {
                    let _ = write!(s, " **{:.2}** |", 100.0 * v);
                } else {
                    let _ = write!(s, " {:.2} |", 100.0 * v);
                }
            }
            let _ = write!(s, " {:.2} |", 100.0 * self.average(i));
            match self.delta(i) {
                Some(d) => {
                    for v in &d {
                        let _ = write!(s, " {:+.2} |", 100.0 * v);
                    }
                    let _ = write!(s, " {:+.2} |", 100.0 * d.iter().sum::<f64>() / d.len().max(1) as f64);
                }
                None => {
                    for _ in 0..=self.columns.len() {
                        let _ = write!(s, " {NONE} |");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// One row: the model's test accuracy on every domain in `data`.
pub fn zero_shot_matrix(
    model: &ModelParams<f32>,
    name: &str,
    base: FakeKind,
    data: &SplitDataset,
) -> Result<AccuracyMatrix> {
    let kinds = data.kinds();
    let base_col = kinds.iter().position(|k| *k == base);
    let mut m = AccuracyMatrix::new(kinds.iter().map(|k| k.name().to_string()).collect());
    let mut cells = Vec::with_capacity(kinds.len());
    for d in &data.domains {
        cells.push(evaluate(model, &d.test)?.accuracy);
    }
    m.push_row(name, cells, base_col)?;
    Ok(m)
}

/// One row per snapshot, in stage order.
pub fn transfer_table(snapshots: &[Snapshot]) -> Result<AccuracyMatrix> {
    let first = snapshots
        .first()
        .ok_or_else(|| TarError::config("transfer table needs at least one snapshot"))?;
    let mut m = AccuracyMatrix::new(first.domains.iter().map(|k| k.name().to_string()).collect());
    for s in snapshots {
        if s.domains != first.domains {
            return Err(TarError::contract(format!("snapshot {} has a different domain set", s.name)));
        }
        let base = s.domains.iter().position(|k| Some(*k) == s.base);
        m.push_row(s.name.clone(), s.accuracy.clone(), base)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AccuracyMatrix {
        let mut m = AccuracyMatrix::new(vec!["a".into(), "b".into()]);
        m.push_row("base", vec![0.9, 0.55], Some(0)).unwrap();
        m.push_row("base→b", vec![0.8, 0.925], Some(0)).unwrap();
        m
    }

    #[test]
    fn first_row_has_no_delta() {
        let m = sample();
        assert!(m.delta(0).is_none());
        let d = m.delta(1).unwrap();
        assert!((d[0] + 0.1).abs() < 1e-12 && (d[1] - 0.375).abs() < 1e-12);
        let csv = m.to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(",—,—,—"));
        assert!(m.to_markdown().contains("**90.00**"));
    }

    #[test]
    fn csv_round_trip() {
        let m = sample();
        assert_eq!(AccuracyMatrix::from_csv(&m.to_csv()).unwrap(), m.rounded());
    }

    #[test]
    fn rejects_out_of_range_cells() {
        let mut m = AccuracyMatrix::new(vec!["a".into()]);
        assert!(m.push_row("x", vec![1.5], None).is_err());
        assert!(m.push_row("x", vec![0.5, 0.5], None).is_err());
    }
}
