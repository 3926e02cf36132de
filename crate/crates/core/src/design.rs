use crate::error::{Error, Result};

/// Dense column-major design matrix with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    nrows: usize,
    names: Vec<String>,
    data: Vec<f64>,
}

impl Design {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Input(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let nrows = columns.first().map_or(0, Vec::len);
        if let Some(k) = columns.iter().position(|c| c.len() != nrows) {
            return Err(Error::Input(format!(
                "column '{}' has {} rows, expected {nrows}",
                names[k],
                columns[k].len()
            )));
        }
        Ok(Self {
            nrows,
            names,
            data: columns.concat(),
        })
    }

    /// Builds from row-major rows; handy in tests.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let k = names.len();
        let cols = (0..k)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Self::from_columns(names, cols)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn col(&self, k: usize) -> &[f64] {
        &self.data[k * self.nrows..(k + 1) * self.nrows]
    }

    pub fn get(&self, row: usize, k: usize) -> f64 {
        self.data[k * self.nrows + row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.ncols()).map(|k| self.get(row, k)).collect()
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.ncols()).map(move |k| self.col(k))
    }

    /// Rows at `rows`, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let data = (0..self.ncols())
            .flat_map(|k| {
                let col = self.col(k);
                rows.iter().map(move |&r| col[r])
            })
            .collect();
        Self {
            nrows: rows.len(),
            names: self.names.clone(),
            data,
        }
    }

    /// Columns at `cols`, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            nrows: self.nrows,
            names: cols.iter().map(|&k| self.names[k].clone()).collect(),
            data: cols
                .iter()
                .flat_map(|&k| self.col(k).iter().copied())
                .collect(),
        }
    }

    /// `beta0 + Z beta` for every row.
    pub fn linear_predictor(&self, beta0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![beta0; self.nrows];
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, z) in eta.iter_mut().zip(self.col(k)) {
                    *e += b * z;
                }
            }
        }
        eta
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
