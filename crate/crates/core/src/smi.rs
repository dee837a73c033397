//! Set functions over a similarity kernel.
//!
//! `Fl` and `Gc` are the facility-location and graph-cut functions on a square
//! kernel over one ground set. `Flmi` and `Gcmi` are their submodular mutual
//! information forms on a bipartite kernel whose rows are the query set `R` and
//! whose columns are the candidate ground set:
//!
//! ```text
//! FLMI(A; R) = sum_{i in R} max_{j in A} S_ij + sum_{j in A} max_{i in R} S_ij
//! GCMI(A; R) = 2 * sum_{j in A} sum_{i in R} S_ij
//! ```
//!
//! A max over the empty set is 0. [`GainState`] keeps the bookkeeping that makes
//! marginal gains cheap: per-row maxima for the facility-location forms and
//! running similarity sums for graph cut.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SetFunctionKind {
    Fl,
    Gc { lambda: f64 },
    Flmi,
    Gcmi,
}

impl SetFunctionKind {
    pub fn gc() -> Self {
        SetFunctionKind::Gc { lambda: 1.0 }
    }

    pub fn is_mutual_information(&self) -> bool {
        matches!(self, SetFunctionKind::Flmi | SetFunctionKind::Gcmi)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SetFunctionKind::Fl => "fl",
            SetFunctionKind::Gc { .. } => "gc",
            SetFunctionKind::Flmi => "flmi",
            SetFunctionKind::Gcmi => "gcmi",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SetFunctionKind::Gc { lambda } = self {
            if !(*lambda > 0.0) {
                return Err(Error::Config(format!("graph-cut lambda must be > 0, got {lambda}")));
            }
        }
        Ok(())
    }

    /// From-scratch evaluation at `set`.
    pub fn eval(&self, set: &[usize], kernel: &Kernel) -> Result<f64> {
        match *self {
            SetFunctionKind::Fl => fl_eval(set, kernel),
            SetFunctionKind::Gc { lambda } => gc_eval(set, kernel, lambda),
            SetFunctionKind::Flmi => flmi_eval(set, kernel),
            SetFunctionKind::Gcmi => gcmi_eval(set, kernel),
        }
    }
}

fn check_set(set: &[usize], cols: usize) -> Result<()> {
    let mut seen = vec![false; cols];
    for &j in set {
        if j >= cols {
            return Err(Error::Input(format!("index {j} out of range for {cols} columns")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::Input(format!("index {j} repeated in set")));
        }
    }
    Ok(())
}

fn check_square(kernel: &Kernel) -> Result<()> {
    if !kernel.is_square() {
        return Err(Error::Input(format!(
            "expected a square kernel, got {}x{}",
            kernel.rows(),
            kernel.cols()
        )));
    }
    Ok(())
}

fn max_or_zero(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .unwrap_or(0.0)
}

pub fn flmi_eval(set: &[usize], kernel: &Kernel) -> Result<f64> {
    check_set(set, kernel.cols())?;
    let query_cover: f64 = (0..kernel.rows())
        .map(|i| max_or_zero(set.iter().map(|&j| kernel.get(i, j))))
        .sum();
    let set_cover: f64 = set
        .iter()
        .map(|&j| max_or_zero((0..kernel.rows()).map(|i| kernel.get(i, j))))
        .sum();
    Ok(query_cover + set_cover)
}

pub fn gcmi_eval(set: &[usize], kernel: &Kernel) -> Result<f64> {
    check_set(set, kernel.cols())?;
    let s: f64 = set
        .iter()
        .map(|&j| (0..kernel.rows()).map(|i| kernel.get(i, j)).sum::<f64>())
        .sum();
    Ok(2.0 * s)
}

pub fn fl_eval(set: &[usize], kernel: &Kernel) -> Result<f64> {
    check_square(kernel)?;
    check_set(set, kernel.cols())?;
    Ok((0..kernel.rows())
        .map(|i| max_or_zero(set.iter().map(|&j| kernel.get(i, j))))
        .sum())
}

pub fn gc_eval(set: &[usize], kernel: &Kernel, lambda: f64) -> Result<f64> {
    check_square(kernel)?;
    if kernel.max_asymmetry() > 1e-9 {
        return Err(Error::Input("graph cut requires a symmetric kernel".into()));
    }
    check_set(set, kernel.cols())?;
    let coverage: f64 = set.iter().map(|&i| kernel.row(i).iter().sum::<f64>()).sum();
    let internal: f64 = set
        .iter()
        .map(|&i| set.iter().map(|&j| kernel.get(i, j)).sum::<f64>())
        .sum();
    Ok(coverage - lambda * internal)
}

/// Incremental evaluation state for one maximization run.
#[derive(Debug, Clone)]
pub struct GainState<'k> {
    kind: SetFunctionKind,
    kernel: &'k Kernel,
    selected: Vec<usize>,
    in_set: Vec<bool>,
    /// `max_{j in A} S_ij` per row (facility-location forms).
    per_row_max: Vec<f64>,
    /// Per column: `max_i S_ij` (FLMI), `sum_i S_ij` (GCMI) or `sum_j S_ij` (GC).
    col_static: Vec<f64>,
    /// Per column: `sum_{j in A} S_xj` (GC only).
    selected_sim: Vec<f64>,
    /// Column-major copy of the kernel for the facility-location forms.
    columns: Vec<f64>,
    current_value: f64,
}

impl<'k> GainState<'k> {
    pub fn new(kind: SetFunctionKind, kernel: &'k Kernel) -> Result<Self> {
        kind.validate()?;
        let (rows, cols) = (kernel.rows(), kernel.cols());
        let col_static = match kind {
            SetFunctionKind::Fl => {
                check_square(kernel)?;
                Vec::new()
            }
            SetFunctionKind::Gc { .. } => {
                check_square(kernel)?;
                if kernel.max_asymmetry() > 1e-9 {
                    return Err(Error::Input("graph cut requires a symmetric kernel".into()));
                }
                (0..cols).map(|x| kernel.row(x).iter().sum()).collect()
            }
            SetFunctionKind::Flmi => (0..cols)
                .map(|j| max_or_zero((0..rows).map(|i| kernel.get(i, j))))
                .collect(),
            SetFunctionKind::Gcmi => (0..cols)
                .map(|j| (0..rows).map(|i| kernel.get(i, j)).sum())
                .collect(),
        };
        Ok(Self {
            kind,
            kernel,
            selected: Vec::new(),
            in_set: vec![false; cols],
            per_row_max: vec![0.0; rows],
            col_static,
            selected_sim: if matches!(kind, SetFunctionKind::Gc { .. }) {
                vec![0.0; cols]
            } else {
                Vec::new()
            },
            columns: if matches!(kind, SetFunctionKind::Fl | SetFunctionKind::Flmi) {
                (0..cols)
                    .flat_map(|j| (0..rows).map(move |i| kernel.get(i, j)))
                    .collect()
            } else {
                Vec::new()
            },
            current_value: 0.0,
        })
    }

    fn column(&self, x: usize) -> &[f64] {
        let r = self.kernel.rows();
        &self.columns[x * r..(x + 1) * r]
    }

    pub fn kind(&self) -> SetFunctionKind {
        self.kind
    }

    pub fn kernel(&self) -> &'k Kernel {
        self.kernel
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn contains(&self, x: usize) -> bool {
        self.in_set.get(x).copied().unwrap_or(false)
    }

    pub fn per_row_max(&self) -> &[f64] {
        &self.per_row_max
    }

    pub fn current_value(&self) -> f64 {
        self.current_value
    }

    pub fn ground_size(&self) -> usize {
        self.kernel.cols()
    }

    fn check_candidate(&self, x: usize) -> Result<()> {
        if x >= self.kernel.cols() {
            return Err(Error::Input(format!(
                "candidate {x} out of range for {} columns",
                self.kernel.cols()
            )));
        }
        if self.in_set[x] {
            return Err(Error::Logic(format!("candidate {x} is already selected")));
        }
        Ok(())
    }

    fn coverage_gain(&self, x: usize) -> f64 {
        self.per_row_max
            .iter()
            .zip(self.column(x))
            .map(|(&m, &s)| (s - m).max(0.0))
            .sum()
    }

    /// `f(A + x) - f(A)` for the current selection `A`.
    pub fn marginal_gain(&self, x: usize) -> Result<f64> {
        self.check_candidate(x)?;
        Ok(match self.kind {
            SetFunctionKind::Fl => self.coverage_gain(x),
            SetFunctionKind::Flmi => self.coverage_gain(x) + self.col_static[x],
            SetFunctionKind::Gcmi => 2.0 * self.col_static[x],
            SetFunctionKind::Gc { lambda } => {
                self.col_static[x] - lambda * (self.kernel.get(x, x) + 2.0 * self.selected_sim[x])
            }
        })
    }

    /// Add `x` to the selection, updating the memoized statistics.
    pub fn commit(&mut self, x: usize) -> Result<f64> {
        let gain = self.marginal_gain(x)?;
        self.in_set[x] = true;
        self.selected.push(x);
        match self.kind {
            SetFunctionKind::Fl | SetFunctionKind::Flmi => {
                let r = self.kernel.rows();
                let col = &self.columns[x * r..(x + 1) * r];
                for (m, &s) in self.per_row_max.iter_mut().zip(col) {
                    *m = m.max(s);
                }
            }
            SetFunctionKind::Gc { .. } => {
                for (y, s) in self.selected_sim.iter_mut().enumerate() {
                    *s += self.kernel.get(x, y);
                }
            }
            SetFunctionKind::Gcmi => {}
        }
        self.current_value += gain;
        Ok(gain)
    }

    /// Re-evaluate the function at the current selection without memoization.
    pub fn fresh_value(&self) -> Result<f64> {
        self.kind.eval(&self.selected, self.kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Kernel {
        Kernel::from_rows(&[vec![0.9, 0.1, 0.5], vec![0.2, 0.8, 0.4]]).unwrap()
    }

    #[test]
    fn flmi_examples() {
        let k = toy();
        assert_eq!(flmi_eval(&[], &k).unwrap(), 0.0);
        assert!((flmi_eval(&[0], &k).unwrap() - 2.0).abs() < 1e-12);
        assert!((flmi_eval(&[0, 1], &k).unwrap() - 3.4).abs() < 1e-12);
        assert!(matches!(flmi_eval(&[3], &k), Err(Error::Input(_))));
    }

    #[test]
    fn gcmi_examples() {
        let k = toy();
        assert_eq!(gcmi_eval(&[], &k).unwrap(), 0.0);
        assert!((gcmi_eval(&[0], &k).unwrap() - 2.2).abs() < 1e-12);
        assert!((gcmi_eval(&[0, 1], &k).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fl_and_gc_basics() {
        let sq = Kernel::from_rows(&[
            vec![1.0, 0.3, 0.2],
            vec![0.3, 1.0, 0.6],
            vec![0.2, 0.6, 1.0],
        ])
        .unwrap();
        assert_eq!(fl_eval(&[], &sq).unwrap(), 0.0);
        assert!(fl_eval(&[0, 1, 2], &sq).unwrap() >= 3.0);
        assert_eq!(gc_eval(&[], &sq, 1.0).unwrap(), 0.0);
        // singleton {1}: sum_j S_1j - S_11
        assert!((gc_eval(&[1], &sq, 1.0).unwrap() - (1.9 - 1.0)).abs() < 1e-12);
        assert!(matches!(fl_eval(&[0], &toy()), Err(Error::Input(_))));
        let asym = Kernel::from_rows(&[vec![1.0, 0.5], vec![0.1, 1.0]]).unwrap();
        assert!(matches!(gc_eval(&[0], &asym, 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn flmi_gains_and_commits() {
        let k = toy();
        let mut st = GainState::new(SetFunctionKind::Flmi, &k).unwrap();
        assert!((st.marginal_gain(0).unwrap() - 2.0).abs() < 1e-12);
        st.commit(0).unwrap();
        assert!((st.current_value() - 2.0).abs() < 1e-12);
        assert!((st.marginal_gain(1).unwrap() - 1.4).abs() < 1e-12);
        st.commit(1).unwrap();
        assert!((st.current_value() - 3.4).abs() < 1e-12);
        assert_eq!(st.per_row_max(), &[0.9, 0.8]);
        assert!(matches!(st.commit(1), Err(Error::Logic(_))));
        assert!(matches!(st.marginal_gain(0), Err(Error::Logic(_))));
    }

    #[test]
    fn gcmi_gain_is_state_independent() {
        let k = toy();
        let mut st = GainState::new(SetFunctionKind::Gcmi, &k).unwrap();
        assert!((st.marginal_gain(2).unwrap() - 1.8).abs() < 1e-12);
        st.commit(0).unwrap();
        st.commit(1).unwrap();
        assert!((st.marginal_gain(2).unwrap() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn lambda_must_be_positive() {
        let sq = Kernel::from_rows(&[vec![1.0]]).unwrap();
        assert!(GainState::new(SetFunctionKind::Gc { lambda: 0.0 }, &sq).is_err());
    }
}
