//! Embeddings and the cosine similarity kernel.
//!
//! Labeled points are embedded as one-hot class vectors, unlabeled points as the
//! classifier's class-probability vector. The kernel is stored row-major with
//! query-side rows (labeled points, tagged with their class) and ground-set
//! columns (unlabeled points, tagged with their index in the unlabeled pool).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::net::{self, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Softmax,
    OneHot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub kind: EmbeddingKind,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Class-probability embedding for each point under `params`.
pub fn prob_embed<X: AsRef<[f64]>>(params: &ParamVector, points: &[X]) -> Result<Vec<Embedding>> {
    Ok(net::forward_batch(params, points)?
        .into_iter()
        .map(|vector| Embedding {
            vector,
            kind: EmbeddingKind::Softmax,
        })
        .collect())
}

pub fn onehot_embed(labels: &[usize], classes: usize) -> Result<Vec<Embedding>> {
    labels
        .iter()
        .map(|&y| {
            if y >= classes {
                return Err(Error::Input(format!("label {y} out of range for {classes} classes")));
            }
            let mut vector = vec![0.0; classes];
            vector[y] = 1.0;
            Ok(Embedding {
                vector,
                kind: EmbeddingKind::OneHot,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    row_class: Vec<usize>,
    col_index: Vec<usize>,
}

impl Kernel {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        row_class: Vec<usize>,
        col_index: Vec<usize>,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Input(format!(
                "kernel has {} values, expected {rows}x{cols}",
                values.len()
            )));
        }
        if row_class.len() != rows || col_index.len() != cols {
            return Err(Error::Input(format!(
                "kernel metadata ({} row classes, {} column indices) does not match {rows}x{cols}",
                row_class.len(),
                col_index.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite kernel entry {v}")));
        }
        Ok(Self {
            rows,
            cols,
            values,
            row_class,
            col_index,
        })
    }

    /// Kernel from nested rows, with row classes 0 and column indices `0..cols`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged kernel rows".into()));
        }
        Self::new(
            rows.len(),
            cols,
            rows.concat(),
            vec![0; rows.len()],
            (0..cols).collect(),
        )
    }

    pub fn with_row_classes(mut self, row_class: Vec<usize>) -> Result<Self> {
        if row_class.len() != self.rows {
            return Err(Error::Input("row class count does not match rows".into()));
        }
        self.row_class = row_class;
        Ok(self)
    }

    pub fn with_col_index(mut self, col_index: Vec<usize>) -> Result<Self> {
        if col_index.len() != self.cols {
            return Err(Error::Input("column index count does not match columns".into()));
        }
        self.col_index = col_index;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_class(&self) -> &[usize] {
        &self.row_class
    }

    pub fn col_index(&self) -> &[usize] {
        &self.col_index
    }

    /// Distinct row classes in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.row_class.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Sub-kernel holding only the rows whose class is `class`; columns unchanged.
    pub fn class_rows(&self, class: usize) -> Kernel {
        let keep: Vec<usize> = (0..self.rows).filter(|&i| self.row_class[i] == class).collect();
        let mut values = Vec::with_capacity(keep.len() * self.cols);
        for &i in &keep {
            values.extend_from_slice(self.row(i));
        }
        Kernel {
            rows: keep.len(),
            cols: self.cols,
            values,
            row_class: vec![class; keep.len()],
            col_index: self.col_index.clone(),
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows.min(self.cols) {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// CSV layout: header `row_class,<col_index>...`, then one line per row
    /// starting with the row's class.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["row_class".to_string()];
        header.extend(self.col_index.iter().map(|c| c.to_string()));
        out.write_record(&header)?;
        for i in 0..self.rows {
            let mut rec = vec![self.row_class[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| format!("{v:?}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut records = rdr.records();
        let header = records.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty kernel file".into(),
        })??;
        if header.is_empty() || &header[0] != "row_class" {
            return Err(Error::Parse {
                line: 1,
                msg: "header must start with `row_class`".into(),
            });
        }
        let col_index = header
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line: 1,
                    msg: format!("bad column index {s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cols = col_index.len();
        let (mut values, mut row_class) = (Vec::new(), Vec::new());
        for (k, rec) in records.enumerate() {
            let line = k + 2;
            let rec = rec?;
            if rec.len() != cols + 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", cols + 1, rec.len()),
                });
            }
            row_class.push(rec[0].parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad row class {:?}: {e}", &rec[0]),
            })?);
            for field in rec.iter().skip(1) {
                let v = field.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("bad kernel value {field:?}: {e}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("non-finite kernel value {field:?}"),
                    });
                }
                values.push(v);
            }
        }
        Kernel::new(row_class.len(), cols, values, row_class, col_index)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarities between every row embedding and every column embedding.
///
/// Row classes are the argmax of each row embedding (exact for one-hot rows);
/// use [`Kernel::with_row_classes`] to override. Column indices are `0..cols`.
pub fn cosine_kernel(row_embeds: &[Embedding], col_embeds: &[Embedding]) -> Result<Kernel> {
    let dim = row_embeds
        .first()
        .or(col_embeds.first())
        .map_or(0, Embedding::dim);
    for e in row_embeds.iter().chain(col_embeds) {
        if e.dim() != dim {
            return Err(Error::Input(format!(
                "embedding dimension {} differs from {dim}",
                e.dim()
            )));
        }
    }
    let col_units = col_embeds
        .iter()
        .map(|e| {
            let n = norm(&e.vector);
            if n == 0.0 {
                return Err(Error::Input("zero embedding vector".into()));
            }
            Ok(e.vector.iter().map(|v| v / n).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(row_embeds.len() * col_embeds.len());
    for r in row_embeds {
        let n = norm(&r.vector);
        if n == 0.0 {
            return Err(Error::Input("zero embedding vector".into()));
        }
        let unit: Vec<f64> = r.vector.iter().map(|v| v / n).collect();
        for c in &col_units {
            let dot: f64 = unit.iter().zip(c).map(|(a, b)| a * b).sum();
            // Rounding can push the cosine of parallel non-negative vectors just past 1.
            values.push(dot.min(1.0));
        }
    }
    Kernel::new(
        row_embeds.len(),
        col_embeds.len(),
        values,
        row_embeds.iter().map(|e| net::argmax(&e.vector)).collect(),
        (0..col_embeds.len()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft(v: &[f64]) -> Embedding {
        Embedding {
            vector: v.to_vec(),
            kind: EmbeddingKind::Softmax,
        }
    }

    #[test]
    fn onehot_definitions() {
        let e = onehot_embed(&[0, 2], 3).unwrap();
        assert_eq!(e[0].vector, vec![1.0, 0.0, 0.0]);
        assert_eq!(e[1].vector, vec![0.0, 0.0, 1.0]);
        let e = onehot_embed(&[0, 0, 1], 2).unwrap();
        let rows: Vec<_> = e.iter().map(|x| x.vector.clone()).collect();
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(onehot_embed(&[3], 3), Err(Error::Input(_))));
    }

    #[test]
    fn zero_logits_embed_uniformly() {
        let p = ParamVector::zeros(&[3, 5]).unwrap();
        let e = prob_embed(&p, &[vec![0.1, 0.2, 0.3]]).unwrap();
        for v in &e[0].vector {
            assert!((v - 0.2).abs() < 1e-15);
        }
        assert_eq!(e[0].kind, EmbeddingKind::Softmax);
    }

    #[test]
    fn prob_embed_rejects_bad_dimension() {
        let p = ParamVector::zeros(&[3, 5]).unwrap();
        assert!(matches!(prob_embed(&p, &[vec![0.1]]), Err(Error::Config(_))));
    }

    #[test]
    fn cosine_examples() {
        let oh = onehot_embed(&[0, 1], 2).unwrap();
        let k = cosine_kernel(&oh, &oh).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(0, 1), 0.0);
        let k = cosine_kernel(&oh[..1], &[soft(&[0.8, 0.2])]).unwrap();
        // 0.8 / sqrt(0.68), evaluated by hand: 0.970142500145332
        assert!((k.get(0, 0) - 0.970_142_500_145_332).abs() < 1e-12);
        assert_eq!(k.row_class(), &[0]);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = onehot_embed(&[0], 2).unwrap();
        let b = onehot_embed(&[0], 3).unwrap();
        assert!(matches!(cosine_kernel(&a, &b), Err(Error::Input(_))));
    }

    #[test]
    fn csv_round_trip_and_diagnostics() {
        let k = Kernel::new(2, 3, vec![0.9, 0.1, 0.5, 0.2, 0.8, 0.4], vec![0, 1], vec![4, 7, 9])
            .unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        assert_eq!(Kernel::read_csv(buf.as_slice()).unwrap(), k);

        let bad = "row_class,0,1\n0,0.5,0.2\n1,0.3\n";
        match Kernel::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = "row_class,0\n0,abc\n";
        assert!(matches!(Kernel::read_csv(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
