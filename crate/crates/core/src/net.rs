//! Fully-connected softmax classifier with hand-written backpropagation.
//!
//! Parameters live in one flat vector. Per layer the layout is the row-major
//! weight matrix (`out x in`) followed by the bias vector.
//! Hidden layers use ReLU; the output layer is a softmax over classes.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A labeled example borrowed from an episode: features and class id.
pub type Example<'a> = (&'a [f64], usize);

/// Flat parameter vector plus the layer widths `[input, hidden.., classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    widths: Vec<usize>,
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config(format!(
            "a classifier needs at least input and output widths, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {widths:?}")));
    }
    Ok(())
}

impl ParamVector {
    pub fn from_parts(values: Vec<f64>, widths: Vec<usize>) -> Result<Self> {
        check_widths(&widths)?;
        let expected = param_count(&widths);
        if values.len() != expected {
            return Err(Error::Config(format!(
                "parameter length {} does not match widths {widths:?} (expected {expected})",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, widths })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            values: vec![0.0; param_count(widths)],
            widths: widths.to_vec(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("widths validated at construction")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.widths[..=l]);
        (start, start + self.widths[l] * self.widths[l + 1])
    }

    /// Whether index `i` of the flat vector is a bias entry.
    pub fn is_bias(&self, i: usize) -> bool {
        (0..self.num_layers()).any(|l| {
            let (_, b) = self.layer_offsets(l);
            i >= b && i < b + self.widths[l + 1]
        })
    }

    fn same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.widths != other.widths {
            return Err(Error::Config(format!(
                "shape mismatch: {:?} vs {:?}",
                self.widths, other.widths
            )));
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.values {
            *v *= k;
        }
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Write a checkpoint: a JSON header line with the widths, then one value per line.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            widths: self.widths.clone(),
            len: self.values.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for v in &self.values {
            writeln!(w, "{v:?}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header_line = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty checkpoint".into(),
        })??;
        let header: CheckpointHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::Parse {
                line: 1,
                msg: format!("bad checkpoint header: {e}"),
            })?;
        let mut values = Vec::with_capacity(header.len);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = line.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: i + 2,
                msg: format!("bad parameter value {line:?}: {e}"),
            })?;
            values.push(v);
        }
        if values.len() != header.len {
            return Err(Error::Parse {
                line: values.len() + 2,
                msg: format!("expected {} values, found {}", header.len, values.len()),
            });
        }
        Self::from_parts(values, header.widths)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    widths: Vec<usize>,
    len: usize,
}

/// Fan-in scaled uniform initialisation (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
pub fn init_params(seed: u64, widths: &[usize]) -> Result<ParamVector> {
    let mut params = ParamVector::zeros(widths)?;
    let mut rng = seed::rng(seed);
    for l in 0..params.num_layers() {
        let (w_off, b_off) = params.layer_offsets(l);
        let bound = (6.0 / widths[l] as f64).sqrt();
        for v in &mut params.values[w_off..b_off] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Numerically stable softmax (max logit subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

fn check_input(params: &ParamVector, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::Config(format!(
            "input has dimension {}, classifier expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Forward pass keeping every layer's pre-activation (`zs`) and activation (`acts`).
/// `acts[0]` is the input; the last entry of `zs` holds the logits.
fn forward_trace(params: &ParamVector, x: &[f64], zs: &mut Vec<Vec<f64>>, acts: &mut Vec<Vec<f64>>) {
    let layers = params.num_layers();
    zs.resize(layers, Vec::new());
    acts.resize(layers + 1, Vec::new());
    acts[0].clear();
    acts[0].extend_from_slice(x);
    for l in 0..layers {
        let (n_in, n_out) = (params.widths[l], params.widths[l + 1]);
        let (w_off, b_off) = params.layer_offsets(l);
        let w = &params.values[w_off..b_off];
        let b = &params.values[b_off..b_off + n_out];
        let (before, after) = acts.split_at_mut(l + 1);
        let input = &before[l];
        let z = &mut zs[l];
        z.clear();
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let dot: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum();
            z.push(dot + b[o]);
        }
        let a = &mut after[0];
        a.clear();
        if l + 1 < layers {
            a.extend(z.iter().map(|&v| v.max(0.0)));
        } else {
            a.extend_from_slice(z);
        }
    }
}

pub fn logits(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    let (mut zs, mut acts) = (Vec::new(), Vec::new());
    forward_trace(params, x, &mut zs, &mut acts);
    Ok(zs.pop().expect("at least one layer"))
}

/// Class probabilities for a single input.
pub fn forward(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&logits(params, x)?))
}

/// Class probabilities for many inputs, reusing scratch buffers.
pub fn forward_batch<X: AsRef<[f64]>>(params: &ParamVector, xs: &[X]) -> Result<Vec<Vec<f64>>> {
    let (mut zs, mut acts) = (Vec::new(), Vec::new());
    xs.iter()
        .map(|x| {
            let x = x.as_ref();
            check_input(params, x)?;
            forward_trace(params, x, &mut zs, &mut acts);
            Ok(softmax(zs.last().expect("at least one layer")))
        })
        .collect()
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Labeled loss, unlabeled loss, their weight, and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub labeled: f64,
    pub unlabeled: f64,
    pub tau: f64,
    pub total: f64,
}

/// Mean cross-entropy on the labeled side plus `tau` times mean cross-entropy on the
/// pseudo-labeled side, with the gradient of that total.
///
/// Either side may be empty, in which case it contributes zero loss and gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    labeled: &[Example<'_>],
    pseudo: &[Example<'_>],
    tau: f64,
) -> Result<(LossBreakdown, ParamVector)> {
    let classes = params.num_classes();
    let mut grad = ParamVector::zeros(&params.widths)?;
    let (mut zs, mut acts) = (Vec::new(), Vec::new());
    let mut deltas: Vec<f64> = Vec::new();
    let mut prev_deltas: Vec<f64> = Vec::new();

    let mut side = |batch: &[Example<'_>], weight: f64| -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let per_example = weight / batch.len() as f64;
        let mut loss_sum = 0.0;
        for &(x, y) in batch {
            check_input(params, x)?;
            if y >= classes {
                return Err(Error::Input(format!("label {y} out of range for {classes} classes")));
            }
            forward_trace(params, x, &mut zs, &mut acts);
            let out = zs.last().expect("at least one layer");
            loss_sum += log_sum_exp(out) - out[y];
            if per_example == 0.0 {
                continue;
            }
            deltas.clear();
            deltas.extend(softmax(out).into_iter().map(|p| p * per_example));
            deltas[y] -= per_example;
            for l in (0..params.num_layers()).rev() {
                let (n_in, n_out) = (params.widths[l], params.widths[l + 1]);
                let (w_off, b_off) = params.layer_offsets(l);
                let input = &acts[l];
                for o in 0..n_out {
                    let d = deltas[o];
                    if d == 0.0 {
                        continue;
                    }
                    let g_row = &mut grad.values[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (g, a) in g_row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    grad.values[b_off + o] += d;
                }
                if l == 0 {
                    break;
                }
                prev_deltas.clear();
                prev_deltas.resize(n_in, 0.0);
                let w = &params.values[w_off..b_off];
                for o in 0..n_out {
                    let d = deltas[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (pd, wv) in prev_deltas.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *pd += d * wv;
                    }
                }
                for (pd, z) in prev_deltas.iter_mut().zip(&zs[l - 1]) {
                    if *z <= 0.0 {
                        *pd = 0.0;
                    }
                }
                std::mem::swap(&mut deltas, &mut prev_deltas);
            }
        }
        Ok(loss_sum / batch.len() as f64)
    };

    let labeled_loss = side(labeled, 1.0)?;
    let unlabeled_loss = side(pseudo, tau)?;
    let total = labeled_loss + tau * unlabeled_loss;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (labeled {labeled_loss}, unlabeled {unlabeled_loss}, tau {tau})"
        )));
    }
    Ok((
        LossBreakdown {
            labeled: labeled_loss,
            unlabeled: unlabeled_loss,
            tau,
            total,
        },
        grad,
    ))
}

/// Plain gradient descent step: `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    let mut out = params.clone();
    out.add_scaled(grad, -lr)?;
    Ok(out)
}

/// Fraction of `examples` whose argmax prediction matches the label.
pub fn accuracy(params: &ParamVector, examples: &[Example<'_>]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let xs: Vec<&[f64]> = examples.iter().map(|e| e.0).collect();
    let probs = forward_batch(params, &xs)?;
    let hits = probs
        .iter()
        .zip(examples)
        .filter(|(p, e)| argmax(p) == e.1)
        .count();
    Ok(hits as f64 / examples.len() as f64)
}
