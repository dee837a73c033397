//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use smi_meta::episodes::Episode;
use smi_meta::kernel::Kernel;
use smi_meta::net::{loss_and_grad, Example, ParamVector};

pub fn random_kernel(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Kernel {
    let m: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random()).collect()).collect();
    Kernel::from_rows(&m).unwrap()
}

/// Facility-location MI straight from its definition.
pub fn flmi_oracle(a: &[usize], k: &Kernel) -> f64 {
    let mut total = 0.0;
    for i in 0..k.rows() {
        total += a.iter().map(|&j| k.get(i, j)).fold(0.0, f64::max);
    }
    for &j in a {
        total += (0..k.rows()).map(|i| k.get(i, j)).fold(0.0, f64::max);
    }
    total
}

pub fn gcmi_oracle(a: &[usize], k: &Kernel) -> f64 {
    2.0 * (0..k.rows()).map(|i| a.iter().map(|&j| k.get(i, j)).sum::<f64>()).sum::<f64>()
}

pub fn mask_set(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| mask & (1 << i) != 0).collect()
}

/// Best value over subsets of size at most `budget`, by enumeration.
pub fn exact_optimum(f: impl Fn(&[usize]) -> f64, n: usize, budget: usize) -> f64 {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize <= budget)
        .map(|m| f(&mask_set(m, n)))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Vec<(Vec<f64>, usize)> {
    (0..n)
        .map(|_| {
            let x = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            (x, rng.random_range(0..classes))
        })
        .collect()
}

pub fn view(b: &[(Vec<f64>, usize)]) -> Vec<Example<'_>> {
    b.iter().map(|(x, y)| (x.as_slice(), *y)).collect()
}

/// Largest relative error between the analytic gradient and central differences.
pub fn worst_relative_error(params: &ParamVector, labeled: &[Example], pseudo: &[Example], tau: f64) -> f64 {
    let h = 1e-5;
    let (_, grad) = loss_and_grad(params, labeled, pseudo, tau).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[i] += h;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h;
        let fp = loss_and_grad(&plus, labeled, pseudo, tau).unwrap().0.total;
        let fm = loss_and_grad(&minus, labeled, pseudo, tau).unwrap().0.total;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grad.values()[i];
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Worst gradient error over `cases` random networks of depth 1 to 3.
pub fn gradient_sweep(rng: &mut ChaCha8Rng, cases: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let dim = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let depth = 1 + case % 3;
        let mut widths = vec![dim];
        for _ in 1..depth {
            widths.push(rng.random_range(3..7));
        }
        widths.push(classes);
        let mut params = smi_meta::init_params(case as u64, &widths).unwrap();
        // Zero biases can park a unit exactly on the ReLU kink.
        for v in params.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let (nl, np) = (rng.random_range(1..6), rng.random_range(0..6));
        let labeled = random_batch(rng, nl, dim, classes);
        let pseudo = random_batch(rng, np, dim, classes);
        let tau = rng.random_range(0.0..1.0);
        worst = worst.max(worst_relative_error(&params, &view(&labeled), &view(&pseudo), tau));
    }
    worst
}

/// Plain first-order MAML step, written out without any selection machinery.
pub fn reference_fomaml(theta: &ParamVector, batch: &[Episode], alpha: f64, beta: f64, t_in: usize) -> ParamVector {
    let mut sum = vec![0.0; theta.len()];
    for ep in batch {
        let mut phi = theta.clone();
        for _ in 0..t_in {
            let (_, g) = loss_and_grad(&phi, &ep.support(), &[], 0.0).unwrap();
            for (p, gv) in phi.values_mut().iter_mut().zip(g.values()) {
                *p += -alpha * gv;
            }
        }
        let (_, g) = loss_and_grad(&phi, &ep.query(), &[], 1.0).unwrap();
        for (s, gv) in sum.iter_mut().zip(g.values()) {
            *s += gv;
        }
    }
    let mut next = theta.clone();
    let k = 1.0 / batch.len() as f64;
    for (p, s) in next.values_mut().iter_mut().zip(&sum) {
        *p += -beta * (s * k);
    }
    next
}

/// Linear classifier whose class-0 logit is much sharper than the rest, so it is
/// confident about class 0 only.
pub fn skewed_model(ep: &Episode, dim: usize) -> ParamVector {
    let mut p = ParamVector::zeros(&[dim, ep.way]).unwrap();
    let v = p.values_mut();
    for c in 0..ep.way {
        let scale = if c == 0 { 6.0 } else { 0.5 };
        for (k, x) in ep.support_x[c].iter().enumerate() {
            v[c * dim + k] = scale * x;
        }
    }
    p
}
