//! Synthetic Gaussian-prototype data and episodic few-shot sampling.
//!
//! Each class has a prototype drawn uniformly from the unit sphere; points are
//! the prototype plus isotropic Gaussian noise. Classes are partitioned into
//! train/val/test splits, and within every class a fixed fraction `rho` of the
//! points is marked labeled before any episode is drawn. Support and query
//! points come only from the labeled portion, unlabeled pools only from the rest.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Example;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Number of classes assigned to each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl ClassSplit {
    /// 64% / 16% / 20% of the classes, rounded, with the remainder going to test.
    pub fn proportional(classes: usize) -> Self {
        let train = (0.64 * classes as f64).round() as usize;
        let val = ((0.16 * classes as f64).round() as usize).min(classes - train);
        Self {
            train,
            val,
            test: classes - train - val,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub features: Vec<Vec<f64>>,
    pub class_of: Vec<usize>,
    pub class_split: Vec<Split>,
    pub labeled_mask: Vec<bool>,
    pub rho: f64,
    members: Vec<Vec<usize>>,
}

fn members_of(class_of: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![Vec::new(); classes];
    for (i, &c) in class_of.iter().enumerate() {
        m[c].push(i);
    }
    m
}

/// Dataset with the default 64/16/20 class split; every point starts labeled.
pub fn gen_synthetic(
    seed: u64,
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
) -> Result<SyntheticDataset> {
    gen_synthetic_with_split(seed, dim, per_class, spread, ClassSplit::proportional(classes))
}

pub fn gen_synthetic_with_split(
    seed: u64,
    dim: usize,
    per_class: usize,
    spread: f64,
    split: ClassSplit,
) -> Result<SyntheticDataset> {
    let classes = split.total();
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::Config(format!(
            "infeasible dataset: {classes} classes, dim {dim}, {per_class} points per class"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be positive, got {spread}")));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut proto_rng = seed::rng_at(seed, &[0]);
    let mut features = Vec::with_capacity(classes * per_class);
    let mut class_of = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let proto = loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut proto_rng)).collect();
            let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
            }
        };
        let mut rng = seed::rng_at(seed, &[1, c as u64]);
        for _ in 0..per_class {
            features.push(proto.iter().map(|p| p + noise.sample(&mut rng)).collect());
            class_of.push(c);
        }
    }
    let class_split = std::iter::repeat_n(Split::Train, split.train)
        .chain(std::iter::repeat_n(Split::Val, split.val))
        .chain(std::iter::repeat_n(Split::Test, split.test))
        .collect();
    Ok(SyntheticDataset {
        classes,
        dim,
        per_class,
        members: members_of(&class_of, classes),
        labeled_mask: vec![true; features.len()],
        features,
        class_of,
        class_split,
        rho: 1.0,
    })
}

/// Labeled points per class for ratio `rho`: `ceil(rho * per_class)`, at least one.
pub fn labeled_count(rho: f64, per_class: usize) -> usize {
    // The epsilon keeps products like 0.07 * 100 = 7.000000000000001 from rounding up.
    (((rho * per_class as f64) - 1e-9).ceil() as usize).clamp(1, per_class)
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn classes_in(&self, split: Split) -> Vec<usize> {
        (0..self.classes)
            .filter(|&c| self.class_split[c] == split)
            .collect()
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    /// Mark `ceil(rho * per_class)` points of every class as labeled (seeded shuffle).
    pub fn split_labeled(&self, rho: f64, seed: u64) -> Result<SyntheticDataset> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("labeled ratio must be in (0, 1], got {rho}")));
        }
        let mut out = self.clone();
        out.rho = rho;
        out.labeled_mask = vec![false; self.len()];
        for c in 0..self.classes {
            let mut ids = self.members[c].clone();
            ids.shuffle(&mut seed::rng_at(seed, &[2, c as u64]));
            for &i in ids.iter().take(labeled_count(rho, ids.len())) {
                out.labeled_mask[i] = true;
            }
        }
        Ok(out)
    }

    /// CSV layout: `point_id,class_id,split,labeled,f0,..,f{dim-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["point_id", "class_id", "split", "labeled"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..self.dim).map(|k| format!("f{k}")));
        out.write_record(&header)?;
        for i in 0..self.len() {
            let c = self.class_of[i];
            let mut rec = vec![
                i.to_string(),
                c.to_string(),
                self.class_split[c].as_str().to_string(),
                u8::from(self.labeled_mask[i]).to_string(),
            ];
            rec.extend(self.features[i].iter().map(|v| format!("{v:?}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<SyntheticDataset> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 5 || &header[0] != "point_id" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header point_id,class_id,split,labeled,f0,...".into(),
            });
        }
        let dim = header.len() - 4;
        let (mut features, mut class_of, mut labeled_mask) = (Vec::new(), Vec::new(), Vec::new());
        let mut split_of: Vec<Option<Split>> = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec?;
            let perr = |msg: String| Error::Parse { line, msg };
            if rec.len() != dim + 4 {
                return Err(perr(format!("expected {} fields, found {}", dim + 4, rec.len())));
            }
            let id: usize = rec[0].parse().map_err(|e| perr(format!("bad point id: {e}")))?;
            if id != features.len() {
                return Err(perr(format!("point ids must be consecutive from 0, found {id}")));
            }
            let c: usize = rec[1].parse().map_err(|e| perr(format!("bad class id: {e}")))?;
            let split = Split::parse(&rec[2]).ok_or_else(|| perr(format!("bad split {:?}", &rec[2])))?;
            if split_of.len() <= c {
                split_of.resize(c + 1, None);
            }
            match split_of[c] {
                Some(s) if s != split => {
                    return Err(perr(format!("class {c} appears in two splits")));
                }
                _ => split_of[c] = Some(split),
            }
            let labeled = match &rec[3] {
                "1" => true,
                "0" => false,
                other => return Err(perr(format!("bad labeled flag {other:?}"))),
            };
            let x = rec
                .iter()
                .skip(4)
                .map(|f| f.parse::<f64>().map_err(|e| perr(format!("bad feature {f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            features.push(x);
            class_of.push(c);
            labeled_mask.push(labeled);
        }
        let classes = split_of.len();
        let class_split = split_of
            .into_iter()
            .enumerate()
            .map(|(c, s)| s.ok_or_else(|| Error::Input(format!("class {c} has no points"))))
            .collect::<Result<Vec<_>>>()?;
        let members = members_of(&class_of, classes);
        let per_class = members.first().map_or(0, Vec::len);
        if members.iter().any(|m| m.len() != per_class) {
            return Err(Error::Input("classes have unequal point counts".into()));
        }
        let rho = labeled_mask.iter().filter(|&&l| l).count() as f64 / labeled_mask.len().max(1) as f64;
        Ok(SyntheticDataset {
            classes,
            dim,
            per_class,
            features,
            class_of,
            class_split,
            labeled_mask,
            rho,
            members,
        })
    }
}

/// Episode dimensions: `way` classes, `shot` support and `query` query points per
/// class, `unlabeled` pool points per class, and `ood` distractor classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeShape {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub unlabeled: usize,
    pub ood: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 1,
            query: 15,
            unlabeled: 50,
            ood: 0,
        }
    }
}

impl EpisodeShape {
    pub fn validate(&self) -> Result<()> {
        if self.way == 0 || self.shot == 0 || self.query == 0 {
            return Err(Error::Config(format!("degenerate episode shape {self:?}")));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        (self.way + self.ood) * self.unlabeled
    }
}

/// Ground truth for an unlabeled point, hidden from the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenLabel {
    pub class_id: usize,
    /// Episode-local label; `None` for distractor classes.
    pub label: Option<usize>,
    pub is_ood: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub ood_classes: usize,
    /// Dataset class ids; position is the episode-local label.
    pub classes: Vec<usize>,
    pub distractors: Vec<usize>,
    pub support_x: Vec<Vec<f64>>,
    pub support_y: Vec<usize>,
    pub support_ids: Vec<usize>,
    pub query_x: Vec<Vec<f64>>,
    pub query_y: Vec<usize>,
    pub query_ids: Vec<usize>,
    pub unlabeled_x: Vec<Vec<f64>>,
    pub unlabeled_truth: Vec<HiddenLabel>,
    pub unlabeled_ids: Vec<usize>,
}

impl Episode {
    pub fn support(&self) -> Vec<Example<'_>> {
        self.support_x
            .iter()
            .map(Vec::as_slice)
            .zip(self.support_y.iter().copied())
            .collect()
    }

    pub fn query(&self) -> Vec<Example<'_>> {
        self.query_x
            .iter()
            .map(Vec::as_slice)
            .zip(self.query_y.iter().copied())
            .collect()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled_x.len()
    }
}

pub fn sample_episode(
    dataset: &SyntheticDataset,
    split: Split,
    shape: EpisodeShape,
    seed: u64,
) -> Result<Episode> {
    shape.validate()?;
    let mut rng = seed::rng(seed);
    let mut pool_classes = dataset.classes_in(split);
    if pool_classes.len() < shape.way + shape.ood {
        return Err(Error::Sampling(format!(
            "{} split has {} classes, episode needs {} way + {} distractor classes",
            split.as_str(),
            pool_classes.len(),
            shape.way,
            shape.ood
        )));
    }
    pool_classes.shuffle(&mut rng);
    let classes = pool_classes[..shape.way].to_vec();
    let distractors = pool_classes[shape.way..shape.way + shape.ood].to_vec();

    let draw = |class: usize, labeled: bool, n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut ids: Vec<usize> = dataset.members[class]
            .iter()
            .copied()
            .filter(|&i| dataset.labeled_mask[i] == labeled)
            .collect();
        if ids.len() < n {
            return Err(Error::Sampling(format!(
                "class {class} has {} {} points, episode needs {n}",
                ids.len(),
                if labeled { "labeled" } else { "unlabeled" }
            )));
        }
        ids.shuffle(rng);
        ids.truncate(n);
        Ok(ids)
    };

    let mut ep = Episode {
        way: shape.way,
        shot: shape.shot,
        ood_classes: shape.ood,
        classes: classes.clone(),
        distractors: distractors.clone(),
        support_x: Vec::new(),
        support_y: Vec::new(),
        support_ids: Vec::new(),
        query_x: Vec::new(),
        query_y: Vec::new(),
        query_ids: Vec::new(),
        unlabeled_x: Vec::new(),
        unlabeled_truth: Vec::new(),
        unlabeled_ids: Vec::new(),
    };
    let mut pool: Vec<(usize, HiddenLabel)> = Vec::new();
    for (label, &c) in classes.iter().enumerate() {
        let ids = draw(c, true, shape.shot + shape.query, &mut rng)?;
        for &i in &ids[..shape.shot] {
            ep.support_ids.push(i);
            ep.support_y.push(label);
        }
        for &i in &ids[shape.shot..] {
            ep.query_ids.push(i);
            ep.query_y.push(label);
        }
        for i in draw(c, false, shape.unlabeled, &mut rng)? {
            pool.push((
                i,
                HiddenLabel {
                    class_id: c,
                    label: Some(label),
                    is_ood: false,
                },
            ));
        }
    }
    for &c in &distractors {
        for i in draw(c, false, shape.unlabeled, &mut rng)? {
            pool.push((
                i,
                HiddenLabel {
                    class_id: c,
                    label: None,
                    is_ood: true,
                },
            ));
        }
    }
    pool.shuffle(&mut rng);
    ep.support_x = ep.support_ids.iter().map(|&i| dataset.features[i].clone()).collect();
    ep.query_x = ep.query_ids.iter().map(|&i| dataset.features[i].clone()).collect();
    for (i, truth) in pool {
        ep.unlabeled_ids.push(i);
        ep.unlabeled_x.push(dataset.features[i].clone());
        ep.unlabeled_truth.push(truth);
    }
    Ok(ep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn dataset() -> SyntheticDataset {
        gen_synthetic_with_split(
            1,
            8,
            120,
            0.3,
            ClassSplit {
                train: 14,
                val: 2,
                test: 2,
            },
        )
        .unwrap()
        .split_labeled(0.2, 3)
        .unwrap()
    }

    #[test]
    fn labeled_counts() {
        assert_eq!(labeled_count(1.0, 50), 50);
        assert_eq!(labeled_count(0.01, 600), 6);
        assert_eq!(labeled_count(0.001, 100), 1);
        assert_eq!(labeled_count(0.07, 100), 7);
    }

    #[test]
    fn split_labeled_rejects_bad_rho() {
        let d = dataset();
        assert!(d.split_labeled(0.0, 1).is_err());
        assert!(d.split_labeled(1.5, 1).is_err());
    }

    #[test]
    fn proportional_split() {
        assert_eq!(
            ClassSplit::proportional(100),
            ClassSplit {
                train: 64,
                val: 16,
                test: 20
            }
        );
    }

    #[test]
    fn episode_sizes_and_walls() {
        let d = dataset();
        let shape = EpisodeShape {
            way: 5,
            shot: 1,
            query: 15,
            unlabeled: 50,
            ood: 5,
        };
        let ep = sample_episode(&d, Split::Train, shape, 9).unwrap();
        assert_eq!(ep.support_x.len(), 5);
        assert_eq!(ep.query_x.len(), 75);
        assert_eq!(ep.unlabeled_len(), 500);
        assert_eq!(ep.unlabeled_truth.iter().filter(|t| t.is_ood).count(), 250);
        let s: HashSet<_> = ep.support_ids.iter().collect();
        let q: HashSet<_> = ep.query_ids.iter().collect();
        let u: HashSet<_> = ep.unlabeled_ids.iter().collect();
        assert!(s.is_disjoint(&q) && s.is_disjoint(&u) && q.is_disjoint(&u));
        assert!(ep.support_ids.iter().chain(&ep.query_ids).all(|&i| d.labeled_mask[i]));
        assert!(ep.unlabeled_ids.iter().all(|&i| !d.labeled_mask[i]));
    }

    #[test]
    fn insufficient_points_name_the_class() {
        let d = dataset();
        let shape = EpisodeShape {
            query: 40,
            ..EpisodeShape::default()
        };
        match sample_episode(&d, Split::Train, shape, 0) {
            Err(Error::Sampling(msg)) => assert!(msg.contains("class")),
            other => panic!("expected sampling error, got {other:?}"),
        }
        let shape = EpisodeShape {
            ood: 5,
            ..EpisodeShape::default()
        };
        assert!(matches!(
            sample_episode(&d, Split::Val, shape, 0),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let d = dataset();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = SyntheticDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.labeled_mask, d.labeled_mask);
        assert_eq!(back.class_split, d.class_split);
        assert_eq!(back.per_class, d.per_class);
    }

    #[test]
    fn csv_diagnostics_carry_line_numbers() {
        let bad = "point_id,class_id,split,labeled,f0\n0,0,train,1,0.5\n1,0,nowhere,1,0.1\n";
        assert!(matches!(
            SyntheticDataset::read_csv(bad.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
