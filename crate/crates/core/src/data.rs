//! Multi-domain synthetic datasets, CSV interchange and stratified splits.
//!
//! Generators assign labels to base points before the domain transform is
//! applied, so the labelling function is shared by every domain.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::rng::{derive_seed, rng_for, stream, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub dim: usize,
    pub num_classes: usize,
    pub domain_names: Vec<String>,
}

/// Domain shift applied to every point of one domain.
#[derive(Debug, Clone, PartialEq)]
pub enum ShiftKind {
    None,
    Rotation {
        angle_deg: f64,
    },
    /// `x' = scale * R(rotation_deg) x + translation`.
    Affine {
        rotation_deg: f64,
        translation: Vec<f64>,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    /// Selects the base-sample stream for this domain.
    pub seed: u64,
}

impl ShiftSpec {
    pub fn none(seed: u64) -> Self {
        ShiftSpec {
            kind: ShiftKind::None,
            seed,
        }
    }

    pub fn rotation(angle_deg: f64, seed: u64) -> Self {
        ShiftSpec {
            kind: ShiftKind::Rotation { angle_deg },
            seed,
        }
    }

    pub fn affine(rotation_deg: f64, translation: Vec<f64>, scale: f64, seed: u64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidInput(format!("affine scale must be > 0, got {scale}")));
        }
        Ok(ShiftSpec {
            kind: ShiftKind::Affine {
                rotation_deg,
                translation,
                scale,
            },
            seed,
        })
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ShiftKind::None => "base".into(),
            ShiftKind::Rotation { angle_deg } => format!("rot{angle_deg}"),
            ShiftKind::Affine {
                rotation_deg, scale, ..
            } => format!("aff{rotation_deg}x{scale}"),
        }
    }

    /// Apply the shift to a point. Rotations act on the first two coordinates.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ShiftKind::None => Ok(x.to_vec()),
            ShiftKind::Rotation { angle_deg } => Ok(rotate(x, *angle_deg)),
            ShiftKind::Affine {
                rotation_deg,
                translation,
                scale,
            } => {
                if !(*scale > 0.0) {
                    return Err(Error::InvalidInput("affine scale must be > 0".into()));
                }
                if !translation.is_empty() && translation.len() != x.len() {
                    return Err(Error::Shape(format!(
                        "translation has {} entries for {}-d points",
                        translation.len(),
                        x.len()
                    )));
                }
                let mut out = rotate(x, *rotation_deg);
                for (i, v) in out.iter_mut().enumerate() {
                    *v = *v * scale + translation.get(i).copied().unwrap_or(0.0);
                }
                Ok(out)
            }
        }
    }
}

fn rotate(x: &[f64], angle_deg: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    if angle_deg == 0.0 || x.len() < 2 {
        return out;
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    out[0] = c * x[0] - s * x[1];
    out[1] = s * x[0] + c * x[1];
    out
}

fn per_class_count(n_per_domain: usize, num_classes: usize) -> usize {
    if !n_per_domain.is_multiple_of(num_classes) {
        log::warn!(
            "n_per_domain={n_per_domain} is not divisible by {num_classes} classes; using {} per class",
            n_per_domain / num_classes
        );
    }
    n_per_domain / num_classes
}

/// Base two-moons point for class `label` at arc parameter `t`, centred so the
/// pair of moons has its centroid near the origin.
pub fn moon_point(label: usize, t: f64) -> [f64; 2] {
    if label == 0 {
        [t.cos() - 0.5, t.sin() - 0.25]
    } else {
        [0.5 - t.cos(), 0.25 - t.sin()]
    }
}

/// Unshifted two-moons sample for one domain stream, as `(point, label)` pairs.
pub fn two_moons_base(n_per_class: usize, noise_sd: f64, rng: &mut Rng) -> Result<Vec<(Vec<f64>, usize)>> {
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|e| Error::InvalidInput(format!("noise_sd {noise_sd}: {e}")))?;
    let mut out = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for label in 0..2 {
            let t = rng.random_range(0.0..PI);
            let p = moon_point(label, t);
            out.push((vec![p[0] + noise.sample(rng), p[1] + noise.sample(rng)], label));
        }
    }
    Ok(out)
}

/// Rotated/affine two-moons, one domain per `ShiftSpec`.
pub fn gen_two_moons(domains: &[ShiftSpec], n_per_domain: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidInput(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let per_class = per_class_count(n_per_domain, 2);
    let data_seed = derive_seed(seed, stream::DATA);
    let mut examples = Vec::new();
    for (d, spec) in domains.iter().enumerate() {
        let mut rng = rng_for(data_seed, spec.seed);
        for (x, y) in two_moons_base(per_class, noise_sd, &mut rng)? {
            examples.push(LabeledExample { x: spec.apply(&x)?, y, d });
        }
    }
    Ok(Dataset {
        examples,
        dim: 2,
        num_classes: 2,
        domain_names: domains.iter().map(ShiftSpec::name).collect(),
    })
}

/// Isotropic Gaussian classes with means evenly spaced on the unit circle of
/// the first two coordinates.
pub fn gen_gaussian_classes(
    domains: &[ShiftSpec],
    n_per_domain: usize,
    num_classes: usize,
    dim: usize,
    class_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidInput("need dim >= 2".into()));
    }
    if !(class_sd >= 0.0) {
        return Err(Error::InvalidInput(format!("class_sd must be >= 0, got {class_sd}")));
    }
    let per_class = per_class_count(n_per_domain, num_classes);
    let data_seed = derive_seed(seed, stream::DATA);
    let mut examples = Vec::new();
    for (d, spec) in domains.iter().enumerate() {
        let mut rng = rng_for(data_seed, spec.seed);
        for _ in 0..per_class {
            for y in 0..num_classes {
                let mut x = class_mean(y, num_classes, dim);
                for v in &mut x {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += class_sd * z;
                }
                examples.push(LabeledExample { x: spec.apply(&x)?, y, d });
            }
        }
    }
    Ok(Dataset {
        examples,
        dim,
        num_classes,
        domain_names: domains.iter().map(ShiftSpec::name).collect(),
    })
}

pub fn class_mean(class: usize, num_classes: usize, dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    let a = 2.0 * PI * class as f64 / num_classes as f64;
    m[0] = a.cos();
    m[1] = a.sin();
    m
}

impl Dataset {
    pub fn empty(dim: usize, num_classes: usize, domain_names: Vec<String>) -> Self {
        Dataset {
            examples: Vec::new(),
            dim,
            num_classes,
            domain_names,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn inputs(&self) -> Tensor2 {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for e in &self.examples {
            data.extend_from_slice(&e.x);
        }
        Tensor2::from_vec(self.len(), self.dim, data).expect("validated dataset")
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.y).collect()
    }

    pub fn domains(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.d).collect()
    }

    /// Keep only the listed domains. Domain ids are preserved.
    pub fn filter_domains(&self, keep: &[usize]) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| keep.contains(&e.d))
                .cloned()
                .collect(),
            ..self.clone_header()
        }
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    pub fn classes_present(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_classes];
        for e in &self.examples {
            seen[e.y] = true;
        }
        (0..self.num_classes).filter(|&c| seen[c]).collect()
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            examples: Vec::new(),
            dim: self.dim,
            num_classes: self.num_classes,
            domain_names: self.domain_names.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.examples.iter().enumerate() {
            if e.x.len() != self.dim {
                return Err(Error::Shape(format!("example {i} has dim {}, expected {}", e.x.len(), self.dim)));
            }
            if e.y >= self.num_classes || e.d >= self.num_domains() {
                return Err(Error::InvalidInput(format!("example {i} has out-of-range label/domain")));
            }
            if e.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("example {i} has a non-finite feature")));
            }
        }
        Ok(())
    }

    /// Serialise to the dataset CSV format.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("domain,label");
        for k in 0..self.dim {
            let _ = write!(s, ",x{k}");
        }
        s.push('\n');
        for e in &self.examples {
            let _ = write!(s, "{},{}", e.d, e.y);
            for v in &e.x {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Parse the dataset CSV format. Domain names become `d0..dN` and the
    /// class count is one past the largest label seen.
    pub fn from_csv_str(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.len() < 3 || cols[0] != "domain" || cols[1] != "label" {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unknown header '{header}'"),
            });
        }
        for (k, c) in cols[2..].iter().enumerate() {
            if *c != format!("x{k}") {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unknown header column '{c}'"),
                });
            }
        }
        let dim = cols.len() - 2;
        let mut examples = Vec::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} fields, found {}", dim + 2, fields.len()),
                });
            }
            let parse_id = |s: &str, what: &str| {
                s.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad {what} '{s}'"),
                })
            };
            let d = parse_id(fields[0], "domain")?;
            let y = parse_id(fields[1], "label")?;
            let x = fields[2..]
                .iter()
                .map(|f| match f.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse {
                        line: line_no,
                        msg: format!("non-numeric feature '{f}'"),
                    }),
                })
                .collect::<Result<Vec<f64>>>()?;
            examples.push(LabeledExample { x, y, d });
        }
        let num_classes = examples.iter().map(|e| e.y + 1).max().unwrap_or(0);
        let num_domains = examples.iter().map(|e| e.d + 1).max().unwrap_or(0);
        Ok(Dataset {
            examples,
            dim,
            num_classes,
            domain_names: (0..num_domains).map(|d| format!("d{d}")).collect(),
        })
    }
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset.to_csv_string())?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    Dataset::from_csv_str(&fs::read_to_string(path)?)
}

/// Stratified split by `(domain, class)` cell. Each cell contributes
/// `round(fraction * cell_size)` examples to the first part; both parts keep
/// the original example order.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.examples.iter().enumerate() {
        cells.entry((e.d, e.y)).or_default().push(i);
    }
    let mut rng = rng_for(seed, stream::SPLIT);
    let mut take = vec![false; dataset.len()];
    for idx in cells.values_mut() {
        let k = (fraction * idx.len() as f64).round() as usize;
        idx.shuffle(&mut rng);
        for &i in &idx[..k.min(idx.len())] {
            take[i] = true;
        }
    }
    let (a, b): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| take[i]);
    Ok((dataset.select(&a), dataset.select(&b)))
}

pub fn subsample_fraction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    Ok(split(dataset, fraction, seed)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moons(angles: &[f64], n: usize, seed: u64) -> Dataset {
        let specs: Vec<ShiftSpec> = angles
            .iter()
            .enumerate()
            .map(|(i, &a)| ShiftSpec::rotation(a, i as u64))
            .collect();
        gen_two_moons(&specs, n, 0.08, seed).unwrap()
    }

    fn cell_counts(ds: &Dataset) -> BTreeMap<(usize, usize), usize> {
        let mut m = BTreeMap::new();
        for e in &ds.examples {
            *m.entry((e.d, e.y)).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn zero_examples_gives_empty_dataset() {
        assert!(moons(&[0.0, 30.0], 0, 1).is_empty());
    }

    #[test]
    fn zero_rotation_equals_base_bitwise() {
        let rotated = gen_two_moons(&[ShiftSpec::rotation(0.0, 0)], 50, 0.1, 9).unwrap();
        let base = gen_two_moons(&[ShiftSpec::none(0)], 50, 0.1, 9).unwrap();
        for (a, b) in rotated.examples.iter().zip(&base.examples) {
            assert_eq!(a.y, b.y);
            for (p, q) in a.x.iter().zip(&b.x) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(moons(&[0.0, 15.0], 40, 3), moons(&[0.0, 15.0], 40, 3));
        assert_ne!(moons(&[0.0], 40, 3), moons(&[0.0], 40, 4));
    }

    #[test]
    fn labels_survive_the_domain_transform() {
        // Same spec seed => same base sample; rotating back recovers it.
        let a = gen_two_moons(&[ShiftSpec::none(5)], 30, 0.05, 1).unwrap();
        let b = gen_two_moons(&[ShiftSpec::rotation(40.0, 5)], 30, 0.05, 1).unwrap();
        for (p, q) in a.examples.iter().zip(&b.examples) {
            assert_eq!(p.y, q.y);
            let back = rotate(&q.x, -40.0);
            assert!((back[0] - p.x[0]).abs() < 1e-12 && (back[1] - p.x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_count_rounds_down_per_class() {
        let ds = moons(&[0.0], 7, 1);
        assert_eq!(ds.len(), 6);
        assert!(cell_counts(&ds).values().all(|&c| c == 3));
    }

    #[test]
    fn gaussian_means_and_scaling() {
        assert_eq!(class_mean(0, 2, 2), vec![1.0, 0.0]);
        let m1 = class_mean(1, 2, 2);
        assert!((m1[0] + 1.0).abs() < 1e-15 && m1[1].abs() < 1e-15);

        let id = ShiftSpec::affine(0.0, vec![0.0, 0.0, 0.0], 1.0, 0).unwrap();
        let dbl = ShiftSpec::affine(0.0, vec![0.0, 0.0, 0.0], 2.0, 0).unwrap();
        let a = gen_gaussian_classes(&[id], 20, 2, 3, 0.3, 4).unwrap();
        let b = gen_gaussian_classes(&[dbl], 20, 2, 3, 0.3, 4).unwrap();
        for (p, q) in a.examples.iter().zip(&b.examples) {
            for (u, v) in p.x.iter().zip(&q.x) {
                assert_eq!(2.0 * u, *v);
            }
        }
        assert!(ShiftSpec::affine(0.0, vec![], 0.0, 0).is_err());
    }

    #[test]
    fn gaussian_priors_equal_per_domain() {
        let specs = vec![ShiftSpec::none(0), ShiftSpec::rotation(30.0, 1)];
        let ds = gen_gaussian_classes(&specs, 90, 3, 4, 0.2, 2).unwrap();
        let counts = cell_counts(&ds);
        assert_eq!(counts.len(), 6);
        assert!(counts.values().all(|&c| c == 30));
        assert!(gen_gaussian_classes(&specs, 10, 1, 4, 0.2, 2).is_err());
        assert!(gen_gaussian_classes(&specs, 10, 2, 1, 0.2, 2).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = moons(&[0.0, 15.0], 20, 2);
        let text = ds.to_csv_string();
        let back = Dataset::from_csv_str(&text).unwrap();
        assert_eq!(back.examples, ds.examples);
        assert_eq!(back.dim, 2);

        let empty = Dataset::from_csv_str("domain,label,x0,x1\n").unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.dim, 2);

        match Dataset::from_csv_str("domain,label,x0\n0,1,0.5\n0,0,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Dataset::from_csv_str("domain,label,x0\n0,1,0.5,2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Dataset::from_csv_str("dom,label,x0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn split_fractions() {
        let specs: Vec<ShiftSpec> = (0..2).map(|i| ShiftSpec::rotation(10.0 * i as f64, i)).collect();
        let ds = gen_two_moons(&specs, 200, 0.1, 1).unwrap();
        assert_eq!(subsample_fraction(&ds, 1.0, 3).unwrap(), ds);
        assert!(subsample_fraction(&ds, 0.0, 3).unwrap().is_empty());
        let half = subsample_fraction(&ds, 0.5, 3).unwrap();
        assert!(cell_counts(&half).values().all(|&c| c == 50));
        let (a, b) = split(&ds, 0.3, 8).unwrap();
        assert_eq!(a.len() + b.len(), ds.len());
        assert_eq!(split(&ds, 0.3, 8).unwrap().0, a);
        assert!(split(&ds, 1.5, 0).is_err());
    }
}
