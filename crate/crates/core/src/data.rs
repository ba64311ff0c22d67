//! Labeled ordinal datasets: synthetic generators, CSV ingestion and
//! stratified splits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CplError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticLinear,
    SyntheticRing,
    Csv(PathBuf),
    /// A subset of another dataset.
    Split(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub input_dim: usize,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        input_dim: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.x.len() != input_dim) {
            return Err(CplError::data(format!(
                "sample of dimension {} in a dataset of dimension {input_dim}",
                s.x.len()
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(CplError::data(format!(
                "label {} outside [0, {num_classes})",
                s.label
            )));
        }
        Ok(LabeledDataset {
            samples,
            num_classes,
            input_dim,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    fn subset(&self, idx: &[usize], name: &str) -> LabeledDataset {
        LabeledDataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            provenance: Provenance::Split(name.to_string()),
        }
    }
}

fn check_generator(num_classes: usize, n_per_class: usize, input_dim: usize, sigma: f64) -> Result<()> {
    if num_classes < 2 || n_per_class == 0 || input_dim == 0 {
        return Err(CplError::config(
            "generators need K >= 2, n_per_class >= 1 and input_dim >= 1",
        ));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(CplError::config(format!("noise_sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn clusters(
    means: &[Vec<f64>],
    n_per_class: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let mut samples = Vec::with_capacity(means.len() * n_per_class);
    for (label, mu) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            let x = mu
                .iter()
                .map(|m| if sigma > 0.0 { m + noise.sample(rng) } else { *m })
                .collect();
            samples.push(Sample { x, label });
        }
    }
    samples
}

/// Class `k` is centred at `k·(1 − overlap)·u` for a seeded random unit
/// direction `u`, with isotropic Gaussian noise.
pub fn gen_synthetic_linear(
    num_classes: usize,
    n_per_class: usize,
    input_dim: usize,
    noise_sigma: f64,
    overlap: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    check_generator(num_classes, n_per_class, input_dim, noise_sigma)?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(CplError::config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unit(&mut rng, input_dim);
    let spacing = 1.0 - overlap;
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| u.iter().map(|x| k as f64 * spacing * x).collect())
        .collect();
    let samples = clusters(&means, n_per_class, noise_sigma, &mut rng);
    LabeledDataset::new(samples, num_classes, input_dim, Provenance::SyntheticLinear)
}

/// Class means are unit vectors at angles `kπ/(K−1)` in a seeded random plane.
pub fn gen_synthetic_ring(
    num_classes: usize,
    n_per_class: usize,
    input_dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    check_generator(num_classes, n_per_class, input_dim, noise_sigma)?;
    if input_dim < 2 {
        return Err(CplError::config("the ring generator needs input_dim >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e1 = random_unit(&mut rng, input_dim);
    let e2 = loop {
        let v = random_unit(&mut rng, input_dim);
        let proj: f64 = v.iter().zip(&e1).map(|(a, b)| a * b).sum();
        let w: Vec<f64> = v.iter().zip(&e1).map(|(a, b)| a - proj * b).collect();
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            break w.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    let step = std::f64::consts::PI / (num_classes - 1) as f64;
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| {
            let (s, c) = (k as f64 * step).sin_cos();
            e1.iter().zip(&e2).map(|(a, b)| c * a + s * b).collect()
        })
        .collect();
    let samples = clusters(&means, n_per_class, noise_sigma, &mut rng);
    LabeledDataset::new(samples, num_classes, input_dim, Provenance::SyntheticRing)
}

fn csv_error(path: &Path, e: csv::Error) -> CplError {
    let line = e.position().map(|p| p.line());
    match (e.into_kind(), line) {
        (csv::ErrorKind::Io(io), _) => CplError::io(path, io),
        (kind, Some(line)) => CplError::data(format!("{}: row {line}: {kind:?}", path.display())),
        (kind, None) => CplError::data(format!("{}: {kind:?}", path.display())),
    }
}

/// Reads `f0,…,f{d−1},label` rows. `K` is `max label + 1` unless given.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| CplError::io(path, e))?;
    read_csv(file, path, num_classes)
}

pub fn read_csv<R: Read>(reader: R, path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let width = header.len();
    let expected: Vec<String> = (0..width.saturating_sub(1))
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if width < 2 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CplError::data(format!(
            "{}: header must be f0,…,f{{d-1}},label; got {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let dim = width - 1;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(CplError::data(format!(
                "{}: row {row}: expected {width} columns, found {}",
                path.display(),
                rec.len()
            )));
        }
        let x = rec
            .iter()
            .take(dim)
            .enumerate()
            .map(|(i, v)| {
                v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    CplError::data(format!("{}: row {row}: f{i} = {v:?} is not a finite number", path.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let raw = &rec[dim];
        let label = raw.parse::<usize>().map_err(|_| {
            CplError::data(format!("{}: row {row}: label {raw:?} is not a non-negative integer", path.display()))
        })?;
        samples.push(Sample { x, label });
    }
    let inferred = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let k = match num_classes {
        Some(k) if k < inferred => {
            return Err(CplError::data(format!(
                "{}: label {} exceeds K = {k}",
                path.display(),
                inferred - 1
            )))
        }
        Some(k) => k,
        None => inferred,
    };
    LabeledDataset::new(samples, k, dim, Provenance::Csv(path.to_path_buf()))
}

pub fn write_csv<W: Write>(dataset: &LabeledDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dataset.input_dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    let err = |e: csv::Error| CplError::data(format!("cannot write dataset: {e}"));
    w.write_record(&header).map_err(err)?;
    for s in &dataset.samples {
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        row.push(s.label.to_string());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CplError::data(format!("cannot write dataset: {e}")))?;
    Ok(())
}

pub fn save_csv(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CplError::io(path, e))?;
    write_csv(dataset, file)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CplError::config(format!(
                "split fractions must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Per-class split sizes: row `c` of the result holds class `c`'s
/// (train, val, test) counts. Rows sum to the class sizes, columns to
/// `totals`, and every cell stays within the bounds returned by `bounds`
/// whenever such a table exists.
fn allocate(
    class_sizes: &[usize],
    fractions: [f64; 3],
    totals: [usize; 3],
    bounds: impl Fn(f64, usize) -> (usize, usize),
) -> Option<Vec<[usize; 3]>> {
    let k = class_sizes.len();
    let mut table = vec![[0usize; 3]; k];
    let mut room = vec![[0usize; 3]; k];
    let mut row_need = vec![0usize; k];
    let mut col_left = totals;
    for (c, &n) in class_sizes.iter().enumerate() {
        let mut assigned = 0;
        for j in 0..3 {
            let (lo, hi) = bounds(fractions[j] * n as f64, n);
            table[c][j] = lo;
            room[c][j] = hi - lo;
            assigned += lo;
            col_left[j] = col_left[j].checked_sub(lo)?;
        }
        row_need[c] = n.checked_sub(assigned)?;
    }
    // augmenting paths in the residual graph: source -> class -> split -> sink,
    // with split -> class back edges carrying already-placed extra samples
    loop {
        let Some(c0) = (0..k).find(|&c| row_need[c] > 0) else {
            return Some(table);
        };
        let mut seen = vec![false; k];
        let mut from_class = [usize::MAX; 3];
        let mut parent = vec![usize::MAX; k];
        let mut queue = std::collections::VecDeque::from([c0]);
        seen[c0] = true;
        let mut end = None;
        while let Some(c) = queue.pop_front() {
            for j in 0..3 {
                if room[c][j] == 0 || from_class[j] != usize::MAX {
                    continue;
                }
                from_class[j] = c;
                if col_left[j] > 0 {
                    end = Some(j);
                    break;
                }
                for (c2, row) in table.iter().enumerate() {
                    let extra = row[j] - bounds(fractions[j] * class_sizes[c2] as f64, class_sizes[c2]).0;
                    if !seen[c2] && extra > 0 {
                        seen[c2] = true;
                        parent[c2] = j;
                        queue.push_back(c2);
                    }
                }
            }
            if end.is_some() {
                break;
            }
        }
        let mut j = end?;
        col_left[j] -= 1;
        row_need[c0] -= 1;
        loop {
            let c = from_class[j];
            table[c][j] += 1;
            room[c][j] -= 1;
            if c == c0 {
                break;
            }
            let prev = parent[c];
            table[c][prev] -= 1;
            room[c][prev] += 1;
            j = prev;
        }
    }
}

/// Seeded stratified split into (train, val, test).
///
/// Each class gets its share of every split to within one sample, while the
/// split sizes are `round(fraction · N)` for train and val. Within each split,
/// classes are interleaved in shuffled order.
pub fn split(
    dataset: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let n = dataset.len();
    let n_train = (spec.train * n as f64).round() as usize;
    let n_val = (spec.val * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(CplError::config(format!(
            "{n} samples cannot be split into non-empty parts with fractions {:?}",
            (spec.train, spec.val, spec.test)
        )));
    }
    let totals = [n_train, n_val, n - n_train - n_val];
    let fractions = [spec.train, spec.val, spec.test];
    let sizes = dataset.class_counts();
    let table = allocate(&sizes, fractions, totals, |x, _| (x.floor() as usize, x.ceil() as usize))
        .or_else(|| {
            allocate(&sizes, fractions, totals, |x, m| {
                ((x - 1.0).ceil().max(0.0) as usize, ((x + 1.0).floor() as usize).min(m))
            })
        })
        .or_else(|| allocate(&sizes, fractions, totals, |_, m| (0, m)))
        .expect("an unconstrained allocation always exists");

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut parts: [Vec<(f64, usize, usize)>; 3] = Default::default();
    for (class, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let mut rest = idx.as_slice();
        for (j, part) in parts.iter_mut().enumerate() {
            let (take, tail) = rest.split_at(table[class][j]);
            let m = take.len() as f64;
            part.extend(take.iter().enumerate().map(|(r, &i)| ((r as f64 + 0.5) / m, class, i)));
            rest = tail;
        }
    }
    let [train, val, test] = parts.map(|mut p| {
        p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        p.into_iter().map(|(_, _, i)| i).collect::<Vec<_>>()
    });
    Ok((
        dataset.subset(&train, "train"),
        dataset.subset(&val, "val"),
        dataset.subset(&test, "test"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn zero_noise_linear_is_exact() {
        let ds = gen_synthetic_linear(4, 3, 5, 0.0, 0.0, 9).unwrap();
        assert_eq!(ds.len(), 12);
        let mus: Vec<&Vec<f64>> = (0..4).map(|k| &ds.samples[k * 3].x).collect();
        for s in &ds.samples {
            assert_eq!(&s.x, mus[s.label]);
        }
        // constant spacing
        for k in 1..3 {
            for i in 0..5 {
                let a = mus[k + 1][i] - mus[k][i];
                let b = mus[k][i] - mus[k - 1][i];
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(ds, gen_synthetic_linear(4, 3, 5, 0.0, 0.0, 9).unwrap());
        assert!(gen_synthetic_linear(1, 3, 5, 0.0, 0.0, 9).is_err());
        assert!(gen_synthetic_linear(3, 3, 5, -1.0, 0.0, 9).is_err());
        assert!(gen_synthetic_linear(3, 3, 5, 0.1, 1.0, 9).is_err());
    }

    #[test]
    fn ring_means_are_spaced_on_a_half_circle() {
        let k = 5;
        let ds = gen_synthetic_ring(k, 1, 6, 0.0, 4).unwrap();
        for i in 0..k {
            let a = &ds.samples[i].x;
            assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..k {
                let b = &ds.samples[j].x;
                let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = (i.abs_diff(j) as f64 * std::f64::consts::PI / (k - 1) as f64).cos();
                assert!((cos - want).abs() < 1e-12);
            }
        }
        assert_eq!(ds, gen_synthetic_ring(k, 1, 6, 0.0, 4).unwrap());
    }

    #[test]
    fn csv_parse_and_errors() {
        let p = Path::new("mem.csv");
        let ds = read_csv("f0,f1,label\n0.5,1,0\n2,3.25,1\n".as_bytes(), p, None).unwrap();
        assert_eq!((ds.num_classes, ds.len(), ds.input_dim), (2, 2, 2));

        let mut text = String::from("f0,label\n");
        for i in 0..5 {
            text.push_str(&format!("{i}.0,0\n"));
        }
        text.push_str("1.0\n");
        let err = read_csv(text.as_bytes(), p, None).unwrap_err().to_string();
        assert!(err.contains("row 7"), "{err}");

        let err = read_csv("f0,label\n1.0,x\n".as_bytes(), p, None).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("label"), "{err}");
        assert!(read_csv("a,b\n1,0\n".as_bytes(), p, None).is_err());
        assert!(read_csv("f0,label\n1,3\n".as_bytes(), p, Some(2)).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = gen_synthetic_linear(4, 25, 3, 0.1, 0.0, 1).unwrap();
        let spec = SplitSpec { train: 0.75, val: 0.05, test: 0.20, seed: 3 };
        let (tr, va, te) = split(&ds, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (75, 5, 20));
        let key = |s: &Sample| format!("{:?}", s.x);
        let all: HashSet<String> = tr.samples.iter().chain(&va.samples).chain(&te.samples).map(key).collect();
        assert_eq!(all.len(), 100);
        for (part, frac) in [(&tr, 0.75), (&te, 0.20)] {
            for c in part.class_counts() {
                assert!((c as f64 - frac * 25.0).abs() <= 1.0);
            }
        }
        let again = split(&ds, &spec).unwrap();
        assert_eq!(again.0, tr);
        let small = gen_synthetic_linear(2, 2, 1, 0.1, 0.0, 1).unwrap();
        assert!(split(&small, &spec).is_err());
        let bad = SplitSpec { train: 0.8, val: 0.1, test: 0.2, seed: 0 };
        assert!(split(&ds, &bad).is_err());
    }
}
