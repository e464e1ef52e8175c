//! Label-flip transition matrices and noisy-label generation.
//!
//! Three constructors cover the synthetic schemes: symmetric (uniform over
//! false classes), the asymmetric CIFAR-10 class map, and superclass noise
//! (uniform within a class group). Externally annotated noisy labels can be
//! loaded from CSV, and empirical transition matrices recovered from
//! clean/noisy label pairs.

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::Rng;
use std::io::BufRead;
use std::path::Path;

/// Standard CIFAR-10 class order; the asymmetric map is defined against it.
pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Asymmetric CIFAR-10 flips `(from, to)`: truck to automobile, bird to
/// airplane, deer to horse, and cat/dog both ways. Other classes keep
/// their label.
pub const CIFAR10_ASYMMETRIC_MAP: [(usize, usize); 5] = [
    (9, 1), // truck -> automobile
    (2, 0), // bird -> airplane
    (4, 7), // deer -> horse
    (3, 5), // cat -> dog
    (5, 3), // dog -> cat
];

/// Row-stochastic K x K matrix of label-flip probabilities; rows index the
/// true class, columns the observed class.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>, // row-major
}

impl TransitionMatrix {
    /// Validates entries in `[0, 1]` and unit row sums (1e-9).
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("transition matrix needs k >= 2"));
        }
        if entries.len() != k * k {
            return Err(Error::invalid(format!(
                "expected {} entries, got {}",
                k * k,
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("entry {v} outside [0, 1]")));
        }
        for i in 0..k {
            let sum: f64 = entries[i * k..(i + 1) * k].iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(TransitionMatrix { k, entries })
    }

    pub fn identity(k: usize) -> Result<Self> {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        Self::new(k, entries)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.k + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.k..(from + 1) * self.k]
    }

    /// K rows of K comma-separated values, 6 decimal places, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.k {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Class labels for a dataset, with the class count they index into.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    k: usize,
    labels: Vec<usize>,
}

impl LabelSet {
    pub fn new(k: usize, labels: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("label set needs k >= 2"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {l} out of range for k={k}")));
        }
        Ok(LabelSet { k, labels })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of positions that differ from `other`.
    pub fn flip_fraction(&self, other: &LabelSet) -> f64 {
        let flips = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count();
        flips as f64 / self.labels.len().max(1) as f64
    }
}

/// Disjoint class groups covering `[0, K)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperclassPartition {
    k: usize,
    groups: Vec<Vec<usize>>,
}

impl SuperclassPartition {
    pub fn new(k: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; k];
        for group in &groups {
            if group.is_empty() {
                return Err(Error::invalid("empty superclass group"));
            }
            for &c in group {
                if c >= k {
                    return Err(Error::invalid(format!("class {c} out of range for k={k}")));
                }
                if seen[c] {
                    return Err(Error::invalid(format!("class {c} appears in two groups")));
                }
                seen[c] = true;
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("class {c} missing from partition")));
        }
        Ok(SuperclassPartition { k, groups })
    }

    /// Splits `[0, K)` into consecutive groups of `group_size` classes,
    /// e.g. 20 groups of 5 for a 100-class label space.
    pub fn consecutive(k: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || k % group_size != 0 {
            return Err(Error::invalid(format!(
                "group size {group_size} does not divide k={k}"
            )));
        }
        let groups = (0..k / group_size)
            .map(|g| (g * group_size..(g + 1) * group_size).collect())
            .collect();
        Self::new(k, groups)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// Uniform label noise: keep with probability `1 - eta`, otherwise flip
/// uniformly to one of the `k - 1` false classes.
pub fn symmetric_transition(k: usize, eta: f64) -> Result<TransitionMatrix> {
    check_eta(eta)?;
    if k < 2 {
        return Err(Error::invalid("need k >= 2"));
    }
    let off = eta / (k - 1) as f64;
    let mut entries = vec![off; k * k];
    for i in 0..k {
        entries[i * k + i] = 1.0 - eta;
    }
    TransitionMatrix::new(k, entries)
}

/// Class-dependent CIFAR-10 noise: the mapped classes move `eta` of their
/// mass to their visually similar target; unmapped classes keep their label.
pub fn asymmetric_transition_cifar10(eta: f64) -> Result<TransitionMatrix> {
    check_eta(eta)?;
    let k = 10;
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        entries[i * k + i] = 1.0;
    }
    for &(from, to) in &CIFAR10_ASYMMETRIC_MAP {
        entries[from * k + from] = 1.0 - eta;
        entries[from * k + to] = eta;
    }
    TransitionMatrix::new(k, entries)
}

/// Superclass noise: within each group of size `g`, keep with probability
/// `1 - eta` and flip uniformly over the `g - 1` co-members.
pub fn superclass_transition(partition: &SuperclassPartition, eta: f64) -> Result<TransitionMatrix> {
    check_eta(eta)?;
    let k = partition.k();
    let mut entries = vec![0.0; k * k];
    for group in partition.groups() {
        if group.len() == 1 {
            let c = group[0];
            entries[c * k + c] = 1.0;
            continue;
        }
        let off = eta / (group.len() - 1) as f64;
        for &from in group {
            for &to in group {
                entries[from * k + to] = if from == to { 1.0 - eta } else { off };
            }
        }
    }
    TransitionMatrix::new(k, entries)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        Err(Error::invalid(format!("eta must be in [0, 1], got {eta}")))
    } else {
        Ok(())
    }
}

/// Resamples each label independently from its transition row; deterministic
/// for a given `(labels, t, seed)`.
pub fn apply_noise(labels: &LabelSet, t: &TransitionMatrix, seed: u64) -> Result<LabelSet> {
    if labels.k() != t.k() {
        return Err(Error::invalid(format!(
            "label k={} does not match matrix k={}",
            labels.k(),
            t.k()
        )));
    }
    let mut rng = seeded_rng(seed);
    let noisy = labels
        .labels()
        .iter()
        .map(|&y| {
            let u: f64 = rng.random_range(0.0..1.0);
            sample_row(t.row(y), u)
        })
        .collect();
    LabelSet::new(labels.k(), noisy)
}

/// Inverse-CDF draw from one probability row.
fn sample_row(row: &[f64], u: f64) -> usize {
    let mut cdf = 0.0;
    for (j, &p) in row.iter().enumerate() {
        cdf += p;
        if u < cdf {
            return j;
        }
    }
    // rounding left the cdf fractionally below 1; take the last class
    // that has mass.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Row-normalized confusion counts between clean and noisy labels. Every
/// clean class must appear at least once.
pub fn empirical_transition(clean: &LabelSet, noisy: &LabelSet) -> Result<TransitionMatrix> {
    if clean.k() != noisy.k() {
        return Err(Error::invalid("class counts differ"));
    }
    if clean.len() != noisy.len() {
        return Err(Error::invalid("label sets differ in length"));
    }
    let k = clean.k();
    let mut counts = vec![0usize; k * k];
    for (&c, &n) in clean.labels().iter().zip(noisy.labels()) {
        counts[c * k + n] += 1;
    }
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        let total: usize = counts[i * k..(i + 1) * k].iter().sum();
        if total == 0 {
            return Err(Error::invalid(format!(
                "clean class {i} never appears; its row is undefined"
            )));
        }
        for j in 0..k {
            entries[i * k + j] = counts[i * k + j] as f64 / total as f64;
        }
    }
    TransitionMatrix::new(k, entries)
}

/// Loads externally annotated labels from CSV with header `index,label`.
/// Rows may be in any order; indices must cover `[0, expected_len)` exactly.
pub fn load_external_labels(path: &Path, expected_len: usize, k: usize) -> Result<LabelSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(line))) => line,
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(Error::parse(path, "row 0", "empty file; expected header")),
    };
    if header.trim() != "index,label" {
        return Err(Error::parse(
            path,
            "row 0",
            format!("expected header 'index,label', got '{}'", header.trim()),
        ));
    }

    let mut labels: Vec<Option<usize>> = vec![None; expected_len];
    let mut seen = 0usize;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row = format!("row {lineno}");
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split(',');
        let idx: usize = parts
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, row.clone(), format!("bad index in '{trimmed}'")))?;
        let label: usize = parts
            .next()
            .ok_or_else(|| Error::parse(path, row.clone(), "missing label column"))?
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, row.clone(), format!("bad label in '{trimmed}'")))?;
        if parts.next().is_some() {
            return Err(Error::parse(path, row, "too many columns"));
        }
        if idx >= expected_len {
            return Err(Error::parse(
                path,
                row,
                format!("index {idx} out of range; expected {expected_len} rows"),
            ));
        }
        if label >= k {
            return Err(Error::parse(
                path,
                row,
                format!("label {label} for index {idx} out of range for k={k}"),
            ));
        }
        if labels[idx].is_some() {
            return Err(Error::parse(path, row, format!("duplicate index {idx}")));
        }
        labels[idx] = Some(label);
        seen += 1;
    }
    if seen != expected_len {
        let missing = labels.iter().position(|l| l.is_none()).unwrap_or(0);
        return Err(Error::parse(
            path,
            format!("index {missing}"),
            format!("expected {expected_len} rows, found {seen}"),
        ));
    }
    LabelSet::new(k, labels.into_iter().map(|l| l.unwrap()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn symmetric_matrix_values() {
        let t = symmetric_transition(10, 0.0).unwrap();
        assert_eq!(t, TransitionMatrix::identity(10).unwrap());

        let t = symmetric_transition(10, 0.4).unwrap();
        assert!((t.get(3, 3) - 0.6).abs() < 1e-12);
        assert!((t.get(3, 7) - 0.4 / 9.0).abs() < 1e-12);

        let t = symmetric_transition(2, 0.5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((t.get(i, j) - 0.5).abs() < 1e-12);
            }
        }
        assert!(symmetric_transition(10, 1.2).is_err());
        assert!(symmetric_transition(1, 0.1).is_err());
    }

    #[test]
    fn asymmetric_matrix_matches_class_map() {
        let t = asymmetric_transition_cifar10(0.4).unwrap();
        // truck keeps 0.6, sends 0.4 to automobile
        assert!((t.get(9, 9) - 0.6).abs() < 1e-12);
        assert!((t.get(9, 1) - 0.4).abs() < 1e-12);
        // airplane row stays identity
        assert!((t.get(0, 0) - 1.0).abs() < 1e-12);
        // cat <-> dog both directions
        assert!((t.get(3, 5) - 0.4).abs() < 1e-12);
        assert!((t.get(5, 3) - 0.4).abs() < 1e-12);
        // eta mass lands only on the mapped column
        for &(from, to) in &CIFAR10_ASYMMETRIC_MAP {
            for j in 0..10 {
                if j != from && j != to {
                    assert_eq!(t.get(from, j), 0.0);
                }
            }
        }
        assert_eq!(
            asymmetric_transition_cifar10(0.0).unwrap(),
            TransitionMatrix::identity(10).unwrap()
        );
    }

    #[test]
    fn superclass_matrix_blocks() {
        let part = SuperclassPartition::consecutive(100, 5).unwrap();
        assert_eq!(part.groups().len(), 20);
        let t = superclass_transition(&part, 0.4).unwrap();
        assert!((t.get(7, 7) - 0.6).abs() < 1e-12);
        assert!((t.get(7, 5) - 0.1).abs() < 1e-12);
        assert_eq!(t.get(7, 10), 0.0);

        let two = SuperclassPartition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let t = superclass_transition(&two, 0.2).unwrap();
        assert!((t.get(0, 0) - 0.8).abs() < 1e-12);
        assert!((t.get(0, 1) - 0.2).abs() < 1e-12);
        assert_eq!(t.get(0, 2), 0.0);
        assert_eq!(
            superclass_transition(&two, 0.0).unwrap(),
            TransitionMatrix::identity(4).unwrap()
        );
    }

    #[test]
    fn partition_validation() {
        assert!(SuperclassPartition::new(4, vec![vec![0, 1], vec![2]]).is_err());
        assert!(SuperclassPartition::new(4, vec![vec![0, 1], vec![1, 2, 3]]).is_err());
        assert!(SuperclassPartition::new(4, vec![vec![0, 1], vec![2, 4]]).is_err());
        assert!(SuperclassPartition::consecutive(10, 3).is_err());
    }

    #[test]
    fn apply_noise_identity_and_determinism() {
        let labels = LabelSet::new(4, vec![0, 1, 2, 3, 2, 1]).unwrap();
        let id = TransitionMatrix::identity(4).unwrap();
        assert_eq!(apply_noise(&labels, &id, 9).unwrap(), labels);

        let t = symmetric_transition(4, 0.5).unwrap();
        let a = apply_noise(&labels, &t, 42).unwrap();
        let b = apply_noise(&labels, &t, 42).unwrap();
        assert_eq!(a, b);

        let mismatched = LabelSet::new(5, vec![0, 4]).unwrap();
        assert!(apply_noise(&mismatched, &t, 1).is_err());
    }

    #[test]
    fn empirical_transition_hand_case() {
        let clean = LabelSet::new(2, vec![0, 0, 1, 1]).unwrap();
        let noisy = LabelSet::new(2, vec![0, 1, 1, 1]).unwrap();
        let t = empirical_transition(&clean, &noisy).unwrap();
        assert!((t.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((t.get(0, 1) - 0.5).abs() < 1e-12);
        assert_eq!(t.get(1, 0), 0.0);
        assert!((t.get(1, 1) - 1.0).abs() < 1e-12);

        assert_eq!(empirical_transition(&clean, &clean).unwrap(), TransitionMatrix::identity(2).unwrap());

        let missing = LabelSet::new(3, vec![0, 0, 1, 1]).unwrap();
        let noisy3 = LabelSet::new(3, vec![0, 1, 1, 1]).unwrap();
        let err = empirical_transition(&missing, &noisy3).unwrap_err();
        assert!(err.to_string().contains("class 2"));
    }

    #[test]
    fn csv_format_has_six_decimals() {
        let t = symmetric_transition(3, 0.3).unwrap();
        let csv = t.to_csv();
        let first = csv.lines().next().unwrap();
        assert_eq!(first, "0.700000,0.150000,0.150000");
        assert_eq!(csv.lines().count(), 3);
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn external_labels_identity_file() {
        let body: String = (0..10).map(|i| format!("{i},{i}\n")).collect();
        let f = write_csv(&format!("index,label\n{body}"));
        let labels = load_external_labels(f.path(), 10, 10).unwrap();
        assert_eq!(labels.labels(), &(0..10).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn external_labels_errors_name_the_row() {
        let f = write_csv("index,label\n0,1\n1,2\n2,3\n3,12\n");
        let err = load_external_labels(f.path(), 4, 10).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 4") && msg.contains("12"), "{msg}");

        let f = write_csv("index,label\n0,1\n0,2\n");
        let err = load_external_labels(f.path(), 2, 10).unwrap_err();
        assert!(err.to_string().contains("duplicate index 0"));

        let body: String = (0..49_999).map(|i| format!("{},{}\n", i, i % 10)).collect();
        let f = write_csv(&format!("index,label\n{body}"));
        let err = load_external_labels(f.path(), 50_000, 10).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 50000 rows, found 49999"), "{msg}");

        let f = write_csv("idx,lbl\n0,1\n");
        assert!(load_external_labels(f.path(), 1, 10).is_err());
    }
}
