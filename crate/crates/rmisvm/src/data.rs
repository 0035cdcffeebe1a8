//! Bag/instance containers and the line-oriented dataset text format.
//!
//! A dataset file holds one instance per line:
//!
//! ```text
//! #dim 4
//! 1 bag7 0:1.5 3:-0.25
//! 0 bag8 1:2.0
//! 1 bag7 2:0.5
//! ```
//!
//! Each line is `<label> <bag_id> <idx>:<val> ...`. The label is `0` or `1`
//! (`-1` is accepted as an alias for `0` on input); lines of the same bag may
//! be interleaved with other bags and are grouped by id, keeping first
//! appearance order for bags and line order for instances. A bag's label is
//! taken from its first line and later lines must agree. Lines starting with
//! `#` are comments, except `#dim <n>`, which declares the feature dimension;
//! without it the dimension is one past the largest index seen.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Error;

/// Bag-level class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BagLabel {
    Negative,
    Positive,
}

impl BagLabel {
    /// Maps `1` to positive and `0` or `-1` to negative.
    pub fn from_int(v: i64) -> Option<BagLabel> {
        match v {
            1 => Some(BagLabel::Positive),
            0 | -1 => Some(BagLabel::Negative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, BagLabel::Positive)
    }

    pub fn as_u8(self) -> u8 {
        self.is_positive() as u8
    }

    /// Label as the real value used in losses: 1.0 or 0.0.
    pub fn as_f64(self) -> f64 {
        self.is_positive() as u8 as f64
    }
}

/// A sparse feature vector. Indices are strictly increasing and values are
/// finite; every instance carries at least one `index:value` pair (a zero
/// vector is written with explicit zero values).
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    features: Vec<(u32, f64)>,
}

impl Instance {
    /// Builds an instance, sorting features by index. Rejects empty feature
    /// lists, duplicate indices, and non-finite values.
    pub fn new(mut features: Vec<(u32, f64)>) -> Result<Instance, Error> {
        if features.is_empty() {
            return Err(Error::InvalidConfig(
                "instance must have at least one feature".into(),
            ));
        }
        features.sort_by_key(|&(i, _)| i);
        for pair in features.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidConfig(format!(
                    "duplicate feature index {}",
                    pair[0].0
                )));
            }
        }
        if let Some(&(i, v)) = features.iter().find(|&&(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite value {v} at index {i}"
            )));
        }
        Ok(Instance { features })
    }

    pub fn features(&self) -> &[(u32, f64)] {
        &self.features
    }

    /// Largest feature index; features are sorted, so this is O(1).
    pub fn max_index(&self) -> u32 {
        self.features.last().map(|&(i, _)| i).unwrap_or(0)
    }

    /// Euclidean norm, scaled internally so that extreme values cannot
    /// overflow to infinity.
    pub fn norm(&self) -> f64 {
        let peak = self
            .features
            .iter()
            .map(|&(_, v)| v.abs())
            .fold(0.0_f64, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let sum: f64 = self
            .features
            .iter()
            .map(|&(_, v)| (v / peak) * (v / peak))
            .sum();
        peak * sum.sqrt()
    }

    /// Copy of this instance scaled to unit norm; a zero vector is returned
    /// unchanged.
    pub fn l2_normalized(&self) -> Instance {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Instance {
            features: self.features.iter().map(|&(i, v)| (i, v / n)).collect(),
        }
    }
}

/// A labeled bag of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    id: String,
    label: BagLabel,
    instances: Vec<Instance>,
}

impl Bag {
    /// Builds a bag. Ids must be non-empty and free of whitespace (they are
    /// written as single tokens); bags hold at least one instance.
    pub fn new(id: impl Into<String>, label: BagLabel, instances: Vec<Instance>) -> Result<Bag, Error> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!(
                "bag id {id:?} must be a non-empty whitespace-free token"
            )));
        }
        if instances.is_empty() {
            return Err(Error::InvalidConfig(format!("bag {id:?} has no instances")));
        }
        Ok(Bag {
            id,
            label,
            instances,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> BagLabel {
        self.label
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    /// Number of instances in the bag.
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Largest feature index used by any instance in the bag.
    pub fn max_index(&self) -> u32 {
        self.instances
            .iter()
            .map(Instance::max_index)
            .max()
            .unwrap_or(0)
    }
}

/// An ordered collection of bags with a fixed feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bags: Vec<Bag>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset. Bag ids must be unique and every feature index must
    /// lie below `dim`.
    pub fn new(bags: Vec<Bag>, dim: usize) -> Result<Dataset, Error> {
        if bags.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = HashMap::new();
        for (i, bag) in bags.iter().enumerate() {
            if let Some(first) = seen.insert(bag.id().to_string(), i) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate bag id {:?} (bags {first} and {i})",
                    bag.id()
                )));
            }
            if bag.max_index() as usize >= dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: bag.max_index() as usize + 1,
                });
            }
        }
        Ok(Dataset { bags, dim })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn labels(&self) -> Vec<BagLabel> {
        self.bags.iter().map(Bag::label).collect()
    }

    /// Total instance count across bags.
    pub fn n_instances(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    /// Dataset with every instance scaled to unit norm (zero vectors kept).
    pub fn l2_normalized(&self) -> Dataset {
        let bags = self
            .bags
            .iter()
            .map(|b| Bag {
                id: b.id.clone(),
                label: b.label,
                instances: b.instances.iter().map(Instance::l2_normalized).collect(),
            })
            .collect();
        Dataset {
            bags,
            dim: self.dim,
        }
    }

    /// New dataset holding clones of the bags at `indices`, in the given
    /// order, with the same dimension. Indices must be in range and distinct.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, Error> {
        let mut bags = Vec::with_capacity(indices.len());
        for &i in indices {
            let bag = self
                .bags
                .get(i)
                .ok_or_else(|| Error::InvalidConfig(format!("bag index {i} out of range")))?;
            bags.push(bag.clone());
        }
        Dataset::new(bags, self.dim)
    }

    /// Parses the text dataset format described in the module docs.
    pub fn parse(text: &str) -> Result<Dataset, Error> {
        let mut declared: Option<(usize, usize)> = None; // (dim, header line)
        let mut order: Vec<String> = Vec::new();
        let mut by_id: HashMap<String, (BagLabel, Vec<Instance>)> = HashMap::new();
        let mut max_index: Option<u32> = None;

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut toks = rest.split_whitespace();
                if toks.next() == Some("dim") && line.starts_with("#dim") {
                    let val = toks
                        .next()
                        .ok_or_else(|| Error::parse(lineno, "#dim header without a value"))?;
                    if toks.next().is_some() {
                        return Err(Error::parse(lineno, "trailing tokens after #dim value"));
                    }
                    let dim: usize = val.parse().map_err(|_| {
                        Error::parse(lineno, format!("invalid #dim value {val:?}"))
                    })?;
                    if dim == 0 {
                        return Err(Error::parse(lineno, "#dim must be at least 1"));
                    }
                    if declared.is_some() {
                        return Err(Error::parse(lineno, "duplicate #dim header"));
                    }
                    declared = Some((dim, lineno));
                }
                continue;
            }

            let mut toks = line.split_whitespace();
            let label_tok = toks.next().expect("non-empty line has a first token");
            let label = label_tok
                .parse::<i64>()
                .ok()
                .and_then(BagLabel::from_int)
                .ok_or_else(|| {
                    Error::parse(lineno, format!("label must be 0, 1, or -1, got {label_tok:?}"))
                })?;
            let id = toks
                .next()
                .ok_or_else(|| Error::parse(lineno, "missing bag id"))?;

            let mut features = Vec::new();
            for pair in toks {
                let (idx, val) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::parse(lineno, format!("malformed pair {pair:?}")))?;
                let idx: u32 = idx.parse().map_err(|_| {
                    Error::parse(lineno, format!("invalid feature index {idx:?}"))
                })?;
                let val: f64 = val.parse().map_err(|_| {
                    Error::parse(lineno, format!("invalid feature value {val:?}"))
                })?;
                if !val.is_finite() {
                    return Err(Error::parse(lineno, format!("non-finite value {val}")));
                }
                if let Some((dim, _)) = declared {
                    if idx as usize >= dim {
                        return Err(Error::parse(
                            lineno,
                            format!("feature index {idx} out of range for declared dim {dim}"),
                        ));
                    }
                }
                features.push((idx, val));
            }
            if features.is_empty() {
                return Err(Error::parse(lineno, "expected at least one index:value pair"));
            }
            let instance = Instance::new(features)
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
            max_index = Some(max_index.map_or(instance.max_index(), |m| m.max(instance.max_index())));

            match by_id.get_mut(id) {
                None => {
                    order.push(id.to_string());
                    by_id.insert(id.to_string(), (label, vec![instance]));
                }
                Some((first_label, instances)) => {
                    if *first_label != label {
                        return Err(Error::parse(
                            lineno,
                            format!("conflicting labels for bag {id:?}"),
                        ));
                    }
                    instances.push(instance);
                }
            }
        }

        let max_index = max_index.ok_or(Error::EmptyDataset)?;
        let inferred = max_index as usize + 1;
        let dim = match declared {
            // Indices were checked against the declared dim line by line, but
            // only for lines after the header; recheck covers a trailing header.
            Some((dim, header_line)) => {
                if dim < inferred {
                    return Err(Error::parse(
                        header_line,
                        format!("declared dim {dim} but saw feature index {max_index}"),
                    ));
                }
                dim
            }
            None => inferred,
        };

        let bags = order
            .into_iter()
            .map(|id| {
                let (label, instances) = by_id.remove(&id).expect("id recorded in order");
                Bag::new(id, label, instances)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(bags, dim)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Dataset, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse(&text)
    }

    /// Serializes to the text format. `parse` of the result reproduces the
    /// dataset exactly: the `#dim` header is always written and float values
    /// use the shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "#dim {}", self.dim).unwrap();
        for bag in &self.bags {
            for instance in &bag.instances {
                write!(out, "{} {}", bag.label.as_u8(), bag.id).unwrap();
                for &(i, v) in instance.features() {
                    write!(out, " {i}:{v}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-instance binary labels for one bag, aligned with a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BagTruth {
    pub bag_id: String,
    pub labels: Vec<bool>,
}

/// True instance labels for every bag of a dataset, in bag order. The text
/// format is one `<bag_id> <position> <0|1>` triple per line, positions
/// 0-based and consecutive within each bag; `#` comments and blank lines are
/// ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    bags: Vec<BagTruth>,
}

impl GroundTruth {
    pub fn new(bags: Vec<BagTruth>) -> Result<GroundTruth, Error> {
        let mut seen = HashMap::new();
        for (i, bag) in bags.iter().enumerate() {
            if bag.labels.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "ground truth for bag {:?} is empty",
                    bag.bag_id
                )));
            }
            if seen.insert(bag.bag_id.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate ground-truth bag id {:?}",
                    bag.bag_id
                )));
            }
        }
        Ok(GroundTruth { bags })
    }

    pub fn bags(&self) -> &[BagTruth] {
        &self.bags
    }

    /// Errors unless this truth lists the same bags, in the same order, with
    /// the same instance counts as `data`.
    pub fn check_aligned(&self, data: &Dataset) -> Result<(), Error> {
        if self.bags.len() != data.n_bags() {
            return Err(Error::Misaligned(format!(
                "{} ground-truth bags vs {} dataset bags",
                self.bags.len(),
                data.n_bags()
            )));
        }
        for (truth, bag) in self.bags.iter().zip(data.bags()) {
            if truth.bag_id != bag.id() {
                return Err(Error::Misaligned(format!(
                    "ground-truth bag {:?} does not match dataset bag {:?}",
                    truth.bag_id,
                    bag.id()
                )));
            }
            if truth.labels.len() != bag.len() {
                return Err(Error::Misaligned(format!(
                    "bag {:?}: {} ground-truth labels vs {} instances",
                    truth.bag_id,
                    truth.labels.len(),
                    bag.len()
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<GroundTruth, Error> {
        let mut order: Vec<String> = Vec::new();
        let mut by_id: HashMap<String, Vec<bool>> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(Error::parse(lineno, "expected `<bag_id> <position> <0|1>`"));
            }
            let pos: usize = toks[1]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("invalid position {:?}", toks[1])))?;
            let label = match toks[2] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::parse(
                        lineno,
                        format!("instance label must be 0 or 1, got {other:?}"),
                    ))
                }
            };
            let labels = by_id.entry(toks[0].to_string()).or_insert_with(|| {
                order.push(toks[0].to_string());
                Vec::new()
            });
            if pos != labels.len() {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "bag {:?}: expected position {}, got {pos}",
                        toks[0],
                        labels.len()
                    ),
                ));
            }
            labels.push(label);
        }
        if order.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let bags = order
            .into_iter()
            .map(|id| {
                let labels = by_id.remove(&id).expect("id recorded in order");
                BagTruth { bag_id: id, labels }
            })
            .collect();
        GroundTruth::new(bags)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<GroundTruth, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GroundTruth::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for bag in &self.bags {
            for (pos, &y) in bag.labels.iter().enumerate() {
                writeln!(out, "{} {pos} {}", bag.bag_id, y as u8).unwrap();
            }
        }
        out
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
