//! Synthetic set corpora, the JSON-lines dataset format, and padded batches.
//!
//! Each line of a dataset file is one set:
//!
//! ```text
//! {"points": [[0.1, 0.2], [0.3, 0.4]], "label": "circle"}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::PointSet;
use crate::model::CardinalityDist;
use crate::rng::SetRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sets: Vec<PointSet>,
    labels: Vec<Option<String>>,
    cards: CardinalityDist,
}

impl Dataset {
    pub fn new(sets: Vec<PointSet>, labels: Vec<Option<String>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        assert_eq!(sets.len(), labels.len());
        let dim = sets[0].dim();
        if let Some(bad) = sets.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimMismatch(bad.dim(), dim));
        }
        let cards = CardinalityDist::from_cardinalities(sets.iter().map(PointSet::len))?;
        Ok(Self { sets, labels, cards })
    }

    pub fn unlabeled(sets: Vec<PointSet>) -> Result<Self> {
        let labels = vec![None; sets.len()];
        Self::new(sets, labels)
    }

    pub fn sets(&self) -> &[PointSet] {
        &self.sets
    }

    pub fn labels(&self) -> &[Option<String>] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sets[0].dim()
    }

    pub fn cardinality_histogram(&self) -> &CardinalityDist {
        &self.cards
    }

    /// Concatenate two datasets of equal dimension.
    pub fn concat(self, other: Dataset) -> Result<Dataset> {
        let mut sets = self.sets;
        let mut labels = self.labels;
        sets.extend(other.sets);
        labels.extend(other.labels);
        Dataset::new(sets, labels)
    }
}

pub fn cardinality_histogram(ds: &Dataset) -> CardinalityDist {
    ds.cardinality_histogram().clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Circle,
    Cross,
    TwoBlobs,
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::Circle => "circle",
            SyntheticKind::Cross => "cross",
            SyntheticKind::TwoBlobs => "two_blobs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(SyntheticKind::Circle),
            "cross" => Ok(SyntheticKind::Cross),
            "two_blobs" => Ok(SyntheticKind::TwoBlobs),
            other => Err(Error::Config(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

/// Generate `count` 2-D sets with cardinality uniform in `[n_min, n_max]`,
/// shapes placed inside the unit square. For `TwoBlobs` the first `n/2`
/// points belong to the first blob, and the blob centers are at least
/// `max(10·noise_sd, 0.2)` apart.
pub fn gen_synthetic(
    kind: SyntheticKind,
    count: usize,
    n_range: (usize, usize),
    noise_sd: f64,
    rng: &mut SetRng,
) -> Result<Dataset> {
    let (n_min, n_max) = n_range;
    if n_min == 0 || n_min > n_max {
        return Err(Error::Config(format!("invalid cardinality range [{n_min}, {n_max}]")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Config(format!("noise_sd must be nonnegative, got {noise_sd}")));
    }
    if count == 0 {
        return Err(Error::Empty("dataset"));
    }
    let mut sets = Vec::with_capacity(count);
    for _ in 0..count {
        let n = rng.int_range(n_min, n_max);
        let mut coords = Vec::with_capacity(2 * n);
        match kind {
            SyntheticKind::Circle => coords = circle(n, noise_sd, rng).0,
            SyntheticKind::Cross => {
                let half = rng.uniform_range(0.15, 0.3);
                let cx = rng.uniform_range(0.15 + half, 0.85 - half);
                let cy = rng.uniform_range(0.15 + half, 0.85 - half);
                let angle = rng.uniform_range(0.0, std::f64::consts::FRAC_PI_2);
                let (c, s) = (angle.cos(), angle.sin());
                for _ in 0..n {
                    let along = rng.uniform_range(-half, half);
                    let (dx, dy) = if rng.uniform() < 0.5 {
                        (along * c, along * s)
                    } else {
                        (-along * s, along * c)
                    };
                    coords.push(cx + dx + noise_sd * rng.normal());
                    coords.push(cy + dy + noise_sd * rng.normal());
                }
            }
            SyntheticKind::TwoBlobs => {
                let min_sep = (10.0 * noise_sd).max(0.2);
                let (a, b) = loop {
                    let a = [rng.uniform_range(0.15, 0.85), rng.uniform_range(0.15, 0.85)];
                    let b = [rng.uniform_range(0.15, 0.85), rng.uniform_range(0.15, 0.85)];
                    let sep = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                    if sep >= min_sep || min_sep > 0.98 {
                        break (a, b);
                    }
                };
                for i in 0..n {
                    let c = if i < n / 2 { a } else { b };
                    coords.push(c[0] + noise_sd * rng.normal());
                    coords.push(c[1] + noise_sd * rng.normal());
                }
            }
        }
        sets.push(PointSet::new(2, coords)?);
    }
    let labels = vec![Some(kind.as_str().to_string()); count];
    Dataset::new(sets, labels)
}

/// Circle coordinates with their center and radius.
fn circle(n: usize, noise_sd: f64, rng: &mut SetRng) -> (Vec<f64>, [f64; 2], f64) {
    let r = rng.uniform_range(0.1, 0.3);
    let cx = rng.uniform_range(0.15 + r, 0.85 - r);
    let cy = rng.uniform_range(0.15 + r, 0.85 - r);
    let mut coords = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let t = rng.uniform_range(0.0, std::f64::consts::TAU);
        coords.push(cx + r * t.cos() + noise_sd * rng.normal());
        coords.push(cy + r * t.sin() + noise_sd * rng.normal());
    }
    (coords, [cx, cy], r)
}

#[derive(Serialize, Deserialize)]
struct Record {
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

pub fn write_jsonl(sets: &[PointSet], labels: &[Option<String>], out: &mut impl Write) -> Result<()> {
    for (s, label) in sets.iter().zip(labels.iter().chain(std::iter::repeat(&None))) {
        let rec = Record {
            points: s.points().map(<[f64]>::to_vec).collect(),
            label: label.clone(),
        };
        serde_json::to_writer(&mut *out, &rec).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl(&ds.sets, &ds.labels, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Parse a dataset; errors carry the 1-based line number.
pub fn read_jsonl(reader: impl BufRead) -> Result<Dataset> {
    let mut sets = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.points.is_empty() {
            return Err(parse_err("set has no points".into()));
        }
        let d = *dim.get_or_insert(rec.points[0].len());
        if let Some(p) = rec.points.iter().find(|p| p.len() != d) {
            return Err(parse_err(format!("point of dimension {} in a {d}-D dataset", p.len())));
        }
        if d == 0 {
            return Err(parse_err("points have dimension 0".into()));
        }
        let set = PointSet::new(d, rec.points.into_iter().flatten().collect())
            .map_err(|e| parse_err(e.to_string()))?;
        sets.push(set);
        labels.push(rec.label);
    }
    Dataset::new(sets, labels)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    read_jsonl(BufReader::new(File::open(path)?))
}

/// `B` sets padded to a common cardinality. Padding rows are zero and sit
/// after the valid prefix of each set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetBatch {
    elems: Vec<f64>,
    mask: Vec<Vec<bool>>,
    cards: Vec<usize>,
    n_max: usize,
    dim: usize,
}

impl SetBatch {
    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn mask(&self, b: usize) -> &[bool] {
        &self.mask[b]
    }

    /// B × n_max × dim element block, row-major.
    pub fn elems(&self) -> &[f64] {
        &self.elems
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.len(), self.n_max, self.dim]
    }

    pub fn padded(&self, b: usize) -> &[f64] {
        let block = self.n_max * self.dim;
        &self.elems[b * block..(b + 1) * block]
    }

    pub fn unpadded(&self, b: usize) -> &[f64] {
        &self.padded(b)[..self.cards[b] * self.dim]
    }

    pub fn unpad(&self) -> Vec<PointSet> {
        (0..self.len())
            .map(|b| PointSet::new(self.dim, self.unpadded(b).to_vec()).unwrap())
            .collect()
    }
}

pub fn batch_pad(sets: &[PointSet]) -> Result<SetBatch> {
    let first = sets.first().ok_or(Error::Empty("batch"))?;
    let dim = first.dim();
    if let Some(bad) = sets.iter().find(|s| s.dim() != dim) {
        return Err(Error::DimMismatch(bad.dim(), dim));
    }
    let n_max = sets.iter().map(PointSet::len).max().unwrap();
    let mut elems = vec![0.0; sets.len() * n_max * dim];
    let mut mask = Vec::with_capacity(sets.len());
    for (b, s) in sets.iter().enumerate() {
        let off = b * n_max * dim;
        elems[off..off + s.coords().len()].copy_from_slice(s.coords());
        mask.push((0..n_max).map(|i| i < s.len()).collect());
    }
    Ok(SetBatch {
        elems,
        mask,
        cards: sets.iter().map(PointSet::len).collect(),
        n_max,
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_two_sets() {
        let a = PointSet::new(2, vec![1.0; 4]).unwrap();
        let b = PointSet::new(2, vec![2.0; 6]).unwrap();
        let batch = batch_pad(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(batch.shape(), [2, 3, 2]);
        assert_eq!(batch.mask(0), &[true, true, false]);
        assert_eq!(batch.mask(1), &[true, true, true]);
        assert_eq!(&batch.padded(0)[4..], &[0.0, 0.0]);
        assert_eq!(batch.unpad(), vec![a, b]);
    }

    #[test]
    fn single_set_mask_all_true() {
        let a = PointSet::new(3, vec![0.5; 9]).unwrap();
        let batch = batch_pad(&[a]).unwrap();
        assert!(batch.mask(0).iter().all(|&m| m));
    }

    #[test]
    fn format_fixture() {
        let ds = read_jsonl(r#"{"points": [[0,0],[1,0]]}"#.as_bytes()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sets()[0].len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels()[0], None);
    }

    #[test]
    fn mixed_dimension_reports_line() {
        let text = "{\"points\": [[0,0]]}\n{\"points\": [[0,0],[1,2,3]]}\n";
        match read_jsonl(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let text = "{\"points\": [[0,0]]}\nnot json\n";
        assert!(matches!(read_jsonl(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn invalid_range_rejected() {
        let mut rng = SetRng::new(0);
        assert!(gen_synthetic(SyntheticKind::Circle, 3, (5, 4), 0.0, &mut rng).is_err());
        assert!(gen_synthetic(SyntheticKind::Circle, 3, (0, 4), 0.0, &mut rng).is_err());
        assert!(gen_synthetic(SyntheticKind::Circle, 3, (1, 4), -1.0, &mut rng).is_err());
    }

    #[test]
    fn noiseless_circle_on_radius() {
        let mut rng = SetRng::new(3);
        for _ in 0..20 {
            let (coords, c, r) = circle(50, 0.0, &mut rng);
            for p in coords.chunks(2) {
                let dist = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                assert!((dist - r).abs() < 1e-12);
                assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn histogram_counts() {
        let sets = [3, 3, 5].map(|n| PointSet::new(2, vec![0.0; 2 * n]).unwrap());
        let ds = Dataset::unlabeled(sets.to_vec()).unwrap();
        let h = cardinality_histogram(&ds);
        assert_eq!(h.prob(3), 2.0 / 3.0);
        assert_eq!(h.prob(5), 1.0 / 3.0);
    }
}
