//! Pairs, votes, probabilities and ground truth, plus their CSV forms.
//!
//! Labeling matrix files carry a header `left_id,right_id,<lf_1>,...` for
//! two-table tasks or `id_a,id_b,<lf_1>,...` for single-table tasks, one
//! candidate pair per row, votes written as `-1`, `0` or `1`. Lines starting
//! with `#` are comments and are skipped on input.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TableSide {
    Left,
    Right,
    Single,
}

impl TableSide {
    pub fn opposite(self) -> TableSide {
        match self {
            TableSide::Left => TableSide::Right,
            TableSide::Right => TableSide::Left,
            TableSide::Single => TableSide::Single,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    TwoTable,
    SingleTable,
}

impl TaskKind {
    /// Column names of the two id columns for this task.
    pub fn id_columns(self) -> (&'static str, &'static str) {
        match self {
            TaskKind::TwoTable => ("left_id", "right_id"),
            TaskKind::SingleTable => ("id_a", "id_b"),
        }
    }

    /// Infers the task kind from the first two header fields.
    pub fn detect(first: &str, second: &str) -> Option<TaskKind> {
        match (first, second) {
            ("left_id", "right_id") => Some(TaskKind::TwoTable),
            ("id_a", "id_b") => Some(TaskKind::SingleTable),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::TwoTable => f.write_str("two-table"),
            TaskKind::SingleTable => f.write_str("single-table"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TupleRef {
    pub side: TableSide,
    pub id: String,
}

impl TupleRef {
    pub fn new(side: TableSide, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyTupleId);
        }
        Ok(TupleRef { side, id })
    }

    pub fn left(id: impl Into<String>) -> Self {
        TupleRef {
            side: TableSide::Left,
            id: id.into(),
        }
    }

    pub fn right(id: impl Into<String>) -> Self {
        TupleRef {
            side: TableSide::Right,
            id: id.into(),
        }
    }

    pub fn single(id: impl Into<String>) -> Self {
        TupleRef {
            side: TableSide::Single,
            id: id.into(),
        }
    }
}

/// A candidate tuple pair. Two-table pairs are always (Left, Right);
/// single-table pairs are ordered so that `a.id < b.id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairId {
    pub a: TupleRef,
    pub b: TupleRef,
}

impl PairId {
    pub fn two_table(left: impl Into<String>, right: impl Into<String>) -> Self {
        PairId {
            a: TupleRef::left(left),
            b: TupleRef::right(right),
        }
    }

    /// Builds a canonical single-table pair, swapping the ids if needed.
    pub fn single_table(x: impl Into<String>, y: impl Into<String>) -> Result<Self> {
        let (x, y) = (x.into(), y.into());
        if x.is_empty() || y.is_empty() {
            return Err(Error::EmptyTupleId);
        }
        if x == y {
            return Err(Error::SelfPair(x));
        }
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        Ok(PairId {
            a: TupleRef::single(a),
            b: TupleRef::single(b),
        })
    }

    pub fn new(kind: TaskKind, first: &str, second: &str) -> Result<Self> {
        match kind {
            TaskKind::TwoTable => {
                if first.is_empty() || second.is_empty() {
                    return Err(Error::EmptyTupleId);
                }
                Ok(PairId::two_table(first, second))
            }
            TaskKind::SingleTable => PairId::single_table(first, second),
        }
    }
}

/// Binary label of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Match,
    NonMatch,
}

impl Label {
    /// Hard label of a probability: a match iff strictly above one half.
    pub fn from_prob(p: f64) -> Label {
        if p > 0.5 {
            Label::Match
        } else {
            Label::NonMatch
        }
    }

    pub fn from_vote(v: i8) -> Option<Label> {
        match v {
            1 => Some(Label::Match),
            -1 => Some(Label::NonMatch),
            _ => None,
        }
    }

    pub fn as_vote(self) -> i8 {
        match self {
            Label::Match => 1,
            Label::NonMatch => -1,
        }
    }

    pub fn is_match(self) -> bool {
        self == Label::Match
    }
}

/// Dense indexing of the tuples referenced by a pair set.
#[derive(Debug, Clone)]
pub struct TupleIndex {
    tuples: Vec<TupleRef>,
    lookup: HashMap<TupleRef, usize>,
    endpoints: Vec<(usize, usize)>,
}

impl TupleIndex {
    fn build(pairs: &[PairId]) -> Self {
        let mut refs: Vec<&TupleRef> = pairs.iter().flat_map(|p| [&p.a, &p.b]).collect();
        refs.sort();
        refs.dedup();
        let tuples: Vec<TupleRef> = refs.into_iter().cloned().collect();
        let lookup: HashMap<TupleRef, usize> = tuples
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let endpoints = pairs
            .iter()
            .map(|p| (lookup[&p.a], lookup[&p.b]))
            .collect();
        TupleIndex {
            tuples,
            lookup,
            endpoints,
        }
    }

    /// Tuples sorted by (side, id).
    pub fn tuples(&self) -> &[TupleRef] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn position(&self, t: &TupleRef) -> Option<usize> {
        self.lookup.get(t).copied()
    }

    /// Tuple indices of each pair, in pair order.
    pub fn endpoints(&self) -> &[(usize, usize)] {
        &self.endpoints
    }

    pub fn count_side(&self, side: TableSide) -> usize {
        self.tuples.iter().filter(|t| t.side == side).count()
    }
}

/// The ordered, unique set of candidate pairs shared by matrices and
/// probability assignments.
#[derive(Debug)]
pub struct PairSet {
    kind: TaskKind,
    pairs: Vec<PairId>,
    index: HashMap<PairId, usize>,
    tuples: OnceLock<TupleIndex>,
}

impl PairSet {
    pub fn new(kind: TaskKind, pairs: Vec<PairId>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            match kind {
                TaskKind::TwoTable => {
                    if p.a.side != TableSide::Left || p.b.side != TableSide::Right {
                        return Err(Error::Config(format!(
                            "two-table pair ({}, {}) must be (left, right)",
                            p.a.id, p.b.id
                        )));
                    }
                }
                TaskKind::SingleTable => {
                    if p.a.side != TableSide::Single || p.b.side != TableSide::Single {
                        return Err(Error::Config(format!(
                            "single-table pair ({}, {}) has a table side",
                            p.a.id, p.b.id
                        )));
                    }
                    if p.a.id == p.b.id {
                        return Err(Error::SelfPair(p.a.id.clone()));
                    }
                    if p.a.id > p.b.id {
                        return Err(Error::Config(format!(
                            "single-table pair ({}, {}) is not canonically ordered",
                            p.a.id, p.b.id
                        )));
                    }
                }
            }
            if p.a.id.is_empty() || p.b.id.is_empty() {
                return Err(Error::EmptyTupleId);
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::DuplicatePair {
                    a: p.a.id.clone(),
                    b: p.b.id.clone(),
                });
            }
        }
        Ok(PairSet {
            kind,
            pairs,
            index,
            tuples: OnceLock::new(),
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PairId] {
        &self.pairs
    }

    pub fn position(&self, pair: &PairId) -> Option<usize> {
        self.index.get(pair).copied()
    }

    pub fn tuples(&self) -> &TupleIndex {
        self.tuples.get_or_init(|| TupleIndex::build(&self.pairs))
    }
}

/// n pairs by m labeling functions, votes in {-1, 0, +1}.
#[derive(Debug, Clone)]
pub struct LabelingMatrix {
    pairs: Arc<PairSet>,
    lf_names: Vec<String>,
    votes: Vec<i8>,
}

impl LabelingMatrix {
    /// `votes` is row-major, `pairs.len() * lf_names.len()` entries.
    pub fn new(pairs: Arc<PairSet>, lf_names: Vec<String>, votes: Vec<i8>) -> Result<Self> {
        let m = lf_names.len();
        if votes.len() != pairs.len() * m {
            return Err(Error::DimensionMismatch {
                expected: pairs.len() * m,
                got: votes.len(),
            });
        }
        if let Some(&bad) = votes.iter().find(|v| !(-1..=1).contains(*v)) {
            let pos = votes.iter().position(|v| *v == bad).unwrap_or(0);
            return Err(Error::VoteDomain {
                line: (pos / m.max(1)) as u64 + 2,
                column: lf_names[pos % m.max(1)].clone(),
                value: bad.to_string(),
            });
        }
        for (j, name) in lf_names.iter().enumerate() {
            if !pairs.is_empty() && (0..pairs.len()).all(|i| votes[i * m + j] == 0) {
                return Err(Error::AllAbstainColumn(name.clone()));
            }
        }
        Ok(LabelingMatrix {
            pairs,
            lf_names,
            votes,
        })
    }

    pub fn pair_set(&self) -> &Arc<PairSet> {
        &self.pairs
    }

    pub fn pairs(&self) -> &[PairId] {
        self.pairs.pairs()
    }

    pub fn task_kind(&self) -> TaskKind {
        self.pairs.kind()
    }

    pub fn lf_names(&self) -> &[String] {
        &self.lf_names
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_lfs(&self) -> usize {
        self.lf_names.len()
    }

    pub fn row(&self, i: usize) -> &[i8] {
        let m = self.n_lfs();
        &self.votes[i * m..(i + 1) * m]
    }

    pub fn vote(&self, i: usize, j: usize) -> i8 {
        self.votes[i * self.n_lfs() + j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = i8> + '_ {
        let m = self.n_lfs();
        (0..self.n_pairs()).map(move |i| self.votes[i * m + j])
    }

    pub fn votes(&self) -> &[i8] {
        &self.votes
    }

    /// Votes as a real-valued feature grid for the classifier.
    pub fn to_features(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_pairs(), self.n_lfs()), |(i, j)| {
            f64::from(self.vote(i, j))
        })
    }

    /// Returns a copy with columns reordered by `order`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let m = self.n_lfs();
        let names = order.iter().map(|&j| self.lf_names[j].clone()).collect();
        let mut votes = Vec::with_capacity(self.votes.len());
        for i in 0..self.n_pairs() {
            votes.extend(order.iter().map(|&j| self.votes[i * m + j]));
        }
        LabelingMatrix::new(self.pairs.clone(), names, votes)
    }
}

/// Match probability per candidate pair, aligned with a [`PairSet`].
#[derive(Debug, Clone)]
pub struct ProbAssignment {
    pairs: Arc<PairSet>,
    probs: Vec<f64>,
}

impl PartialEq for ProbAssignment {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.pairs, &other.pairs) || self.pairs.pairs() == other.pairs.pairs())
            && self.probs.len() == other.probs.len()
            && self
                .probs
                .iter()
                .zip(&other.probs)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ProbAssignment {
    pub fn new(pairs: Arc<PairSet>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: pairs.len(),
                got: probs.len(),
            });
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(Error::Numerical(format!("probability {p} outside [0, 1]")));
        }
        Ok(ProbAssignment { pairs, probs })
    }

    pub fn pair_set(&self) -> &Arc<PairSet> {
        &self.pairs
    }

    pub fn pairs(&self) -> &[PairId] {
        self.pairs.pairs()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, pair: &PairId) -> Option<f64> {
        self.pairs.position(pair).map(|i| self.probs[i])
    }

    pub fn labels(&self) -> Vec<Label> {
        self.probs.iter().map(|&p| Label::from_prob(p)).collect()
    }

    /// Same pairs, new values. Values are validated.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        ProbAssignment::new(self.pairs.clone(), probs)
    }

    /// Clamps every value into `[eps, 1 - eps]`.
    pub fn clamped(&self, eps: f64) -> Self {
        ProbAssignment {
            pairs: self.pairs.clone(),
            probs: self.probs.iter().map(|p| p.clamp(eps, 1.0 - eps)).collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(pairs: Arc<PairSet>, probs: Vec<f64>) -> Self {
        debug_assert_eq!(pairs.len(), probs.len());
        ProbAssignment { pairs, probs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    labels: HashMap<PairId, Label>,
    partial: bool,
}

impl GroundTruth {
    pub fn new(labels: HashMap<PairId, Label>, partial: bool) -> Self {
        GroundTruth { labels, partial }
    }

    pub fn labels(&self) -> &HashMap<PairId, Label> {
        &self.labels
    }

    pub fn is_partial(&self) -> bool {
        self.partial
    }

    pub fn get(&self, pair: &PairId) -> Option<Label> {
        self.labels.get(pair).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub evaluated: usize,
}

/// Binary F1 with matches as the positive class. Pairs without a ground
/// truth label are skipped when the ground truth is partial and rejected
/// otherwise.
pub fn f1(pred: &ProbAssignment, gt: &GroundTruth) -> Result<F1Score> {
    let (mut tp, mut fp, mut fneg, mut evaluated) = (0usize, 0usize, 0usize, 0usize);
    for (pair, &p) in pred.pairs().iter().zip(pred.probs()) {
        let Some(truth) = gt.get(pair) else {
            if gt.is_partial() {
                continue;
            }
            return Err(Error::Config(format!(
                "complete ground truth lacks pair ({}, {})",
                pair.a.id, pair.b.id
            )));
        };
        evaluated += 1;
        match (Label::from_prob(p), truth) {
            (Label::Match, Label::Match) => tp += 1,
            (Label::Match, Label::NonMatch) => fp += 1,
            (Label::NonMatch, Label::Match) => fneg += 1,
            (Label::NonMatch, Label::NonMatch) => {}
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyIntersection);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
        evaluated,
    })
}

/// Fraction of +1 among non-abstain votes per row; all-abstain rows get 0.
pub fn majority_vote(x: &LabelingMatrix) -> ProbAssignment {
    let probs = (0..x.n_pairs())
        .map(|i| {
            let (pos, neg) = x.row(i).iter().fold((0u32, 0u32), |(p, n), &v| match v {
                1 => (p + 1, n),
                -1 => (p, n + 1),
                _ => (p, n),
            });
            if pos + neg == 0 {
                0.0
            } else {
                f64::from(pos) / f64::from(pos + neg)
            }
        })
        .collect();
    ProbAssignment::from_parts_unchecked(x.pair_set().clone(), probs)
}

fn reader_builder() -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.has_headers(true).comment(Some(b'#')).trim(csv::Trim::None);
    b
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn check_id_header(headers: &csv::StringRecord, kind: TaskKind) -> Result<()> {
    let (a, b) = kind.id_columns();
    match (headers.get(0), headers.get(1)) {
        (Some(x), Some(y)) if x == a && y == b => Ok(()),
        (x, y) => Err(Error::Header(format!(
            "expected `{a},{b},...` for a {kind} task, found `{},{}`",
            x.unwrap_or(""),
            y.unwrap_or("")
        ))),
    }
}

/// Reads the first non-comment line of a CSV and infers the task kind.
pub fn detect_task_kind(bytes: &[u8]) -> Result<TaskKind> {
    let mut rdr = reader_builder().from_reader(bytes);
    let headers = rdr.headers()?;
    TaskKind::detect(headers.get(0).unwrap_or(""), headers.get(1).unwrap_or("")).ok_or_else(|| {
        Error::Header(format!(
            "cannot infer task kind from header `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        ))
    })
}

pub fn load_labeling_matrix<R: Read>(source: R, kind: TaskKind) -> Result<LabelingMatrix> {
    let mut rdr = reader_builder().from_reader(source);
    let headers = rdr.headers()?.clone();
    check_id_header(&headers, kind)?;
    let lf_names: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    if lf_names.is_empty() {
        return Err(Error::Header("no labeling function columns".into()));
    }
    let m = lf_names.len();
    let mut pairs = Vec::new();
    let mut votes = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != m + 2 {
            return Err(Error::Malformed {
                line,
                message: format!("expected {} fields, found {}", m + 2, rec.len()),
            });
        }
        let pair = PairId::new(kind, &rec[0], &rec[1])?;
        if seen.insert(pair.clone(), line).is_some() {
            return Err(Error::DuplicatePair {
                a: pair.a.id,
                b: pair.b.id,
            });
        }
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v = match field {
                "1" | "+1" => 1,
                "0" => 0,
                "-1" => -1,
                other => {
                    return Err(Error::VoteDomain {
                        line,
                        column: lf_names[j].clone(),
                        value: other.to_owned(),
                    })
                }
            };
            votes.push(v);
        }
        pairs.push(pair);
    }
    let set = Arc::new(PairSet::new(kind, pairs)?);
    LabelingMatrix::new(set, lf_names, votes)
}

pub fn write_labeling_matrix<W: Write>(x: &LabelingMatrix, out: W) -> Result<()> {
    let mut w = writer(out);
    let (a, b) = x.task_kind().id_columns();
    let mut header = vec![a.to_owned(), b.to_owned()];
    header.extend(x.lf_names().iter().cloned());
    w.write_record(&header)?;
    for (i, pair) in x.pairs().iter().enumerate() {
        let mut rec = vec![pair.a.id.clone(), pair.b.id.clone()];
        rec.extend(x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_ground_truth<R: Read>(source: R, kind: TaskKind, partial: bool) -> Result<GroundTruth> {
    let mut rdr = reader_builder().from_reader(source);
    let headers = rdr.headers()?.clone();
    check_id_header(&headers, kind)?;
    if headers.get(2) != Some("label") {
        return Err(Error::Header("third column must be `label`".into()));
    }
    let mut labels = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(Error::Malformed {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let pair = PairId::new(kind, &rec[0], &rec[1])?;
        let label = match &rec[2] {
            "1" | "+1" => Label::Match,
            "-1" => Label::NonMatch,
            other => {
                return Err(Error::LabelDomain {
                    line,
                    value: other.to_owned(),
                })
            }
        };
        if labels.insert(pair.clone(), label).is_some() {
            return Err(Error::DuplicatePair {
                a: pair.a.id,
                b: pair.b.id,
            });
        }
    }
    Ok(GroundTruth::new(labels, partial))
}

/// Writes labels in the order of `pairs`, skipping pairs without a label.
pub fn write_ground_truth<W: Write>(gt: &GroundTruth, pairs: &PairSet, out: W) -> Result<()> {
    let mut w = writer(out);
    let (a, b) = pairs.kind().id_columns();
    w.write_record([a, b, "label"])?;
    for pair in pairs.pairs() {
        if let Some(l) = gt.get(pair) {
            w.write_record([pair.a.id.as_str(), pair.b.id.as_str(), &l.as_vote().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `<ids>,prob,label`, optionally preceded by `# ` comment lines.
pub fn write_probabilities<W: Write>(
    gamma: &ProbAssignment,
    comments: &[String],
    mut out: W,
) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = writer(out);
    let (a, b) = gamma.pair_set().kind().id_columns();
    w.write_record([a, b, "prob", "label"])?;
    for (pair, &p) in gamma.pairs().iter().zip(gamma.probs()) {
        w.write_record([
            pair.a.id.as_str(),
            pair.b.id.as_str(),
            &p.to_string(),
            &Label::from_prob(p).as_vote().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_probabilities<R: Read>(source: R, kind: TaskKind) -> Result<ProbAssignment> {
    let mut rdr = reader_builder().from_reader(source);
    let headers = rdr.headers()?.clone();
    check_id_header(&headers, kind)?;
    if headers.get(2) != Some("prob") {
        return Err(Error::Header("third column must be `prob`".into()));
    }
    let mut pairs = Vec::new();
    let mut probs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let p: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed {
                line,
                message: "unparseable probability".into(),
            })?;
        pairs.push(PairId::new(kind, &rec[0], &rec[1])?);
        probs.push(p);
    }
    ProbAssignment::new(Arc::new(PairSet::new(kind, pairs)?), probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(s: &str) -> Result<LabelingMatrix> {
        load_labeling_matrix(s.as_bytes(), TaskKind::TwoTable)
    }

    #[test]
    fn parses_two_rows_exactly() {
        let x = load("left_id,right_id,lf1,lf2\nl1,r1,1,0\nl2,r2,-1,1\n").unwrap();
        assert_eq!(x.n_pairs(), 2);
        assert_eq!(x.row(0), &[1, 0]);
        assert_eq!(x.row(1), &[-1, 1]);
        assert_eq!(x.pairs()[1], PairId::two_table("l2", "r2"));
    }

    #[test]
    fn rejects_vote_outside_domain() {
        let err = load("left_id,right_id,lf1\nl1,r1,2\n").unwrap_err();
        assert!(matches!(err, Error::VoteDomain { ref value, .. } if value == "2"), "{err}");
    }

    #[test]
    fn rejects_duplicate_pair() {
        let err = load("left_id,right_id,lf1\nl1,r1,1\nl1,r1,-1\n").unwrap_err();
        assert!(matches!(err, Error::DuplicatePair { .. }), "{err}");
    }

    #[test]
    fn rejects_all_abstain_column() {
        let err = load("left_id,right_id,lf1,lf2\nl1,r1,1,0\nl2,r1,-1,0\n").unwrap_err();
        assert!(matches!(err, Error::AllAbstainColumn(ref n) if n == "lf2"), "{err}");
    }

    #[test]
    fn rejects_ragged_rows_and_wrong_header() {
        assert!(matches!(
            load("left_id,right_id,lf1\nl1,r1,1,1\n"),
            Err(Error::Csv(_)) | Err(Error::Malformed { .. })
        ));
        assert!(matches!(
            load_labeling_matrix("id_a,id_b,lf1\na,b,1\n".as_bytes(), TaskKind::TwoTable),
            Err(Error::Header(_))
        ));
    }

    #[test]
    fn single_table_pairs_are_canonical() {
        let x = load_labeling_matrix(
            "id_a,id_b,lf\nb,a,1\nc,a,-1\n".as_bytes(),
            TaskKind::SingleTable,
        )
        .unwrap();
        assert_eq!(x.pairs()[0].a.id, "a");
        assert_eq!(x.pairs()[0].b.id, "b");
        let dup = load_labeling_matrix("id_a,id_b,lf\nb,a,1\na,b,1\n".as_bytes(), TaskKind::SingleTable);
        assert!(matches!(dup, Err(Error::DuplicatePair { .. })));
        let selfp = load_labeling_matrix("id_a,id_b,lf\na,a,1\n".as_bytes(), TaskKind::SingleTable);
        assert!(matches!(selfp, Err(Error::SelfPair(_))));
    }

    #[test]
    fn detects_task_kind_after_comments() {
        let bytes = b"# seed=3\nid_a,id_b,lf\na,b,1\n";
        assert_eq!(detect_task_kind(bytes).unwrap(), TaskKind::SingleTable);
    }

    #[test]
    fn majority_vote_cases() {
        let x = load("left_id,right_id,a,b,c\nl1,r1,1,1,-1\nl2,r2,0,0,1\nl3,r3,1,-1,0\nl4,r4,-1,0,0\n")
            .unwrap();
        let mv = majority_vote(&x);
        assert!((mv.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(Label::from_prob(mv.probs()[0]), Label::Match);
        assert_eq!(mv.probs()[2], 0.5);
        assert_eq!(Label::from_prob(0.5), Label::NonMatch);
        assert_eq!(mv.probs()[3], 0.0);

        let y = load("left_id,right_id,a,b,c\nl1,r1,0,0,0\nl2,r2,1,1,1\n").unwrap();
        let mv = majority_vote(&y);
        assert_eq!(mv.probs()[0], 0.0);
        assert_eq!(Label::from_prob(mv.probs()[0]), Label::NonMatch);
    }

    fn two_table_set(n: usize) -> Arc<PairSet> {
        let pairs = (0..n)
            .map(|i| PairId::two_table(format!("l{i}"), format!("r{i}")))
            .collect();
        Arc::new(PairSet::new(TaskKind::TwoTable, pairs).unwrap())
    }

    fn truth(set: &PairSet, labels: &[i8]) -> GroundTruth {
        GroundTruth::new(
            set.pairs()
                .iter()
                .zip(labels)
                .map(|(p, &l)| (p.clone(), Label::from_vote(l).unwrap()))
                .collect(),
            false,
        )
    }

    #[test]
    fn f1_cases() {
        let set = two_table_set(5);
        let gt = truth(&set, &[1, 1, 1, -1, -1]);
        let perfect = ProbAssignment::new(set.clone(), vec![0.9, 0.8, 1.0, 0.1, 0.0]).unwrap();
        assert_eq!(f1(&perfect, &gt).unwrap().f1, 1.0);

        let none = ProbAssignment::new(set.clone(), vec![0.0, 0.2, 0.5, 0.1, 0.0]).unwrap();
        let s = f1(&none, &gt).unwrap();
        assert_eq!((s.recall, s.f1), (0.0, 0.0));

        // 2 TP, 1 FP, 1 FN
        let mixed = ProbAssignment::new(set.clone(), vec![0.9, 0.9, 0.2, 0.7, 0.1]).unwrap();
        let s = f1(&mixed, &gt).unwrap();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_partial_and_empty() {
        let set = two_table_set(3);
        let pred = ProbAssignment::new(set.clone(), vec![0.9, 0.1, 0.9]).unwrap();
        let mut labels = HashMap::new();
        labels.insert(set.pairs()[0].clone(), Label::Match);
        let partial = GroundTruth::new(labels.clone(), true);
        let s = f1(&pred, &partial).unwrap();
        assert_eq!((s.f1, s.evaluated), (1.0, 1));
        assert!(f1(&pred, &GroundTruth::new(labels, false)).is_err());
        assert!(matches!(
            f1(&pred, &GroundTruth::new(HashMap::new(), true)),
            Err(Error::EmptyIntersection)
        ));
    }

    #[test]
    fn probability_csv_round_trip() {
        let set = two_table_set(3);
        let gamma = ProbAssignment::new(set, vec![0.25, 0.5, 0.875]).unwrap();
        let mut buf = Vec::new();
        write_probabilities(&gamma, &["seed=7".to_string()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=7\nleft_id,right_id,prob,label\nl0,r0,0.25,-1\n"));
        let back = load_probabilities(&buf[..], TaskKind::TwoTable).unwrap();
        assert_eq!(back.probs(), gamma.probs());
    }

    fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<i8>)> {
        (1usize..12, 1usize..6).prop_flat_map(|(n, m)| {
            (Just(n), Just(m), proptest::collection::vec(-1i8..=1, n * m))
        })
    }

    proptest! {
        #[test]
        fn labeling_csv_round_trips_byte_identically((n, m, mut votes) in matrix_strategy()) {
            // make every column non-abstaining somewhere
            for j in 0..m {
                if (0..n).all(|i| votes[i * m + j] == 0) {
                    votes[j] = 1;
                }
            }
            let names = (0..m).map(|j| format!("lf{j}")).collect();
            let x = LabelingMatrix::new(two_table_set(n), names, votes).unwrap();
            let mut first = Vec::new();
            write_labeling_matrix(&x, &mut first).unwrap();
            let y = load_labeling_matrix(&first[..], TaskKind::TwoTable).unwrap();
            let mut second = Vec::new();
            write_labeling_matrix(&y, &mut second).unwrap();
            prop_assert_eq!(first, second);
            prop_assert_eq!(x.votes(), y.votes());
        }

        #[test]
        fn majority_vote_ignores_column_order((n, m, mut votes) in matrix_strategy(), seed in any::<u64>()) {
            for j in 0..m {
                if (0..n).all(|i| votes[i * m + j] == 0) {
                    votes[j] = -1;
                }
            }
            let names = (0..m).map(|j| format!("lf{j}")).collect();
            let x = LabelingMatrix::new(two_table_set(n), names, votes).unwrap();
            let mut order: Vec<usize> = (0..m).collect();
            order.rotate_left((seed as usize) % m);
            order.reverse();
            let y = x.permute_columns(&order).unwrap();
            prop_assert_eq!(majority_vote(&x), majority_vote(&y));
        }
    }
}
