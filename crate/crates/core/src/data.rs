//! Datasets: libsvm multilabel files, label-ranking CSV, synthetic tasks and
//! deterministic splits.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::inference::mode_permutahedron;
use crate::losses::Batch;
use crate::spaces::{ranks_to_matrix, OutputSpace, SpaceKind, StructuredOutput};
use crate::{Error, Result};

/// Features and structured targets over one output space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<StructuredOutput>,
    pub space: OutputSpace,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, space: OutputSpace, xs: Vec<Vec<f64>>, ys: Vec<StructuredOutput>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch(format!("{} feature rows, {} targets", xs.len(), ys.len())));
        }
        if let Some(first) = xs.first() {
            let d = first.len();
            for (i, x) in xs.iter().enumerate() {
                if x.len() != d {
                    return Err(Error::ShapeMismatch(format!("row {i} has {} features, expected {d}", x.len())));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ShapeMismatch(format!("row {i} has non-finite features")));
                }
            }
        }
        for (i, y) in ys.iter().enumerate() {
            space.validate(&y.0, &format!("row {i}"))?;
        }
        Ok(Dataset {
            xs,
            ys,
            space,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Feature dimension (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i].clone()).collect(),
            space: self.space,
            name: self.name.clone(),
        }
    }

    /// Rows `idx`, with batch ids equal to the row indices.
    pub fn batch(&self, idx: &[usize]) -> Batch<'_> {
        Batch {
            xs: idx.iter().map(|&i| self.xs[i].as_slice()).collect(),
            ys: idx.iter().map(|&i| self.ys[i].0.as_slice()).collect(),
            ids: idx.to_vec(),
        }
    }

    pub fn full_batch(&self) -> Batch<'_> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    /// Re-encode rank vectors as permutation matrices.
    pub fn to_permutation_matrices(&self) -> Result<Dataset> {
        if self.space.kind != SpaceKind::PermutationVectors {
            return Err(Error::Config("only rank-vector datasets convert to matrices".into()));
        }
        let ys = self
            .ys
            .iter()
            .map(|y| ranks_to_matrix(&y.0).map(StructuredOutput))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            xs: self.xs.clone(),
            ys,
            space: OutputSpace::permutation_matrices(self.space.k),
            name: self.name.clone(),
        })
    }
}

/// Concatenate datasets over the same space.
pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
    let first = parts.first().ok_or_else(|| Error::Config("nothing to concatenate".into()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in parts {
        if p.space != first.space {
            return Err(Error::ShapeMismatch("datasets over different spaces".into()));
        }
        xs.extend(p.xs.iter().cloned());
        ys.extend(p.ys.iter().cloned());
    }
    Dataset::new(first.name.clone(), first.space, xs, ys)
}

#[derive(Clone, Debug, Default)]
pub struct LibsvmOptions {
    /// Number of labels; inferred as the largest label id when absent.
    pub num_labels: Option<usize>,
    /// Number of features; inferred as the largest feature index when absent.
    pub num_features: Option<usize>,
    /// Labels are numbered from 0 instead of 1.
    pub zero_based_labels: bool,
}

/// Parse `l1,l2,... i1:v1 i2:v2 ...` lines with 1-based feature indices.
/// An empty label field (line starting with whitespace) is the empty set.
pub fn parse_libsvm_multilabel(path: impl AsRef<Path>, opts: &LibsvmOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("libsvm").to_string();
    read_libsvm_multilabel(File::open(path)?, &name, opts)
}

pub fn read_libsvm_multilabel<R: Read>(reader: R, name: &str, opts: &LibsvmOptions) -> Result<Dataset> {
    let mut rows: Vec<(Vec<usize>, Vec<(usize, f64)>, usize)> = Vec::new();
    let mut max_label = 0usize;
    let mut max_feature = 0usize;
    let base = if opts.zero_based_labels { 0 } else { 1 };
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = lineno + 1;
        let line = line?;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse { line: line_no, message };
        let (label_field, rest) = if line.starts_with(char::is_whitespace) {
            ("", line.as_str())
        } else {
            match line.split_once(char::is_whitespace) {
                Some((l, r)) => (l, r),
                None => (line.as_str(), ""),
            }
        };
        let label_field = if label_field.contains(':') {
            return Err(perr(format!("expected labels before features, found '{label_field}'")));
        } else {
            label_field
        };
        let mut labels = Vec::new();
        for tok in label_field.split(',').filter(|t| !t.is_empty()) {
            let raw: usize = tok.trim().parse().map_err(|_| perr(format!("bad label '{tok}'")))?;
            if raw < base {
                return Err(Error::LabelOutOfRange {
                    line: line_no,
                    label: raw,
                    k: opts.num_labels.unwrap_or(0),
                });
            }
            let idx = raw - base;
            max_label = max_label.max(idx + 1);
            labels.push(idx);
        }
        let mut feats = Vec::new();
        for tok in rest.split_whitespace() {
            let (i, v) = tok.split_once(':').ok_or_else(|| perr(format!("bad feature '{tok}'")))?;
            let i: usize = i.parse().map_err(|_| perr(format!("bad feature index '{i}'")))?;
            if i == 0 {
                return Err(perr("feature indices are 1-based".into()));
            }
            let v: f64 = v.parse().map_err(|_| perr(format!("bad feature value '{v}'")))?;
            if !v.is_finite() {
                return Err(perr(format!("non-finite feature value '{v}'")));
            }
            max_feature = max_feature.max(i);
            feats.push((i - 1, v));
        }
        rows.push((labels, feats, line_no));
    }
    let k = opts.num_labels.unwrap_or(max_label).max(1);
    let d = opts.num_features.unwrap_or(max_feature);
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for (labels, feats, line_no) in rows {
        let mut y = vec![0.0; k];
        for l in labels {
            if l >= k {
                return Err(Error::LabelOutOfRange {
                    line: line_no,
                    label: l + base,
                    k,
                });
            }
            y[l] = 1.0;
        }
        let mut x = vec![0.0; d];
        for (i, v) in feats {
            if i >= d {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("feature index {} beyond {d}", i + 1),
                });
            }
            x[i] = v;
        }
        xs.push(x);
        ys.push(StructuredOutput(y));
    }
    Dataset::new(name, OutputSpace::binary(k), xs, ys)
}

/// Emit a binary-vector dataset in the format read by
/// [`parse_libsvm_multilabel`] (1-based labels, zero features omitted).
pub fn write_libsvm_multilabel<W: Write>(mut w: W, data: &Dataset) -> Result<()> {
    if data.space.kind != SpaceKind::BinaryVectors {
        return Err(Error::Config("libsvm output needs binary labels".into()));
    }
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let labels: Vec<String> = y.0.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| (j + 1).to_string()).collect();
        let mut line = labels.join(",");
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                line.push_str(&format!(" {}:{v:?}", i + 1));
            }
        }
        if line.trim().is_empty() && !x.is_empty() {
            // a blank line would be skipped on reading
            line.push_str(" 1:0.0");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct LabelRankingOptions {
    /// Number of trailing rank columns. When absent, the columns whose header
    /// starts with `rank` (case-insensitive) are used; they must be last.
    pub num_labels: Option<usize>,
    /// Convert rank vectors to permutation matrices.
    pub as_matrices: bool,
}

/// Parse a headered CSV: `d` feature columns followed by `k` rank columns,
/// each row holding a permutation of `1..k`.
pub fn parse_label_ranking_csv(path: impl AsRef<Path>, opts: &LabelRankingOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ranking").to_string();
    read_label_ranking_csv(File::open(path)?, &name, opts)
}

pub fn read_label_ranking_csv<R: Read>(reader: R, name: &str, opts: &LabelRankingOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let width = headers.len();
    let k = match opts.num_labels {
        Some(k) => k,
        None => {
            let is_rank = |h: &str| h.to_ascii_lowercase().starts_with("rank");
            let k = headers.iter().filter(|h| is_rank(h)).count();
            if k == 0 || !headers.iter().skip(width - k).all(is_rank) {
                return Err(Error::Parse {
                    line: 1,
                    message: "rank columns (header prefix 'rank') must be the trailing columns".into(),
                });
            }
            k
        }
    };
    if k == 0 || k > width {
        return Err(Error::Parse {
            line: 1,
            message: format!("{k} rank columns do not fit in {width} columns"),
        });
    }
    let d = width - k;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let nums = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("bad number '{f}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let y = nums[d..].to_vec();
        if !crate::spaces::is_rank_vector(&y) {
            return Err(Error::NotAPermutation {
                context: format!("row {line}"),
                k,
            });
        }
        xs.push(nums[..d].to_vec());
        ys.push(StructuredOutput(y));
    }
    let data = Dataset::new(name, OutputSpace::permutations(k), xs, ys)?;
    if opts.as_matrices {
        data.to_permutation_matrices()
    } else {
        Ok(data)
    }
}

/// Emit a rank-vector dataset as label-ranking CSV.
pub fn write_label_ranking_csv<W: Write>(w: W, data: &Dataset) -> Result<()> {
    if data.space.kind != SpaceKind::PermutationVectors {
        return Err(Error::Config("label-ranking CSV needs rank vectors".into()));
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=data.dim()).map(|i| format!("x{i}")).collect();
    header.extend((1..=data.space.k).map(|j| format!("rank{j}")));
    wr.write_record(&header).map_err(csv_err)?;
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let row: Vec<String> = x.iter().map(|v| format!("{v:?}")).chain(y.0.iter().map(|r| format!("{}", *r as usize))).collect();
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>()
}

fn project(w: &[f64], x: &[f64], k: usize) -> Vec<f64> {
    let d = x.len();
    (0..k).map(|j| w[j * d..(j + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Synthetic multilabel task: `x ~ N(0, I)`, hidden `W*` with `N(0, 1/d)`
/// entries, `y_j = 1` iff `(W* x)_j + noise·ε_j >= 0`.
pub fn synth_multilabel(n: usize, d: usize, k: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || k == 0 {
        return Err(Error::Config("synthetic task needs d, k >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = gaussian_matrix(&mut rng, k, d, 1.0 / (d as f64).sqrt());
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = project(&w, &x, k)
            .into_iter()
            .map(|s| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                if s + noise * eps >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        xs.push(x);
        ys.push(StructuredOutput(y));
    }
    Dataset::new("synthetic-multilabel", OutputSpace::binary(k), xs, ys)
}

/// Synthetic label ranking: `y = argsort-ranks(W* x)`.
pub fn synth_label_ranking(n: usize, d: usize, k: usize, seed: u64) -> Result<Dataset> {
    if d == 0 || k == 0 {
        return Err(Error::Config("synthetic task needs d, k >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = gaussian_matrix(&mut rng, k, d, 1.0 / (d as f64).sqrt());
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        ys.push(mode_permutahedron(&project(&w, &x, k)));
        xs.push(x);
    }
    Dataset::new("synthetic-ranking", OutputSpace::permutations(k), xs, ys)
}

/// Disjoint train / validation / test indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Shuffle `0..n` with `seed` and cut it by `fractions = (train, val, test)`.
/// When the fractions sum to one, the test part takes the remainder.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (a, b, c) = fractions;
    let total = a + b + c;
    if a < 0.0 || b < 0.0 || c < 0.0 || total > 1.0 + 1e-9 {
        return Err(Error::Config(format!("bad split fractions {fractions:?}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * a).round() as usize).min(n);
    let n_val = ((n as f64 * b).round() as usize).min(n - n_train);
    let n_test = if (total - 1.0).abs() < 1e-9 {
        n - n_train - n_val
    } else {
        ((n as f64 * c).round() as usize).min(n - n_train - n_val)
    };
    Ok(Split {
        train_idx: idx[..n_train].to_vec(),
        val_idx: idx[n_train..n_train + n_val].to_vec(),
        test_idx: idx[n_train + n_val..n_train + n_val + n_test].to_vec(),
    })
}

/// Per-column z-scoring fitted on one dataset and applied to others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant columns keep unit scale.
    pub fn fit(xs: &[Vec<f64>]) -> Self {
        let d = xs.first().map_or(0, Vec::len);
        let n = xs.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let var = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Dataset {
        Dataset {
            xs: data.xs.iter().map(|x| self.apply(x)).collect(),
            ..data.clone()
        }
    }
}
