//! Test metrics, learned-similarity analysis, nearest-neighbour queries and
//! decision-boundary grids. Everything here runs in evaluation mode.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Head, ModelState, NoRng};

/// Percentage of samples whose argmax prediction differs from the label.
pub fn error_rate(state: &ModelState, ds: &Dataset) -> Result<f64> {
    let pred = state.predict(&ds.features)?;
    Ok(error_rate_from(&pred, &ds.labels))
}

pub fn error_rate_from(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = pred.iter().zip(labels).filter(|(p, y)| p != y).count();
    100.0 * wrong as f64 / labels.len() as f64
}

fn latent(state: &ModelState, x: &Matrix) -> Result<Matrix> {
    state.encoder.forward(x, false, &mut NoRng)
}

/// Logit margin `s_same - s_diff` of the similarity head for `anchor`
/// against every row of `others`; `W` is its logistic.
fn similarity_margin_row(state: &ModelState, anchor: &[f64], others: &Matrix) -> Result<Vec<f64>> {
    let rows: Vec<&[f64]> = vec![anchor; others.rows()];
    let input = Matrix::from_rows(&rows)?.hstack(others)?;
    let mut net = state.similarity.clone();
    net.spec.head = Head::None;
    let s = net.forward(&input, false, &mut NoRng)?;
    Ok((0..s.rows()).map(|r| s.get(r, 0) - s.get(r, 1)).collect())
}

/// Learned same-class similarity `W` of `anchor` against every row of `others`.
fn similarity_row(state: &ModelState, anchor: &[f64], others: &Matrix) -> Result<Vec<f64>> {
    let rows: Vec<&[f64]> = vec![anchor; others.rows()];
    let left = Matrix::from_rows(&rows)?;
    let p = state.similarity_forward(&left, others, false, false, &mut NoRng)?;
    Ok((0..p.rows()).map(|r| p.get(r, 0)).collect())
}

/// Pairwise similarity over a sample subset, rows and columns ordered by
/// class label (ties keep the requested order).
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SimilaritySidecar {
    indices: Vec<usize>,
    labels: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// Means over same-class and different-class pairs (diagonal excluded).
    pub fn class_means(&self) -> (f64, f64) {
        let (mut same, mut ns, mut diff, mut nd) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.size() {
            for j in 0..self.size() {
                if i == j {
                    continue;
                }
                let v = self.values.get(i, j);
                if self.labels[i] == self.labels[j] {
                    same += v;
                    ns += 1;
                } else {
                    diff += v;
                    nd += 1;
                }
            }
        }
        (same / ns.max(1) as f64, diff / nd.max(1) as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in self.values.iter_rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` (the matrix) and `<stem>.json` (ordering).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let sidecar = SimilaritySidecar {
            indices: self.indices.clone(),
            labels: self.labels.clone(),
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let sidecar: SimilaritySidecar = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(dir.join(format!("{stem}.csv")))?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("similarity entry `{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let values = if rows.is_empty() {
            Matrix::zeros(0, 0)
        } else {
            Matrix::from_rows(&rows)?
        };
        if values.rows() != sidecar.indices.len() || values.cols() != values.rows() {
            return Err(Error::Format(format!(
                "similarity matrix is {:?} but ordering lists {} samples",
                values.shape(),
                sidecar.indices.len()
            )));
        }
        Ok(Self {
            values,
            indices: sidecar.indices,
            labels: sidecar.labels,
        })
    }
}

fn class_order(ds: &Dataset, sample_idx: &[usize]) -> Result<Vec<usize>> {
    if let Some(&bad) = sample_idx.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Index {
            index: bad,
            len: ds.len(),
        });
    }
    let mut order = sample_idx.to_vec();
    order.sort_by_key(|&i| ds.labels[i]);
    Ok(order)
}

/// `S[i][j] = W(z_i, z_j)` for all ordered pairs of the chosen samples.
pub fn similarity_matrix(state: &ModelState, ds: &Dataset, sample_idx: &[usize]) -> Result<SimilarityMatrix> {
    let indices = class_order(ds, sample_idx)?;
    let m = indices.len();
    let z = latent(state, &ds.features.select_rows(&indices)?)?;
    let mut values = Matrix::zeros(m, m);
    for i in 0..m {
        let row = similarity_row(state, z.row(i), &z)?;
        values.row_mut(i).copy_from_slice(&row);
    }
    Ok(SimilarityMatrix {
        labels: indices.iter().map(|&i| ds.labels[i]).collect(),
        indices,
        values,
    })
}

/// The 0-1 comparator: `1` iff the predicted classes of the two samples
/// agree. Same ordering as [`similarity_matrix`].
pub fn pseudo_label_matrix(state: &ModelState, ds: &Dataset, sample_idx: &[usize]) -> Result<SimilarityMatrix> {
    let indices = class_order(ds, sample_idx)?;
    let m = indices.len();
    let pred = state.predict(&ds.features.select_rows(&indices)?)?;
    let mut values = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            values.set(i, j, if pred[i] == pred[j] { 1.0 } else { 0.0 });
        }
    }
    Ok(SimilarityMatrix {
        labels: indices.iter().map(|&i| ds.labels[i]).collect(),
        indices,
        values,
    })
}

/// Mean squared deviation from the block-diagonal 0/1 ideal.
pub fn mse_vs_ideal(s: &SimilarityMatrix) -> f64 {
    let m = s.size();
    if m == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            let ideal = if s.labels[i] == s.labels[j] { 1.0 } else { 0.0 };
            let d = s.values.get(i, j) - ideal;
            acc += d * d;
        }
    }
    acc / (m * m) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Measure {
    Learned,
    Gaussian { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub target: usize,
    pub measure: Measure,
    pub neighbors: Vec<Neighbor>,
}

impl QueryResult {
    /// Fraction of neighbours whose label matches the target's.
    pub fn purity(&self, labels: &[usize]) -> f64 {
        if self.neighbors.is_empty() {
            return 0.0;
        }
        let y = labels[self.target];
        let same = self.neighbors.iter().filter(|n| labels[n.index] == y).count();
        same as f64 / self.neighbors.len() as f64
    }
}

/// Top-`k` samples by similarity to `target` (itself excluded), scores
/// descending with ties broken by lower index.
pub fn knn_query(state: &ModelState, ds: &Dataset, target: usize, k: usize, measure: Measure) -> Result<QueryResult> {
    let n = ds.len();
    if target >= n {
        return Err(Error::Index { index: target, len: n });
    }
    if k >= n {
        return Err(Error::Parameter(format!("k = {k} needs more than {n} samples")));
    }
    // Ranking uses a monotone transform of the score that does not
    // saturate in floating point: the logit margin, or minus the distance.
    let (keys, scores): (Vec<f64>, Vec<f64>) = match measure {
        Measure::Learned => {
            let z = latent(state, &ds.features)?;
            similarity_margin_row(state, z.row(target), &z)?
                .into_iter()
                .map(|m| (m, 1.0 / (1.0 + (-m).exp())))
                .unzip()
        }
        Measure::Gaussian { beta } => {
            let t = ds.features.row(target);
            ds.features
                .iter_rows()
                .map(|x| {
                    let d2: f64 = x.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-d2, (-beta * d2).exp())
                })
                .unzip()
        }
    };
    let mut order: Vec<usize> = (0..n).filter(|&j| j != target).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .partial_cmp(&keys[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(QueryResult {
        target,
        measure,
        neighbors: order
            .into_iter()
            .take(k)
            .map(|index| Neighbor {
                index,
                score: scores[index],
            })
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    /// The data's bounding box grown by `margin` on every side.
    pub fn around(x: &Matrix, margin: f64) -> Self {
        let mut b = Bounds {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for r in x.iter_rows() {
            b.x_min = b.x_min.min(r[0]);
            b.x_max = b.x_max.max(r[0]);
            b.y_min = b.y_min.min(r[1]);
            b.y_max = b.y_max.max(r[1]);
        }
        b.x_min -= margin;
        b.x_max += margin;
        b.y_min -= margin;
        b.y_max += margin;
        b
    }
}

/// Class probabilities on a `resolution x resolution` lattice. Points run
/// over `x` fastest, then `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionGrid {
    pub points: Matrix,
    pub probs: Matrix,
    pub resolution: usize,
}

impl DecisionGrid {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((0..self.probs.cols()).map(|c| format!("p_class{c}")));
        w.write_record(&header)?;
        for (p, q) in self.points.iter_rows().zip(self.probs.iter_rows()) {
            w.write_record(p.iter().chain(q).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn lattice(lo: f64, hi: f64, k: usize, res: usize) -> f64 {
    if res == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * k as f64 / (res - 1) as f64
    }
}

pub fn decision_grid(state: &ModelState, bounds: Bounds, resolution: usize) -> Result<DecisionGrid> {
    let input = state.encoder.spec.input_dim();
    if input != 2 {
        return Err(Error::Contract(format!("decision grids need 2-D inputs, model takes {input}")));
    }
    if resolution == 0 {
        return Err(Error::Parameter("grid resolution must be positive".into()));
    }
    let mut data = Vec::with_capacity(2 * resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            data.push(lattice(bounds.x_min, bounds.x_max, ix, resolution));
            data.push(lattice(bounds.y_min, bounds.y_max, iy, resolution));
        }
    }
    let points = Matrix::new(resolution * resolution, 2, data)?;
    let probs = state.predict_proba(&points)?;
    Ok(DecisionGrid {
        points,
        probs,
        resolution,
    })
}

/// Probe points at the inner ends of the two moons, where each moon's tip
/// reaches into the other's concavity, with their true classes. Arc
/// parameters 0 and 0.2 on each moon.
pub fn moon_tip_probes() -> (Matrix, Vec<usize>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for t in [0.0f64, 0.2] {
        rows.push([t.cos(), t.sin()]);
        labels.push(0);
        rows.push([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    (Matrix::from_rows(&rows).expect("fixed probe shape"), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_two_moons, DatasetMeta};
    use crate::nn::Architecture;

    fn tiny_state() -> ModelState {
        ModelState::init(&Architecture::with_widths(2, 6, 2, &[8], &[0.0]), 3, 0.99).unwrap()
    }

    fn zero_classifier(state: &mut ModelState) {
        for p in state.classifier.params_mut() {
            p.data_mut().fill(0.0);
        }
    }

    #[test]
    fn error_rate_extremes() {
        assert_eq!(error_rate_from(&[0, 1, 1], &[0, 1, 1]), 0.0);
        assert_eq!(error_rate_from(&[1, 0, 0], &[0, 1, 1]), 100.0);
    }

    #[test]
    fn zero_head_predicts_class_zero() {
        let mut s = tiny_state();
        zero_classifier(&mut s);
        let ds = make_two_moons(100, 0.1, 0).unwrap();
        assert_eq!(error_rate(&s, &ds).unwrap(), 50.0);
    }

    #[test]
    fn similarity_matrix_shape_and_range() {
        let s = tiny_state();
        let ds = make_two_moons(40, 0.1, 1).unwrap();
        let one = similarity_matrix(&s, &ds, &[5]).unwrap();
        assert_eq!(one.values.shape(), (1, 1));
        let idx: Vec<usize> = (0..40).rev().step_by(3).collect();
        let m = similarity_matrix(&s, &ds, &idx).unwrap();
        assert!(m.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m.labels.windows(2).all(|w| w[0] <= w[1]));
        for (k, &i) in m.indices.iter().enumerate() {
            assert_eq!(m.labels[k], ds.labels[i]);
        }
    }

    #[test]
    fn mse_closed_forms() {
        let labels = vec![0, 0, 1, 1];
        let ideal = Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0]]).unwrap();
        let s = SimilarityMatrix {
            values: ideal,
            indices: vec![0, 1, 2, 3],
            labels: labels.clone(),
        };
        assert_eq!(mse_vs_ideal(&s), 0.0);
        let half = SimilarityMatrix {
            values: Matrix::filled(4, 4, 0.5),
            indices: vec![0, 1, 2, 3],
            labels,
        };
        assert_eq!(mse_vs_ideal(&half), 0.25);
    }

    #[test]
    fn gaussian_duplicate_ranks_first() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [3.0, 1.0], [0.5, 0.5], [3.0, 1.0]]).unwrap();
        let meta = DatasetMeta {
            name: "dup".into(),
            noise: 0.0,
            seed: 0,
        };
        let ds = Dataset::new(x, vec![0, 1, 0, 1], 2, meta).unwrap();
        let q = knn_query(&tiny_state(), &ds, 1, 1, Measure::Gaussian { beta: 3.0 }).unwrap();
        assert_eq!(q.neighbors, vec![Neighbor { index: 3, score: 1.0 }]);
        let all = knn_query(&tiny_state(), &ds, 0, 3, Measure::Gaussian { beta: 3.0 }).unwrap();
        assert!(all.neighbors.windows(2).all(|w| w[0].score >= w[1].score));
        // equal scores: lower index first
        assert_eq!(all.neighbors[1].index, 1);
    }

    #[test]
    fn knn_rejects_bad_queries() {
        let ds = make_two_moons(10, 0.1, 0).unwrap();
        let s = tiny_state();
        assert!(matches!(
            knn_query(&s, &ds, 10, 3, Measure::Learned),
            Err(Error::Index { index: 10, len: 10 })
        ));
        assert!(knn_query(&s, &ds, 0, 10, Measure::Learned).is_err());
        let q = knn_query(&s, &ds, 4, 9, Measure::Learned).unwrap();
        assert!(q.neighbors.iter().all(|n| n.index != 4));
        assert!(q.neighbors.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn grid_layout() {
        let mut s = tiny_state();
        let b = Bounds {
            x_min: -1.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 2.0,
        };
        let g = decision_grid(&s, b, 5).unwrap();
        assert_eq!(g.points.rows(), 25);
        assert_eq!(g.points.row(1), &[-0.5, 0.0]);
        assert_eq!(g.points.row(24), &[1.0, 2.0]);
        for r in g.probs.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        zero_classifier(&mut s);
        let flat = decision_grid(&s, b, 4).unwrap();
        assert!(flat.probs.data().iter().all(|&p| p == 0.5));

        let wide = ModelState::init(&Architecture::with_widths(3, 4, 2, &[4], &[0.0]), 0, 0.9).unwrap();
        assert!(matches!(decision_grid(&wide, b, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn probes_sit_on_the_moons() {
        let (x, y) = moon_tip_probes();
        assert_eq!(x.row(0), &[1.0, 0.0]);
        assert_eq!(x.row(1), &[0.0, 0.5]);
        assert_eq!(y, vec![0, 1, 0, 1]);
    }
}
