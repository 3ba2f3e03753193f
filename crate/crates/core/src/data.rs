//! Synthetic 2-D benchmarks, balanced labeled subsets and the Gaussian
//! input perturbation used as data augmentation.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Indices of the labeled subset; every class appears equally often.
    pub labeled: Vec<usize>,
    pub classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, meta: DatasetMeta) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Parameter(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Parameter(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            labeled: Vec::new(),
            classes,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labeled_features(&self) -> Result<Matrix> {
        self.features.select_rows(&self.labeled)
    }

    pub fn labeled_labels(&self) -> Vec<usize> {
        self.labeled.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn is_labeled_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.labeled {
            mask[i] = true;
        }
        mask
    }

    /// Writes `x0,..,x{d-1},y,labeled`, one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        header.push("labeled".into());
        w.write_record(&header)?;
        let mask = self.is_labeled_mask();
        for (i, row) in self.features.iter_rows().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(u8::from(mask[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// One-hot label rows for the labeled subset.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix(Matrix);

impl LabelMatrix {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut m = Matrix::zeros(labels.len(), classes);
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::Parameter(format!("label {y} outside {classes} classes")));
            }
            m.set(i, y, 1.0);
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.argmax_rows()
    }
}

fn check_generator_args(n: usize, sigma: f64) -> Result<()> {
    if n % 2 != 0 {
        return Err(Error::Parameter(format!("sample count {n} must be even")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    Ok(())
}

fn generate(
    name: &str,
    n: usize,
    sigma: f64,
    seed: u64,
    curve: impl Fn(usize, f64) -> [f64; 2],
    angle_range: f64,
) -> Result<Dataset> {
    check_generator_args(n, sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let half = n / 2;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for _ in 0..half {
            let t = rng.random::<f64>() * angle_range;
            let [x, y] = curve(class, t);
            data.push(x + noise.sample(&mut rng));
            data.push(y + noise.sample(&mut rng));
            labels.push(class);
        }
    }
    Dataset::new(
        Matrix::new(n, 2, data)?,
        labels,
        2,
        DatasetMeta {
            name: name.into(),
            noise: sigma,
            seed,
        },
    )
}

/// Two interleaving half circles. Class 0 is `(cos t, sin t)`, class 1 is
/// `(1 - cos t, 0.5 - sin t)`, `t ~ U[0, pi]`, plus isotropic Gaussian noise.
pub fn make_two_moons(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    generate(
        "two_moons",
        n,
        sigma,
        seed,
        |class, t| {
            if class == 0 {
                [t.cos(), t.sin()]
            } else {
                [1.0 - t.cos(), 0.5 - t.sin()]
            }
        },
        PI,
    )
}

/// Concentric circles: radius 1.0 is class 0, radius 0.5 is class 1.
pub fn make_two_circles(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    generate(
        "two_circles",
        n,
        sigma,
        seed,
        |class, t| {
            let r = if class == 0 { 1.0 } else { 0.5 };
            [r * t.cos(), r * t.sin()]
        },
        2.0 * PI,
    )
}

/// Returns a copy of `ds` with `l` labeled samples, `l / c` per class,
/// drawn without replacement.
pub fn select_labeled(ds: &Dataset, l: usize, seed: u64) -> Result<Dataset> {
    if ds.classes == 0 || l % ds.classes != 0 {
        return Err(Error::Parameter(format!(
            "{l} labels cannot be split evenly over {} classes",
            ds.classes
        )));
    }
    if l > ds.len() {
        return Err(Error::Parameter(format!("{l} labels requested from {} samples", ds.len())));
    }
    let per_class = l / ds.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(l);
    for class in 0..ds.classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if members.len() < per_class {
            return Err(Error::Parameter(format!(
                "class {class} has {} samples, {per_class} labels requested",
                members.len()
            )));
        }
        let (picked, _) = members.partial_shuffle(&mut rng, per_class);
        labeled.extend_from_slice(picked);
    }
    let mut out = ds.clone();
    out.labeled = labeled;
    Ok(out)
}

/// `x` plus i.i.d. `N(0, noise_sigma^2)` noise on every entry.
pub fn augment<R: Rng + ?Sized>(x: &Matrix, noise_sigma: f64, rng: &mut R) -> Matrix {
    if noise_sigma == 0.0 {
        return x.clone();
    }
    let mut out = x.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += noise_sigma * z;
    }
    out
}
