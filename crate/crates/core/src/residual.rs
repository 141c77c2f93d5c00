//! Learned correction to the kinematic model: one subset-of-regressors
//! sparse GP per state component.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::TerrainDescriptor;
use crate::dynamics::{Control, State};

pub const MODEL_FORMAT: &str = "meshnav-residual";
pub const MODEL_VERSION: u32 = 1;
pub const OUTPUT_NAMES: [&str; 6] = ["dx", "dy", "dz", "dphi", "dtheta", "dpsi"];

#[derive(Debug, Error)]
pub enum ResidualError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need 1 <= inducing points ({m}) <= samples ({n})")]
    InducingCount { m: usize, n: usize },
    #[error("sample {index} has {got} features, expected {expected}")]
    FeatureDims { index: usize, got: usize, expected: usize },
    #[error("inducing Gram matrix is singular even with jitter {0:e}")]
    Singular(f64),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Roll, pitch, controls and the descriptor (11 values).
    #[default]
    Invariant,
    /// The invariant set followed by x, y, z and yaw (15 values).
    FullState,
}

impl FeatureMode {
    pub fn dims(self) -> usize {
        match self {
            FeatureMode::Invariant => 11,
            FeatureMode::FullState => 15,
        }
    }
}

pub fn residual_features(state: &State, u: &Control, desc: &TerrainDescriptor, mode: FeatureMode) -> Vec<f64> {
    let mut f = Vec::with_capacity(mode.dims());
    f.extend_from_slice(&[state.phi, state.theta, u.u0, u.u1]);
    f.extend_from_slice(&desc.as_array());
    if mode == FeatureMode::FullState {
        f.extend_from_slice(&[state.x, state.y, state.z, state.psi]);
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            length_scales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_var: v[d].exp(),
            noise_var: v[d + 1].exp(),
        }
    }
}

fn se_kernel(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    let mut r2 = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(&h.length_scales) {
        let t = (x - y) / l;
        r2 += t * t;
    }
    h.signal_var * (-0.5 * r2).exp()
}

const JITTERS: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Posterior-mean predictor `sum_m w_m k(x, z_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseGp {
    pub inducing: Vec<Vec<f64>>,
    pub hyper: GpHyper,
    pub weights: Vec<f64>,
}

struct Factor {
    /// `L^{-1} K_ZX`
    v: DMatrix<f64>,
    l: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    a: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn factor(x: &[Vec<f64>], z: &[Vec<f64>], h: &GpHyper) -> Result<Factor, ResidualError> {
    let m = z.len();
    let n = x.len();
    let kzz = DMatrix::from_fn(m, m, |i, j| se_kernel(&z[i], &z[j], h));
    let kzx = DMatrix::from_fn(m, n, |i, j| se_kernel(&z[i], &x[j], h));
    let mut last = 0.0;
    for jit in JITTERS {
        last = jit;
        let mut k = kzz.clone();
        for i in 0..m {
            k[(i, i)] += jit * h.signal_var.max(1e-12);
        }
        let Some(l) = k.cholesky() else { continue };
        let v = l.l().solve_lower_triangular(&kzx).expect("triangular solve");
        let mut a = &v * v.transpose();
        for i in 0..m {
            a[(i, i)] += h.noise_var;
        }
        if let Some(a) = a.cholesky() {
            return Ok(Factor { v, l, a });
        }
    }
    Err(ResidualError::Singular(last))
}

impl SparseGp {
    pub fn fit(x: &[Vec<f64>], y: &[f64], inducing: Vec<Vec<f64>>, hyper: GpHyper) -> Result<Self, ResidualError> {
        let f = factor(x, &inducing, &hyper)?;
        let vy = &f.v * DVector::from_column_slice(y);
        let w = f.a.solve(&vy);
        let w =
            f.l.l()
                .transpose()
                .solve_upper_triangular(&w)
                .expect("triangular solve");
        Ok(Self {
            inducing,
            hyper,
            weights: w.iter().copied().collect(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.inducing
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * se_kernel(x, z, &self.hyper))
            .sum()
    }

    /// Negative log marginal likelihood of `y` under the SoR prior.
    pub fn neg_log_likelihood(x: &[Vec<f64>], y: &[f64], z: &[Vec<f64>], h: &GpHyper) -> Result<f64, ResidualError> {
        let f = factor(x, z, h)?;
        let n = x.len() as f64;
        let m = z.len() as f64;
        let yv = DVector::from_column_slice(y);
        let vy = &f.v * &yv;
        let ainv_vy = f.a.solve(&vy);
        let quad = (yv.dot(&yv) - vy.dot(&ainv_vy)) / h.noise_var;
        let logdet_a: f64 = f.a.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let logdet = (n - m) * h.noise_var.ln() + logdet_a;
        Ok(0.5 * (quad + logdet + n * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut chosen = vec![false; n];
    let mut best: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in best.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // All remaining points coincide with a center.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[idx] = true;
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            best[i] = best[i].min(dist2(p, &centers[centers.len() - 1]));
        }
    }
    let dims = points[0].len();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..25 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = (0..k)
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap();
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    centers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperMode {
    /// Coordinate search on the marginal likelihood.
    #[default]
    Optimize,
    /// Median-heuristic length-scales, no search.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub inducing: usize,
    pub seed: u64,
    pub hyper_mode: HyperMode,
    pub feature_mode: FeatureMode,
    /// Training points used during the hyperparameter search.
    pub search_points: usize,
    pub restarts: usize,
    pub max_evals: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            inducing: 50,
            seed: 0,
            hyper_mode: HyperMode::Optimize,
            feature_mode: FeatureMode::Invariant,
            search_points: 400,
            restarts: 2,
            max_evals: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub features: Vec<f64>,
    pub delta: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub format: String,
    pub version: u32,
    pub feature_mode: FeatureMode,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_scale: [f64; 6],
    pub outputs: Vec<SparseGp>,
}

impl ResidualModel {
    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn predict(&self, features: &[f64]) -> [f64; 6] {
        let x = self.standardize(features);
        let mut out = [0.0; 6];
        for (k, gp) in self.outputs.iter().enumerate() {
            out[k] = gp.predict(&x) * self.target_scale[k];
        }
        out
    }

    pub fn predict_step(&self, state: &State, u: &Control, desc: &TerrainDescriptor) -> [f64; 6] {
        self.predict(&residual_features(state, u, desc, self.feature_mode))
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), ResidualError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self, ResidualError> {
        let m: Self = serde_json::from_reader(r)?;
        if m.format != MODEL_FORMAT {
            return Err(ResidualError::Format(format!("unexpected format tag {:?}", m.format)));
        }
        if m.version != MODEL_VERSION {
            return Err(ResidualError::Format(format!("unsupported version {}", m.version)));
        }
        if m.outputs.len() != 6 || m.feature_mean.len() != m.feature_mode.dims() {
            return Err(ResidualError::Format("inconsistent dimensions".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ResidualError> {
        self.write_json(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, ResidualError> {
        Self::read_json(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Per-dimension median pairwise distance over a bounded sample; 1 for
/// constant dimensions.
fn median_length_scales(x: &[Vec<f64>]) -> Vec<f64> {
    let d = x[0].len();
    let take = x.len().min(200);
    (0..d)
        .map(|k| {
            let mut diffs = Vec::with_capacity(take * take / 2);
            for i in 0..take {
                for j in 0..i {
                    diffs.push((x[i][k] - x[j][k]).abs());
                }
            }
            let m = median(diffs);
            if m > 1e-9 {
                m
            } else {
                1.0
            }
        })
        .collect()
}

fn search_hyper(
    x: &[Vec<f64>],
    y: &[f64],
    z: &[Vec<f64>],
    init: &GpHyper,
    active: &[bool],
    opts: &TrainOptions,
) -> GpHyper {
    let eval = |v: &[f64]| SparseGp::neg_log_likelihood(x, y, z, &GpHyper::from_log(v)).unwrap_or(f64::INFINITY);
    let d = init.length_scales.len();
    let bounds = |i: usize| -> (f64, f64) {
        if i < d {
            ((1e-2f64).ln(), (1e3f64).ln())
        } else if i == d {
            ((1e-3f64).ln(), (1e2f64).ln())
        } else {
            ((1e-6f64).ln(), (10f64).ln())
        }
    };
    let base = init.to_log();
    let mut best_v = base.clone();
    let mut best_f = eval(&base);
    for r in 0..opts.restarts.max(1) {
        let mut v = base.clone();
        // Restarts scale all length-scales together.
        let shift = [0.0, 1.0, -1.0, 2.0][r % 4];
        for li in v.iter_mut().take(d) {
            *li += shift;
        }
        let mut f = eval(&v);
        let mut step = 1.0;
        let mut evals = 1;
        while step > 0.1 && evals < opts.max_evals {
            let mut improved = false;
            for i in 0..v.len() {
                if i < d && !active[i] {
                    continue;
                }
                let (lo, hi) = bounds(i);
                for dir in [1.0, -1.0] {
                    let mut t = v.clone();
                    t[i] = (t[i] + dir * step).clamp(lo, hi);
                    if t[i] == v[i] {
                        continue;
                    }
                    let ft = eval(&t);
                    evals += 1;
                    if ft < f {
                        v = t;
                        f = ft;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if f < best_f {
            best_f = f;
            best_v = v;
        }
    }
    GpHyper::from_log(&best_v)
}

pub fn train_residual(samples: &[ResidualSample], opts: &TrainOptions) -> Result<ResidualModel, ResidualError> {
    let n = samples.len();
    if n == 0 {
        return Err(ResidualError::EmptyDataset);
    }
    let m = opts.inducing;
    if m == 0 || m > n {
        return Err(ResidualError::InducingCount { m, n });
    }
    let dims = samples[0].features.len();
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != dims {
            return Err(ResidualError::FeatureDims {
                index: i,
                got: s.features.len(),
                expected: dims,
            });
        }
    }
    let feature_mode = match dims {
        11 => FeatureMode::Invariant,
        15 => FeatureMode::FullState,
        _ => opts.feature_mode,
    };
    let mut mean = vec![0.0; dims];
    for s in samples {
        for (a, v) in mean.iter_mut().zip(&s.features) {
            *a += v / n as f64;
        }
    }
    let mut scale = vec![0.0; dims];
    for s in samples {
        for ((a, v), mu) in scale.iter_mut().zip(&s.features).zip(&mean) {
            *a += (v - mu).powi(2) / n as f64;
        }
    }
    let active: Vec<bool> = scale.iter().map(|v| *v > 1e-18).collect();
    let scale: Vec<f64> = scale.iter().map(|v| if *v > 1e-18 { v.sqrt() } else { 1.0 }).collect();
    let x: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.features
                .iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    let z = kmeans(&x, m, opts.seed);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let subset: Vec<usize> = if n > opts.search_points {
        rand::seq::index::sample(&mut rng, n, opts.search_points).into_vec()
    } else {
        (0..n).collect()
    };
    let xs: Vec<Vec<f64>> = subset.iter().map(|&i| x[i].clone()).collect();
    let median_ls = median_length_scales(&xs);

    let mut target_scale = [1.0; 6];
    let mut outputs = Vec::with_capacity(6);
    for k in 0..6 {
        let rms = (samples.iter().map(|s| s.delta[k].powi(2)).sum::<f64>() / n as f64).sqrt();
        target_scale[k] = if rms > 1e-15 { rms } else { 1.0 };
        let y: Vec<f64> = samples.iter().map(|s| s.delta[k] / target_scale[k]).collect();
        let init = GpHyper {
            length_scales: median_ls.clone(),
            signal_var: 1.0,
            noise_var: 1e-2,
        };
        let hyper = if opts.hyper_mode == HyperMode::Optimize && rms > 1e-15 {
            let ys: Vec<f64> = subset.iter().map(|&i| y[i]).collect();
            let zs: Vec<Vec<f64>> = if m > xs.len() { xs.clone() } else { z.clone() };
            search_hyper(&xs, &ys, &zs, &init, &active, opts)
        } else {
            init
        };
        outputs.push(SparseGp::fit(&x, &y, z.clone(), hyper)?);
    }
    Ok(ResidualModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        feature_mode,
        feature_mean: mean,
        feature_scale: scale,
        target_scale,
        outputs,
    })
}

pub fn write_dataset<W: Write>(samples: &[ResidualSample], w: W) -> Result<(), ResidualError> {
    let mut out = csv::Writer::from_writer(w);
    let dims = samples.first().map_or(0, |s| s.features.len());
    let mut header: Vec<String> = (0..dims).map(|i| format!("f{i}")).collect();
    header.extend(OUTPUT_NAMES.iter().map(|s| s.to_string()));
    out.write_record(&header)?;
    for s in samples {
        let row: Vec<String> = s
            .features
            .iter()
            .chain(s.delta.iter())
            .map(|v| format!("{v:e}"))
            .collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<ResidualSample>, ResidualError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ResidualError::Format(format!("row {}: {e}", i + 2)))?;
        if vals.len() < 7 {
            return Err(ResidualError::Format(format!("row {}: too few columns", i + 2)));
        }
        let split = vals.len() - 6;
        let mut delta = [0.0; 6];
        delta.copy_from_slice(&vals[split..]);
        out.push(ResidualSample {
            features: vals[..split].to_vec(),
            delta,
        });
    }
    Ok(out)
}
