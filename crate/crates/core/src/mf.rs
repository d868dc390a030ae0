//! Combined matrix factorization: a spatio-temporal factorization of the
//! candidate-restricted frequency matrix and a preference factorization of
//! the global frequency matrix, multiplied into one score.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkin::FrequencyMatrix;
use crate::error::{Error, Result};
use crate::graph::{PoiId, UserId};
use crate::num::{real, Real};

/// Hyperparameters for one regularized factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MFConfig {
    /// Latent dimension K.
    pub latent_dim: usize,
    /// Frobenius regularization weight.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Augment the observed entries with an equal number of sampled zero
    /// cells as implicit negatives.
    pub sample_zeros: bool,
    /// Dampen raw counts by `x -> 1 + ln(1 + x)` before fitting.
    pub damp_counts: bool,
}

impl Default for MFConfig {
    fn default() -> Self {
        MFConfig {
            latent_dim: 20,
            alpha: 0.01,
            learning_rate: 0.01,
            epochs: 200,
            seed: 42,
            sample_zeros: true,
            damp_counts: true,
        }
    }
}

impl MFConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// The regularized squared-error objective over the observed entries:
/// `alpha (||E||_F^2 + ||O||_F^2) + sum (p - E_u . O_v)^2`.
fn objective<T: Real>(entries: &[(usize, usize, T)], row_f: &Array2<T>, col_f: &Array2<T>, alpha: T) -> T {
    let mut total = alpha * (frob_sq(row_f) + frob_sq(col_f));
    for &(i, j, p) in entries {
        let pred = row_f.column(i).dot(&col_f.column(j));
        let err = p - pred;
        total += err * err;
    }
    total
}

fn frob_sq<T: Real>(m: &Array2<T>) -> T {
    m.iter().map(|x| *x * *x).sum()
}

/// SGD factorization of a set of observed (row, col, value) entries into
/// K x n_rows and K x n_cols factor matrices initialized from N(0, 0.01).
/// Returns the factors and the per-epoch objective trace.
pub fn factorize<T: Real>(
    entries: &[(usize, usize, T)],
    n_rows: usize,
    n_cols: usize,
    cfg: &MFConfig,
) -> Result<(Array2<T>, Array2<T>, Vec<T>)> {
    cfg.validate()?;
    if entries.is_empty() || n_rows == 0 || n_cols == 0 {
        return Err(Error::Data("cannot factorize an empty entry set".into()));
    }
    for &(i, j, _) in entries {
        if i >= n_rows || j >= n_cols {
            return Err(Error::Data(format!("entry ({i}, {j}) outside {n_rows}x{n_cols}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0f64, 0.01).expect("valid std dev");
    let k = cfg.latent_dim;
    let mut row_f: Array2<T> = Array2::zeros((k, n_rows));
    for x in row_f.iter_mut() {
        *x = real(normal.sample(&mut rng));
    }
    let mut col_f: Array2<T> = Array2::zeros((k, n_cols));
    for x in col_f.iter_mut() {
        *x = real(normal.sample(&mut rng));
    }

    let lr = real::<T>(cfg.learning_rate);
    let alpha = real::<T>(cfg.alpha);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for &idx in &order {
            let (i, j, p) = entries[idx];
            let pred = row_f.column(i).dot(&col_f.column(j));
            let err = p - pred;
            for d in 0..k {
                let e = row_f[[d, i]];
                let o = col_f[[d, j]];
                row_f[[d, i]] = e + lr * (err * o - alpha * e);
                col_f[[d, j]] = o + lr * (err * e - alpha * o);
            }
        }
        let obj = objective(entries, &row_f, &col_f, alpha);
        if !obj.is_finite() {
            return Err(Error::Divergence(format!("non-finite factorization objective {obj}")));
        }
        trace.push(obj);
    }
    Ok((row_f, col_f, trace))
}

/// Turns a frequency matrix into factorization entries: dampened non-zero
/// counts plus (optionally) an equal number of seeded zero cells.
fn matrix_entries<T: Real>(counts: &FrequencyMatrix, cfg: &MFConfig) -> Vec<(usize, usize, T)> {
    let damp = |c: u32| -> T {
        if cfg.damp_counts {
            real::<T>(1.0 + (1.0 + c as f64).ln())
        } else {
            real::<T>(c as f64)
        }
    };
    let mut entries: Vec<(usize, usize, T)> =
        counts.entries().map(|(u, p, c)| (u as usize, p as usize, damp(c))).collect();

    if cfg.sample_zeros {
        let n_cells = counts.n_users() * counts.n_pois();
        let n_zero_cells = n_cells - entries.len();
        let wanted = entries.len().min(n_zero_cells);
        if wanted > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_2e05);
            let mut seen: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
            let mut drawn = 0usize;
            let budget = wanted * 50 + 100;
            for _ in 0..budget {
                if drawn == wanted {
                    break;
                }
                let i = rng.random_range(0..counts.n_users());
                let j = rng.random_range(0..counts.n_pois());
                if counts.count(i as u32, j as u32) == 0 && seen.insert((i, j)) {
                    entries.push((i, j, T::zero()));
                    drawn += 1;
                }
            }
        }
    }
    entries
}

/// Factorizes a frequency matrix per the config. Returns row factors,
/// column factors, and the objective trace.
pub fn train_mf<T: Real>(
    counts: &FrequencyMatrix,
    cfg: &MFConfig,
) -> Result<(Array2<T>, Array2<T>, Vec<T>)> {
    let entries = matrix_entries::<T>(counts, cfg);
    factorize(&entries, counts.n_users(), counts.n_pois(), cfg)
}

/// The four factor matrices of the combined model plus the candidate index
/// maps that translate global ids into spatio-temporal factor columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel<T> {
    pub latent_dim: usize,
    pub alpha: f64,
    /// K x |candidate users| spatio-temporal user factors.
    pub st_user_factors: Array2<T>,
    /// K x |candidate POIs| spatio-temporal POI factors.
    pub st_poi_factors: Array2<T>,
    /// K x |users| preference user factors.
    pub pref_user_factors: Array2<T>,
    /// K x |POIs| preference POI factors.
    pub pref_poi_factors: Array2<T>,
    /// Global user id of each spatio-temporal factor column.
    pub st_user_index: Vec<UserId>,
    /// Global POI id of each spatio-temporal factor column.
    pub st_poi_index: Vec<PoiId>,
    #[serde(skip)]
    st_user_pos: HashMap<UserId, usize>,
    #[serde(skip)]
    st_poi_pos: HashMap<PoiId, usize>,
}

impl<T: Real> FactorModel<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        latent_dim: usize,
        alpha: f64,
        st_user_factors: Array2<T>,
        st_poi_factors: Array2<T>,
        pref_user_factors: Array2<T>,
        pref_poi_factors: Array2<T>,
        st_user_index: Vec<UserId>,
        st_poi_index: Vec<PoiId>,
    ) -> Self {
        let mut model = FactorModel {
            latent_dim,
            alpha,
            st_user_factors,
            st_poi_factors,
            pref_user_factors,
            pref_poi_factors,
            st_user_index,
            st_poi_index,
            st_user_pos: HashMap::new(),
            st_poi_pos: HashMap::new(),
        };
        model.rebuild_maps();
        model
    }

    fn rebuild_maps(&mut self) {
        self.st_user_pos = self.st_user_index.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        self.st_poi_pos = self.st_poi_index.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    }

    /// Spatio-temporal prediction `E_u . O_v` over candidate column indices.
    pub fn predict_st(&self, user_col: usize, poi_col: usize) -> Result<T> {
        if user_col >= self.st_user_index.len() || poi_col >= self.st_poi_index.len() {
            return Err(Error::Data(format!(
                "candidate index ({user_col}, {poi_col}) outside the extracted sets"
            )));
        }
        Ok(self.st_user_factors.column(user_col).dot(&self.st_poi_factors.column(poi_col)))
    }

    /// Preference prediction `U_u . V_v` over global ids.
    pub fn predict_pref(&self, user: UserId, poi: PoiId) -> Result<T> {
        if user.0 as usize >= self.pref_user_factors.ncols()
            || poi.0 as usize >= self.pref_poi_factors.ncols()
        {
            return Err(Error::Data(format!(
                "unknown user {} or poi {} in preference factors",
                user.0, poi.0
            )));
        }
        Ok(self
            .pref_user_factors
            .column(user.0 as usize)
            .dot(&self.pref_poi_factors.column(poi.0 as usize)))
    }

    /// Combined score: the product of both predictions, each clamped below
    /// at zero. Pairs outside the candidate sets contribute zero through the
    /// spatio-temporal side.
    pub fn combine(&self, user: UserId, poi: PoiId) -> Result<T> {
        let st = match (self.st_user_pos.get(&user), self.st_poi_pos.get(&poi)) {
            (Some(&i), Some(&j)) => self.predict_st(i, j)?,
            _ => T::zero(),
        };
        let st = st.max(T::zero());
        if st == T::zero() {
            return Ok(T::zero());
        }
        let pref = self.predict_pref(user, poi)?.max(T::zero());
        Ok(st * pref)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::Data(format!("cannot write factor model: {e}")))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut model: FactorModel<T> = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Data(format!("cannot read factor model: {e}")))?;
        model.rebuild_maps();
        Ok(model)
    }
}

/// Trains the combined model: the spatio-temporal factorization over the
/// candidate-restricted matrix and the preference factorization over the
/// global matrix. Returns the model and both objective traces.
pub fn train_combined<T: Real>(
    restricted: &FrequencyMatrix,
    global: &FrequencyMatrix,
    st_user_index: Vec<UserId>,
    st_poi_index: Vec<PoiId>,
    cfg: &MFConfig,
) -> Result<(FactorModel<T>, Vec<T>, Vec<T>)> {
    if st_user_index.len() != restricted.n_users() || st_poi_index.len() != restricted.n_pois() {
        return Err(Error::Data(
            "candidate index lists must match the restricted matrix shape".into(),
        ));
    }
    let (st_u, st_p, st_trace) = train_mf(restricted, cfg)?;
    let pref_cfg = MFConfig { seed: cfg.seed.wrapping_add(1), ..cfg.clone() };
    let (pref_u, pref_p, pref_trace) = train_mf(global, &pref_cfg)?;
    let model = FactorModel::new(
        cfg.latent_dim,
        cfg.alpha,
        st_u,
        st_p,
        pref_u,
        pref_p,
        st_user_index,
        st_poi_index,
    );
    Ok((model, st_trace, pref_trace))
}
