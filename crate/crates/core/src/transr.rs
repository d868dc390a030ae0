//! TransR embeddings over the user-POI graph.
//!
//! Entities live in a k-dimensional space, relations in a d-dimensional one.
//! Each composed relation path owns a k x d projection matrix; its embedding
//! is the elementwise product of its component (slot, region[, category])
//! vectors. A triple (u, r, v) is scored by the squared translation residual
//! `||u M_r + r - v M_r||^2` and trained with a margin ranking loss against
//! corrupted triples.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, PoiId, RelationId, RelationPath, Triple, UserId};
use crate::num::{real, Real};

/// Hyperparameters for TransR training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub margin: f64,
    /// Relation-space dimension d.
    pub dim_d: usize,
    /// Entity-space dimension k.
    pub dim_k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            margin: 1.0,
            dim_d: 100,
            dim_k: 100,
            batch_size: 120,
            epochs: 1000,
            negatives_per_positive: 1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.margin <= 0.0 || !self.margin.is_finite() {
            return Err(Error::Config("margin must be positive".into()));
        }
        if self.dim_d == 0 || self.dim_k == 0 {
            return Err(Error::Config("embedding dimensions must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        Ok(())
    }
}

/// Elementwise (Hadamard) product of relation component vectors, in order.
pub fn compose_relation_embedding<T: Real>(components: &[ArrayView1<T>]) -> Result<Array1<T>> {
    let first = components
        .first()
        .ok_or_else(|| Error::Data("relation path needs at least one component".into()))?;
    let mut out = first.to_owned();
    for c in &components[1..] {
        if c.len() != out.len() {
            return Err(Error::Data(format!(
                "relation component dimension mismatch: {} vs {}",
                c.len(),
                out.len()
            )));
        }
        out.zip_mut_with(c, |o, &x| *o *= x);
    }
    Ok(out)
}

/// Projects an entity vector into a relation space: `e M_r`.
pub fn project_entity<T: Real>(e: ArrayView1<T>, m: &Array2<T>) -> Result<Array1<T>> {
    if e.len() != m.nrows() {
        return Err(Error::Data(format!(
            "projection shape mismatch: entity dim {} vs matrix {}x{}",
            e.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(e.dot(m))
}

/// Sum of hinge terms `max(0, f_pos + margin - f_neg)`.
pub fn hinge_sum<T: Real>(f_pos: T, f_negs: &[T], margin: T) -> T {
    f_negs.iter().map(|&f_neg| (f_pos + margin - f_neg).max(T::zero())).sum()
}

/// Accumulated gradients of one batch of hinge terms.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// By entity row (users first, then POIs).
    pub entity: HashMap<usize, Array1<T>>,
    pub slot: HashMap<u32, Array1<T>>,
    pub region: HashMap<u32, Array1<T>>,
    pub category: HashMap<u32, Array1<T>>,
    /// By relation id.
    pub proj: HashMap<u32, Array2<T>>,
    /// (entity row, relation id) pairs that appeared in the batch.
    pub touched_projections: HashSet<(usize, u32)>,
}

impl<T> Default for Gradients<T> {
    fn default() -> Self {
        Gradients {
            entity: HashMap::new(),
            slot: HashMap::new(),
            region: HashMap::new(),
            category: HashMap::new(),
            proj: HashMap::new(),
            touched_projections: HashSet::new(),
        }
    }
}

/// TransR model state: entity vectors, per-component base relation vectors,
/// and one projection matrix per composed relation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransRModel<T> {
    pub dim_k: usize,
    pub dim_d: usize,
    pub n_users: usize,
    pub n_pois: usize,
    /// (n_users + n_pois) x k; user rows first.
    pub entity_emb: Array2<T>,
    /// slots_per_day x d.
    pub slot_emb: Array2<T>,
    /// region_count x d.
    pub region_emb: Array2<T>,
    /// observed categories x d (0 rows when the graph carries no categories).
    pub category_emb: Array2<T>,
    /// Composed relation paths, indexed by `RelationId`.
    pub relations: Vec<RelationPath>,
    /// One k x d projection matrix per relation path.
    pub proj: Vec<Array2<T>>,
    pub config: TrainConfig,
}

impl<T: Real> TransRModel<T> {
    /// Initializes entities and relation components uniformly in
    /// `[-6/sqrt(dim), 6/sqrt(dim)]` followed by unit normalization;
    /// projection matrices start as the truncated identity so initial scores
    /// reduce to plain translation.
    pub fn init(graph: &KnowledgeGraph, config: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::init_with_rng(graph, config, &mut rng)
    }

    fn init_with_rng(graph: &KnowledgeGraph, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if graph.positives().is_empty() {
            return Err(Error::Data("cannot initialize a model on an empty graph".into()));
        }
        let (k, d) = (config.dim_k, config.dim_d);
        let n_users = graph.vocab.n_users();
        let n_pois = graph.vocab.n_pois();

        let entity_emb = init_normalized_rows(n_users + n_pois, k, rng);
        let slot_emb = init_normalized_rows(graph.slots_per_day as usize, d, rng);
        let region_emb = init_normalized_rows(graph.region_count as usize, d, rng);
        let category_emb = init_normalized_rows(graph.categories().len(), d, rng);

        let mut identity = Array2::zeros((k, d));
        for i in 0..k.min(d) {
            identity[[i, i]] = T::one();
        }
        let proj = vec![identity; graph.n_relations()];

        Ok(TransRModel {
            dim_k: k,
            dim_d: d,
            n_users,
            n_pois,
            entity_emb,
            slot_emb,
            region_emb,
            category_emb,
            relations: graph.relations().to_vec(),
            proj,
            config: config.clone(),
        })
    }

    pub fn user_row(&self, u: UserId) -> usize {
        u.0 as usize
    }

    pub fn poi_row(&self, v: PoiId) -> usize {
        self.n_users + v.0 as usize
    }

    /// Composed embedding of a relation path (slot ∘ region [∘ category]).
    pub fn relation_embedding(&self, r: RelationId) -> Result<Array1<T>> {
        let path = self
            .relations
            .get(r.0 as usize)
            .ok_or_else(|| Error::Data(format!("unknown relation {}", r.0)))?;
        let mut parts = vec![self.slot_emb.row(path.slot as usize), self.region_emb.row(path.region as usize)];
        if let Some(c) = path.category {
            parts.push(self.category_emb.row(c as usize));
        }
        compose_relation_embedding(&parts)
    }

    /// TransR score `||u M_r + r - v M_r||^2`; lower is more plausible.
    pub fn score(&self, u: UserId, r: RelationId, v: PoiId) -> Result<T> {
        if u.0 as usize >= self.n_users {
            return Err(Error::Data(format!("unknown user index {}", u.0)));
        }
        if v.0 as usize >= self.n_pois {
            return Err(Error::Data(format!("unknown poi index {}", v.0)));
        }
        let rel = self.relation_embedding(r)?;
        let m = &self.proj[r.0 as usize];
        let z = self.residual(self.user_row(u), self.poi_row(v), &rel, m);
        Ok(z.dot(&z))
    }

    /// Translation residual `u M + r - v M` for entity rows.
    fn residual(&self, head_row: usize, tail_row: usize, rel: &Array1<T>, m: &Array2<T>) -> Array1<T> {
        let head_proj = self.entity_emb.row(head_row).dot(m);
        let tail_proj = self.entity_emb.row(tail_row).dot(m);
        &head_proj + rel - &tail_proj
    }

    /// Margin ranking loss of one positive against its corrupted triples.
    pub fn margin_loss(&self, pos: Triple, negs: &[Triple]) -> Result<T> {
        let margin = real::<T>(self.config.margin);
        let f_pos = self.score(pos.head, pos.relation, pos.tail)?;
        let f_negs = negs
            .iter()
            .map(|n| {
                debug_assert_eq!(n.relation, pos.relation, "negatives share the positive's relation");
                self.score(n.head, n.relation, n.tail)
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(hinge_sum(f_pos, &f_negs, margin))
    }

    /// Batch loss over (positive, negatives) pairs.
    pub fn batch_loss(&self, batch: &[(Triple, Vec<Triple>)]) -> Result<T> {
        let mut total = T::zero();
        for (pos, negs) in batch {
            total += self.margin_loss(*pos, negs)?;
        }
        Ok(total)
    }

    /// Computes the batch loss and its analytic gradient with respect to all
    /// touched parameters. Inactive hinge terms contribute nothing.
    pub fn batch_gradients(&self, batch: &[(Triple, Vec<Triple>)]) -> Result<(T, Gradients<T>)> {
        let margin = real::<T>(self.config.margin);
        let mut loss = T::zero();
        let mut grads = Gradients::default();

        for (pos, negs) in batch {
            let rel_id = pos.relation;
            let path = *self
                .relations
                .get(rel_id.0 as usize)
                .ok_or_else(|| Error::Data(format!("unknown relation {}", rel_id.0)))?;
            let rel = self.relation_embedding(rel_id)?;
            let m = &self.proj[rel_id.0 as usize];

            let pos_rows = (self.user_row(pos.head), self.poi_row(pos.tail));
            grads.touched_projections.insert((pos_rows.0, rel_id.0));
            grads.touched_projections.insert((pos_rows.1, rel_id.0));
            let z_pos = self.residual(pos_rows.0, pos_rows.1, &rel, m);
            let f_pos = z_pos.dot(&z_pos);

            for neg in negs {
                debug_assert_eq!(neg.relation, rel_id);
                let neg_rows = (self.user_row(neg.head), self.poi_row(neg.tail));
                grads.touched_projections.insert((neg_rows.0, rel_id.0));
                grads.touched_projections.insert((neg_rows.1, rel_id.0));
                let z_neg = self.residual(neg_rows.0, neg_rows.1, &rel, m);
                let f_neg = z_neg.dot(&z_neg);

                let violation = f_pos + margin - f_neg;
                if violation <= T::zero() {
                    continue;
                }
                loss += violation;
                self.accumulate(&mut grads, T::one(), pos_rows, &z_pos, &path, rel_id);
                self.accumulate(&mut grads, -T::one(), neg_rows, &z_neg, &path, rel_id);
            }
        }
        Ok((loss, grads))
    }

    /// Adds `sign * d f(triple) / d theta` for one score term, where
    /// `f = ||(e_h - e_t) M + r||^2` with `r` the Hadamard composition of its
    /// base components:
    ///   df/de_h =  2 M z,   df/de_t = -2 M z,
    ///   df/dc_i =  2 z ∘ (product of the other components),
    ///   df/dM   =  2 (e_h - e_t)^T z.
    fn accumulate(
        &self,
        grads: &mut Gradients<T>,
        sign: T,
        rows: (usize, usize),
        z: &Array1<T>,
        path: &RelationPath,
        rel_id: RelationId,
    ) {
        let (head_row, tail_row) = rows;
        let two = real::<T>(2.0);
        let m = &self.proj[rel_id.0 as usize];

        // Entity gradients.
        let mz = m.dot(z);
        let scale = sign * two;
        {
            let g = grads
                .entity
                .entry(head_row)
                .or_insert_with(|| Array1::zeros(self.dim_k));
            g.zip_mut_with(&mz, |a, &b| *a += scale * b);
        }
        {
            let g = grads
                .entity
                .entry(tail_row)
                .or_insert_with(|| Array1::zeros(self.dim_k));
            g.zip_mut_with(&mz, |a, &b| *a -= scale * b);
        }

        // Base relation component gradients, chained through the Hadamard
        // product: the factor for component i is the product of the others.
        let slot_v = self.slot_emb.row(path.slot as usize);
        let region_v = self.region_emb.row(path.region as usize);
        let cat_v = path.category.map(|c| self.category_emb.row(c as usize));

        {
            let g = grads
                .slot
                .entry(path.slot)
                .or_insert_with(|| Array1::zeros(self.dim_d));
            for i in 0..self.dim_d {
                let mut other = region_v[i];
                if let Some(cv) = cat_v {
                    other *= cv[i];
                }
                g[i] += scale * z[i] * other;
            }
        }
        {
            let g = grads
                .region
                .entry(path.region)
                .or_insert_with(|| Array1::zeros(self.dim_d));
            for i in 0..self.dim_d {
                let mut other = slot_v[i];
                if let Some(cv) = cat_v {
                    other *= cv[i];
                }
                g[i] += scale * z[i] * other;
            }
        }
        if let Some(c) = path.category {
            let g = grads
                .category
                .entry(c)
                .or_insert_with(|| Array1::zeros(self.dim_d));
            for i in 0..self.dim_d {
                g[i] += scale * z[i] * slot_v[i] * region_v[i];
            }
        }

        // Projection matrix gradient: outer((e_h - e_t), z).
        let head = self.entity_emb.row(head_row);
        let tail = self.entity_emb.row(tail_row);
        let g = grads
            .proj
            .entry(rel_id.0)
            .or_insert_with(|| Array2::zeros((self.dim_k, self.dim_d)));
        for j in 0..self.dim_k {
            let diff = head[j] - tail[j];
            if diff == T::zero() {
                continue;
            }
            for l in 0..self.dim_d {
                g[[j, l]] += scale * diff * z[l];
            }
        }
    }

    /// One SGD step over a batch: computes gradients, applies the update at
    /// the configured learning rate, and re-imposes the unit-ball norm
    /// constraints on every touched vector. Returns the batch loss.
    pub fn grad_step(&mut self, batch: &[(Triple, Vec<Triple>)]) -> Result<T> {
        let (loss, grads) = self.batch_gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite batch loss {loss}")));
        }
        let lr = real::<T>(self.config.learning_rate);

        for (&row, g) in &grads.entity {
            let mut e = self.entity_emb.row_mut(row);
            e.zip_mut_with(g, |a, &b| *a -= lr * b);
        }
        for (&i, g) in &grads.slot {
            let mut v = self.slot_emb.row_mut(i as usize);
            v.zip_mut_with(g, |a, &b| *a -= lr * b);
        }
        for (&i, g) in &grads.region {
            let mut v = self.region_emb.row_mut(i as usize);
            v.zip_mut_with(g, |a, &b| *a -= lr * b);
        }
        for (&i, g) in &grads.category {
            let mut v = self.category_emb.row_mut(i as usize);
            v.zip_mut_with(g, |a, &b| *a -= lr * b);
        }
        for (&i, g) in &grads.proj {
            let m = &mut self.proj[i as usize];
            m.zip_mut_with(g, |a, &b| *a -= lr * b);
        }

        // Project updated base components back onto the unit ball; keeping
        // every component there bounds the composed relation vector as well.
        for &i in grads.slot.keys() {
            rescale_to_unit_ball(self.slot_emb.row_mut(i as usize));
        }
        for &i in grads.region.keys() {
            rescale_to_unit_ball(self.region_emb.row_mut(i as usize));
        }
        for &i in grads.category.keys() {
            rescale_to_unit_ball(self.category_emb.row_mut(i as usize));
        }

        let mut updated_rows: Vec<usize> = grads.entity.keys().copied().collect();
        updated_rows.sort_unstable();
        for row in updated_rows {
            rescale_to_unit_ball(self.entity_emb.row_mut(row));
        }

        // Re-impose ||e M_r|| <= 1 for every (entity, relation) pair touched
        // this step by shrinking the entity vector; shrinking can only keep
        // the previously handled constraints satisfied. All batch pairs are
        // covered, not just updated ones: an earlier step may have moved a
        // shared projection matrix past the bound for an entity it did not
        // see.
        let mut touched: Vec<(usize, u32)> = grads.touched_projections.iter().copied().collect();
        touched.sort_unstable();
        for (row, rel) in touched {
            let norm = self
                .entity_emb
                .row(row)
                .dot(&self.proj[rel as usize])
                .iter()
                .map(|x| *x * *x)
                .sum::<T>()
                .sqrt();
            if norm > T::one() {
                let inv = T::one() / norm;
                self.entity_emb.row_mut(row).mapv_inplace(|x| x * inv);
            }
        }

        Ok(loss)
    }

    /// Trains a model on the graph: shuffled mini-batches with negatives
    /// resampled every epoch. Returns the model and the per-epoch mean batch
    /// loss trace.
    pub fn train(graph: &KnowledgeGraph, config: &TrainConfig) -> Result<(Self, Vec<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = Self::init_with_rng(graph, config, &mut rng)?;
        let positives = graph.positives();
        let mut order: Vec<usize> = (0..positives.len()).collect();
        let mut trace = Vec::with_capacity(config.epochs);

        for _epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = T::zero();
            let mut n_batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let mut batch = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let pos = positives[i];
                    let negs = graph.sample_negatives(pos, config.negatives_per_positive, &mut rng)?;
                    batch.push((pos, negs));
                }
                epoch_loss += model.grad_step(&batch)?;
                n_batches += 1;
            }
            trace.push(epoch_loss / real::<T>(n_batches as f64));
        }
        Ok((model, trace))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::Data(format!("cannot write model checkpoint: {e}")))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Data(format!("cannot read model checkpoint: {e}")))
    }
}

fn init_normalized_rows<T: Real>(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let bound = 6.0 / (dim as f64).sqrt();
    let mut out = Array2::zeros((rows, dim));
    for mut row in out.rows_mut() {
        for x in row.iter_mut() {
            *x = real::<T>(rng.random_range(-bound..bound));
        }
        let norm = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
        if norm > T::zero() {
            let inv = T::one() / norm;
            row.mapv_inplace(|x| x * inv);
        } else {
            row[0] = T::one();
        }
    }
    out
}

fn rescale_to_unit_ball<T: Real>(mut row: ndarray::ArrayViewMut1<T>) {
    let norm = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if norm > T::one() {
        let inv = T::one() / norm;
        row.mapv_inplace(|x| x * inv);
    }
}

/// Writes a per-epoch loss trace as `epoch,mean_loss` CSV.
pub fn write_loss_trace<T: Real>(path: &Path, trace: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(file, "epoch,mean_loss")?;
    for (epoch, loss) in trace.iter().enumerate() {
        writeln!(file, "{},{}", epoch + 1, loss)?;
    }
    file.flush()?;
    Ok(())
}
