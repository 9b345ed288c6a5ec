use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embedding::SequenceBatch;
use crate::error::{PhdError, Result};
use crate::nn::{Checkpoint, Graph, Mat, ParamStore, Var};
use crate::reconstruction::{HistoryPredictor, PredictorConfig};
use crate::risk::{AggregatorConfig, RiskModel};

const PREDICT_CHUNK: usize = 512;

/// Architecture shared by teachers, baselines and students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub history_len: usize,
    pub horizons: usize,
    pub aggregator: AggregatorConfig,
    pub predictor: PredictorConfig,
}

impl ModelSpec {
    pub fn seq(&self) -> usize {
        self.history_len + 1
    }
}

/// Anything whose parameters can be fingerprinted.
pub trait Parameterized {
    fn store(&self) -> &ParamStore;
}

/// A risk model fed the current exam plus whatever true priors the batch
/// carries. Teachers and the full-history model are of this kind.
#[derive(Debug, Clone)]
pub struct HistoryModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    net: RiskModel,
}

impl HistoryModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = RiskModel::new(
            &mut store,
            spec.dim,
            spec.history_len,
            spec.horizons,
            &spec.aggregator,
            &mut rng,
        );
        Self { spec, store, net }
    }

    /// Cumulative risk `P` (rows x K) for `batch`, using parameters `store`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &SequenceBatch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        check_batch(&self.spec, batch)?;
        let n = batch.len();
        let mut slots = vec![g.input(batch.current.clone())];
        let mut present = vec![vec![true; n]];
        for (p, a) in batch.priors.iter().zip(&batch.available) {
            slots.push(g.input(p.clone()));
            present.push(a.clone());
        }
        Ok(self.net.forward(g, store, &slots, &present, rng).1)
    }

    pub fn predict(&self, batch: &SequenceBatch) -> Result<Mat> {
        chunked(batch.len(), self.spec.horizons, |rows| {
            let sub = batch.select(rows);
            let mut g = Graph::new();
            let p = self.forward(&mut g, &self.store, &sub, None)?;
            Ok(g.value(p).clone())
        })
    }

    pub fn save(&self, path: &Path, module: &str, config_hash: &str, meta: serde_json::Value) -> Result<()> {
        let meta = json!({ "spec": self.spec, "info": meta });
        Checkpoint::from_store(module, config_hash, meta, &self.store).save(path)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_value(ckpt.meta["spec"].clone())?;
        let mut model = Self::new(spec, 0);
        ckpt.restore_into(&mut model.store)?;
        Ok(model)
    }
}

impl Parameterized for HistoryModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }
}

/// The deployable model: history predictor followed by a risk model that
/// sees the current exam and the reconstructed priors. Never reads priors.
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    predictor: HistoryPredictor,
    net: RiskModel,
}

impl StudentModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let predictor = HistoryPredictor::new(
            &mut store,
            spec.dim,
            spec.history_len,
            spec.predictor.clone(),
            &mut rng,
        );
        let net = RiskModel::new(
            &mut store,
            spec.dim,
            spec.history_len,
            spec.horizons,
            &spec.aggregator,
            &mut rng,
        );
        Self {
            spec,
            store,
            predictor,
            net,
        }
    }

    /// Returns the reconstructed priors (one `rows x dim` node per slot) and
    /// the cumulative risk. Dropout runs only when `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        current: &Mat,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<Var>, Var)> {
        if current.ncols() != self.spec.dim {
            return Err(PhdError::invalid(format!(
                "embedding dim {} does not match model dim {}",
                current.ncols(),
                self.spec.dim
            )));
        }
        let n = current.nrows();
        let x0 = g.input(current.clone());
        let recon = self.predictor.forward(g, store, x0, rng.as_deref_mut());
        let mut slots = vec![x0];
        slots.extend(recon.iter().copied());
        let present = vec![vec![true; n]; slots.len()];
        let (_, p) = self.net.forward(g, store, &slots, &present, rng);
        Ok((recon, p))
    }

    /// Risk from current embeddings only.
    pub fn predict(&self, current: &Mat) -> Result<Mat> {
        chunked(current.nrows(), self.spec.horizons, |rows| {
            let sub = current.select(ndarray::Axis(0), rows);
            let mut g = Graph::new();
            let (_, p) = self.forward(&mut g, &self.store, &sub, None)?;
            Ok(g.value(p).clone())
        })
    }

    pub fn predict_batch(&self, batch: &SequenceBatch) -> Result<Mat> {
        self.predict(&batch.current)
    }

    /// Eval-mode reconstructions, one `rows x dim` matrix per prior slot.
    pub fn reconstruct(&self, current: &Mat) -> Result<Vec<Mat>> {
        let mut g = Graph::new();
        let x0 = g.input(current.clone());
        let recon = self.predictor.forward::<ChaCha8Rng>(&mut g, &self.store, x0, None);
        Ok(recon.iter().map(|v| g.value(*v).clone()).collect())
    }

    pub fn predictor(&self) -> &HistoryPredictor {
        &self.predictor
    }

    pub fn save(&self, path: &Path, module: &str, config_hash: &str, meta: serde_json::Value) -> Result<()> {
        let meta = json!({ "spec": self.spec, "info": meta });
        Checkpoint::from_store(module, config_hash, meta, &self.store).save(path)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_value(ckpt.meta["spec"].clone())?;
        let mut model = Self::new(spec, 0);
        ckpt.restore_into(&mut model.store)?;
        Ok(model)
    }
}

impl Parameterized for StudentModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }
}

fn check_batch(spec: &ModelSpec, batch: &SequenceBatch) -> Result<()> {
    if batch.current.ncols() != spec.dim {
        return Err(PhdError::invalid(format!(
            "embedding dim {} does not match model dim {}",
            batch.current.ncols(),
            spec.dim
        )));
    }
    if batch.history_len() != spec.history_len {
        return Err(PhdError::invalid(format!(
            "batch has {} prior slots, model expects {}",
            batch.history_len(),
            spec.history_len
        )));
    }
    Ok(())
}

fn chunked(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> Result<Mat>) -> Result<Mat> {
    let mut out = Mat::zeros((n, k));
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(PREDICT_CHUNK) {
        let p = f(chunk)?;
        for (i, &r) in chunk.iter().enumerate() {
            out.row_mut(r).assign(&p.row(i));
        }
    }
    Ok(out)
}

/// Read-only wrapper that remembers the parameter checksum at freeze time.
#[derive(Debug, Clone)]
pub struct Frozen<M> {
    inner: M,
    checksum: String,
}

impl<M: Parameterized> Frozen<M> {
    pub fn new(inner: M) -> Self {
        let checksum = inner.store().checksum();
        Self { inner, checksum }
    }

    pub fn get(&self) -> &M {
        &self.inner
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn verify(&self) -> Result<()> {
        let now = self.inner.store().checksum();
        if now != self.checksum {
            return Err(PhdError::Training(format!(
                "frozen parameters changed (checksum {} -> {now})",
                self.checksum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    /// One expert per horizon; logit `k` comes from expert `k`.
    UniTask,
    /// A single multi-task model supplies every logit.
    SingleTeacher,
}

/// Frozen teachers that supply target probabilities for logit KD.
#[derive(Debug, Clone)]
pub struct TeacherBundle {
    pub kind: BundleKind,
    members: Vec<Frozen<HistoryModel>>,
}

impl TeacherBundle {
    pub fn uni_task(experts: Vec<HistoryModel>) -> Result<Self> {
        let k = experts.len();
        if k == 0 || experts.iter().any(|e| e.spec.horizons != k) {
            return Err(PhdError::invalid(format!(
                "a uni-task bundle needs one expert per horizon ({k} experts)"
            )));
        }
        Ok(Self {
            kind: BundleKind::UniTask,
            members: experts.into_iter().map(Frozen::new).collect(),
        })
    }

    pub fn single(teacher: HistoryModel) -> Self {
        Self {
            kind: BundleKind::SingleTeacher,
            members: vec![Frozen::new(teacher)],
        }
    }

    pub fn horizons(&self) -> usize {
        self.members[0].get().spec.horizons
    }

    pub fn members(&self) -> &[Frozen<HistoryModel>] {
        &self.members
    }

    pub fn checksums(&self) -> Vec<String> {
        self.members.iter().map(|m| m.checksum().to_string()).collect()
    }

    pub fn verify(&self) -> Result<()> {
        self.members.iter().try_for_each(Frozen::verify)
    }

    /// Teacher probabilities (rows x K) on full-history batches.
    pub fn probs(&self, batch: &SequenceBatch) -> Result<Mat> {
        match self.kind {
            BundleKind::SingleTeacher => self.members[0].get().predict(batch),
            BundleKind::UniTask => {
                let mut out = Mat::zeros((batch.len(), self.horizons()));
                for (k, m) in self.members.iter().enumerate() {
                    let p = m.get().predict(batch)?;
                    out.column_mut(k).assign(&p.column(k));
                }
                Ok(out)
            }
        }
    }
}
