//! Longitudinal aggregators: map a slot sequence (current exam first, then
//! priors at years -1..-T_h) to a fixed-size history representation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{dropout, Graph, LayerNorm, Linear, ParamId, ParamStore, Var};

/// Any sequence encoder usable in front of the hazard head. `slots[0]` is
/// the current exam; `present[s][row]` says whether slot `s` holds an
/// embedding for that row (absent slots receive learned tokens).
pub trait SequenceAggregator {
    fn output_dim(&self) -> usize;
    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slots: &[Var],
        present: &[Vec<bool>],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Attention,
    Recurrent,
}

/// How the attention stack's slot outputs become one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// The output at the current-exam slot.
    Current,
    /// The mean over all slots.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    pub readout: Readout,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub dropout: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            kind: AggregatorKind::Attention,
            readout: Readout::Current,
            d_model: 16,
            heads: 4,
            layers: 2,
            ffn: 32,
            dropout: 0.0,
        }
    }
}

/// Projects each slot to `d_model`, substituting a per-slot learned token
/// for absent rows.
#[derive(Debug, Clone)]
struct SlotEmbedder {
    input: Linear,
    absent: Vec<ParamId>,
}

impl SlotEmbedder {
    fn new<R: Rng>(store: &mut ParamStore, prefix: &str, in_dim: usize, d: usize, slots: usize, rng: &mut R) -> Self {
        let input = Linear::new(store, &format!("{prefix}.input"), in_dim, d, rng);
        let absent = (0..slots)
            .map(|s| store.add_glorot(format!("{prefix}.absent{s}"), 1, d, rng))
            .collect();
        Self { input, absent }
    }

    fn embed(&self, g: &mut Graph, store: &ParamStore, slots: &[Var], present: &[Vec<bool>]) -> Vec<Var> {
        slots
            .iter()
            .zip(present)
            .enumerate()
            .map(|(s, (&x, keep))| {
                let h = self.input.forward(g, store, x);
                if keep.iter().all(|&k| k) {
                    h
                } else {
                    let fill = g.param(store, self.absent[s]);
                    g.fill_rows(h, fill, keep.clone())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm self-attention stack with learned positional encodings over
/// relative year; the configured readout picks the history representation.
#[derive(Debug, Clone)]
pub struct AttentionAggregator {
    config: AggregatorConfig,
    seq: usize,
    embed: SlotEmbedder,
    position: ParamId,
    blocks: Vec<Block>,
}

impl AttentionAggregator {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, seq: usize, config: AggregatorConfig, rng: &mut R) -> Self {
        let d = config.d_model;
        assert!(d % config.heads == 0, "d_model must be divisible by heads");
        let embed = SlotEmbedder::new(store, "agg", in_dim, d, seq, rng);
        let position = store.add_glorot("agg.position", seq, d, rng);
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("agg.block{l}");
                Block {
                    norm1: LayerNorm::new(store, &format!("{p}.norm1"), d),
                    q: Linear::new(store, &format!("{p}.q"), d, d, rng),
                    k: Linear::new(store, &format!("{p}.k"), d, d, rng),
                    v: Linear::new(store, &format!("{p}.v"), d, d, rng),
                    out: Linear::new(store, &format!("{p}.out"), d, d, rng),
                    norm2: LayerNorm::new(store, &format!("{p}.norm2"), d),
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, config.ffn, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), config.ffn, d, rng),
                }
            })
            .collect();
        Self {
            config,
            seq,
            embed,
            position,
            blocks,
        }
    }
}

impl SequenceAggregator for AttentionAggregator {
    fn output_dim(&self) -> usize {
        self.config.d_model
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slots: &[Var],
        present: &[Vec<bool>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        assert_eq!(slots.len(), self.seq, "slot count");
        let tokens = self.embed.embed(g, store, slots, present);
        let x = g.stack_slots(&tokens);
        let pos = g.param(store, self.position);
        let mut x = g.add_slotwise(x, pos);
        let p = self.config.dropout;
        for b in &self.blocks {
            let a = b.norm1.forward(g, store, x);
            let q = b.q.forward(g, store, a);
            let k = b.k.forward(g, store, a);
            let v = b.v.forward(g, store, a);
            let att = g.attention(q, k, v, self.seq, self.config.heads);
            let o = b.out.forward(g, store, att);
            let o = dropout(g, o, p, rng.as_deref_mut());
            x = g.add(x, o);
            let f = b.norm2.forward(g, store, x);
            let f = b.ff1.forward(g, store, f);
            let f = g.relu(f);
            let f = b.ff2.forward(g, store, f);
            let f = dropout(g, f, p, rng.as_deref_mut());
            x = g.add(x, f);
        }
        match self.config.readout {
            Readout::Current => g.pick_slot(x, self.seq, 0),
            Readout::Mean => g.mean_slots(x, self.seq),
        }
    }
}

/// Elman recurrence from the oldest slot to the current exam; the final
/// hidden state is the history representation.
#[derive(Debug, Clone)]
pub struct RecurrentAggregator {
    d: usize,
    embed: SlotEmbedder,
    recur: Linear,
}

impl RecurrentAggregator {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, seq: usize, config: AggregatorConfig, rng: &mut R) -> Self {
        let d = config.d_model;
        Self {
            d,
            embed: SlotEmbedder::new(store, "rnn", in_dim, d, seq, rng),
            recur: Linear::new(store, "rnn.recur", d, d, rng),
        }
    }
}

impl SequenceAggregator for RecurrentAggregator {
    fn output_dim(&self) -> usize {
        self.d
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slots: &[Var],
        present: &[Vec<bool>],
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let tokens = self.embed.embed(g, store, slots, present);
        let mut h: Option<Var> = None;
        for &x in tokens.iter().rev() {
            let pre = match h {
                Some(prev) => {
                    let r = self.recur.forward(g, store, prev);
                    g.add(x, r)
                }
                None => x,
            };
            h = Some(g.tanh(pre));
        }
        h.expect("at least one slot")
    }
}

#[derive(Debug, Clone)]
pub enum Aggregator {
    Attention(AttentionAggregator),
    Recurrent(RecurrentAggregator),
}

impl Aggregator {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, seq: usize, config: &AggregatorConfig, rng: &mut R) -> Self {
        match config.kind {
            AggregatorKind::Attention => {
                Aggregator::Attention(AttentionAggregator::new(store, in_dim, seq, config.clone(), rng))
            }
            AggregatorKind::Recurrent => {
                Aggregator::Recurrent(RecurrentAggregator::new(store, in_dim, seq, config.clone(), rng))
            }
        }
    }
}

impl SequenceAggregator for Aggregator {
    fn output_dim(&self) -> usize {
        match self {
            Aggregator::Attention(a) => a.output_dim(),
            Aggregator::Recurrent(a) => a.output_dim(),
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slots: &[Var],
        present: &[Vec<bool>],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        match self {
            Aggregator::Attention(a) => a.forward(g, store, slots, present, rng),
            Aggregator::Recurrent(a) => a.forward(g, store, slots, present, rng),
        }
    }
}
