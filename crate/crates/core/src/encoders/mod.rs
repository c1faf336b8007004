//! Semantic and syntactic encoders producing two Gaussian latents.

pub mod aux;
pub mod graph;
pub mod latent;
pub mod sequential;

use serde::{Deserialize, Serialize};

use crate::corpus::{tree_to_graph, SyntaxGraph, SyntaxTree};
use crate::error::{Error, Result};
use crate::nn::Init;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
pub use aux::{lstm_syntax_loss, vgae_loss, LstmAux, VgaeAux};
pub use graph::{graph_encode, graph_layer, GraphEncoder, GraphKind, GraphLayer};
pub use latent::{latent_head, LatentGaussian, LatentHead, LatentVars};
pub use sequential::{sequential_encode, SequentialEncoder, SequentialShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EncoderMode {
    /// Sequential encoder for semantics, graph encoder for syntax.
    DualGraph,
    /// Second pass of the sequential trunk over the stripped flattened tree.
    Siamese,
    /// One trunk, two heads, LSTM decoding the flattened tree from `z_syn`.
    MultitaskLstm,
    /// One trunk, two heads, VGAE over the syntax graph aligned with `z_syn`.
    MultitaskVgae,
    /// One latent of full width; no syntax space.
    Single,
}

impl EncoderMode {
    pub fn is_dual(self) -> bool {
        self != EncoderMode::Single
    }
}

impl std::str::FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "DUAL_GRAPH" => Ok(EncoderMode::DualGraph),
            "SIAMESE" => Ok(EncoderMode::Siamese),
            "MULTITASK_LSTM" => Ok(EncoderMode::MultitaskLstm),
            "MULTITASK_VGAE" => Ok(EncoderMode::MultitaskVgae),
            "SINGLE" => Ok(EncoderMode::Single),
            _ => Err(Error::Invalid(format!("unknown encoder mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_z: usize,
    pub graph_kind: GraphKind,
    pub mode: EncoderMode,
    pub graph_hidden: usize,
    pub graph_layers: usize,
    pub max_len: usize,
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            d_z: 64,
            graph_kind: GraphKind::TransConv,
            mode: EncoderMode::DualGraph,
            graph_hidden: 64,
            graph_layers: 2,
            max_len: 64,
            positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_z % 2 != 0 || self.d_z == 0 {
            return Err(Error::Invalid(format!("d_z must be even and positive, got {}", self.d_z)));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Invalid("d_model must be divisible by n_heads".into()));
        }
        Ok(())
    }

    /// Width of each latent space: the full `d_z` in single mode, half otherwise.
    pub fn space_dim(&self) -> usize {
        if self.mode.is_dual() {
            self.d_z / 2
        } else {
            self.d_z
        }
    }
}

/// Semantic and (optional) syntactic posteriors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualLatent {
    pub sem: LatentGaussian,
    pub syn: Option<LatentGaussian>,
}

#[derive(Clone, Copy, Debug)]
pub struct DualVars {
    pub sem: LatentVars,
    pub syn: Option<LatentVars>,
}

impl DualVars {
    pub fn read(&self, tape: &Tape) -> DualLatent {
        DualLatent { sem: self.sem.read(tape), syn: self.syn.map(|s| s.read(tape)) }
    }
}

/// Everything an encoder needs from one corpus record, already mapped to ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    /// Surface ids framed with BOS/EOS.
    pub ids: Vec<usize>,
    /// Stripped flattened tree in the tree vocabulary, framed with BOS/EOS.
    pub tree_ids: Vec<usize>,
    pub tree: SyntaxTree,
    /// Tree-vocabulary id of every graph node in pre-order.
    pub label_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub seq: SequentialEncoder,
    pub tree_emb: Option<ParamId>,
    pub graph: Option<GraphEncoder>,
    pub sem_head: LatentHead,
    pub syn_head: Option<LatentHead>,
    pub lstm: Option<LstmAux>,
    pub vgae: Option<VgaeAux>,
}

impl Encoder {
    pub fn new(init: &mut Init, config: &EncoderConfig, vocab: usize, tree_vocab: usize) -> Result<Self> {
        config.validate()?;
        let c = config;
        let dz = c.space_dim();
        let shape = SequentialShape {
            vocab,
            d_model: c.d_model,
            d_ff: c.d_ff,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_pool: c.d_model,
            max_len: c.max_len,
            positional: c.positional,
        };
        let seq = init.scoped("seq", |init| SequentialEncoder::new(init, shape));
        let sem_head = init.scoped("sem_head", |init| LatentHead::new(init, c.d_model, dz));
        let mut enc = Encoder {
            config: c.clone(),
            seq,
            tree_emb: None,
            graph: None,
            sem_head,
            syn_head: None,
            lstm: None,
            vgae: None,
        };
        match c.mode {
            EncoderMode::Single => {}
            EncoderMode::DualGraph => {
                enc.graph = Some(init.scoped("graph", |init| {
                    GraphEncoder::new(init, c.graph_kind, tree_vocab, c.graph_hidden, c.graph_layers)
                }));
                enc.syn_head = Some(init.scoped("syn_head", |init| LatentHead::new(init, c.graph_hidden, dz)));
            }
            EncoderMode::Siamese => {
                enc.tree_emb = Some(init.scoped("siamese", |init| init.normal("tree_emb", tree_vocab, c.d_model, 0.1)));
                enc.syn_head = Some(init.scoped("syn_head", |init| LatentHead::new(init, c.d_model, dz)));
            }
            EncoderMode::MultitaskLstm => {
                enc.syn_head = Some(init.scoped("syn_head", |init| LatentHead::new(init, c.d_model, dz)));
                enc.lstm = Some(init.scoped("lstm", |init| LstmAux::new(init, tree_vocab, dz)));
            }
            EncoderMode::MultitaskVgae => {
                enc.syn_head = Some(init.scoped("syn_head", |init| LatentHead::new(init, c.d_model, dz)));
                enc.vgae = Some(init.scoped("vgae", |init| VgaeAux::new(init, tree_vocab, c.graph_hidden, dz)));
            }
        }
        Ok(enc)
    }

    pub fn needs_graph(&self) -> bool {
        matches!(self.config.mode, EncoderMode::DualGraph | EncoderMode::MultitaskVgae)
    }

    pub fn graph_for(&self, input: &EncoderInput, graph_seed: u64) -> SyntaxGraph {
        tree_to_graph(&input.tree, self.config.graph_hidden, graph_seed)
    }

    /// Encodes on the tape with the given reparameterisation noise.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &EncoderInput,
        graph: Option<&SyntaxGraph>,
        eps_sem: &[f64],
        eps_syn: &[f64],
    ) -> Result<DualVars> {
        let pooled = self.seq.forward(tape, &input.ids)?;
        let sem = self.sem_head.forward(tape, pooled, eps_sem);
        let syn_source: Option<Var> = match self.config.mode {
            EncoderMode::Single => None,
            EncoderMode::DualGraph => {
                let g = graph.ok_or_else(|| Error::Missing("syntax graph".into()))?;
                let enc = self.graph.as_ref().expect("graph encoder");
                Some(enc.forward(tape, g, &input.label_ids)?)
            }
            EncoderMode::Siamese => {
                if input.tree_ids.is_empty() {
                    return Err(Error::Missing("stripped flattened tree".into()));
                }
                Some(self.seq.forward_with(tape, self.tree_emb.expect("tree table"), &input.tree_ids)?)
            }
            EncoderMode::MultitaskLstm | EncoderMode::MultitaskVgae => Some(pooled),
        };
        let syn = syn_source.map(|e| self.syn_head.as_ref().expect("syn head").forward(tape, e, eps_syn));
        Ok(DualVars { sem, syn })
    }

    /// Multi-task syntax loss, if the mode has one.
    pub fn aux_loss(
        &self,
        tape: &mut Tape,
        input: &EncoderInput,
        latents: &DualVars,
        graph: Option<&SyntaxGraph>,
        rng_seed: u64,
    ) -> Result<Option<Var>> {
        let Some(syn) = latents.syn else { return Ok(None) };
        if let Some(lstm) = &self.lstm {
            return lstm.loss(tape, syn.sample, &input.tree_ids).map(Some);
        }
        if let Some(vgae) = &self.vgae {
            let g = graph.ok_or_else(|| Error::Missing("syntax graph".into()))?;
            return Ok(Some(vgae.terms(tape, syn.sample, g, &input.label_ids, rng_seed)?.total));
        }
        Ok(None)
    }
}

/// Encodes one prepared record to plain vectors.
pub fn encode(encoder: &Encoder, store: &ParamStore, input: &EncoderInput, rng_seed: u64) -> Result<DualLatent> {
    let dz = encoder.config.space_dim();
    let eps_sem = latent::standard_normal(dz, rng_seed);
    let eps_syn = latent::standard_normal(dz, rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let graph = encoder.needs_graph().then(|| encoder.graph_for(input, rng_seed));
    let mut tape = Tape::new(store);
    let vars = encoder.forward(&mut tape, input, graph.as_ref(), &eps_sem, &eps_syn)?;
    Ok(vars.read(&tape))
}
