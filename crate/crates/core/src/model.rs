//! Encoder–decoder pair with its vocabularies and parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::graph::CONTENT_LABEL;
use crate::corpus::math::OPERATORS;
use crate::corpus::tree::SyntaxTree;
use crate::corpus::vocab::{BOS, EOS, UNK};
use crate::corpus::{tokenize, tree_to_graph, CorpusRecord, SyntaxGraph, TokenMode, Vocabulary};
use crate::decoder::{decode_teacher_forced, generate_greedy, Decoder, DecoderConfig, LatentInputs};
use crate::encoders::latent::standard_normal;
use crate::encoders::{DualLatent, DualVars, Encoder, EncoderConfig, EncoderInput};
use crate::error::{Error, Result};
use crate::nn::Init;
use crate::params::ParamStore;
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub token_mode: TokenMode,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// One token table for the sequential encoder and the decoder.
    pub share_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            token_mode: TokenMode::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            share_embeddings: true,
        }
    }
}

/// Tree-token vocabulary: brackets, node labels and the content placeholder.
pub fn tree_vocabulary(mode: TokenMode, records: &[CorpusRecord]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for t in ["(", ")", CONTENT_LABEL] {
        v.add(t);
    }
    match mode {
        TokenMode::Math => {
            for t in OPERATORS.iter().chain(&["Symbol", "Integer", "Eq"]) {
                v.add(t);
            }
        }
        TokenMode::Natural => {
            let mut labels: Vec<&str> =
                records.iter().flat_map(|r| r.stripped_flat_tree.iter().map(String::as_str)).collect();
            labels.sort_unstable();
            labels.dedup();
            for l in labels {
                v.add(l);
            }
        }
    }
    v
}

/// Surface vocabulary: the fixed math alphabet, or words seen in `records`.
pub fn surface_vocabulary(mode: TokenMode, records: &[CorpusRecord]) -> Vocabulary {
    match mode {
        TokenMode::Math => Vocabulary::math(),
        TokenMode::Natural => {
            let mut words: Vec<&str> = records.iter().flat_map(|r| r.surface.iter().map(String::as_str)).collect();
            words.sort_unstable();
            words.dedup();
            Vocabulary::from_tokens(words)
        }
    }
}

/// Per-example noise seeds for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSeeds {
    pub eps: u64,
    pub graph: u64,
}

impl NoiseSeeds {
    pub fn new(seed: u64) -> Self {
        Self { eps: mix(seed, 1), graph: mix(seed, 2) }
    }
}

/// SplitMix64 finaliser combining a base seed with a stream index.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tree_vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, tree_vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let encoder = init.scoped("enc", |init| Encoder::new(init, &config.encoder, vocab.len(), tree_vocab.len()))?;
        let dz = config.encoder.space_dim();
        let dz_syn = config.encoder.mode.is_dual().then_some(dz);
        let shared = (config.share_embeddings && config.encoder.d_model == config.decoder.d_model)
            .then_some(encoder.seq.tok_emb);
        let decoder =
            init.scoped("dec", |init| Decoder::new(init, &config.decoder, vocab.len(), dz, dz_syn, shared))?;
        Ok(Self { config, vocab, tree_vocab, store, encoder, decoder })
    }

    /// Rebuilds the architecture and copies parameters by name.
    pub fn with_params(config: ModelConfig, vocab: Vocabulary, tree_vocab: Vocabulary, params: ParamStore) -> Result<Self> {
        let mut m = Self::new(config, vocab, tree_vocab, 0)?;
        if params.len() != m.store.len() {
            return Err(Error::Mismatch(format!("{} stored arrays for {} parameters", params.len(), m.store.len())));
        }
        for id in m.store.ids().collect::<Vec<_>>() {
            let name = m.store.name(id).to_string();
            let src = params.find(&name).ok_or_else(|| Error::Mismatch(format!("parameter {name} missing")))?;
            let value = params.get(src);
            if value.dim() != m.store.get(id).dim() {
                return Err(Error::Mismatch(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.dim(),
                    m.store.get(id).dim()
                )));
            }
            *m.store.get_mut(id) = value.clone();
        }
        Ok(m)
    }

    pub fn space_dim(&self) -> usize {
        self.config.encoder.space_dim()
    }

    pub fn prepare(&self, record: &CorpusRecord) -> Result<EncoderInput> {
        let ids = tokenize(&record.text, &self.vocab, self.config.token_mode)?;
        let mut tree_ids = vec![BOS];
        tree_ids.extend(record.stripped_flat_tree.iter().map(|t| self.tree_vocab.id(t).unwrap_or(UNK)));
        tree_ids.push(EOS);
        let labels = tree_to_graph(&record.tree, 1, 0).node_labels;
        let label_ids = labels.iter().map(|l| self.tree_vocab.id(l).unwrap_or(UNK)).collect();
        Ok(EncoderInput { ids, tree_ids, tree: record.tree.clone(), label_ids })
    }

    /// Graph with seeded content noise, when the encoder consumes one.
    pub fn graph(&self, tree: &SyntaxTree, seed: u64) -> Option<SyntaxGraph> {
        self.encoder.needs_graph().then(|| tree_to_graph(tree, self.config.encoder.graph_hidden, seed))
    }

    /// Encodes on the tape. Returns the latent handles and the graph used.
    pub fn encode_tape(
        &self,
        tape: &mut Tape,
        input: &EncoderInput,
        seeds: NoiseSeeds,
    ) -> Result<(DualVars, Option<SyntaxGraph>)> {
        let dz = self.space_dim();
        let eps_sem = standard_normal(dz, seeds.eps);
        let eps_syn = standard_normal(dz, mix(seeds.eps, 7));
        let graph = self.graph(&input.tree, seeds.graph);
        let vars = self.encoder.forward(tape, input, graph.as_ref(), &eps_sem, &eps_syn)?;
        Ok((vars, graph))
    }

    pub fn encode(&self, input: &EncoderInput, seeds: NoiseSeeds) -> Result<DualLatent> {
        let mut tape = Tape::new(&self.store);
        let (vars, _) = self.encode_tape(&mut tape, input, seeds)?;
        Ok(vars.read(&tape))
    }

    /// Decoder conditioning from tape latents: samples during training, means otherwise.
    pub fn latent_inputs(vars: &DualVars, use_mean: bool) -> LatentInputs {
        let pick = |l: &crate::encoders::LatentVars| if use_mean { l.mu } else { l.sample };
        LatentInputs { sem: Some(pick(&vars.sem)), syn: vars.syn.as_ref().map(pick) }
    }

    /// Posterior means, with each `sample` replaced by its mean.
    pub fn encode_mean(&self, input: &EncoderInput, seeds: NoiseSeeds) -> Result<DualLatent> {
        let mut lat = self.encode(input, seeds)?;
        lat.sem.sample.clone_from(&lat.sem.mu);
        if let Some(s) = lat.syn.as_mut() {
            s.sample.clone_from(&s.mu);
        }
        Ok(lat)
    }

    /// Greedy decoding conditioned on the latents' `sample` fields.
    pub fn generate(&self, latents: &DualLatent) -> Result<Vec<usize>> {
        generate_greedy(&self.decoder, &self.store, latents, self.config.decoder.max_len)
    }

    /// Summed teacher-forced NLL of `input.ids` and the number of scored tokens.
    pub fn sequence_nll(&self, input: &EncoderInput, latents: &DualLatent) -> Result<(f64, usize)> {
        let (_, nll) = decode_teacher_forced(&self.decoder, &self.store, &input.ids, latents)?;
        Ok((nll, input.ids.len() - 1))
    }

    pub fn decode_text(&self, ids: &[usize]) -> String {
        crate::corpus::detokenize(ids, &self.vocab, self.config.token_mode)
    }
}
