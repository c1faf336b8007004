//! Latent injection into self-attention: memory, addition and low-rank fusion.
//!
//! Attention matrices are token-major: `Q`, `K` and `V` have one row per token
//! and one column per feature, so a latent enters as a `1 × d` row.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{multi_head_attention, Init, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QOp {
    None,
    Addition,
    Fusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum KvOp {
    None,
    Memory,
    Addition,
    Fusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LatentSpace {
    Sem,
    Syn,
}

/// Which operator conditions which attention matrices on which latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionScheme {
    pub q_op: QOp,
    pub kv_op: KvOp,
    pub q_latent: LatentSpace,
    pub kv_latent: LatentSpace,
    pub rank: usize,
}

pub const DEFAULT_RANK: usize = 4;

pub const PRESETS: [&str; 6] = ["memory", "addition_Q", "addition_QKV", "fusion_Q", "fusion_QKV", "none"];

impl InjectionScheme {
    fn with(q_op: QOp, kv_op: KvOp) -> Self {
        Self { q_op, kv_op, q_latent: LatentSpace::Syn, kv_latent: LatentSpace::Sem, rank: DEFAULT_RANK }
    }

    /// Single-latent baseline: memory slot on K/V only.
    pub fn memory() -> Self {
        Self { q_latent: LatentSpace::Sem, ..Self::with(QOp::None, KvOp::Memory) }
    }

    pub fn addition_q() -> Self {
        Self::with(QOp::Addition, KvOp::Memory)
    }

    pub fn addition_qkv() -> Self {
        Self::with(QOp::Addition, KvOp::Addition)
    }

    pub fn fusion_q() -> Self {
        Self::with(QOp::Fusion, KvOp::Memory)
    }

    pub fn fusion_qkv() -> Self {
        Self::with(QOp::Fusion, KvOp::Fusion)
    }

    pub fn none() -> Self {
        Self { q_latent: LatentSpace::Sem, ..Self::with(QOp::None, KvOp::None) }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "memory" => Ok(Self::memory()),
            "addition_q" => Ok(Self::addition_q()),
            "addition_qkv" => Ok(Self::addition_qkv()),
            "fusion_q" => Ok(Self::fusion_q()),
            "fusion_qkv" => Ok(Self::fusion_qkv()),
            "none" => Ok(Self::none()),
            _ => Err(Error::Invalid(format!("unknown injection preset {name:?}; expected one of {PRESETS:?}"))),
        }
    }

    /// Preset name if the scheme is one of the presets.
    pub fn preset_name(&self) -> Option<&'static str> {
        PRESETS.into_iter().find(|p| Self::preset(p).is_ok_and(|s| s == *self))
    }

    pub fn uses(&self, space: LatentSpace) -> bool {
        (self.q_op != QOp::None && self.q_latent == space) || (self.kv_op != KvOp::None && self.kv_latent == space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Invalid("fusion rank must be at least 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for InjectionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.preset_name() {
            Some(p) => f.write_str(p),
            None => write!(f, "{:?}/{:?}", self.q_op, self.kv_op),
        }
    }
}

impl FromStr for InjectionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s)
    }
}

/// Memory slot: the latent (already projected to the key width) becomes an
/// extra first row of both `K` and `V`.
pub fn memory_inject(k: &Array2<f64>, v: &Array2<f64>, z: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = k.ncols();
    if v.ncols() != d || z.len() != d || k.nrows() != v.nrows() {
        return Err(Error::Shape(format!("K {:?}, V {:?}, z of {}", k.dim(), v.dim(), z.len())));
    }
    let zr = Array2::from_shape_vec((1, d), z.to_vec()).expect("row");
    let kk = concatenate(Axis(0), &[zr.view(), k.view()]).expect("widths match");
    let vv = concatenate(Axis(0), &[zr.view(), v.view()]).expect("widths match");
    Ok((kk, vv))
}

/// Adds the projected latent to every token row.
pub fn addition_inject(m: &Array2<f64>, z: &[f64]) -> Result<Array2<f64>> {
    if z.len() != m.ncols() {
        return Err(Error::Shape(format!("M {:?} with z of {}", m.dim(), z.len())));
    }
    let zr = ndarray::ArrayView1::from(z);
    Ok(m + &zr)
}

/// Rank-`r` fusion on the tape:
/// `(Σ_i [M, 1] W_m^i) ⊙ (Σ_i [z, 1] W_z^i)`, the second factor broadcast over rows.
pub fn fusion_vars(tape: &mut Tape, m: Var, z: Var, wm: &[Var], wz: &[Var]) -> Var {
    assert_eq!(wm.len(), wz.len(), "one factor pair per rank");
    let rows = tape.shape(m).0;
    let ones_m = tape.constant(Array2::ones((rows, 1)));
    let ma = tape.concat_cols(&[m, ones_m]);
    let one = tape.constant(Array2::ones((1, 1)));
    let za = tape.concat_cols(&[z, one]);
    let mut mb = tape.matmul(ma, wm[0]);
    let mut zb = tape.matmul(za, wz[0]);
    for i in 1..wm.len() {
        let t = tape.matmul(ma, wm[i]);
        mb = tape.add(mb, t);
        let t = tape.matmul(za, wz[i]);
        zb = tape.add(zb, t);
    }
    tape.mul_row(mb, zb)
}

/// Plain-matrix fusion. `wm[i]` is `(d + 1) × d`, `wz[i]` is `(d_z + 1) × d`.
pub fn fusion_inject(m: &Array2<f64>, z: &[f64], wm: &[Array2<f64>], wz: &[Array2<f64>]) -> Result<Array2<f64>> {
    let d = m.ncols();
    if wm.is_empty() || wm.len() != wz.len() {
        return Err(Error::Invalid(format!("rank mismatch: {} vs {} factors", wm.len(), wz.len())));
    }
    for (a, b) in wm.iter().zip(wz) {
        if a.dim() != (d + 1, d) || b.dim() != (z.len() + 1, d) {
            return Err(Error::Shape(format!("factors {:?} / {:?} for M {:?}", a.dim(), b.dim(), m.dim())));
        }
    }
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let mv = tape.constant(m.clone());
    let zv = tape.row(z);
    let wmv: Vec<Var> = wm.iter().map(|w| tape.constant(w.clone())).collect();
    let wzv: Vec<Var> = wz.iter().map(|w| tape.constant(w.clone())).collect();
    let out = fusion_vars(&mut tape, mv, zv, &wmv, &wzv);
    Ok(tape.value(out).clone())
}

/// Fusion factors of one attention matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub wm: Vec<ParamId>,
    pub wz: Vec<ParamId>,
}

impl FusionParams {
    /// Initialised near the identity: the matrix branch sums to `[I; 0]` and
    /// the latent branch to the all-ones row, plus small noise.
    pub fn new(init: &mut Init, d: usize, d_z: usize, rank: usize) -> Self {
        let mut wm = Vec::with_capacity(rank);
        let mut wz = Vec::with_capacity(rank);
        for i in 0..rank {
            let mut m = crate::params::init_normal(init.rng, d + 1, d, 0.01);
            for j in 0..d {
                m[[j, j]] += 1.0 / rank as f64;
            }
            wm.push(init.value(&format!("wm{i}"), m));
            let mut z = crate::params::init_normal(init.rng, d_z + 1, d, 0.05);
            for j in 0..d {
                z[[d_z, j]] += 1.0 / rank as f64;
            }
            wz.push(init.value(&format!("wz{i}"), z));
        }
        Self { wm, wz }
    }

    pub fn apply(&self, tape: &mut Tape, m: Var, z: Var) -> Var {
        let wm: Vec<Var> = self.wm.iter().map(|&w| tape.param(w)).collect();
        let wz: Vec<Var> = self.wz.iter().map(|&w| tape.param(w)).collect();
        fusion_vars(tape, m, z, &wm, &wz)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatrixInjection {
    Addition(Linear),
    Fusion(FusionParams),
}

impl MatrixInjection {
    fn new(init: &mut Init, name: &str, fusion: bool, d: usize, d_z: usize, rank: usize) -> Self {
        if fusion {
            MatrixInjection::Fusion(init.scoped(name, |init| FusionParams::new(init, d, d_z, rank)))
        } else {
            MatrixInjection::Addition(init.linear(&format!("{name}_proj"), d_z, d, false))
        }
    }

    pub fn apply(&self, tape: &mut Tape, m: Var, z: Var) -> Var {
        match self {
            MatrixInjection::Addition(p) => {
                let zp = p.forward(tape, z);
                tape.add_row(m, zp)
            }
            MatrixInjection::Fusion(f) => f.apply(tape, m, z),
        }
    }
}

/// Injection parameters of one decoder layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerInjection {
    pub q: Option<MatrixInjection>,
    pub k: Option<MatrixInjection>,
    pub v: Option<MatrixInjection>,
    /// Projection of the latent into the shared K/V memory slot.
    pub memory: Option<Linear>,
}

impl LayerInjection {
    pub fn new(init: &mut Init, scheme: &InjectionScheme, d: usize, dz_q: usize, dz_kv: usize) -> Self {
        let r = scheme.rank;
        let mut out = LayerInjection::default();
        match scheme.q_op {
            QOp::None => {}
            QOp::Addition => out.q = Some(MatrixInjection::new(init, "q", false, d, dz_q, r)),
            QOp::Fusion => out.q = Some(MatrixInjection::new(init, "q", true, d, dz_q, r)),
        }
        match scheme.kv_op {
            KvOp::None => {}
            KvOp::Memory => out.memory = Some(init.linear("memory", dz_kv, d, false)),
            KvOp::Addition | KvOp::Fusion => {
                let fusion = scheme.kv_op == KvOp::Fusion;
                out.k = Some(MatrixInjection::new(init, "k", fusion, d, dz_kv, r));
                out.v = Some(MatrixInjection::new(init, "v", fusion, d, dz_kv, r));
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_none() && self.k.is_none() && self.v.is_none() && self.memory.is_none()
    }
}

/// Latent rows available to the decoder.
#[derive(Clone, Copy, Debug, Default)]
pub struct LatentInputs {
    pub sem: Option<Var>,
    pub syn: Option<Var>,
}

impl LatentInputs {
    pub fn get(&self, space: LatentSpace) -> Result<Var> {
        match space {
            LatentSpace::Sem => self.sem.ok_or_else(|| Error::Missing("semantic latent".into())),
            LatentSpace::Syn => self.syn.ok_or_else(|| Error::Missing("syntactic latent".into())),
        }
    }
}

/// Applies the scheme to `Q`, `K`, `V` and runs causal multi-head attention.
///
/// Returns the concatenated head outputs and per-head attention weights. With
/// a memory slot the weights have one extra leading column.
#[allow(clippy::too_many_arguments)]
pub fn injected_attention_tape(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    latents: &LatentInputs,
    scheme: &InjectionScheme,
    inj: &LayerInjection,
    n_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let seq = tape.shape(q).0;
    let mut q = q;
    let (mut k, mut v) = (k, v);
    if let Some(op) = &inj.q {
        let z = latents.get(scheme.q_latent)?;
        q = op.apply(tape, q, z);
    }
    if let (Some(opk), Some(opv)) = (&inj.k, &inj.v) {
        let z = latents.get(scheme.kv_latent)?;
        k = opk.apply(tape, k, z);
        v = opv.apply(tape, v, z);
    }
    let memory = if let Some(proj) = &inj.memory {
        let z = latents.get(scheme.kv_latent)?;
        let m = proj.forward(tape, z);
        k = tape.concat_rows(&[m, k]);
        v = tape.concat_rows(&[m, v]);
        true
    } else {
        false
    };
    let mask = crate::nn::causal_mask(seq, memory);
    Ok(multi_head_attention(tape, q, k, v, n_heads, Some(&mask)))
}

/// `Q`, `K`, `V` of one attention layer (token rows).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionState {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

/// Plain-matrix form of [`injected_attention_tape`] with raw latent vectors.
pub fn injected_attention(
    state: &AttentionState,
    sem: Option<&[f64]>,
    syn: Option<&[f64]>,
    scheme: &InjectionScheme,
    inj: &LayerInjection,
    store: &ParamStore,
    n_heads: usize,
) -> Result<Array2<f64>> {
    let mut tape = Tape::new(store);
    let q = tape.constant(state.q.clone());
    let k = tape.constant(state.k.clone());
    let v = tape.constant(state.v.clone());
    let latents = LatentInputs { sem: sem.map(|z| tape.row(z)), syn: syn.map(|z| tape.row(z)) };
    let (out, _) = injected_attention_tape(&mut tape, q, k, v, &latents, scheme, inj, n_heads)?;
    Ok(tape.value(out).clone())
}
