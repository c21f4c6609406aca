//! Layers built from tape primitives: MLPs and a bi-directional LSTM.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stack of affine layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    name: String,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers weights `<name>.w<i>` / `<name>.b<i>` for widths
    /// `dims[0] -> dims[1] -> ... -> dims[last]`, uniform in ±1/sqrt(fan_in).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Usage(format!(
                "mlp {name:?} needs at least one layer"
            )));
        }
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w =
                store.insert_uniform(&format!("{name}.w{i}"), &[fan_out, fan_in], bound, rng)?;
            let b = store.insert_uniform(&format!("{name}.b{i}"), &[fan_out], bound, rng)?;
            layers.push((w, b));
        }
        Ok(Mlp {
            name: name.to_string(),
            layers,
        })
    }

    /// Wraps already-registered layer parameters.
    pub fn from_params(name: &str, layers: Vec<(ParamId, ParamId)>) -> Self {
        Mlp {
            name: name.to_string(),
            layers,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let z = tape.matvec(wv, h).map_err(|e| self.layer_error(i, e))?;
            h = tape.add(z, bv).map_err(|e| self.layer_error(i, e))?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    fn layer_error(&self, layer: usize, e: Error) -> Error {
        match e {
            Error::Dimension { detail, .. } => {
                Error::dim(format!("{} layer {layer}", self.name), detail)
            }
            other => other,
        }
    }
}

/// Applies an MLP to `x`: `(linear, ReLU)` pairs followed by a final linear layer.
pub fn mlp_apply(tape: &mut Tape, store: &ParamStore, mlp: &Mlp, x: Var) -> Result<Var> {
    mlp.apply(tape, store, x)
}

/// One LSTM direction.
///
/// Gate layout inside the stacked `[4H]` pre-activation is `[input, forget,
/// cell, output]`. All weights and biases start uniform in ±1/sqrt(H).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmDirection {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    hidden: usize,
}

impl LstmDirection {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let k = 1.0 / (hidden as f64).sqrt();
        Ok(LstmDirection {
            w_ih: store.insert_uniform(&format!("{name}.w_ih"), &[4 * hidden, input], k, rng)?,
            w_hh: store.insert_uniform(&format!("{name}.w_hh"), &[4 * hidden, hidden], k, rng)?,
            bias: store.insert_uniform(&format!("{name}.bias"), &[4 * hidden], k, rng)?,
            hidden,
        })
    }

    /// Hidden states for `xs` visited in the given order.
    fn run(&self, tape: &mut Tape, store: &ParamStore, xs: &[Var]) -> Result<Vec<Var>> {
        let h_dim = self.hidden;
        let w_ih = tape.param(store, self.w_ih);
        let w_hh = tape.param(store, self.w_hh);
        let bias = tape.param(store, self.bias);
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let zx = tape
                .matvec(w_ih, x)
                .map_err(|e| rename(e, "bilstm input"))?;
            let mut z = tape.add(zx, bias)?;
            if let Some(hp) = h {
                let zh = tape.matvec(w_hh, hp)?;
                z = tape.add(z, zh)?;
            }
            let i_g = tape.slice(z, 0, h_dim)?;
            let f_g = tape.slice(z, h_dim, h_dim)?;
            let g_g = tape.slice(z, 2 * h_dim, h_dim)?;
            let o_g = tape.slice(z, 3 * h_dim, h_dim)?;
            let i_g = tape.sigmoid(i_g);
            let o_g = tape.sigmoid(o_g);
            let g_g = tape.tanh(g_g);
            let mut c_new = tape.mul(i_g, g_g)?;
            if let Some(cp) = c {
                let f_g = tape.sigmoid(f_g);
                let keep = tape.mul(f_g, cp)?;
                c_new = tape.add(c_new, keep)?;
            }
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o_g, tc)?;
            h = Some(h_new);
            c = Some(c_new);
            out.push(h_new);
        }
        Ok(out)
    }
}

fn rename(e: Error, ctx: &str) -> Error {
    match e {
        Error::Dimension { detail, .. } => Error::dim(ctx, detail),
        other => other,
    }
}

/// Bi-directional LSTM encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    forward: LstmDirection,
    backward: LstmDirection,
}

/// Per-token contexts and the phrase summary produced by [`BiLstm::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub contexts: Vec<Var>,
    pub summary: Var,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(BiLstm {
            forward: LstmDirection::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            backward: LstmDirection::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// `contexts[t] = [fwd_t, bwd_t]`; `summary = [fwd_last, bwd_last]`, where
    /// the backward direction's last state is the one at position 0.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, xs: &[Var]) -> Result<Encoded> {
        if xs.is_empty() {
            return Err(Error::Usage("bilstm_encode on an empty sequence".into()));
        }
        let fwd = self.forward.run(tape, store, xs)?;
        let rev: Vec<Var> = xs.iter().rev().copied().collect();
        let mut bwd = self.backward.run(tape, store, &rev)?;
        bwd.reverse();
        let contexts = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| tape.concat(&[*f, *b]))
            .collect::<Result<Vec<_>>>()?;
        let summary = tape.concat(&[*fwd.last().expect("nonempty"), bwd[0]])?;
        Ok(Encoded { contexts, summary })
    }
}

/// Convenience wrapper matching the encoder's functional signature.
pub fn bilstm_encode(
    tape: &mut Tape,
    store: &ParamStore,
    lstm: &BiLstm,
    embeddings: &[Var],
) -> Result<Encoded> {
    lstm.encode(tape, store, embeddings)
}

/// Softmax-weighted sum of `items` with logits `w · contexts[t]`.
pub fn attention_pool(tape: &mut Tape, contexts: &[Var], items: &[Var], w: Var) -> Result<Var> {
    if contexts.len() != items.len() {
        return Err(Error::dim(
            "word_attention",
            format!("{} contexts for {} embeddings", contexts.len(), items.len()),
        ));
    }
    if contexts.is_empty() {
        return Err(Error::Usage("word attention over an empty phrase".into()));
    }
    let ctx = tape.stack_rows(contexts)?;
    let logits = tape.matvec(ctx, w)?;
    let alpha = tape.softmax(logits)?;
    let f = tape.stack_rows(items)?;
    tape.mat_t_vec(f, alpha)
}

/// Copies a plain tensor onto the tape; helper for tests and feature inputs.
pub fn input(tape: &mut Tape, t: Tensor) -> Var {
    tape.constant(t)
}
