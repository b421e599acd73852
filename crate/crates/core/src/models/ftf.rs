use serde::{Deserialize, Serialize};

use super::flstm::columns;
use super::{weight, Init, ModelError, Result, Slot};
use crate::features::{GAZE_COLS, LANE_COLS, NUM_CLASSES, OBJECT_COLS, SEQ_LEN};
use crate::numeric::{
    layer_norm, layer_norm_backward, linear, linear_backward, relu, relu_backward, self_attention,
    self_attention_backward, softmax, softmax_backward, AttentionCache, AttentionParams, Grads, LayerNormCache, Params,
    Tensor,
};

/// Per-modality MLP projections with positional encodings, one
/// self-attention encoder block, and an MLP head over the flattened tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FTfConfig {
    pub gaze_latent: usize,
    pub object_latent: usize,
    pub lane_latent: usize,
    pub n_heads: usize,
    /// Inner width of the encoder's feedforward module.
    pub ff_hidden: usize,
    pub head_hidden: usize,
    pub n_classes: usize,
    pub seq_len: usize,
    pub positional_encoding: bool,
    /// Adds a bias-free linear layer after each modality MLP.
    pub extra_projection: bool,
}

impl Default for FTfConfig {
    fn default() -> Self {
        Self {
            gaze_latent: 32,
            object_latent: 16,
            lane_latent: 16,
            n_heads: 4,
            ff_hidden: 256,
            head_hidden: 256,
            n_classes: NUM_CLASSES,
            seq_len: SEQ_LEN,
            positional_encoding: true,
            extra_projection: false,
        }
    }
}

const ATTN: [&str; 8] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];

impl FTfConfig {
    pub fn token_dim(&self) -> usize {
        self.gaze_latent + self.object_latent + self.lane_latent
    }

    pub fn flatten_width(&self) -> usize {
        self.seq_len * self.token_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.gaze_latent,
            self.object_latent,
            self.lane_latent,
            self.n_heads,
            self.ff_hidden,
            self.head_hidden,
            self.seq_len,
        ];
        if dims.contains(&0) {
            return Err(ModelError::Config(format!(
                "f-tf dimensions must be positive: {self:?}"
            )));
        }
        if !self.token_dim().is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "{} heads do not divide token width {}",
                self.n_heads,
                self.token_dim()
            )));
        }
        if self.n_classes != NUM_CLASSES {
            return Err(ModelError::Config(format!("n_classes must be {NUM_CLASSES}")));
        }
        Ok(())
    }

    fn modalities(&self) -> [(&'static str, std::ops::Range<usize>, usize); 3] {
        [
            ("ftf.gaze_mlp", GAZE_COLS, self.gaze_latent),
            ("ftf.object_mlp", OBJECT_COLS, self.object_latent),
            ("ftf.lane_mlp", LANE_COLS, self.lane_latent),
        ]
    }

    pub(crate) fn slots(&self) -> Vec<Slot> {
        let d = self.token_dim();
        let mut out = Vec::new();
        for (name, cols, latent) in self.modalities() {
            out.extend(weight(&format!("{name}.fc1"), latent, cols.len()));
            out.extend(weight(&format!("{name}.fc2"), latent, latent));
            if self.extra_projection {
                out.push(Slot {
                    path: format!("{name}.proj.w"),
                    shape: vec![latent, latent],
                    init: Init::Uniform(latent),
                });
            }
        }
        for pair in ATTN.chunks(2) {
            let [w, b] = weight("ftf.attn.x", d, d);
            out.push(Slot {
                path: format!("ftf.attn.{}", pair[0]),
                ..w
            });
            out.push(Slot {
                path: format!("ftf.attn.{}", pair[1]),
                ..b
            });
        }
        for ln in ["ftf.ln1", "ftf.ln2"] {
            out.push(Slot {
                path: format!("{ln}.gamma"),
                shape: vec![d],
                init: Init::Ones,
            });
            out.push(Slot {
                path: format!("{ln}.beta"),
                shape: vec![d],
                init: Init::Zeros,
            });
        }
        out.extend(weight("ftf.ff.fc1", self.ff_hidden, d));
        out.extend(weight("ftf.ff.fc2", d, self.ff_hidden));
        out.extend(weight("ftf.head.fc1", self.head_hidden, self.flatten_width()));
        out.extend(weight("ftf.head.fc2", self.n_classes, self.head_hidden));
        out
    }
}

/// Interleaved sinusoidal encoding, `[seq_len, width]`, base 10000.
pub fn positional_encoding(seq_len: usize, width: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[seq_len, width]);
    for pos in 0..seq_len {
        for j in 0..width {
            let pair = (j / 2) as f64 * 2.0;
            let angle = pos as f64 / 10000f64.powf(pair / width as f64);
            pe.set2(pos, j, if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

fn attn_params(params: &Params) -> Result<AttentionParams<'_>> {
    let g = |k: &str| params.get(&format!("ftf.attn.{k}"));
    Ok(AttentionParams {
        wq: g("wq")?,
        bq: g("bq")?,
        wk: g("wk")?,
        bk: g("bk")?,
        wv: g("wv")?,
        bv: g("bv")?,
        wo: g("wo")?,
        bo: g("bo")?,
    })
}

fn lin(params: &Params, x: &Tensor, name: &str) -> Result<Tensor> {
    Ok(linear(
        x,
        params.get(&format!("{name}.w"))?,
        params.get(&format!("{name}.b"))?,
    )?)
}

struct ModalityCache {
    x: Tensor,
    h: Tensor,
    a: Tensor,
    e: Tensor,
}

pub(crate) struct FTfCache {
    modal: Vec<ModalityCache>,
    attn: AttentionCache,
    ln1: LayerNormCache,
    n1: Tensor,
    f1: Tensor,
    fa: Tensor,
    ln2: LayerNormCache,
    flat: Tensor,
    hz: Tensor,
    ha: Tensor,
    p: Tensor,
}

struct Encoded {
    n2: Tensor,
    modal: Vec<ModalityCache>,
    attn: AttentionCache,
    ln1: LayerNormCache,
    n1: Tensor,
    f1: Tensor,
    fa: Tensor,
    ln2: LayerNormCache,
}

fn encode(cfg: &FTfConfig, params: &Params, x: &Tensor) -> Result<Encoded> {
    let (batch, steps) = (x.shape()[0], x.shape()[1]);
    let rows = batch * steps;
    let d = cfg.token_dim();
    let mut tokens = Tensor::zeros(&[rows, d]);
    let mut modal = Vec::with_capacity(3);
    let mut offset = 0;
    for (name, cols, latent) in cfg.modalities() {
        let xm = columns(x, cols);
        let h = lin(params, &xm, &format!("{name}.fc1"))?;
        let a = relu(&h);
        let e = lin(params, &a, &format!("{name}.fc2"))?;
        let mut out = if cfg.extra_projection {
            let w = params.get(&format!("{name}.proj.w"))?;
            linear(&e, w, &Tensor::zeros(&[latent]))?
        } else {
            e.clone()
        };
        if cfg.positional_encoding {
            let pe = positional_encoding(steps, latent);
            for r in 0..rows {
                for (o, p) in out.row_mut(r).iter_mut().zip(pe.row(r % steps)) {
                    *o += p;
                }
            }
        }
        for r in 0..rows {
            tokens.row_mut(r)[offset..offset + latent].copy_from_slice(out.row(r));
        }
        offset += latent;
        modal.push(ModalityCache { x: xm, h, a, e });
    }
    let (att, attn) = self_attention(&tokens, steps, cfg.n_heads, attn_params(params)?)?;
    let r1 = tokens.add(&att)?;
    let (n1, ln1) = layer_norm(&r1, params.get("ftf.ln1.gamma")?, params.get("ftf.ln1.beta")?)?;
    let f1 = lin(params, &n1, "ftf.ff.fc1")?;
    let fa = relu(&f1);
    let f2 = lin(params, &fa, "ftf.ff.fc2")?;
    let r2 = n1.add(&f2)?;
    let (n2, ln2) = layer_norm(&r2, params.get("ftf.ln2.gamma")?, params.get("ftf.ln2.beta")?)?;
    Ok(Encoded {
        n2,
        modal,
        attn,
        ln1,
        n1,
        f1,
        fa,
        ln2,
    })
}

/// Encoder output tokens `[B*T, 64]` before flattening.
pub fn ftf_encode(cfg: &FTfConfig, params: &Params, x: &Tensor) -> Result<Tensor> {
    Ok(encode(cfg, params, x)?.n2)
}

pub(crate) fn forward(cfg: &FTfConfig, params: &Params, x: &Tensor) -> Result<(Tensor, FTfCache)> {
    let batch = x.shape()[0];
    let enc = encode(cfg, params, x)?;
    let width = cfg.flatten_width();
    debug_assert_eq!(enc.n2.len(), batch * width);
    let flat = enc.n2.reshape(vec![batch, width])?;
    let hz = lin(params, &flat, "ftf.head.fc1")?;
    let ha = relu(&hz);
    let logits = lin(params, &ha, "ftf.head.fc2")?;
    let p = softmax(&logits);
    Ok((
        p.clone(),
        FTfCache {
            modal: enc.modal,
            attn: enc.attn,
            ln1: enc.ln1,
            n1: enc.n1,
            f1: enc.f1,
            fa: enc.fa,
            ln2: enc.ln2,
            flat,
            hz,
            ha,
            p,
        },
    ))
}

fn add_linear(grads: &mut Grads, name: &str, dw: &Tensor, db: &Tensor) -> Result<()> {
    grads.accumulate(&format!("{name}.w"), dw)?;
    grads.accumulate(&format!("{name}.b"), db)?;
    Ok(())
}

pub(crate) fn backward(cfg: &FTfConfig, params: &Params, c: &FTfCache, dp: &Tensor) -> Result<Grads> {
    let mut grads = Grads::zeros_like(params);
    let w = |name: &str| params.get(&format!("{name}.w"));

    let dlogits = softmax_backward(&c.p, dp)?;
    let g = linear_backward(&c.ha, w("ftf.head.fc2")?, &dlogits)?;
    add_linear(&mut grads, "ftf.head.fc2", &g.dw, &g.db)?;
    let dhz = relu_backward(&c.hz, &g.dx)?;
    let g = linear_backward(&c.flat, w("ftf.head.fc1")?, &dhz)?;
    add_linear(&mut grads, "ftf.head.fc1", &g.dw, &g.db)?;

    let d = cfg.token_dim();
    let rows = c.flat.len() / d;
    let dn2 = g.dx.reshape(vec![rows, d])?;
    let (dr2, dg, db) = layer_norm_backward(&c.ln2, params.get("ftf.ln2.gamma")?, &dn2)?;
    grads.accumulate("ftf.ln2.gamma", &dg)?;
    grads.accumulate("ftf.ln2.beta", &db)?;

    let g = linear_backward(&c.fa, w("ftf.ff.fc2")?, &dr2)?;
    add_linear(&mut grads, "ftf.ff.fc2", &g.dw, &g.db)?;
    let df1 = relu_backward(&c.f1, &g.dx)?;
    let g = linear_backward(&c.n1, w("ftf.ff.fc1")?, &df1)?;
    add_linear(&mut grads, "ftf.ff.fc1", &g.dw, &g.db)?;
    let mut dn1 = dr2;
    dn1.add_assign(&g.dx)?;

    let (dr1, dg, db) = layer_norm_backward(&c.ln1, params.get("ftf.ln1.gamma")?, &dn1)?;
    grads.accumulate("ftf.ln1.gamma", &dg)?;
    grads.accumulate("ftf.ln1.beta", &db)?;
    let ag = self_attention_backward(attn_params(params)?, &c.attn, &dr1)?;
    for (k, t) in ATTN
        .iter()
        .zip([&ag.dwq, &ag.dbq, &ag.dwk, &ag.dbk, &ag.dwv, &ag.dbv, &ag.dwo, &ag.dbo])
    {
        grads.accumulate(&format!("ftf.attn.{k}"), t)?;
    }
    let mut dtokens = dr1;
    dtokens.add_assign(&ag.dx)?;

    let mut offset = 0;
    for ((name, _, latent), m) in cfg.modalities().into_iter().zip(&c.modal) {
        let mut dout = Tensor::zeros(&[rows, latent]);
        for r in 0..rows {
            dout.row_mut(r)
                .copy_from_slice(&dtokens.row(r)[offset..offset + latent]);
        }
        offset += latent;
        let de = if cfg.extra_projection {
            let pw = params.get(&format!("{name}.proj.w"))?;
            let g = linear_backward(&m.e, pw, &dout)?;
            grads.accumulate(&format!("{name}.proj.w"), &g.dw)?;
            g.dx
        } else {
            dout
        };
        let g = linear_backward(&m.a, w(&format!("{name}.fc2"))?, &de)?;
        add_linear(&mut grads, &format!("{name}.fc2"), &g.dw, &g.db)?;
        let dh = relu_backward(&m.h, &g.dx)?;
        let g = linear_backward(&m.x, w(&format!("{name}.fc1"))?, &dh)?;
        add_linear(&mut grads, &format!("{name}.fc1"), &g.dw, &g.db)?;
    }
    Ok(grads)
}
