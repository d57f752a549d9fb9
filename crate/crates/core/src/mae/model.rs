//! Parameter layout, positional codes, and the forward pass shared by
//! training, inference, and the decoder.

use crate::datacube::TokenGrid;
use crate::error::{Error, Result};
use crate::mae::{LossScope, MaeConfig, MaskPlan, TOKEN_DIM};
use crate::numerics::{Graph, Rng, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const INIT_TAG: u64 = 0x696e6974; // stream tag for weight initialization

/// Named parameter tensors in a fixed declaration order. The order is
/// the serialization order, so checkpoints are byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter section {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index_of(name)]
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        ParamSet { names, tensors }
    }

    /// Euclidean norm per section, used in training diagnostics.
    pub fn section_norms(&self) -> Vec<(String, f64)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                let norm = t.values().iter().map(|v| v * v).sum::<f64>().sqrt();
                (n.clone(), norm)
            })
            .collect()
    }
}

/// Every section name and shape implied by a config, in order.
pub fn section_specs(cfg: &MaeConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let hidden = cfg.mlp_hidden();
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    specs.push(("embed.weight".into(), vec![TOKEN_DIM, d]));
    specs.push(("embed.bias".into(), vec![d]));
    let mut block = |prefix: String, specs: &mut Vec<(String, Vec<usize>)>| {
        specs.push((format!("{prefix}.ln1.gamma"), vec![d]));
        specs.push((format!("{prefix}.ln1.beta"), vec![d]));
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push((format!("{prefix}.attn.{w}"), vec![d, d]));
            specs.push((format!("{prefix}.attn.{}", w.replace('w', "b")), vec![d]));
        }
        specs.push((format!("{prefix}.ln2.gamma"), vec![d]));
        specs.push((format!("{prefix}.ln2.beta"), vec![d]));
        specs.push((format!("{prefix}.mlp.w1"), vec![d, hidden]));
        specs.push((format!("{prefix}.mlp.b1"), vec![hidden]));
        specs.push((format!("{prefix}.mlp.w2"), vec![hidden, d]));
        specs.push((format!("{prefix}.mlp.b2"), vec![d]));
    };
    for i in 0..cfg.encoder_depth {
        block(format!("enc.{i}"), &mut specs);
    }
    specs.push(("enc.norm.gamma".into(), vec![d]));
    specs.push(("enc.norm.beta".into(), vec![d]));
    specs.push(("mask.token".into(), vec![d]));
    for i in 0..cfg.decoder_depth {
        block(format!("dec.{i}"), &mut specs);
    }
    specs.push(("dec.norm.gamma".into(), vec![d]));
    specs.push(("dec.norm.beta".into(), vec![d]));
    specs.push(("head.weight".into(), vec![d, TOKEN_DIM]));
    specs.push(("head.bias".into(), vec![TOKEN_DIM]));
    specs
}

/// Fresh parameters from the config seed: normal(0, 0.02) weights, zero
/// biases, unit norm gains. Values are f32-rounded so in-memory state
/// matches a checkpoint round trip exactly.
pub fn init_params(cfg: &MaeConfig) -> ParamSet {
    let mut rng = Rng::derived(cfg.seed, &[INIT_TAG]);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape) in section_specs(cfg) {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = if name.ends_with(".gamma") {
            vec![1.0; n]
        } else if name.ends_with(".beta") || name.ends_with("bias") || name.ends_with(".b1")
            || name.ends_with(".b2") || name.ends_with(".bq") || name.ends_with(".bk")
            || name.ends_with(".bv") || name.ends_with(".bo")
        {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.normal(0.0, INIT_STD)).collect()
        };
        let mut t = Tensor::new(shape, values).expect("spec shape");
        t.round_to_f32();
        names.push(name);
        tensors.push(t);
    }
    ParamSet { names, tensors }
}

/// Splits the embedding width into three even per-axis parts
/// (row block, column block, spectral group), as balanced as possible.
pub fn axis_dims(d: usize) -> [usize; 3] {
    debug_assert!(d >= 6 && d % 2 == 0);
    let base = (d / 3) & !1; // round down to even
    let mut parts = [base; 3];
    let mut rest = d - 3 * base;
    let mut i = 0;
    while rest >= 2 {
        parts[i] += 2;
        rest -= 2;
        i = (i + 1) % 3;
    }
    parts
}

fn sincos_into(pos: f64, part: usize, out: &mut Vec<f64>) {
    for i in 0..part / 2 {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / part as f64);
        out.push((pos * freq).sin());
        out.push((pos * freq).cos());
    }
}

/// Positional code for one (row_block, col_block, group) triple.
pub fn pos_code(row_block: usize, col_block: usize, group: usize, d: usize) -> Vec<f64> {
    let parts = axis_dims(d);
    let mut out = Vec::with_capacity(d);
    sincos_into(row_block as f64, parts[0], &mut out);
    sincos_into(col_block as f64, parts[1], &mut out);
    sincos_into(group as f64, parts[2], &mut out);
    out
}

/// Positional codes for every token of a grid, in enumeration order.
pub fn pos_matrix(
    spatial_rows: usize,
    spatial_cols: usize,
    spectral_groups: usize,
    d: usize,
) -> Tensor {
    let n = spatial_rows * spatial_cols * spectral_groups;
    let mut values = Vec::with_capacity(n * d);
    for g in 0..spectral_groups {
        for r in 0..spatial_rows {
            for c in 0..spatial_cols {
                values.extend(pos_code(r, c, g, d));
            }
        }
    }
    Tensor::new(vec![n, d], values).expect("pos shape")
}

/// Positional codes for a grid, optionally restricted to a row subset.
pub fn pos_matrix_subset(grid: &TokenGrid, d: usize, rows: Option<&[usize]>) -> Tensor {
    let full = pos_matrix(
        grid.spatial_rows(),
        grid.spatial_cols(),
        grid.spectral_groups(),
        d,
    );
    match rows {
        None => full,
        Some(idx) => {
            let mut values = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                values.extend_from_slice(&full.values()[i * d..(i + 1) * d]);
            }
            Tensor::new(vec![idx.len(), d], values).expect("subset shape")
        }
    }
}

/// Token values as an [n, 192] tensor, optionally restricted to a subset
/// of token indices.
pub fn token_tensor(grid: &TokenGrid, rows: Option<&[usize]>) -> Tensor {
    match rows {
        None => Tensor::from_f32(
            vec![grid.token_count(), TOKEN_DIM],
            grid.tokens_flat(),
        )
        .expect("grid shape"),
        Some(idx) => {
            let mut values = Vec::with_capacity(idx.len() * TOKEN_DIM);
            for &i in idx {
                values.extend(grid.token(i).iter().map(|&v| v as f64));
            }
            Tensor::new(vec![idx.len(), TOKEN_DIM], values).expect("subset shape")
        }
    }
}

/// One forward construction over a graph. `train` decides whether the
/// parameters become gradient leaves or constants.
pub struct Forward<'a> {
    pub graph: Graph,
    pub param_vars: Vec<Var>,
    params: &'a ParamSet,
    cfg: &'a MaeConfig,
}

impl<'a> Forward<'a> {
    pub fn new(params: &'a ParamSet, cfg: &'a MaeConfig, train: bool) -> Self {
        let mut graph = Graph::new();
        let param_vars = params
            .tensors()
            .iter()
            .map(|t| {
                if train {
                    graph.param(t.clone())
                } else {
                    graph.input(t.clone())
                }
            })
            .collect();
        Forward {
            graph,
            param_vars,
            params,
            cfg,
        }
    }

    fn p(&self, name: &str) -> Var {
        self.param_vars[self.params.index_of(name)]
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var> {
        let wv = self.p(w);
        let bv = self.p(b);
        let h = self.graph.matmul(x, wv)?;
        self.graph.add_row(h, bv)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"));
        let beta = self.p(&format!("{prefix}.beta"));
        self.graph.layer_norm(x, gamma, beta, LN_EPS)
    }

    /// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
    fn block(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.norm(x, &format!("{prefix}.ln1"))?;
        let q = self.linear(h, &format!("{prefix}.attn.wq"), &format!("{prefix}.attn.bq"))?;
        let k = self.linear(h, &format!("{prefix}.attn.wk"), &format!("{prefix}.attn.bk"))?;
        let v = self.linear(h, &format!("{prefix}.attn.wv"), &format!("{prefix}.attn.bv"))?;
        let a = self.graph.attention(q, k, v, self.cfg.heads)?;
        let o = self.linear(a, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"))?;
        let x = self.graph.add(x, o)?;

        let h = self.norm(x, &format!("{prefix}.ln2"))?;
        let m = self.linear(h, &format!("{prefix}.mlp.w1"), &format!("{prefix}.mlp.b1"))?;
        let m = self.graph.gelu(m);
        let m = self.linear(m, &format!("{prefix}.mlp.w2"), &format!("{prefix}.mlp.b2"))?;
        self.graph.add(x, m)
    }

    /// Token rows + matching positional rows → encoder output.
    pub fn encode(&mut self, tokens: &Tensor, pos: &Tensor) -> Result<Var> {
        let (n, width) = tokens.dims2()?;
        if width != TOKEN_DIM {
            return Err(Error::Shape(format!(
                "token width {width} does not match the {TOKEN_DIM}-value token layout"
            )));
        }
        if pos.shape() != [n, self.cfg.embed_dim] {
            return Err(Error::Shape(format!(
                "positional rows {:?} do not match [{n}, {}]",
                pos.shape(),
                self.cfg.embed_dim
            )));
        }
        let tok = self.graph.input(tokens.clone());
        let x = self.linear(tok, "embed.weight", "embed.bias")?;
        let pos_in = self.graph.input(pos.clone());
        let mut x = self.graph.add(x, pos_in)?;
        for i in 0..self.cfg.encoder_depth {
            x = self.block(x, &format!("enc.{i}"))?;
        }
        self.norm(x, "enc.norm")
    }

    /// Visible embeddings + learned mask token at masked positions, all
    /// with positional codes, through the decoder to token space.
    pub fn decode(&mut self, encoded: Var, mask: &MaskPlan, pos_full: &Tensor) -> Result<Var> {
        let n = mask.total();
        let visible = self.graph.scatter_rows(encoded, mask.visible(), n)?;
        let mut x = if mask.masked().is_empty() {
            visible
        } else {
            let token = self.p("mask.token");
            let tiled = self.graph.repeat_row(token, mask.masked().len())?;
            let masked = self.graph.scatter_rows(tiled, mask.masked(), n)?;
            self.graph.add(visible, masked)?
        };
        let pos_in = self.graph.input(pos_full.clone());
        x = self.graph.add(x, pos_in)?;
        for i in 0..self.cfg.decoder_depth {
            x = self.block(x, &format!("dec.{i}"))?;
        }
        let x = self.norm(x, "dec.norm")?;
        self.linear(x, "head.weight", "head.bias")
    }

    /// Mean squared error between reconstruction and target over the
    /// tokens selected by the loss scope.
    pub fn reconstruction_loss(
        &mut self,
        recon: Var,
        target: &Tensor,
        mask: &MaskPlan,
        scope: LossScope,
    ) -> Result<Var> {
        let tgt = self.graph.input(target.clone());
        let diff = self.graph.sub(recon, tgt)?;
        let sq = self.graph.mul(diff, diff)?;
        let scoped = match scope {
            LossScope::AllTokens => sq,
            LossScope::MaskedOnly => {
                if mask.masked().is_empty() {
                    return Err(Error::Contract(
                        "masked_only loss with an empty mask".into(),
                    ));
                }
                self.graph.gather_rows(sq, mask.masked())?
            }
        };
        self.graph.mean_all(scoped)
    }
}
