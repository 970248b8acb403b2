use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const LN_EPS: f64 = 1e-5;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Adds an `input x output` weight (LeCun-normal, or zeros) and a zero
    /// bias; returns the weight's index.
    fn linear<R: Rng + ?Sized>(&mut self, name: &str, input: usize, output: usize, zero: bool, rng: &mut R) -> usize {
        let scale = (1.0 / input as f64).sqrt();
        let w: Vec<f64> = (0..input * output)
            .map(|_| {
                if zero {
                    0.0
                } else {
                    scale * Distribution::<f64>::sample(&StandardNormal, rng)
                }
            })
            .collect();
        let idx = self.tensors.len();
        self.names.push(format!("{name}.w"));
        self.tensors.push(Tensor::matrix(input, output, w).expect("weight shape"));
        self.names.push(format!("{name}.b"));
        self.tensors.push(Tensor::zeros(&[output]));
        idx
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

fn affine(tape: &mut Tape, p: &[Var], idx: usize, x: Var) -> Result<Var> {
    tape.affine(x, p[idx], p[idx + 1])
}

/// Sinusoidal embedding of integer noise levels, one row per level.
pub fn timestep_embedding(k: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(k.len() * dim);
    for &level in k {
        let t = level as f64;
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let (s, c): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((t * f).sin(), (t * f).cos())).unzip();
        data.extend(s);
        data.extend(c);
    }
    Tensor::matrix(k.len(), dim, data).expect("embedding shape")
}

/// Residual MLP conditioned on a noise-level embedding:
///
/// ```text
/// h = W_in [z | e]
/// h += W2 silu(W1 silu(LN h) + W_e e)      (per block)
/// out = W_out silu(LN h)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub input: usize,
    pub output: usize,
    pub width: usize,
    pub blocks: usize,
    pub temb_dim: usize,
    pub params: ParamSet,
}

impl ResidualNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        width: usize,
        blocks: usize,
        temb_dim: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        params.linear(&format!("{name}.in"), input + temb_dim, width, false, rng);
        for b in 0..blocks {
            params.linear(&format!("{name}.block{b}.fc1"), width, width, false, rng);
            params.linear(&format!("{name}.block{b}.temb"), temb_dim, width, false, rng);
            params.linear(&format!("{name}.block{b}.fc2"), width, width, false, rng);
        }
        params.linear(&format!("{name}.out"), width, output, zero_out, rng);
        ResidualNet {
            input,
            output,
            width,
            blocks,
            temb_dim,
            params,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], z: Var, temb: Var) -> Result<Var> {
        let zin = tape.concat_cols(&[z, temb])?;
        let mut h = affine(tape, p, 0, zin)?;
        for b in 0..self.blocks {
            let base = 2 + 6 * b;
            let u = tape.layer_norm(h, LN_EPS)?;
            let u = tape.silu(u);
            let u = affine(tape, p, base, u)?;
            let e = affine(tape, p, base + 2, temb)?;
            let u = tape.add(u, e)?;
            let u = tape.silu(u);
            let u = affine(tape, p, base + 4, u)?;
            h = tape.add(h, u)?;
        }
        let o = tape.layer_norm(h, LN_EPS)?;
        let o = tape.silu(o);
        affine(tape, p, 2 + 6 * self.blocks, o)
    }
}

/// `input -> width -> width -> 1` with SiLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDynamicsNet {
    pub input: usize,
    pub width: usize,
    pub params: ParamSet,
}

impl InverseDynamicsNet {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, width: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        params.linear(&format!("{name}.fc1"), input, width, false, rng);
        params.linear(&format!("{name}.fc2"), width, width, false, rng);
        params.linear(&format!("{name}.out"), width, 1, false, rng);
        InverseDynamicsNet { input, width, params }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let h = affine(tape, p, 0, x)?;
        let h = tape.silu(h);
        let h = affine(tape, p, 2, h)?;
        let h = tape.silu(h);
        affine(tape, p, 4, h)
    }
}
