//! Dual-branch scorer: a linear image encoder fused with a rotation
//! encoding, feeding two ReLU heads whose outputs are log-weights for the
//! SDF and feature measures. Backpropagation is written out by hand.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::AddAssign;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::encoding::{EncodingKind, DEFAULT_FREQUENCIES};
use crate::error::{Error, Result};
use crate::experts::{
    gkl, normalize_posterior, transfer_rotation, uniform_sample, Experts, ModeDraw, ModePool, Posterior,
    SamplingCounts, WEIGHT_FLOOR,
};
use crate::grid::SO3Grid;
use crate::io::{put_f32s, Reader};
use crate::rotation::{geodesic_distance, Rotation};
use crate::view::{render_view, Light};

pub const EMBED_DIM: usize = 64;
pub const HIDDEN_DIM: usize = 256;
/// Linear layers per head, the last one mapping to a scalar.
pub const HEAD_LAYERS: usize = 4;
/// Log-weights are clamped to `[-SCORE_CLAMP, SCORE_CLAMP]` in the loss.
pub const SCORE_CLAMP: f64 = 30.0;

const CHECKPOINT_MAGIC: &[u8; 4] = b"ALGN";
const CHECKPOINT_VERSION: u32 = 1;
const INFER_CHUNK: usize = 2048;

/// Element type of the network tensors.
pub trait Scalar: Float + LinalgScalar + AddAssign {}

impl<T: Float + LinalgScalar + AddAssign> Scalar for T {}

/// Dense layer `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { w: Array2::zeros((output, input)), b: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Rows of `x` are samples.
    fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    fn cast<U: Scalar>(&self) -> Linear<U> {
        let f = |v: &T| U::from(*v).unwrap();
        Linear { w: self.w.map(f), b: self.b.map(f) }
    }
}

impl Linear<f32> {
    /// He initialization: weights from `N(0, 2 / fan_in)`, zero bias.
    pub fn he<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / input as f64).sqrt()).unwrap();
        let w = Array2::from_shape_fn((output, input), |_| normal.sample(rng) as f32);
        Linear { w, b: Array1::zeros(output) }
    }
}

fn relu<T: Float>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// All trainable tensors. Also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub encoder: Linear<T>,
    pub fuse_img: Linear<T>,
    pub fuse_rot: Linear<T>,
    pub head_sdf: Vec<Linear<T>>,
    pub head_feat: Vec<Linear<T>>,
}

/// Cached activations of one image against a batch of rotations.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    pub image: Array1<T>,
    pub encodings: Array2<T>,
    pub embed: Array1<T>,
    pub fused: Array2<T>,
    /// Hidden activations after each ReLU of the two heads.
    pub hidden_sdf: Vec<Array2<T>>,
    pub hidden_feat: Vec<Array2<T>>,
    pub s_sdf: Array1<T>,
    pub s_feat: Array1<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(pixels: usize, enc_dim: usize) -> Self {
        let head = || {
            let mut layers: Vec<Linear<T>> = (0..HEAD_LAYERS - 1).map(|_| Linear::zeros(HIDDEN_DIM, HIDDEN_DIM)).collect();
            layers.push(Linear::zeros(HIDDEN_DIM, 1));
            layers
        };
        Params {
            encoder: Linear::zeros(pixels, EMBED_DIM),
            fuse_img: Linear::zeros(EMBED_DIM, HIDDEN_DIM),
            fuse_rot: Linear::zeros(enc_dim, HIDDEN_DIM),
            head_sdf: head(),
            head_feat: head(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.encoder.input_dim(), self.fuse_rot.input_dim())
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            encoder: self.encoder.cast(),
            fuse_img: self.fuse_img.cast(),
            fuse_rot: self.fuse_rot.cast(),
            head_sdf: self.head_sdf.iter().map(Linear::cast).collect(),
            head_feat: self.head_feat.iter().map(Linear::cast).collect(),
        }
    }

    /// Layers in checkpoint order.
    pub fn layers(&self) -> Vec<&Linear<T>> {
        let mut v = vec![&self.encoder, &self.fuse_img, &self.fuse_rot];
        v.extend(self.head_sdf.iter());
        v.extend(self.head_feat.iter());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear<T>> {
        let mut v = vec![&mut self.encoder, &mut self.fuse_img, &mut self.fuse_rot];
        v.extend(self.head_sdf.iter_mut());
        v.extend(self.head_feat.iter_mut());
        v
    }

    /// `(name, values)` for every tensor, weights before biases.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let names = layer_names();
        self.layers()
            .into_iter()
            .zip(names)
            .flat_map(|(l, n)| {
                [(format!("{n}.w"), l.w.as_slice().unwrap()), (format!("{n}.b"), l.b.as_slice().unwrap())]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.1) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = *x * k;
            }
        }
    }

    /// Evaluates both heads for one image against every row of `encodings`.
    pub fn forward(&self, image: &[T], encodings: Array2<T>) -> Activations<T> {
        let image = Array1::from(image.to_vec());
        let x = image.view().insert_axis(Axis(0));
        let mut embed = self.encoder.forward(x);
        relu(&mut embed);
        let img = self.fuse_img.forward(embed.view());
        let mut fused = self.fuse_rot.forward(encodings.view());
        fused += &img.row(0);
        relu(&mut fused);
        let (hidden_sdf, s_sdf) = head_forward(&self.head_sdf, &fused);
        let (hidden_feat, s_feat) = head_forward(&self.head_feat, &fused);
        Activations {
            image,
            encodings,
            embed: embed.row(0).to_owned(),
            fused,
            hidden_sdf,
            hidden_feat,
            s_sdf,
            s_feat,
        }
    }

    /// Accumulates into `grads` the gradient of `Σ g_sdf·s_sdf + g_feat·s_feat`.
    pub fn backward(&self, act: &Activations<T>, g_sdf: &[T], g_feat: &[T], grads: &mut Params<T>) {
        let mut d_fused = head_backward(&self.head_sdf, &act.fused, &act.hidden_sdf, g_sdf, &mut grads.head_sdf);
        d_fused += &head_backward(&self.head_feat, &act.fused, &act.hidden_feat, g_feat, &mut grads.head_feat);
        mask_relu(&mut d_fused, &act.fused);

        grads.fuse_rot.w += &d_fused.t().dot(&act.encodings);
        let d_img = d_fused.sum_axis(Axis(0));
        grads.fuse_rot.b += &d_img;

        grads.fuse_img.w += &outer(&d_img, &act.embed);
        grads.fuse_img.b += &d_img;
        let mut d_embed = self.fuse_img.w.t().dot(&d_img);
        d_embed.zip_mut_with(&act.embed, |d, &a| {
            if a <= T::zero() {
                *d = T::zero()
            }
        });
        grads.encoder.w += &outer(&d_embed, &act.image);
        grads.encoder.b += &d_embed;
    }
}

fn layer_names() -> Vec<String> {
    let mut v = vec!["encoder".to_string(), "fuse_img".to_string(), "fuse_rot".to_string()];
    v.extend((0..HEAD_LAYERS).map(|i| format!("head_sdf.{i}")));
    v.extend((0..HEAD_LAYERS).map(|i| format!("head_feat.{i}")));
    v
}

fn outer<T: LinalgScalar>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    let a = a.view().insert_axis(Axis(1));
    let b = b.view().insert_axis(Axis(0));
    a.dot(&b)
}

fn mask_relu<T: Float>(d: &mut Array2<T>, post: &Array2<T>) {
    d.zip_mut_with(post, |d, &a| {
        if a <= T::zero() {
            *d = T::zero()
        }
    });
}

fn head_forward<T: Scalar>(layers: &[Linear<T>], input: &Array2<T>) -> (Vec<Array2<T>>, Array1<T>) {
    let mut hidden: Vec<Array2<T>> = Vec::with_capacity(layers.len() - 1);
    for layer in &layers[..layers.len() - 1] {
        let prev = hidden.last().unwrap_or(input);
        let mut h = layer.forward(prev.view());
        relu(&mut h);
        hidden.push(h);
    }
    let out = layers.last().unwrap().forward(hidden.last().unwrap().view());
    (hidden, out.column(0).to_owned())
}

/// Returns the gradient with respect to the head input.
fn head_backward<T: Scalar>(
    layers: &[Linear<T>],
    input: &Array2<T>,
    hidden: &[Array2<T>],
    g: &[T],
    grads: &mut [Linear<T>],
) -> Array2<T> {
    let last = layers.len() - 1;
    let mut d = Array2::from_shape_vec((g.len(), 1), g.to_vec()).unwrap();
    for l in (0..=last).rev() {
        if l < last {
            mask_relu(&mut d, &hidden[l]);
        }
        let a = if l == 0 { input } else { &hidden[l - 1] };
        grads[l].w += &d.t().dot(a);
        grads[l].b += &d.sum_axis(Axis(0));
        d = d.dot(&layers[l].w);
    }
    d
}

/// The trainable model plus the input conventions it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBranchModel {
    pub res: usize,
    pub encoding: EncodingKind,
    pub frequencies: usize,
    pub params: Params<f32>,
}

impl DualBranchModel {
    /// He-initialized hidden layers, zero final layers: the initial
    /// posterior is uniform.
    pub fn new<R: Rng + ?Sized>(res: usize, encoding: EncodingKind, rng: &mut R) -> Self {
        Self::with_frequencies(res, encoding, DEFAULT_FREQUENCIES, rng)
    }

    pub fn with_frequencies<R: Rng + ?Sized>(
        res: usize,
        encoding: EncodingKind,
        frequencies: usize,
        rng: &mut R,
    ) -> Self {
        let enc_dim = encoding.dim(frequencies);
        let head = |rng: &mut R| {
            let mut layers: Vec<Linear<f32>> = (0..HEAD_LAYERS - 1).map(|_| Linear::he(HIDDEN_DIM, HIDDEN_DIM, rng)).collect();
            layers.push(Linear::zeros(HIDDEN_DIM, 1));
            layers
        };
        let encoder = Linear::he(res * res, EMBED_DIM, rng);
        let fuse_img = Linear::he(EMBED_DIM, HIDDEN_DIM, rng);
        let fuse_rot = Linear::he(enc_dim, HIDDEN_DIM, rng);
        let head_sdf = head(rng);
        let head_feat = head(rng);
        DualBranchModel { res, encoding, frequencies, params: Params { encoder, fuse_img, fuse_rot, head_sdf, head_feat } }
    }

    pub fn enc_dim(&self) -> usize {
        self.encoding.dim(self.frequencies)
    }

    /// Rotation encodings as rows, in the model's precision.
    pub fn encode<T: Float>(&self, rotations: &[Rotation]) -> Array2<T> {
        let d = self.enc_dim();
        let mut out = Array2::zeros((rotations.len(), d));
        let mut buf = vec![0.0; d];
        for (mut row, r) in out.rows_mut().into_iter().zip(rotations) {
            self.encoding.encode_into(r, self.frequencies, &mut buf);
            for (o, v) in row.iter_mut().zip(&buf) {
                *o = T::from(*v as f32).unwrap();
            }
        }
        out
    }

    fn check_image(&self, image: &[f32]) -> Result<()> {
        if image.len() != self.res * self.res {
            return Err(Error::ShapeMismatch(format!(
                "image has {} pixels, model expects {}x{}",
                image.len(),
                self.res,
                self.res
            )));
        }
        Ok(())
    }

    /// Log-scores `(s_sdf, s_feat)` of every rotation for one image.
    pub fn forward(&self, image: &[f32], rotations: &[Rotation]) -> Result<(Vec<f32>, Vec<f32>)> {
        let act = self.forward_cached(image, rotations)?;
        Ok((act.s_sdf.to_vec(), act.s_feat.to_vec()))
    }

    pub fn forward_cached(&self, image: &[f32], rotations: &[Rotation]) -> Result<Activations<f32>> {
        self.check_image(image)?;
        Ok(self.params.forward(image, self.encode(rotations)))
    }

    /// Parameter gradients of `Σ g_sdf·s_sdf + g_feat·s_feat`.
    pub fn backward(
        &self,
        image: &[f32],
        rotations: &[Rotation],
        g_sdf: &[f32],
        g_feat: &[f32],
    ) -> Result<Params<f32>> {
        if g_sdf.len() != rotations.len() || g_feat.len() != rotations.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rotations but {} / {} upstream gradients",
                rotations.len(),
                g_sdf.len(),
                g_feat.len()
            )));
        }
        let act = self.forward_cached(image, rotations)?;
        let mut grads = self.params.zeros_like();
        self.params.backward(&act, g_sdf, g_feat, &mut grads);
        Ok(grads)
    }

    /// GKL losses of one example and their parameter gradients.
    pub fn example_gradients(&self, ex: &TrainExample) -> Result<ExampleGradients> {
        let n = ex.rotations.len();
        if ex.mu_sdf.len() != n || ex.mu_feat.len() != n {
            return Err(Error::LengthMismatch(n, ex.mu_sdf.len().min(ex.mu_feat.len())));
        }
        let act = self.forward_cached(&ex.image, &ex.rotations)?;
        let mut clamped = 0;
        let mut branch = |s: &Array1<f32>, mu: &[f64]| -> Result<(f64, Vec<f32>)> {
            let mut nu = Vec::with_capacity(n);
            let mut inside = Vec::with_capacity(n);
            for &v in s.iter() {
                let v = v as f64;
                let c = v.clamp(-SCORE_CLAMP, SCORE_CLAMP);
                if c != v {
                    clamped += 1;
                }
                inside.push(c == v);
                nu.push(c.exp());
            }
            let loss = gkl(mu, &nu)?;
            let g = nu
                .iter()
                .zip(mu)
                .zip(&inside)
                .map(|((&a, &m), &ok)| if ok { (a.max(WEIGHT_FLOOR) - m.max(WEIGHT_FLOOR)) as f32 } else { 0.0 })
                .collect();
            Ok((loss, g))
        };
        let (loss_sdf, g_sdf) = branch(&act.s_sdf, &ex.mu_sdf)?;
        let (loss_feat, g_feat) = branch(&act.s_feat, &ex.mu_feat)?;
        let mut grads = self.params.zeros_like();
        self.params.backward(&act, &g_sdf, &g_feat, &mut grads);
        Ok(ExampleGradients { loss_sdf, loss_feat, clamped, grads })
    }

    /// One optimizer update on the batch mean of both GKL losses.
    pub fn train_step(&mut self, batch: &[TrainExample], opt: &mut Adam) -> Result<StepLoss> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let parts: Vec<ExampleGradients> =
            batch.par_iter().map(|ex| self.example_gradients(ex)).collect::<Result<_>>()?;
        let k = 1.0 / batch.len() as f64;
        let mut grads = self.params.zeros_like();
        let mut loss = StepLoss { sdf: 0.0, feat: 0.0, clamped: 0 };
        for p in &parts {
            grads.add_assign(&p.grads);
            loss.sdf += p.loss_sdf * k;
            loss.feat += p.loss_feat * k;
            loss.clamped += p.clamped;
        }
        if !loss.sdf.is_finite() || !loss.feat.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: opt.steps() as usize,
                detail: format!("gkl_sdf={} gkl_feat={}", loss.sdf, loss.feat),
            });
        }
        if grads.tensors().iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss { step: opt.steps() as usize, detail: "non-finite gradient".into() });
        }
        if loss.clamped > 0 {
            log::warn!("step {}: {} log-scores hit the ±{SCORE_CLAMP} clamp", opt.steps(), loss.clamped);
        }
        grads.scale(k as f32);
        opt.step(&mut self.params, &grads);
        Ok(loss)
    }

    /// `s_sdf + s_feat` for every rotation, evaluated in chunks.
    pub fn log_scores(&self, image: &[f32], rotations: &[Rotation]) -> Result<Vec<f64>> {
        self.check_image(image)?;
        let chunks: Vec<Vec<f64>> = rotations
            .par_chunks(INFER_CHUNK)
            .map(|c| {
                let act = self.params.forward(image, self.encode(c));
                act.s_sdf.iter().zip(act.s_feat.iter()).map(|(a, b)| *a as f64 + *b as f64).collect()
            })
            .collect();
        Ok(chunks.concat())
    }

    /// Posterior over `grid` from the summed log-scores.
    pub fn infer_distribution(&self, image: &[f32], grid: &SO3Grid) -> Result<Posterior> {
        normalize_posterior(&self.log_scores(image, grid.rotations())?, grid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Header, architecture descriptor, then every tensor as f32 in
    /// [`Params::tensors`] order.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [self.res as u32, self.encoding.code(), self.frequencies as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let layers = self.params.layers();
        buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for l in &layers {
            buf.extend_from_slice(&(l.input_dim() as u32).to_le_bytes());
            buf.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
        }
        for (_, t) in self.params.tensors() {
            put_f32s(&mut buf, t.iter().copied());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(CHECKPOINT_MAGIC, "checkpoint")?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { what: "checkpoint", found: version, expected: CHECKPOINT_VERSION });
        }
        let res = r.u32()? as usize;
        let code = r.u32()?;
        let encoding =
            EncodingKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown encoding code {code}")))?;
        let frequencies = r.u32()? as usize;
        if res == 0 || frequencies == 0 {
            return Err(Error::Format("zero resolution or frequency count".into()));
        }
        let mut params = Params::<f32>::zeros(res * res, encoding.dim(frequencies));
        let n_layers = r.u32()? as usize;
        let expected: Vec<(usize, usize)> =
            params.layers().iter().map(|l| (l.input_dim(), l.output_dim())).collect();
        if n_layers != expected.len() {
            return Err(Error::Format(format!("{n_layers} layers, expected {}", expected.len())));
        }
        for (i, &(inp, out)) in expected.iter().enumerate() {
            let found = (r.u32()? as usize, r.u32()? as usize);
            if found != (inp, out) {
                return Err(Error::Format(format!("layer {i} is {}x{}, expected {inp}x{out}", found.0, found.1)));
            }
        }
        for t in params.tensors_mut() {
            let values = r.f32_vec(t.len())?;
            t.copy_from_slice(&values);
        }
        r.expect_eof()?;
        Ok(DualBranchModel { res, encoding, frequencies, params })
    }
}

/// Per-example loss and gradients.
#[derive(Debug, Clone)]
pub struct ExampleGradients {
    pub loss_sdf: f64,
    pub loss_feat: f64,
    pub clamped: usize,
    pub grads: Params<f32>,
}

/// Batch-mean GKL of each branch after a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub sdf: f64,
    pub feat: f64,
    /// Log-scores that hit the clamp in this batch.
    pub clamped: usize,
}

/// One image with its sampled rotations and the expert weights at them.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub image: Vec<f32>,
    pub rotations: Vec<Rotation>,
    pub mu_sdf: Vec<f64>,
    pub mu_feat: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Params<f32>,
    v: Params<f32>,
}

impl Adam {
    pub fn new(params: &Params<f32>, cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params<f32>, grads: &Params<f32>) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for (((p, (_, g)), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_images: usize,
    pub counts: SamplingCounts,
    pub adam: AdamConfig,
    pub steps: usize,
    pub seed: u64,
    /// Level of the grid the anchor distributions are precomputed on.
    pub precompute_level: u32,
    pub anchors: usize,
    pub encoding: EncodingKind,
    pub mode_focused: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_images: 16,
            counts: SamplingCounts::default(),
            adam: AdamConfig::default(),
            steps: 20_000,
            seed: 0,
            precompute_level: 3,
            anchors: 8,
            encoding: EncodingKind::Cube,
            mode_focused: true,
        }
    }
}

impl TrainConfig {
    pub fn rotations_per_image(&self) -> usize {
        self.counts.total()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_images == 0 {
            return bad("batch_images must be positive");
        }
        if self.counts.n_modes + self.counts.n_uniform == 0 {
            return bad("at least one sampled rotation per image is required");
        }
        if self.mode_focused && self.counts.n_modes > 0 && self.counts.top_pool == 0 {
            return bad("top_pool must be positive");
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("learning rate must be positive and betas in [0, 1)");
        }
        if !(self.adam.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.anchors == 0 {
            return bad("anchors must be positive");
        }
        if self.precompute_level > crate::grid::MAX_LEVEL {
            return Err(Error::LevelTooLarge { level: self.precompute_level, max: crate::grid::MAX_LEVEL });
        }
        let cells = crate::grid::cell_count(self.precompute_level);
        if self.mode_focused && self.counts.n_modes > 0 && self.counts.top_pool > cells {
            return Err(Error::Config(format!(
                "top_pool {} exceeds the {cells} cells of precompute level {}",
                self.counts.top_pool, self.precompute_level
            )));
        }
        Ok(())
    }
}

/// Deterministic per-sample generator: the stream is fixed by `(seed, index)`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Produces training examples for one shape: samples visible points of the
/// rendered view, draws rotations (mode-focused from transferred anchor
/// distributions, or uniform) and scores both experts at them.
pub struct ExampleSource<'a> {
    experts: &'a Experts,
    anchors: Vec<(Rotation, ModePool)>,
    counts: SamplingCounts,
    res: usize,
}

impl<'a> ExampleSource<'a> {
    /// Precomputes `cfg.anchors` anchor distributions on the level
    /// `cfg.precompute_level` grid when `cfg.mode_focused` is set.
    pub fn new(experts: &'a Experts, cfg: &TrainConfig, res: usize) -> Result<Self> {
        cfg.validate()?;
        let mut anchors = Vec::new();
        if cfg.mode_focused && cfg.counts.n_modes > 0 {
            let grid = SO3Grid::generate(cfg.precompute_level)?;
            for i in 0..cfg.anchors {
                let mut rng = sample_rng(cfg.seed ^ ANCHOR_STREAM, i as u64);
                let r = Rotation::random(&mut rng);
                let view = render_view(experts.shape(), &r, res, Light::ViewAxis)?;
                let cloud = view.sample_visible(experts.config().n_points, &mut rng)?;
                let measure = experts.view(&cloud)?.precompute(&grid);
                anchors.push((r, ModePool::new(&measure, Some(&grid), cfg.counts.top_pool, grid.cell_radius())?));
            }
        }
        Ok(ExampleSource { experts, anchors, counts: cfg.counts, res })
    }

    pub fn mode_focused(&self) -> bool {
        !self.anchors.is_empty()
    }

    /// Rotations for the view of `r_gt`: mode part, uniform part, `r_gt`.
    pub fn sample_rotations<R: Rng + ?Sized>(&self, r_gt: &Rotation, rng: &mut R) -> Result<Vec<Rotation>> {
        if self.anchors.is_empty() {
            return Ok(uniform_sample(r_gt, &self.counts, rng));
        }
        let (anchor, pool) = self
            .anchors
            .iter()
            .min_by(|a, b| geodesic_distance(&a.0, r_gt).total_cmp(&geodesic_distance(&b.0, r_gt)))
            .unwrap();
        pool.sample(&transfer_rotation(anchor, r_gt), r_gt, &self.counts, ModeDraw::WeightProportional, rng)
    }

    pub fn example<R: Rng + ?Sized>(&self, image: Vec<f32>, r_gt: &Rotation, rng: &mut R) -> Result<TrainExample> {
        let view = render_view(self.experts.shape(), r_gt, self.res, Light::ViewAxis)?;
        let cloud = view.sample_visible(self.experts.config().n_points, rng)?;
        let rotations = self.sample_rotations(r_gt, rng)?;
        let poe = self.experts.view(&cloud)?.poe(&rotations);
        Ok(TrainExample { image, rotations, mu_sdf: poe.sdf, mu_feat: poe.feat })
    }
}

const ANCHOR_STREAM: u64 = 0xA7C4_0000_0000_0001;
const EXAMPLE_STREAM: u64 = 0xE8A3_0000_0000_0002;

/// Runs `cfg.steps` optimizer steps over `images` (with ground truth
/// `rotations`). Batches are drawn with replacement; every draw is fixed by
/// the seed and the step index. `on_step` sees each step's loss.
pub fn train(
    model: &mut DualBranchModel,
    opt: &mut Adam,
    source: &ExampleSource,
    images: &[Vec<f32>],
    rotations: &[Rotation],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &StepLoss),
) -> Result<Vec<StepLoss>> {
    cfg.validate()?;
    if images.len() != rotations.len() {
        return Err(Error::LengthMismatch(images.len(), rotations.len()));
    }
    if images.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = sample_rng(cfg.seed, step as u64);
        let picks: Vec<usize> = (0..cfg.batch_images).map(|_| rng.gen_range(0..images.len())).collect();
        let batch: Vec<TrainExample> = picks
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let mut rng = sample_rng(cfg.seed ^ EXAMPLE_STREAM, (step * cfg.batch_images + j) as u64);
                source.example(images[i].clone(), &rotations[i], &mut rng)
            })
            .collect::<Result<_>>()?;
        let loss = model.train_step(&batch, opt)?;
        on_step(step, &loss);
        trace.push(loss);
    }
    Ok(trace)
}
