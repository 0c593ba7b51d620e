//! Joint VAE graph assembly: encoder, reparameterized latent, decoder, and
//! the blended training loss all live in one graph. Binding the image input
//! runs the encoder; binding the latent value directly runs the decoder;
//! binding image, noise, and prior centers evaluates the loss.

use super::ModelConfig;
use crate::autodiff::{he_uniform, Graph, Op, Real, ValueId};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Handles to the named values of a built VAE graph.
#[derive(Debug, Clone, Copy)]
pub struct VaeIds {
    pub x: ValueId,
    pub eps: ValueId,
    pub mu_y: ValueId,
    pub mu: ValueId,
    pub log_var: ValueId,
    pub z: ValueId,
    pub x_hat: ValueId,
    pub loss_rec: ValueId,
    pub loss_kl: ValueId,
    pub loss: ValueId,
}

/// Numerical guard rails for log-variance; exp(20) is already ~4.9e8, far
/// beyond anything a trained posterior uses, while exp(-30) protects the
/// KL's log term from underflow.
pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 20.0;

struct SpatialTrace {
    h: usize,
    w: usize,
    c: usize,
}

pub fn build_vae_graph<T: Real>(
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Graph<T>, VaeIds)> {
    config.validate()?;
    let d = config.latent_dim;
    let mut g: Graph<T> = Graph::new();

    let x = g.input("x")?;
    let eps = g.input("eps")?;
    let mu_y = g.input("mu_y")?;

    // encoder conv stack
    let mut cur = x;
    let mut sp = SpatialTrace {
        h: config.input_h,
        w: config.input_w,
        c: config.input_channels,
    };
    for (i, spec) in config.conv_layers.iter().enumerate() {
        let fan_in = spec.kernel * spec.kernel * sp.c;
        let w = g.param(
            &format!("enc.conv{i}.w"),
            he_uniform(&[spec.kernel, spec.kernel, sp.c, spec.filters], fan_in, rng),
        )?;
        let b = g.param(&format!("enc.conv{i}.b"), crate::Tensor::zeros(&[spec.filters]))?;
        let conv = g.apply(Op::Conv2d { stride: spec.stride }, &[cur, w, b])?;
        g.set_name(conv, &format!("enc.conv{i}.pre"))?;
        cur = g.apply(Op::Relu, &[conv])?;
        sp.h = sp.h.div_ceil(spec.stride);
        sp.w = sp.w.div_ceil(spec.stride);
        sp.c = spec.filters;
    }
    let feat = sp.h * sp.w * sp.c;

    let flat = g.apply(
        Op::Reshape {
            per_sample: vec![feat],
        },
        &[cur],
    )?;
    let hidden = dense_relu(&mut g, flat, feat, config.bottleneck, "enc.dense", rng)?;
    let heads = dense(&mut g, hidden, config.bottleneck, 2 * d, "enc.head", rng)?;
    let mu = g.apply(Op::SliceCols { start: 0, end: d }, &[heads])?;
    let lv_raw = g.apply(Op::SliceCols { start: d, end: 2 * d }, &[heads])?;
    let log_var = g.apply(
        Op::Clamp {
            lo: LOG_VAR_MIN,
            hi: LOG_VAR_MAX,
        },
        &[lv_raw],
    )?;

    // z = mu + exp(log_var / 2) * eps
    let half_lv = g.apply(Op::MulScalar(0.5), &[log_var])?;
    let std = g.apply(Op::Exp, &[half_lv])?;
    let noise = g.apply(Op::Mul, &[std, eps])?;
    let z = g.apply(Op::Add, &[mu, noise])?;

    // decoder: dense back to the deepest feature map, mirrored transposed
    // convs, then a 3x3 projection to pixel space
    let dh = dense_relu(&mut g, z, d, feat, "dec.dense", rng)?;
    let mut dimg = g.apply(
        Op::Reshape {
            per_sample: vec![sp.h, sp.w, sp.c],
        },
        &[dh],
    )?;
    let mut ch = sp.c;
    for (i, spec) in config.conv_layers.iter().enumerate().rev() {
        let fan_in = spec.kernel * spec.kernel * ch;
        let w = g.param(
            &format!("dec.convt{i}.w"),
            he_uniform(&[spec.kernel, spec.kernel, spec.filters, ch], fan_in, rng),
        )?;
        let b = g.param(&format!("dec.convt{i}.b"), crate::Tensor::zeros(&[spec.filters]))?;
        let convt = g.apply(Op::ConvTranspose2d { stride: spec.stride }, &[dimg, w, b])?;
        g.set_name(convt, &format!("dec.convt{i}.pre"))?;
        dimg = g.apply(Op::Relu, &[convt])?;
        ch = spec.filters;
    }
    let fan_in = 3 * 3 * ch;
    let w = g.param(
        "dec.out.w",
        he_uniform(&[3, 3, ch, config.input_channels], fan_in, rng),
    )?;
    let b = g.param("dec.out.b", crate::Tensor::zeros(&[config.input_channels]))?;
    let proj = g.apply(Op::Conv2d { stride: 1 }, &[dimg, w, b])?;
    let x_hat = g.apply(Op::Sigmoid, &[proj])?;

    // reconstruction: mean squared error over pixels and batch
    let diff = g.apply(Op::Sub, &[x_hat, x])?;
    let sq = g.apply(Op::Square, &[diff])?;
    let loss_rec = g.apply(Op::MeanAll, &[sq])?;

    // KL(N(mu, diag sigma^2) || N(mu_y, s^2 I)), averaged over the batch:
    // 0.5 * [ (sum sigma_i^2 + |mu - mu_y|^2) / s^2 - d + d ln s^2 - sum ln sigma_i^2 ]
    let s2 = config.prior_variance;
    let sigma2 = g.apply(Op::Exp, &[log_var])?;
    let t_var = g.apply(Op::SumCols, &[sigma2])?;
    let dmu = g.apply(Op::Sub, &[mu, mu_y])?;
    let dmu_sq = g.apply(Op::Square, &[dmu])?;
    let t_dist = g.apply(Op::SumCols, &[dmu_sq])?;
    let t_logvar = g.apply(Op::SumCols, &[log_var])?;
    let scaled = {
        let sum = g.apply(Op::Add, &[t_var, t_dist])?;
        g.apply(Op::MulScalar(1.0 / s2), &[sum])?
    };
    let spread = g.apply(Op::Sub, &[scaled, t_logvar])?;
    let centered = g.apply(Op::AddScalar(d as f64 * s2.ln() - d as f64), &[spread])?;
    let kl_rows = g.apply(Op::MulScalar(0.5), &[centered])?;
    let kl_col = g.apply(
        Op::Reshape {
            per_sample: vec![1],
        },
        &[kl_rows],
    )?;
    let loss_kl = g.apply(Op::MeanAll, &[kl_col])?;

    let a = config.alpha;
    let rec_part = g.apply(Op::MulScalar(a), &[loss_rec])?;
    let kl_part = g.apply(Op::MulScalar(1.0 - a), &[loss_kl])?;
    let loss = g.apply(Op::Add, &[rec_part, kl_part])?;

    for (id, name) in [
        (mu, "mu"),
        (log_var, "log_var"),
        (z, "z"),
        (x_hat, "x_hat"),
        (loss_rec, "loss_rec"),
        (loss_kl, "loss_kl"),
        (loss, "loss"),
    ] {
        g.set_name(id, name)?;
    }

    Ok((
        g,
        VaeIds {
            x,
            eps,
            mu_y,
            mu,
            log_var,
            z,
            x_hat,
            loss_rec,
            loss_kl,
            loss,
        },
    ))
}

/// Classifier sharing the encoder layout, with the latent heads replaced by
/// a class-logit layer. Returns (graph, x, targets, logits, probs, loss).
pub fn build_cnn_graph<T: Real>(
    config: &ModelConfig,
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Graph<T>, CnnIds)> {
    config.validate()?;
    if n_classes < 2 {
        return Err(Error::config("classifier needs at least two classes"));
    }
    let mut g: Graph<T> = Graph::new();
    let x = g.input("x")?;
    let targets = g.input("targets")?;

    let mut cur = x;
    let mut sp = SpatialTrace {
        h: config.input_h,
        w: config.input_w,
        c: config.input_channels,
    };
    for (i, spec) in config.conv_layers.iter().enumerate() {
        let fan_in = spec.kernel * spec.kernel * sp.c;
        let w = g.param(
            &format!("cnn.conv{i}.w"),
            he_uniform(&[spec.kernel, spec.kernel, sp.c, spec.filters], fan_in, rng),
        )?;
        let b = g.param(&format!("cnn.conv{i}.b"), crate::Tensor::zeros(&[spec.filters]))?;
        let conv = g.apply(Op::Conv2d { stride: spec.stride }, &[cur, w, b])?;
        cur = g.apply(Op::Relu, &[conv])?;
        sp.h = sp.h.div_ceil(spec.stride);
        sp.w = sp.w.div_ceil(spec.stride);
        sp.c = spec.filters;
    }
    let feat = sp.h * sp.w * sp.c;
    let flat = g.apply(
        Op::Reshape {
            per_sample: vec![feat],
        },
        &[cur],
    )?;
    let hidden = dense_relu(&mut g, flat, feat, config.bottleneck, "cnn.dense", rng)?;
    let logits = dense(&mut g, hidden, config.bottleneck, n_classes, "cnn.head", rng)?;
    let probs = g.apply(Op::Softmax, &[logits])?;
    let loss = g.apply(Op::SoftmaxCrossEntropy, &[logits, targets])?;
    for (id, name) in [(logits, "logits"), (probs, "probs"), (loss, "loss")] {
        g.set_name(id, name)?;
    }
    Ok((
        g,
        CnnIds {
            x,
            targets,
            logits,
            probs,
            loss,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct CnnIds {
    pub x: ValueId,
    pub targets: ValueId,
    pub logits: ValueId,
    pub probs: ValueId,
    pub loss: ValueId,
}

fn dense<T: Real>(
    g: &mut Graph<T>,
    input: ValueId,
    fan_in: usize,
    width: usize,
    name: &str,
    rng: &mut ChaCha8Rng,
) -> Result<ValueId> {
    let w = g.param(&format!("{name}.w"), he_uniform(&[fan_in, width], fan_in, rng))?;
    let b = g.param(&format!("{name}.b"), crate::Tensor::zeros(&[width]))?;
    let mm = g.apply(Op::MatMul, &[input, w])?;
    g.apply(Op::AddRowVec, &[mm, b])
}

fn dense_relu<T: Real>(
    g: &mut Graph<T>,
    input: ValueId,
    fan_in: usize,
    width: usize,
    name: &str,
    rng: &mut ChaCha8Rng,
) -> Result<ValueId> {
    let lin = dense(g, input, fan_in, width, name, rng)?;
    g.set_name(lin, &format!("{name}.pre"))?;
    g.apply(Op::Relu, &[lin])
}

/// Spatial dims after the encoder stack, used by validation and tests.
pub fn encoder_output_dims(config: &ModelConfig) -> (usize, usize, usize) {
    let mut h = config.input_h;
    let mut w = config.input_w;
    let mut c = config.input_channels;
    for spec in &config.conv_layers {
        h = h.div_ceil(spec.stride);
        w = w.div_ceil(spec.stride);
        c = spec.filters;
    }
    (h, w, c)
}

/// The decoder mirror doubles dimensions by each stride; reject configs
/// whose shapes would not round-trip.
pub fn validate_mirror(config: &ModelConfig) -> Result<()> {
    let mut h = config.input_h;
    let mut w = config.input_w;
    for (i, spec) in config.conv_layers.iter().enumerate() {
        if h % spec.stride != 0 || w % spec.stride != 0 {
            return Err(Error::config(format!(
                "conv layer {i}: stride {} does not divide {h}x{w}, decoder cannot mirror",
                spec.stride
            )));
        }
        h /= spec.stride;
        w /= spec.stride;
    }
    Ok(())
}
