//! Adversarial, deformation-reconstruction and gradient-penalty losses as
//! graph builders over batched rows.

use crate::nets::{BoundHallucinator, BoundMlp};
use crate::numgrad::{Graph, Mat, NodeId, NumError};

/// Discriminator forward on pairs `[x1, x2]`: returns `(logit, probability)`
/// columns.
pub fn discriminate(g: &mut Graph, d: &BoundMlp, x1: NodeId, x2: NodeId) -> Result<(NodeId, NodeId), NumError> {
    let pair = g.concat(x1, x2)?;
    let t = d.trace(g, pair)?;
    Ok((t.logits, t.out))
}

/// `−mean[log D(real) + log(1 − D(fake))]`.
pub fn adv_loss_discriminator(
    g: &mut Graph,
    d: &BoundMlp,
    real: (NodeId, NodeId),
    fake: (NodeId, NodeId),
) -> Result<NodeId, NumError> {
    let (_, p_real) = discriminate(g, d, real.0, real.1)?;
    let (_, p_fake) = discriminate(g, d, fake.0, fake.1)?;
    let log_real = g.log(p_real);
    let neg = g.scale(p_fake, -1.0);
    let one_minus = g.shift(neg, 1.0);
    let log_fake = g.log(one_minus);
    let both = g.add(log_real, log_fake)?;
    let m = g.mean(both);
    Ok(g.scale(m, -1.0))
}

/// Non-saturating generator loss `−mean log D(fake)`.
pub fn adv_loss_generator(g: &mut Graph, d: &BoundMlp, fake: (NodeId, NodeId)) -> Result<NodeId, NumError> {
    let (_, p_fake) = discriminate(g, d, fake.0, fake.1)?;
    let l = g.log(p_fake);
    let m = g.mean(l);
    Ok(g.scale(m, -1.0))
}

/// `λ·mean_i (‖∇_u ℓ(u_i)‖ − 1)²` where `ℓ` is the discriminator logit and
/// `u_i = ε_i·real_i + (1 − ε_i)·fake_i`. `real` and `fake` are `B×2D` pair
/// matrices treated as constants.
///
/// The input gradient `(mask ⊙ w₂ᵀ)·W₁ᵀ` is built as a graph expression in
/// the discriminator weights, so the penalty itself is differentiable in
/// them. The ReLU mask is piecewise constant in the weights.
pub fn gradient_penalty(
    g: &mut Graph,
    d: &BoundMlp,
    real: &Mat,
    fake: &Mat,
    eps: &[f64],
    lambda: f64,
) -> Result<NodeId, NumError> {
    if real.shape() != fake.shape() || eps.len() != real.rows {
        return Err(NumError::Shape {
            op: "gradient_penalty",
            left: real.shape().to_vec(),
            right: vec![fake.rows, fake.cols, eps.len()],
        });
    }
    let mut u = Mat::zeros(real.rows, real.cols);
    for i in 0..real.rows {
        let e = eps[i];
        for j in 0..real.cols {
            u.data[i * real.cols + j] = e * real.data[i * real.cols + j] + (1.0 - e) * fake.data[i * real.cols + j];
        }
    }
    let ui = g.constant_mat(u);
    let trace = d.trace(g, ui)?;
    let pre = g.value(trace.hidden_pre);
    let mask = Mat::new(pre.rows, pre.cols, pre.data.iter().map(|&v| f64::from(v > 0.0)).collect())?;
    let mask = g.constant_mat(mask);
    let w2t = g.transpose(d.output.weight);
    let gated = g.mul(mask, w2t)?;
    let w1t = g.transpose(d.hidden.weight);
    let grad_u = g.matmul(gated, w1t)?;
    let norms = g.row_norms(grad_u);
    let dev = g.shift(norms, -1.0);
    let sq = g.mul(dev, dev)?;
    let m = g.mean(sq);
    Ok(g.scale(m, lambda))
}

/// Nodes produced by one generator pass over a quadruplet batch.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorPass {
    /// `x̂ᵇ = Dₑ([Eₙ([xa1, xa2]), xb1])`.
    pub xhat_b: NodeId,
    /// `Dₑ([Eₙ([xb1, x̂ᵇ]), xa1])`.
    pub reconstruction: NodeId,
    /// Batch mean of `‖reconstruction − xa2‖₂`.
    pub dr: NodeId,
}

/// Hallucinates `x̂ᵇ` and the deformation-reconstruction loss.
pub fn dr_loss(
    g: &mut Graph,
    gen: &BoundHallucinator,
    xa1: NodeId,
    xa2: NodeId,
    xb1: NodeId,
) -> Result<GeneratorPass, NumError> {
    let z_a = gen.encode(g, xa1, xa2)?;
    let xhat_b = gen.decode(g, z_a, xb1)?;
    let z_b = gen.encode(g, xb1, xhat_b)?;
    let reconstruction = gen.decode(g, z_b, xa1)?;
    let dr = reconstruction_loss(g, reconstruction, xa2)?;
    Ok(GeneratorPass {
        xhat_b,
        reconstruction,
        dr,
    })
}

/// Batch mean of unsquared row distances.
pub fn reconstruction_loss(g: &mut Graph, reconstruction: NodeId, target: NodeId) -> Result<NodeId, NumError> {
    let diff = g.sub(reconstruction, target)?;
    let norms = g.row_norms(diff);
    Ok(g.mean(norms))
}

/// `adv_g + λ·dr`.
pub fn overall_generator_loss(g: &mut Graph, adv_g: NodeId, dr: NodeId, lambda_def: f64) -> Result<NodeId, NumError> {
    let weighted = g.scale(dr, lambda_def);
    g.add(adv_g, weighted)
}
