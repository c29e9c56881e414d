//! Layer composites written against the op tape.

use super::{Bound, NetConfig};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId};

/// y = x·W + b for 2-D x.
pub fn linear<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let h = g.matmul(x, b.id(&format!("{name}.w"))?)?;
    g.add_bias_row(h, b.id(&format!("{name}.b"))?)
}

pub fn conv<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: NodeId,
    stride: usize,
    pad: usize,
) -> Result<NodeId> {
    g.conv2d(
        x,
        b.id(&format!("{name}.w"))?,
        Some(b.id(&format!("{name}.b"))?),
        stride,
        pad,
    )
}

/// Group normalization with affine parameters, eps 1e-5.
pub fn group_norm<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: NodeId,
    groups: usize,
) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let mu = g.mean_groups(x, groups)?;
    let mu_b = g.broadcast_groups(mu, &shape)?;
    let centered = g.sub(x, mu_b)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean_groups(sq, groups)?;
    let inv_std = g.rsqrt_eps(var, T::from_f64_c(1e-5))?;
    let inv_b = g.broadcast_groups(inv_std, &shape)?;
    let normed = g.mul(centered, inv_b)?;
    let scaled = g.scale_c(normed, b.id(&format!("{name}.g"))?)?;
    g.bias_c(scaled, b.id(&format!("{name}.b"))?)
}

/// Squeeze-and-excitation channel attention: global average pool, bottleneck
/// FC pair, sigmoid gates, per-channel scaling.
pub fn channel_attention<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let squeezed = g.global_avg_pool(x)?;
    let h = linear(g, b, &format!("{name}.fc1"), squeezed)?;
    let h = g.silu(h)?;
    let h = linear(g, b, &format!("{name}.fc2"), h)?;
    let gates = g.sigmoid(h)?;
    g.mul_nc(x, gates)
}

/// Scaled dot-product self-attention over spatial positions (single head):
/// softmax(QKᵀ/√d)·V with learned q/k/v projections, d = channel count.
pub fn spatial_self_attention<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let (h, w) = (s[2], s[3]);
    let rows = g.nchw_to_rows(x)?;
    let q = g.matmul(rows, b.id(&format!("{name}.wq"))?)?;
    let k = g.matmul(rows, b.id(&format!("{name}.wk"))?)?;
    let v = g.matmul(rows, b.id(&format!("{name}.wv"))?)?;
    let d = g.shape(q)[1];
    let scores = g.matmul_nt(q, k)?;
    let scores = g.mul_scalar(scores, T::from_f64_c(1.0 / (d as f64).sqrt()))?;
    let attn = g.softmax_last(scores)?;
    let out = g.matmul(attn, v)?;
    g.rows_to_nchw(out, h, w)
}

/// Fixed 2-D sinusoidal position table, [h·w, c]: sin/cos bands over x in
/// the first half of the channels, over y in the second. Queries need it so
/// attention can be position-selective (the token side carries a learned
/// positional embedding).
pub fn posenc_2d<T: Scalar>(h: usize, w: usize, c: usize) -> crate::tensor::Tensor<T> {
    let mut data = vec![T::zero(); h * w * c];
    let quarter = (c / 4).max(1);
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * c;
            for k in 0..quarter {
                let omega = (2.0f64).powi(k as i32) * std::f64::consts::PI;
                let xf = (x as f64 + 0.5) / w as f64;
                let yf = (y as f64 + 0.5) / h as f64;
                data[row + k] = T::from_f64_c((xf * omega).sin());
                if quarter + k < c {
                    data[row + quarter + k] = T::from_f64_c((xf * omega).cos());
                }
                if 2 * quarter + k < c {
                    data[row + 2 * quarter + k] = T::from_f64_c((yf * omega).sin());
                }
                if 3 * quarter + k < c {
                    data[row + 3 * quarter + k] = T::from_f64_c((yf * omega).cos());
                }
            }
        }
    }
    crate::tensor::Tensor::new(vec![h * w, c], data).expect("posenc shape")
}

/// Gated cross-attention injection: position-tagged queries from feature
/// positions, keys and values from detail tokens, per-channel output gates.
pub fn gated_cross_attention<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: NodeId,
    tokens: NodeId,
) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let (h, w) = (s[2], s[3]);
    let rows = g.nchw_to_rows(x)?;
    let pe = g.leaf(posenc_2d::<T>(h, w, s[1]), false)?;
    let rows_pe = g.add(rows, pe)?;
    let q = g.matmul(rows_pe, b.id(&format!("{name}.wq"))?)?;
    let k = g.matmul(tokens, b.id(&format!("{name}.wk"))?)?;
    let v = g.matmul(tokens, b.id(&format!("{name}.wv"))?)?;
    let d = g.shape(q)[1];
    let scores = g.matmul_nt(q, k)?;
    let scores = g.mul_scalar(scores, T::from_f64_c(1.0 / (d as f64).sqrt()))?;
    let attn = g.softmax_last(scores)?;
    let ctx = g.matmul(attn, v)?;
    let proj = g.matmul(ctx, b.id(&format!("{name}.wo"))?)?;
    let delta = g.rows_to_nchw(proj, h, w)?;
    let gated = g.scale_c(delta, b.id(&format!("{name}.gate"))?)?;
    g.add(x, gated)
}

/// Residual block: x + conv(silu(gn(x))) with a per-channel shift from the
/// time embedding applied before the nonlinearity of the conv output.
pub fn resblock<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: NodeId,
    temb: Option<NodeId>,
    cfg: &NetConfig,
) -> Result<NodeId> {
    let h = group_norm(g, b, &format!("{name}.gn"), x, cfg.groups)?;
    let h = g.silu(h)?;
    let mut h = conv(g, b, &format!("{name}.conv"), h, 1, 1)?;
    if let Some(t) = temb {
        let tp = linear(g, b, &format!("{name}.temb"), t)?;
        h = g.add_nc(h, tp)?;
    }
    g.add(x, h)
}

/// Decoder block: concat(skip, up) → conv → temb shift → gn → silu, residual
/// to the upsampled path.
pub fn dec_block<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    up: NodeId,
    skip: NodeId,
    temb: NodeId,
    cfg: &NetConfig,
) -> Result<NodeId> {
    let cat = g.concat_channels(up, skip)?;
    let h = conv(g, b, &format!("{name}.conv"), cat, 1, 1)?;
    let tp = linear(g, b, &format!("{name}.temb"), temb)?;
    let h = g.add_nc(h, tp)?;
    let h = group_norm(g, b, &format!("{name}.gn"), h, cfg.groups)?;
    let h = g.silu(h)?;
    g.add(up, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bind_all, ParamSet};
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    #[test]
    fn channel_attention_zero_weights_halves_features() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("se.fc1.w", Tensor::zeros(&[6, 2]));
        ps.insert("se.fc1.b", Tensor::zeros(&[2]));
        ps.insert("se.fc2.w", Tensor::zeros(&[2, 6]));
        ps.insert("se.fc2.b", Tensor::zeros(&[6]));
        let mut rng = Rng::new(4);
        let x = Tensor::randn(&[2, 6, 5, 5], &mut rng);
        let mut g = Graph::new();
        let b = bind_all(&mut g, &ps, &|_| false).unwrap();
        let xn = g.leaf(x.clone(), false).unwrap();
        let y = channel_attention(&mut g, &b, "se", xn).unwrap();
        for (yv, xv) in g.value(y).data().iter().zip(x.data()) {
            assert!((yv - 0.5 * xv).abs() < 1e-7);
        }
    }

    #[test]
    fn channel_attention_zero_channel_squeeze_is_zero() {
        // a constant-zero channel pools to exactly zero regardless of others
        let mut rng = Rng::new(8);
        let mut x = Tensor::<f32>::randn(&[1, 3, 4, 4], &mut rng);
        for v in x.data_mut()[16..32].iter_mut() {
            *v = 0.0;
        }
        let mut g = Graph::new();
        let xn = g.leaf(x, false).unwrap();
        let pooled = g.global_avg_pool(xn).unwrap();
        assert_eq!(g.value(pooled).data()[1], 0.0);
    }

    #[test]
    fn channel_attention_matches_straight_line_oracle() {
        let mut rng = Rng::new(21);
        let (c, r) = (6, 3);
        let mut ps = ParamSet::<f64>::new();
        ps.linear("se.fc1", c, r, &mut rng);
        ps.linear("se.fc2", r, c, &mut rng);
        let x = Tensor::<f64>::randn(&[2, c, 4, 4], &mut rng);

        let mut g = Graph::new();
        let b = bind_all(&mut g, &ps, &|_| false).unwrap();
        let xn = g.leaf(x.clone(), false).unwrap();
        let y = channel_attention(&mut g, &b, "se", xn).unwrap();

        // independent pool → fc → silu → fc → sigmoid → scale oracle
        let w1 = ps.get("se.fc1.w").unwrap().data();
        let w2 = ps.get("se.fc2.w").unwrap().data();
        for n in 0..2 {
            let mut pooled = vec![0.0; c];
            for ci in 0..c {
                let base = (n * c + ci) * 16;
                pooled[ci] = x.data()[base..base + 16].iter().sum::<f64>() / 16.0;
            }
            let mut hidden = vec![0.0; r];
            for j in 0..r {
                for ci in 0..c {
                    hidden[j] += pooled[ci] * w1[ci * r + j];
                }
                hidden[j] = hidden[j] / (1.0 + (-hidden[j]).exp());
            }
            for ci in 0..c {
                let mut z = 0.0;
                for j in 0..r {
                    z += hidden[j] * w2[j * c + ci];
                }
                let gate = 1.0 / (1.0 + (-z).exp());
                assert!((0.0..1.0).contains(&gate));
                for p in 0..16 {
                    let idx = (n * c + ci) * 16 + p;
                    let want = x.data()[idx] * gate;
                    assert!(
                        (g.value(y).data()[idx] - want).abs() < 1e-6,
                        "mismatch at {idx}"
                    );
                }
            }
        }
    }

    #[test]
    fn self_attention_singleton_is_value_projection() {
        let mut rng = Rng::new(31);
        let c = 5;
        let mut ps = ParamSet::<f64>::new();
        for nm in ["sa.wq", "sa.wk", "sa.wv"] {
            ps.insert(nm, Tensor::randn(&[c, c], &mut rng));
        }
        let x = Tensor::<f64>::randn(&[1, c, 1, 1], &mut rng);
        let mut g = Graph::new();
        let b = bind_all(&mut g, &ps, &|_| false).unwrap();
        let xn = g.leaf(x.clone(), false).unwrap();
        let y = spatial_self_attention(&mut g, &b, "sa", xn).unwrap();
        // one position: attention weight exactly 1, output = x·Wv
        let wv = ps.get("sa.wv").unwrap().data();
        for j in 0..c {
            let mut want = 0.0;
            for i in 0..c {
                want += x.data()[i] * wv[i * c + j];
            }
            assert!((g.value(y).data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn self_attention_matches_dense_oracle() {
        let mut rng = Rng::new(33);
        let c = 8;
        let mut ps = ParamSet::<f64>::new();
        for nm in ["sa.wq", "sa.wk", "sa.wv"] {
            ps.insert(nm, Tensor::randn_std(&[c, c], 0.3, &mut rng));
        }
        let x = Tensor::<f64>::randn(&[1, c, 4, 4], &mut rng);
        let mut g = Graph::new();
        let b = bind_all(&mut g, &ps, &|_| false).unwrap();
        let xn = g.leaf(x.clone(), false).unwrap();
        let y = spatial_self_attention(&mut g, &b, "sa", xn).unwrap();

        // dense-matrix oracle over 16 positions
        let l = 16;
        let mut rows = vec![0.0; l * c];
        for ci in 0..c {
            for p in 0..l {
                rows[p * c + ci] = x.data()[ci * l + p];
            }
        }
        let proj = |m: &[f64], w: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; l * c];
            for p in 0..l {
                for j in 0..c {
                    for i in 0..c {
                        out[p * c + j] += m[p * c + i] * w[i * c + j];
                    }
                }
            }
            out
        };
        let q = proj(&rows, ps.get("sa.wq").unwrap().data());
        let k = proj(&rows, ps.get("sa.wk").unwrap().data());
        let v = proj(&rows, ps.get("sa.wv").unwrap().data());
        let scale = 1.0 / (c as f64).sqrt();
        for p in 0..l {
            let mut weights = vec![0.0; l];
            let mut mx = f64::NEG_INFINITY;
            for p2 in 0..l {
                let mut s = 0.0;
                for j in 0..c {
                    s += q[p * c + j] * k[p2 * c + j];
                }
                weights[p2] = s * scale;
                mx = mx.max(weights[p2]);
            }
            let mut z = 0.0;
            for wv in weights.iter_mut() {
                *wv = (*wv - mx).exp();
                z += *wv;
            }
            let sum_w: f64 = weights.iter().map(|w| w / z).sum();
            assert!((sum_w - 1.0).abs() < 1e-9, "attention row must sum to 1");
            for j in 0..c {
                let mut want = 0.0;
                for p2 in 0..l {
                    want += weights[p2] / z * v[p2 * c + j];
                }
                let got = g.value(y).data()[j * l + p];
                assert!((got - want).abs() < 1e-5, "pos {p} ch {j}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn uniform_queries_give_uniform_attention() {
        // identical rows → identical scores → softmax uniform → mean over positions
        let c = 4;
        let mut ps = ParamSet::<f64>::new();
        let mut rng = Rng::new(40);
        for nm in ["sa.wq", "sa.wk", "sa.wv"] {
            ps.insert(nm, Tensor::randn(&[c, c], &mut rng));
        }
        // x constant per channel → every spatial position has the same feature vector
        let mut x = Tensor::<f64>::zeros(&[1, c, 2, 2]);
        for ci in 0..c {
            for p in 0..4 {
                x.data_mut()[ci * 4 + p] = ci as f64 * 0.5 - 1.0;
            }
        }
        let mut g = Graph::new();
        let b = bind_all(&mut g, &ps, &|_| false).unwrap();
        let xn = g.leaf(x, false).unwrap();
        let y = spatial_self_attention(&mut g, &b, "sa", xn).unwrap();
        // output must equal the value projection of the shared feature vector
        let first: Vec<f64> = (0..c).map(|j| g.value(y).data()[j * 4]).collect();
        for p in 1..4 {
            for j in 0..c {
                assert!((g.value(y).data()[j * 4 + p] - first[j]).abs() < 1e-12);
            }
        }
    }
}
