//! Differentiable operations recorded on a [`Tape`].

use crate::error::{shape_err, AutogradError, Result};
use crate::gemm::{gemm, Layout};
use crate::tape::{ConvGeom, Op, Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    /// Elementwise sum of two same-shaped values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err("add", format!("{:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        Ok(self.push(out, &[a], Op::Scale(a, factor)))
    }

    /// Hadamard product `a ⊙ b`.
    ///
    /// `b` may be smaller than `a` when its shape (ignoring leading unit
    /// axes) equals a trailing suffix of `a`'s shape; it is then repeated
    /// along `a`'s leading axes. A `[H, W]` mask therefore applies to every
    /// channel of a `[C, H, W]` map.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let b_core: Vec<usize> = bv.shape().iter().copied().skip_while(|&d| d == 1).collect();
        let a_shape = av.shape();
        let broadcastable = av.shape() == bv.shape()
            || (b_core.len() <= a_shape.len() && a_shape[a_shape.len() - b_core.len()..] == b_core[..]);
        if !broadcastable {
            return shape_err(
                "hadamard",
                format!("cannot apply {:?} to {:?}", bv.shape(), av.shape()),
            );
        }
        let nb = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(k, x)| x * bv.data()[k % nb])
            .collect();
        let out = Tensor::new(a_shape.to_vec(), data)?;
        Ok(self.push(out, &[a, b], Op::Hadamard(a, b)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(stable_sigmoid);
        Ok(self.push(out, &[x], Op::Sigmoid(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        Ok(self.push(out, &[x], Op::Tanh(x)))
    }

    /// Affine map `y = W x + b`. A `[n, in]` input applies row-wise.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 {
            return shape_err("linear", format!("weight must be 2-D, got {ws:?}"));
        }
        let (fan_out, fan_in) = (ws[0], ws[1]);
        let (rows, out_shape) = match xs.as_slice() {
            [n] if *n == fan_in => (1, vec![fan_out]),
            [r, n] if *n == fan_in => (*r, vec![*r, fan_out]),
            _ => {
                return shape_err("linear", format!("input {xs:?} does not match weight {ws:?}"));
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [fan_out] {
                return shape_err(
                    "linear",
                    format!("bias {:?} does not match {fan_out} outputs", self.shape(b)),
                );
            }
        }
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..rows {
                out[r * fan_out..(r + 1) * fan_out].copy_from_slice(bv);
            }
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            1.0,
            self.value(x).data(),
            Layout::Normal,
            self.value(w).data(),
            Layout::Transposed,
            1.0,
            &mut out,
        );
        let out = Tensor::new(out_shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            &inputs,
            Op::Linear {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            },
        ))
    }

    /// 2-D cross-correlation of a `[C_in, H, W]` input with
    /// `[C_out, C_in, K, K]` kernels.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (is, ks) = (self.shape(input).to_vec(), self.shape(kernels).to_vec());
        let (&[cin, h, w], &[cout, kc, kh, kw]) = (is.as_slice(), ks.as_slice()) else {
            return shape_err("conv2d", format!("input {is:?}, kernels {ks:?}"));
        };
        if kc != cin {
            return shape_err("conv2d", format!("kernel channels {kc} vs input channels {cin}"));
        }
        let geom = conv_geom("conv2d", cin, h, w, cout, kh, kw, stride, padding, padding)?;
        self.conv(input, kernels, bias, geom, vec![cout, geom.oh, geom.ow])
    }

    /// 1-D cross-correlation of a `[C_in, L]` input with `[C_out, C_in, K]`
    /// kernels.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (is, ks) = (self.shape(input).to_vec(), self.shape(kernels).to_vec());
        let (&[cin, len], &[cout, kc, k]) = (is.as_slice(), ks.as_slice()) else {
            return shape_err("conv1d", format!("input {is:?}, kernels {ks:?}"));
        };
        if kc != cin {
            return shape_err("conv1d", format!("kernel channels {kc} vs input channels {cin}"));
        }
        let geom = conv_geom("conv1d", cin, 1, len, cout, 1, k, stride, 0, padding)?;
        self.conv(input, kernels, bias, geom, vec![cout, geom.ow])
    }

    fn conv(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        if self.shape(bias) != [geom.cout] {
            return shape_err(
                "conv",
                format!("bias {:?} does not match {} outputs", self.shape(bias), geom.cout),
            );
        }
        let cols = geom.im2col(self.value(input).data());
        let p = geom.positions();
        let mut out = vec![0.0; geom.cout * p];
        for (o, &b) in self.value(bias).data().iter().enumerate() {
            out[o * p..(o + 1) * p].fill(b);
        }
        gemm(
            geom.cout,
            geom.patch(),
            p,
            1.0,
            self.value(kernels).data(),
            Layout::Normal,
            &cols,
            Layout::Normal,
            1.0,
            &mut out,
        );
        let out = Tensor::new(out_shape, out)?;
        let cols = if self.requires_grad(kernels) { cols } else { Vec::new() };
        Ok(self.push(
            out,
            &[input, kernels, bias],
            Op::Conv {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// Mean over every axis but the first: `[C, ...] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return shape_err("global_avg_pool", format!("need [C, ...], got {xs:?}"));
        }
        let per_channel: usize = xs[1..].iter().product();
        let data = self
            .value(x)
            .data()
            .chunks(per_channel)
            .map(|c| c.iter().sum::<f64>() / per_channel as f64)
            .collect();
        let out = Tensor::new(vec![xs[0]], data)?;
        Ok(self.push(out, &[x], Op::GlobalAvgPool { x, per_channel }))
    }

    /// Joins values along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut axis_total = 0;
        let mut blocks = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return shape_err("concat", format!("{s:?} incompatible with {base:?} on axis {axis}"));
            }
            axis_total += s[axis];
            blocks.push(s[axis] * inner);
        }
        let total: usize = blocks.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&p, &blk) in parts.iter().zip(&blocks) {
                data.extend_from_slice(&self.value(p).data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                blocks,
            },
        ))
    }

    /// Contiguous `len` values of a 1-D value starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 1 || len == 0 || start + len > xs[0] {
            return shape_err("slice", format!("[{start}, {}) of {xs:?}", start + len));
        }
        let out = Tensor::from_vec(self.value(x).data()[start..start + len].to_vec());
        Ok(self.push(out, &[x], Op::Slice { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, &[x], Op::Reshape(x)))
    }

    /// Repeats every element over new trailing axes:
    /// `[C] -> [C, trailing...]`.
    pub fn expand(&mut self, x: Var, trailing: &[usize]) -> Result<Var> {
        let reps: usize = trailing.iter().product();
        if reps == 0 {
            return shape_err("expand", format!("zero-sized trailing axes {trailing:?}"));
        }
        let xv = self.value(x);
        let mut shape = xv.shape().to_vec();
        shape.extend_from_slice(trailing);
        let data = xv
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(reps))
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, &[x], Op::Expand { x, reps }))
    }

    /// Row `index` of a `[N, D]` table.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        let &[n, dim] = ts.as_slice() else {
            return shape_err("embedding", format!("table must be 2-D, got {ts:?}"));
        };
        if index >= n {
            return Err(AutogradError::Index {
                op: "embedding",
                index,
                size: n,
            });
        }
        let row = self.value(table).data()[index * dim..(index + 1) * dim].to_vec();
        Ok(self.push(Tensor::from_vec(row), &[table], Op::Embedding { table, index }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), &[x], Op::Sum(x)))
    }

    /// `-log softmax(logits)[target]` for a `[V]` logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 1 {
            return shape_err("softmax_cross_entropy", format!("logits must be 1-D, got {ls:?}"));
        }
        if target >= ls[0] {
            return Err(AutogradError::Index {
                op: "softmax_cross_entropy",
                index: target,
                size: ls[0],
            });
        }
        let lv = self.value(logits).data();
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = lv.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let loss = z.ln() - (lv[target] - max);
        let probs = exp.into_iter().map(|e| e / z).collect();
        // exp(0) = 1 is in z, so the loss is >= 0 up to rounding.
        Ok(self.push(
            Tensor::scalar(loss.max(0.0)),
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }
}

/// Sigmoid that never overflows `exp` and stays inside the open interval
/// (0, 1) even where the exact value rounds to 0 or 1.
pub fn stable_sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[allow(clippy::too_many_arguments)]
fn conv_geom(
    op: &'static str,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
) -> Result<ConvGeom> {
    if stride == 0 {
        return shape_err(op, "stride must be at least 1");
    }
    if kh > h + 2 * pad_h || kw > w + 2 * pad_w {
        return shape_err(
            op,
            format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad_h, w + 2 * pad_w),
        );
    }
    Ok(ConvGeom {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad_h,
        pad_w,
        oh: (h + 2 * pad_h - kh) / stride + 1,
        ow: (w + 2 * pad_w - kw) / stride + 1,
    })
}
