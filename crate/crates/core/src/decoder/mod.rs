//! The fusion decoder: alignment blocks, cross-channel attention fusion and the
//! upsampling stack that turns a pair of sampled codes into an `H×W×3` frame.

pub mod cca;
pub mod layers;
pub mod spec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grids::{init_codes, sample_pair, DynamicBlend, DynamicCodes, StaticBlend, StaticCodes};
use crate::tensor::{chw_to_hwc, hwc_to_chw, Real, Tensor};

pub use cca::{cca_backward, cca_fuse, CcaCache, CcaParams};
pub use layers::Conv;
pub use spec::{FusionDecoderSpec, ModelSpec, NervBlockSpec};

/// Conv → pixel-shuffle → GELU. Returns `(activation, pre_activation)`.
pub fn nerv_block_forward<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    spec: &NervBlockSpec,
    conv: &Conv<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    check_block(x, h, w, spec, conv)?;
    let conv_out = conv.forward(x, h, w);
    let pre = layers::pixel_shuffle(&conv_out, spec.out_channels, h, w, spec.upscale);
    let out = pre.iter().map(|&v| layers::gelu(v)).collect();
    Ok((out, pre))
}

/// Backward of [`nerv_block_forward`]; returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn nerv_block_backward<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    spec: &NervBlockSpec,
    conv: &Conv<T>,
    pre: &[T],
    d_out: &[T],
    grad: &mut Conv<T>,
) -> Vec<T> {
    let d_pre: Vec<T> = d_out
        .iter()
        .zip(pre)
        .map(|(&g, &p)| g * layers::gelu_grad(p))
        .collect();
    let d_conv = layers::pixel_unshuffle(&d_pre, spec.out_channels, h, w, spec.upscale);
    conv.backward(x, h, w, &d_conv, grad)
}

fn check_block<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    spec: &NervBlockSpec,
    conv: &Conv<T>,
) -> Result<()> {
    let expect = [
        spec.conv_channels(),
        spec.in_channels,
        spec.kernel_size,
        spec.kernel_size,
    ];
    if conv.weight.shape() != expect {
        return Err(Error::ShapeMismatch(format!(
            "block weight {:?} does not match spec {expect:?}",
            conv.weight.shape()
        )));
    }
    if x.len() != spec.in_channels * h * w {
        return Err(Error::ShapeMismatch(format!(
            "block input has {} values, expected {}x{h}x{w}",
            x.len(),
            spec.in_channels
        )));
    }
    Ok(())
}

/// Which optimizer group a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Code,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Code,
    Weight,
    Bias,
}

/// Every trainable tensor of a model, including both code grids.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    pub static_codes: StaticCodes<T>,
    pub dynamic_codes: DynamicCodes<T>,
    pub static_align: Conv<T>,
    pub dynamic_align: Conv<T>,
    pub cca: CcaParams<T>,
    pub blocks: Vec<Conv<T>>,
    pub head: Conv<T>,
}

/// A named view of one parameter tensor.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub role: ParamRole,
    pub tensor: &'a Tensor<T>,
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub role: ParamRole,
    pub tensor: &'a mut Tensor<T>,
}

impl<T> ParameterStore<T> {
    fn named_convs(&self) -> Vec<(String, &Conv<T>)> {
        let mut convs = vec![
            ("static_align".to_string(), &self.static_align),
            ("dynamic_align".to_string(), &self.dynamic_align),
            ("cca.query".to_string(), &self.cca.query),
            ("cca.key".to_string(), &self.cca.key),
            ("cca.value".to_string(), &self.cca.value),
        ];
        convs.extend(
            self.blocks
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("blocks.{i}"), c)),
        );
        convs.push(("head".to_string(), &self.head));
        convs
    }
}

impl<T: Real> ParameterStore<T> {
    /// Tensors in their canonical order (codes first, then decoder layers).
    pub fn tensors(&self) -> Vec<ParamRef<'_, T>> {
        let code = |name: &str, tensor| ParamRef {
            name: name.to_string(),
            group: ParamGroup::Code,
            role: ParamRole::Code,
            tensor,
        };
        let mut out = vec![
            code("static_codes", &self.static_codes.grid),
            code("dynamic_codes", &self.dynamic_codes.grid),
        ];
        for (prefix, conv) in self.named_convs() {
            for (suffix, role, tensor) in [
                ("weight", ParamRole::Weight, &conv.weight),
                ("bias", ParamRole::Bias, &conv.bias),
            ] {
                out.push(ParamRef {
                    name: format!("{prefix}.{suffix}"),
                    group: ParamGroup::Decoder,
                    role,
                    tensor,
                });
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let names: Vec<(String, ParamRole)> = self
            .named_convs()
            .into_iter()
            .flat_map(|(prefix, _)| {
                [
                    (format!("{prefix}.weight"), ParamRole::Weight),
                    (format!("{prefix}.bias"), ParamRole::Bias),
                ]
            })
            .collect();
        let Self {
            static_codes,
            dynamic_codes,
            static_align,
            dynamic_align,
            cca,
            blocks,
            head,
        } = self;
        let mut out = Vec::with_capacity(names.len() + 2);
        for (name, tensor) in [
            ("static_codes", &mut static_codes.grid),
            ("dynamic_codes", &mut dynamic_codes.grid),
        ] {
            out.push(ParamMut {
                name: name.to_string(),
                group: ParamGroup::Code,
                role: ParamRole::Code,
                tensor,
            });
        }
        let convs = [
            static_align,
            dynamic_align,
            &mut cca.query,
            &mut cca.key,
            &mut cca.value,
        ]
        .into_iter()
        .chain(blocks.iter_mut())
        .chain(std::iter::once(head));
        let tensors = convs.flat_map(|conv| [&mut conv.weight, &mut conv.bias]);
        for ((name, role), tensor) in names.into_iter().zip(tensors) {
            out.push(ParamMut {
                name,
                group: ParamGroup::Decoder,
                role,
                tensor,
            });
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for p in out.tensors_mut() {
            p.tensor.fill(T::zero());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn grid_param_count(&self) -> usize {
        self.static_codes.grid.len() + self.dynamic_codes.grid.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|p| p.tensor.is_finite())
    }

    /// `self += alpha * other` over every tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.tensor.axpy(alpha, src.tensor);
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let conv = |c: &Conv<T>| Conv {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        ParameterStore {
            static_codes: StaticCodes::new(
                self.static_codes.grid.cast(),
                self.static_codes.timeline,
            )
            .expect("shape preserved"),
            dynamic_codes: DynamicCodes::new(
                self.dynamic_codes.grid.cast(),
                self.dynamic_codes.timeline,
            )
            .expect("shape preserved"),
            static_align: conv(&self.static_align),
            dynamic_align: conv(&self.dynamic_align),
            cca: CcaParams {
                query: conv(&self.cca.query),
                key: conv(&self.cca.key),
                value: conv(&self.cca.value),
            },
            blocks: self.blocks.iter().map(conv).collect(),
            head: conv(&self.head),
        }
    }
}

/// Zero-valued parameters laid out for `spec`.
pub fn zero_store<T: Real>(spec: &ModelSpec) -> Result<ParameterStore<T>> {
    spec.validate()?;
    let dec = &spec.decoder;
    let (hs, ws, ds) = dec.static_shape;
    let (hd, wd, dd) = dec.dynamic_shape;
    let block_conv =
        |b: NervBlockSpec| Conv::zeros(b.in_channels, b.conv_channels(), b.kernel_size);
    Ok(ParameterStore {
        static_codes: StaticCodes::new(
            Tensor::zeros(&[spec.timeline.static_codes, hs, ws, ds]),
            spec.timeline,
        )?,
        dynamic_codes: DynamicCodes::new(
            Tensor::zeros(&[spec.timeline.dynamic_codes, hd, wd, dd]),
            spec.timeline,
        )?,
        static_align: block_conv(dec.static_align_block()),
        dynamic_align: block_conv(dec.dynamic_align_block()),
        cca: CcaParams::zeros(dec.c1),
        blocks: dec
            .upsampling_blocks()
            .into_iter()
            .map(block_conv)
            .collect(),
        head: Conv::zeros(dec.head_in_channels(), 3, dec.head_kernel),
    })
}

/// Initial value of the output head bias, centred in the clamp range.
pub const HEAD_BIAS_INIT: f64 = 0.5;

fn init_conv<T: Real>(conv: &mut Conv<T>, rng: &mut ChaCha8Rng) {
    let fan_in = conv.in_channels() * conv.kernel() * conv.kernel();
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in conv
        .weight
        .data_mut()
        .iter_mut()
        .chain(conv.bias.data_mut())
    {
        *v = T::lit(rng.gen_range(-bound..bound));
    }
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    pub t: f64,
    static_blend: StaticBlend<T>,
    dynamic_blend: DynamicBlend<T>,
    static_in: Vec<T>,
    dynamic_in: Vec<T>,
    static_pre: Vec<T>,
    static_feat: Vec<T>,
    dynamic_pre: Vec<T>,
    dynamic_feat: Vec<T>,
    cca: CcaCache<T>,
    block_inputs: Vec<Vec<T>>,
    block_pres: Vec<Vec<T>>,
    head_in: Vec<T>,
    head_out: Vec<T>,
}

/// A decodable video representation: spec plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: ParameterStore<T>,
}

impl<T: Real> Model<T> {
    /// Fresh model with seeded normal codes and uniform fan-in scaled convolutions.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut params = zero_store::<T>(&spec)?;
        let (statics, dynamics) = init_codes(
            spec.timeline,
            spec.decoder.static_shape,
            spec.decoder.dynamic_shape,
            seed,
        )?;
        params.static_codes = statics;
        params.dynamic_codes = dynamics;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_dec0_de00_0001);
        init_conv(&mut params.static_align, &mut rng);
        init_conv(&mut params.dynamic_align, &mut rng);
        init_conv(&mut params.cca.query, &mut rng);
        init_conv(&mut params.cca.key, &mut rng);
        init_conv(&mut params.cca.value, &mut rng);
        for b in &mut params.blocks {
            init_conv(b, &mut rng);
        }
        init_conv(&mut params.head, &mut rng);
        params.head.bias.fill(T::lit(HEAD_BIAS_INIT));
        Ok(Self { spec, params })
    }

    /// Pairs a spec with externally supplied parameters after checking every shape.
    pub fn from_parts(spec: ModelSpec, params: ParameterStore<T>) -> Result<Self> {
        let reference = zero_store::<T>(&spec)?;
        for (want, got) in reference.tensors().iter().zip(params.tensors()) {
            if want.name != got.name || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter `{}` has shape {:?}, spec needs {:?}",
                    got.name,
                    got.tensor.shape(),
                    want.tensor.shape()
                )));
            }
        }
        if reference.blocks.len() != params.blocks.len() {
            return Err(Error::ShapeMismatch(
                "upsampling block count differs from spec".into(),
            ));
        }
        Ok(Self { spec, params })
    }

    pub fn frames(&self) -> usize {
        self.spec.timeline.frames
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    /// Decodes frame `t` (fractional `t` interpolates between frames) to `[H, W, 3]` in `[0, 1]`.
    pub fn decode(&self, t: f64) -> Result<Tensor<T>> {
        self.forward(t).map(|(frame, _)| frame)
    }

    pub fn forward(&self, t: f64) -> Result<(Tensor<T>, Tape<T>)> {
        let dec = &self.spec.decoder;
        let p = &self.params;
        let pair = sample_pair(&p.static_codes, &p.dynamic_codes, t)?;
        let (hs, ws, ds) = dec.static_shape;
        let (hd, wd, dd) = dec.dynamic_shape;

        let mut static_in = vec![T::zero(); hs * ws * ds];
        hwc_to_chw(pair.static_code.data(), hs, ws, ds, &mut static_in);
        let mut dynamic_in = vec![T::zero(); hd * wd * dd];
        hwc_to_chw(pair.dynamic_code.data(), hd, wd, dd, &mut dynamic_in);

        let (static_feat, static_pre) = nerv_block_forward(
            &static_in,
            hs,
            ws,
            &dec.static_align_block(),
            &p.static_align,
        )?;
        let (dynamic_feat, dynamic_pre) = nerv_block_forward(
            &dynamic_in,
            hd,
            wd,
            &dec.dynamic_align_block(),
            &p.dynamic_align,
        )?;
        let (fused, cca) = cca_fuse(&static_feat, &dynamic_feat, &p.cca, hd, wd);

        let mut x = fused;
        let (mut h, mut w) = (hd, wd);
        let mut block_inputs = Vec::with_capacity(p.blocks.len());
        let mut block_pres = Vec::with_capacity(p.blocks.len());
        for (spec, conv) in dec.upsampling_blocks().iter().zip(&p.blocks) {
            let (out, pre) = nerv_block_forward(&x, h, w, spec, conv)?;
            block_inputs.push(std::mem::replace(&mut x, out));
            block_pres.push(pre);
            h *= spec.upscale;
            w *= spec.upscale;
        }
        let head_out = p.head.forward(&x, h, w);
        let clamped: Vec<T> = head_out
            .iter()
            .map(|&v| v.max(T::zero()).min(T::one()))
            .collect();
        let mut frame = Tensor::zeros(&[h, w, 3]);
        chw_to_hwc(&clamped, 3, h, w, frame.data_mut());

        let tape = Tape {
            t,
            static_blend: pair.static_blend,
            dynamic_blend: pair.dynamic_blend,
            static_in,
            dynamic_in,
            static_pre,
            static_feat,
            dynamic_pre,
            dynamic_feat,
            cca,
            block_inputs,
            block_pres,
            head_in: x,
            head_out,
        };
        Ok((frame, tape))
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the decoded `[H, W, 3]` frame is `d_frame`.
    pub fn backward(&self, tape: &Tape<T>, d_frame: &[T], grads: &mut ParameterStore<T>) {
        let dec = &self.spec.decoder;
        let p = &self.params;
        let (h_out, w_out) = dec.output;
        let (hs, ws, ds) = dec.static_shape;
        let (hd, wd, dd) = dec.dynamic_shape;

        let mut d_head = vec![T::zero(); 3 * h_out * w_out];
        hwc_to_chw(d_frame, h_out, w_out, 3, &mut d_head);
        for (d, &y) in d_head.iter_mut().zip(&tape.head_out) {
            if y < T::zero() || y > T::one() {
                *d = T::zero();
            }
        }
        let mut d_x = p
            .head
            .backward(&tape.head_in, h_out, w_out, &d_head, &mut grads.head);

        let blocks = dec.upsampling_blocks();
        let (mut h, mut w) = (h_out, w_out);
        for (k, spec) in blocks.iter().enumerate().rev() {
            h /= spec.upscale;
            w /= spec.upscale;
            d_x = nerv_block_backward(
                &tape.block_inputs[k],
                h,
                w,
                spec,
                &p.blocks[k],
                &tape.block_pres[k],
                &d_x,
                &mut grads.blocks[k],
            );
        }

        let (d_static_feat, d_dynamic_feat) = cca_backward(
            &tape.static_feat,
            &tape.dynamic_feat,
            &p.cca,
            &tape.cca,
            &d_x,
            hd,
            wd,
            &mut grads.cca,
        );
        let d_static_in = nerv_block_backward(
            &tape.static_in,
            hs,
            ws,
            &dec.static_align_block(),
            &p.static_align,
            &tape.static_pre,
            &d_static_feat,
            &mut grads.static_align,
        );
        let d_dynamic_in = nerv_block_backward(
            &tape.dynamic_in,
            hd,
            wd,
            &dec.dynamic_align_block(),
            &p.dynamic_align,
            &tape.dynamic_pre,
            &d_dynamic_feat,
            &mut grads.dynamic_align,
        );

        let mut d_static_code = vec![T::zero(); d_static_in.len()];
        chw_to_hwc(&d_static_in, ds, hs, ws, &mut d_static_code);
        StaticCodes::accumulate_grad(
            &tape.static_blend,
            &d_static_code,
            &mut grads.static_codes.grid,
        );
        let mut d_dynamic_code = vec![T::zero(); d_dynamic_in.len()];
        chw_to_hwc(&d_dynamic_in, dd, hd, wd, &mut d_dynamic_code);
        DynamicCodes::accumulate_grad(
            &tape.dynamic_blend,
            &d_dynamic_code,
            &mut grads.dynamic_codes.grid,
        );
    }
}
