//! The two local-feature extractors (sub-region and character level) and the
//! writer classifier head.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{
    conv_output_extent, init_conv, maxpool2d, maxpool2d_backward, relu_inplace, relu_mask_inplace, Conv2d, ConvCache,
    Linear, PoolRouting,
};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Conv/pool blocks only; every spatial cell of the last map is a local feature.
    SubRegion,
    /// Conv/pool blocks followed by a fully connected layer; one local feature per patch.
    CharLevel,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::SubRegion => "sub_region",
            Variant::CharLevel => "char_level",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sub_region" => Ok(Variant::SubRegion),
            "char_level" => Ok(Variant::CharLevel),
            other => Err(Error::Spec(format!("unknown network variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub block_filters: Vec<usize>,
    pub kernel: usize,
    pub pad: usize,
    pub conv_stride: usize,
    pub pool: usize,
    /// Width of the fully connected layer; only used by [`Variant::CharLevel`].
    pub fc_width: usize,
    pub input_side: usize,
}

impl NetworkSpec {
    /// Four blocks of (32, 64, 256, 1024) filters: a 4×4×1024 map per 64×64 patch.
    pub fn sub_region() -> Self {
        Self {
            variant: Variant::SubRegion,
            block_filters: vec![32, 64, 256, 1024],
            kernel: 5,
            pad: 2,
            conv_stride: 1,
            pool: 2,
            fc_width: 0,
            input_side: 64,
        }
    }

    /// Three blocks of (32, 64, 256) filters, then a 1024-wide fully connected layer.
    pub fn char_level() -> Self {
        Self { variant: Variant::CharLevel, block_filters: vec![32, 64, 256], fc_width: 1024, ..Self::sub_region() }
    }

    /// Same topology with different filter counts.
    pub fn with_filters(mut self, filters: &[usize]) -> Self {
        self.block_filters = filters.to_vec();
        self
    }

    pub fn with_fc_width(mut self, width: usize) -> Self {
        self.fc_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_filters.is_empty() {
            return Err(Error::Spec("network needs at least one block".into()));
        }
        if self.block_filters.contains(&0) {
            return Err(Error::Spec(format!("filter counts must be positive: {:?}", self.block_filters)));
        }
        if self.kernel == 0 || self.pool == 0 || self.conv_stride == 0 || self.input_side == 0 {
            return Err(Error::Spec("kernel, pool, conv stride and input side must be positive".into()));
        }
        if self.variant == Variant::CharLevel && self.fc_width == 0 {
            return Err(Error::Spec("character-level network needs fc_width > 0".into()));
        }
        let mut side = self.input_side;
        for _ in &self.block_filters {
            if self.kernel > side + 2 * self.pad {
                return Err(Error::Spec(format!("kernel {} does not fit a {side}x{side} map", self.kernel)));
            }
            side = conv_output_extent(side, self.kernel, self.conv_stride, self.pad);
            side = side.div_ceil(self.pool);
        }
        Ok(())
    }

    /// Spatial side of each block's pooled output.
    pub fn pooled_sides(&self) -> Vec<usize> {
        let mut side = self.input_side;
        self.block_filters
            .iter()
            .map(|_| {
                side = conv_output_extent(side, self.kernel, self.conv_stride, self.pad);
                side = side.div_ceil(self.pool);
                side
            })
            .collect()
    }

    /// `[C, H, W]` after every layer (conv, pool, and FC if present), starting at the input.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        let mut trace = vec![vec![1, self.input_side, self.input_side]];
        let mut side = self.input_side;
        for &f in &self.block_filters {
            side = conv_output_extent(side, self.kernel, self.conv_stride, self.pad);
            trace.push(vec![f, side, side]);
            side = side.div_ceil(self.pool);
            trace.push(vec![f, side, side]);
        }
        if self.variant == Variant::CharLevel {
            trace.push(vec![self.fc_width, 1, 1]);
        }
        trace
    }

    /// Side `L` of the local feature map.
    pub fn local_side(&self) -> usize {
        match self.variant {
            Variant::SubRegion => *self.pooled_sides().last().expect("validated spec"),
            Variant::CharLevel => 1,
        }
    }

    /// Depth `D` of every local feature.
    pub fn depth(&self) -> usize {
        match self.variant {
            Variant::SubRegion => *self.block_filters.last().expect("validated spec"),
            Variant::CharLevel => self.fc_width,
        }
    }
}

/// An `L×L×D` grid of local features for one patch, stored `[i, j, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFeatureMap {
    pub side: usize,
    pub depth: usize,
    pub values: Tensor,
}

impl LocalFeatureMap {
    pub fn new(side: usize, depth: usize, values: Tensor) -> Result<Self> {
        values.expect_shape(&[side, side, depth], "local feature map")?;
        Ok(Self { side, depth, values })
    }

    pub fn positions(&self) -> usize {
        self.side * self.side
    }

    /// Feature vector at spatial position `p = i·L + j`.
    pub fn at(&self, p: usize) -> &[f64] {
        &self.values.data()[p * self.depth..(p + 1) * self.depth]
    }
}

/// Convolutional feature extractor: ordered blocks plus optional FC layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    convs: Vec<Conv2d>,
    fc: Option<Linear>,
}

struct BlockCache {
    conv: ConvCache,
    /// conv output after ReLU
    activated: Tensor,
    routing: PoolRouting,
}

/// Everything [`Network::backward`] needs from a forward pass.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    /// FC input and its ReLU'd output (character level only)
    fc: Option<(Tensor, Tensor)>,
}

/// Builds a network with He-normal weights and zero biases drawn from `seed`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut rng = rng_for(seed, "network-init", 0);
    let mut c_in = 1;
    let mut convs = Vec::with_capacity(spec.block_filters.len());
    for &f in &spec.block_filters {
        convs.push(init_conv(c_in, f, spec.kernel, spec.conv_stride, spec.pad, &mut rng));
        c_in = f;
    }
    let fc = match spec.variant {
        Variant::SubRegion => None,
        Variant::CharLevel => {
            let side = *spec.pooled_sides().last().expect("validated spec");
            Some(Linear::init(c_in * side * side, spec.fc_width, &mut rng))
        }
    };
    Ok(Network { spec: spec.clone(), convs, fc })
}

impl Network {
    /// Reassembles a network from a flat parameter list in declaration order.
    pub fn from_params(spec: &NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        let mut net = build_network(spec, 0)?;
        let expected: Vec<Vec<usize>> = net.params().iter().map(|p| p.shape().to_vec()).collect();
        if params.len() != expected.len() {
            return Err(Error::Format(format!(
                "network expects {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((slot, p), shape) in net.params_mut().into_iter().zip(params).zip(expected) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter shape {:?} does not match spec shape {shape:?}",
                    p.shape()
                )));
            }
            *slot = p;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Parameters in declaration order: conv weight/bias per block, then FC weight/bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        if let Some(fc) = &self.fc {
            out.push(&fc.weight);
            out.push(&fc.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        if let Some(fc) = &mut self.fc {
            out.push(&mut fc.weight);
            out.push(&mut fc.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Runs one `[1, S, S]` patch through the extractor, keeping the context
    /// needed for [`Network::backward`].
    pub fn forward_local(&self, patch: &Tensor, exec: Exec) -> Result<(LocalFeatureMap, ForwardCache)> {
        let side = self.spec.input_side;
        patch.expect_shape(&[1, side, side], "patch")?;
        let mut x = patch.clone();
        let mut blocks = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, cache) = conv.forward(&x, exec)?;
            relu_inplace(y.data_mut());
            let (pooled, routing) = maxpool2d(&y, self.spec.pool, self.spec.pool)?;
            blocks.push(BlockCache { conv: cache, activated: y, routing });
            x = pooled;
        }
        let (map, fc) = match &self.fc {
            None => (to_local_map(&x)?, None),
            Some(fc) => {
                let flat_len = x.len();
                let flat = x.reshape(&[flat_len])?;
                let mut h = fc.forward(&flat)?;
                relu_inplace(h.data_mut());
                let depth = h.len();
                let map = LocalFeatureMap::new(1, depth, h.clone().reshape(&[1, 1, depth])?)?;
                (map, Some((flat, h)))
            }
        };
        Ok((map, ForwardCache { blocks, fc }))
    }

    /// Forward pass without retaining any backward context.
    pub fn features(&self, patch: &Tensor, exec: Exec) -> Result<LocalFeatureMap> {
        Ok(self.forward_local(patch, exec)?.0)
    }

    /// Parameter gradients (declaration order) for a cotangent on the local feature map.
    pub fn backward(&self, cache: &ForwardCache, d_map: &Tensor, exec: Exec) -> Result<Vec<Tensor>> {
        let l = self.spec.local_side();
        let depth = self.spec.depth();
        d_map.expect_shape(&[l, l, depth], "local feature cotangent")?;
        let mut fc_grads = Vec::new();
        let mut d = match (&self.fc, &cache.fc) {
            (None, _) => from_local_map(d_map, depth, l)?,
            (Some(fc), Some((flat, h))) => {
                let mut g = Tensor::from_vec(d_map.data().to_vec());
                relu_mask_inplace(h.data(), g.data_mut());
                let grads = fc.backward(flat, &g)?;
                fc_grads = grads.d_params;
                let last = blocks_last_shape(&self.spec);
                grads.d_input.expect("linear backward yields an input gradient").reshape(&last)?
            }
            (Some(_), None) => return Err(Error::shape("forward cache lacks the FC context")),
        };
        let mut grads = vec![None; self.convs.len()];
        for (b, (conv, bc)) in self.convs.iter().zip(&cache.blocks).enumerate().rev() {
            let mut dy = maxpool2d_backward(&bc.routing, &d)?;
            relu_mask_inplace(bc.activated.data(), dy.data_mut());
            let g = conv.backward(&bc.conv, &dy, b > 0, exec)?;
            grads[b] = Some(g.d_params);
            if let Some(dx) = g.d_input {
                d = dx;
            }
        }
        let mut out: Vec<Tensor> = grads.into_iter().flat_map(|g| g.expect("every block visited")).collect();
        out.extend(fc_grads);
        Ok(out)
    }
}

fn blocks_last_shape(spec: &NetworkSpec) -> Vec<usize> {
    let side = *spec.pooled_sides().last().expect("validated spec");
    vec![*spec.block_filters.last().expect("validated spec"), side, side]
}

/// `[D, L, L]` → `[L, L, D]`
fn to_local_map(x: &Tensor) -> Result<LocalFeatureMap> {
    let s = x.shape();
    let (depth, l) = (s[0], s[1]);
    let src = x.data();
    let mut v = vec![0.0; depth * l * l];
    for d in 0..depth {
        for p in 0..l * l {
            v[p * depth + d] = src[d * l * l + p];
        }
    }
    LocalFeatureMap::new(l, depth, Tensor::new(&[l, l, depth], v)?)
}

/// `[L, L, D]` → `[D, L, L]`
fn from_local_map(g: &Tensor, depth: usize, l: usize) -> Result<Tensor> {
    let src = g.data();
    let mut v = vec![0.0; depth * l * l];
    for p in 0..l * l {
        for d in 0..depth {
            v[d * l * l + p] = src[p * depth + d];
        }
    }
    Tensor::new(&[depth, l, l], v)
}

/// Fully connected layer over writers.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        Ok(Self { linear: Linear::new(weight, bias)? })
    }

    pub fn init(depth: usize, num_writers: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, "head-init", 0);
        Self { linear: Linear::init(depth, num_writers, &mut rng) }
    }

    pub fn num_writers(&self) -> usize {
        self.linear.out_dim()
    }

    pub fn depth(&self) -> usize {
        self.linear.in_dim()
    }
}

/// Writer logits for a global feature.
pub fn classify(global: &Tensor, head: &ClassifierHead) -> Result<Tensor> {
    if global.len() != head.depth() {
        return Err(Error::shape(format!(
            "global feature depth {} does not match head depth {}",
            global.len(),
            head.depth()
        )));
    }
    head.linear.forward(global)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// 1-based rank of `target` under descending scores with lowest-index tie-breaking.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores.iter().enumerate().filter(|&(i, &s)| s > t || (s == t && i < target)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error, softmax_cross_entropy};
    use rand::Rng;

    fn tiny(variant: Variant) -> NetworkSpec {
        let base = match variant {
            Variant::SubRegion => NetworkSpec::sub_region().with_filters(&[2, 3]),
            Variant::CharLevel => NetworkSpec::char_level().with_filters(&[2, 3]).with_fc_width(4),
        };
        NetworkSpec { input_side: 8, kernel: 3, pad: 1, ..base }
    }

    #[test]
    fn sub_region_trace() {
        let spec = NetworkSpec::sub_region().with_filters(&[8, 16, 32, 64]);
        let trace = spec.shape_trace();
        assert_eq!(trace[0], vec![1, 64, 64]);
        assert_eq!(trace[1], vec![8, 64, 64]);
        assert_eq!(trace[2], vec![8, 32, 32]);
        assert_eq!(trace.last().unwrap(), &vec![64, 4, 4]);
        assert_eq!(spec.pooled_sides(), vec![32, 16, 8, 4]);
        assert_eq!(NetworkSpec::sub_region().shape_trace().last().unwrap(), &vec![1024, 4, 4]);
    }

    #[test]
    fn char_level_trace() {
        let spec = NetworkSpec::char_level();
        let trace = spec.shape_trace();
        assert_eq!(trace[trace.len() - 2], vec![256, 8, 8]);
        assert_eq!(trace.last().unwrap(), &vec![1024, 1, 1]);
        assert_eq!(spec.pooled_sides(), vec![32, 16, 8]);
        assert_eq!((spec.local_side(), spec.depth()), (1, 1024));
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(build_network(&NetworkSpec::sub_region().with_filters(&[]), 0), Err(Error::Spec(_))));
        assert!(matches!(build_network(&NetworkSpec::sub_region().with_filters(&[4, 0]), 0), Err(Error::Spec(_))));
        assert!(matches!(build_network(&NetworkSpec::char_level().with_fc_width(0), 0), Err(Error::Spec(_))));
    }

    #[test]
    fn seeded_initialization_is_deterministic() {
        let spec = NetworkSpec::sub_region().with_filters(&[4, 8]);
        assert_eq!(build_network(&spec, 11).unwrap(), build_network(&spec, 11).unwrap());
        assert_ne!(build_network(&spec, 11).unwrap(), build_network(&spec, 12).unwrap());
    }

    #[test]
    fn zero_patch_gives_zero_features() {
        for spec in [
            NetworkSpec::sub_region().with_filters(&[4, 4, 4, 8]),
            NetworkSpec::char_level().with_filters(&[4, 4, 4]).with_fc_width(8),
        ] {
            let net = build_network(&spec, 3).unwrap();
            let map = net.features(&Tensor::zeros(&[1, 64, 64]), Exec::Sequential).unwrap();
            assert_eq!((map.side, map.depth), (spec.local_side(), spec.depth()));
            assert!(map.values.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn wrong_patch_shape() {
        let net = build_network(&NetworkSpec::sub_region().with_filters(&[2, 2, 2, 2]), 0).unwrap();
        assert!(matches!(net.features(&Tensor::zeros(&[1, 32, 32]), Exec::Sequential), Err(Error::Shape(_))));
    }

    #[test]
    fn classify_hand_matvec() {
        let head =
            ClassifierHead::new(Tensor::new(&[3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap(), Tensor::zeros(&[3]))
                .unwrap();
        let logits = classify(&Tensor::from_vec(vec![2., 3.]), &head).unwrap();
        assert_eq!(logits.data(), &[2., 3., 5.]);
        assert_eq!(argmax(logits.data()), 2);
        let z = classify(&Tensor::zeros(&[2]), &head).unwrap();
        assert_eq!(z.data(), head.linear.bias.data());
        assert!(matches!(classify(&Tensor::zeros(&[3]), &head), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_and_rank_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(rank_of(&[1.0, 3.0, 3.0], 2), 2);
        assert_eq!(rank_of(&[1.0, 3.0, 3.0], 1), 1);
        assert_eq!(rank_of(&[1.0, 3.0, 2.0], 0), 3);
    }

    /// Loss through extractor (AA over positions) and head.
    fn end_to_end_loss(net: &Network, head: &ClassifierHead, patch: &Tensor) -> f64 {
        let map = net.features(patch, Exec::Sequential).unwrap();
        let pos = map.positions();
        let global: Vec<f64> =
            (0..map.depth).map(|d| (0..pos).map(|p| map.at(p)[d]).sum::<f64>() / pos as f64).collect();
        let logits = classify(&Tensor::from_vec(global), head).unwrap();
        softmax_cross_entropy(&logits, 1).unwrap().0
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        for variant in [Variant::SubRegion, Variant::CharLevel] {
            let spec = tiny(variant);
            let net = build_network(&spec, 5).unwrap();
            let head = ClassifierHead::init(spec.depth(), 3, 9);
            let mut rng = rng_for(1, "e2e", 0);
            let patch = Tensor::new(&[1, 8, 8], (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();

            let (map, cache) = net.forward_local(&patch, Exec::Sequential).unwrap();
            let pos = map.positions();
            let global: Vec<f64> =
                (0..map.depth).map(|d| (0..pos).map(|p| map.at(p)[d]).sum::<f64>() / pos as f64).collect();
            let logits = classify(&Tensor::from_vec(global.clone()), &head).unwrap();
            let (_, dl) = softmax_cross_entropy(&logits, 1).unwrap();
            let hg = head.linear.backward(&Tensor::from_vec(global), &dl).unwrap();
            let dg = hg.d_input.unwrap();
            let mut dmap = vec![0.0; pos * map.depth];
            for p in 0..pos {
                for d in 0..map.depth {
                    dmap[p * map.depth + d] = dg.data()[d] / pos as f64;
                }
            }
            let dmap = Tensor::new(map.values.shape(), dmap).unwrap();
            let grads = net.backward(&cache, &dmap, Exec::Sequential).unwrap();

            for (i, g) in grads.iter().enumerate() {
                let point = net.params()[i].clone();
                let num = numeric_gradient(
                    |t| {
                        let mut probe = net.clone();
                        *probe.params_mut()[i] = t.clone();
                        end_to_end_loss(&probe, &head, &patch)
                    },
                    &point,
                    1e-5,
                );
                let err = relative_error(g, &num);
                assert!(err < 1e-3, "{variant} param {i}: relative error {err}");
            }
        }
    }
}
