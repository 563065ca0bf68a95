use serde::{Deserialize, Serialize};

use super::layer::relu_in_place;
use super::{Linear, LinearGrad, Matrix};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerRole {
    Feature,
    Projector,
    Head,
}

impl LayerRole {
    pub fn tag(self) -> &'static str {
        match self {
            LayerRole::Feature => "feat",
            LayerRole::Projector => "proj",
            LayerRole::Head => "head",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "feat" => Some(LayerRole::Feature),
            "proj" => Some(LayerRole::Projector),
            "head" => Some(LayerRole::Head),
            _ => None,
        }
    }
}

/// Shape of a network before initialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub d_in: usize,
    /// Widths of the ReLU feature layers; the last one is the feature dimension.
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    /// When set, a linear projector maps the last hidden width to this size
    /// and the head reads from it.
    pub projector_dim: Option<usize>,
}

impl MlpArch {
    pub fn new(d_in: usize, hidden: Vec<usize>, n_classes: usize) -> Self {
        Self {
            d_in,
            hidden,
            n_classes,
            projector_dim: None,
        }
    }

    pub fn with_projector(mut self, dim: usize) -> Self {
        self.projector_dim = Some(dim);
        self
    }

    /// Output width of the feature layers, before any projector.
    pub fn backbone_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.d_in)
    }

    pub fn feature_dim(&self) -> usize {
        self.projector_dim.unwrap_or_else(|| self.backbone_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.n_classes < 2 {
            return Err(Error::config(format!(
                "architecture needs d_in >= 1 and at least 2 classes (got d_in={}, k={})",
                self.d_in, self.n_classes
            )));
        }
        if self.hidden.contains(&0) || self.projector_dim == Some(0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    /// Deterministic initialization; the projector draws from its own stream.
    pub fn init(&self, seed: u64) -> Result<Mlp> {
        self.validate()?;
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let mut feature_layers = Vec::with_capacity(self.hidden.len());
        let mut d = self.d_in;
        for &w in &self.hidden {
            feature_layers.push(Linear::init_uniform(w, d, &mut rng));
            d = w;
        }
        let head_rng_layer = Linear::init_uniform(self.n_classes, self.feature_dim(), &mut rng);
        let projector = self.projector_dim.map(|p| {
            let mut prng = rng::stream(seed, Stream::Projector, 0);
            Linear::init_uniform(p, d, &mut prng)
        });
        Mlp::new(feature_layers, projector, head_rng_layer)
    }
}

/// Dense network `f = head ∘ [projector] ∘ features`, every feature layer
/// followed by ReLU, projector and head affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    feature_layers: Vec<Linear>,
    projector: Option<Linear>,
    head: Linear,
}

/// Activations kept from a forward pass for the backward pass.
/// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub(crate) acts: Vec<Matrix>,
    pub(crate) n_feature_layers: usize,
    has_projector: bool,
}

impl Trace {
    pub fn features(&self) -> &Matrix {
        &self.acts[self.acts.len() - 2]
    }

    pub fn logits(&self) -> &Matrix {
        self.acts.last().expect("trace always holds the head output")
    }
}

/// Where the upstream loss gradient was taken.
#[derive(Debug, Clone)]
pub enum Upstream {
    Logits(Matrix),
    Features(Matrix),
}

/// One optional gradient per layer, in [`Mlp::layers`] order. Frozen layers
/// and layers the loss never reaches get `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LinearGrad>>,
}

impl Gradients {
    pub fn is_zero(&self) -> bool {
        self.layers.iter().flatten().all(LinearGrad::is_zero)
    }

    /// `self += scale * other`, layer by layer.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                        *x += scale * y;
                    }
                    for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                        *x += scale * y;
                    }
                }
                (None, Some(b)) => {
                    let mut g = b.clone();
                    g.weight.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
                    g.bias.iter_mut().for_each(|v| *v *= scale);
                    *a = Some(g);
                }
                _ => {}
            }
        }
    }
}

impl Mlp {
    pub fn new(feature_layers: Vec<Linear>, projector: Option<Linear>, head: Linear) -> Result<Self> {
        let mut d = match feature_layers.first().or(projector.as_ref()) {
            Some(l) => l.d_in(),
            None => head.d_in(),
        };
        for (i, l) in feature_layers.iter().chain(projector.as_ref()).enumerate() {
            if l.d_in() != d {
                return Err(Error::shape(
                    "Mlp::new layer chain",
                    format!("d_in {d} at layer {i}"),
                    format!("d_in {}", l.d_in()),
                ));
            }
            d = l.d_out();
        }
        if head.d_in() != d {
            return Err(Error::shape("Mlp::new head input", d, head.d_in()));
        }
        Ok(Self {
            feature_layers,
            projector,
            head,
        })
    }

    pub fn d_in(&self) -> usize {
        self.feature_layers
            .first()
            .or(self.projector.as_ref())
            .unwrap_or(&self.head)
            .d_in()
    }

    /// Head input width.
    pub fn d_feat(&self) -> usize {
        self.head.d_in()
    }

    pub fn n_classes(&self) -> usize {
        self.head.d_out()
    }

    pub fn feature_layers(&self) -> &[Linear] {
        &self.feature_layers
    }

    pub fn projector(&self) -> Option<&Linear> {
        self.projector.as_ref()
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Linear {
        &mut self.head
    }

    pub fn projector_mut(&mut self) -> Option<&mut Linear> {
        self.projector.as_mut()
    }

    pub fn feature_layers_mut(&mut self) -> &mut [Linear] {
        &mut self.feature_layers
    }

    pub fn into_parts(self) -> (Vec<Linear>, Option<Linear>, Linear) {
        (self.feature_layers, self.projector, self.head)
    }

    /// All layers in forward order with their roles.
    pub fn layers(&self) -> impl Iterator<Item = (LayerRole, &Linear)> {
        self.feature_layers
            .iter()
            .map(|l| (LayerRole::Feature, l))
            .chain(self.projector.iter().map(|l| (LayerRole::Projector, l)))
            .chain(std::iter::once((LayerRole::Head, &self.head)))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = (LayerRole, &mut Linear)> {
        self.feature_layers
            .iter_mut()
            .map(|l| (LayerRole::Feature, l))
            .chain(self.projector.iter_mut().map(|l| (LayerRole::Projector, l)))
            .chain(std::iter::once((LayerRole::Head, &mut self.head)))
    }

    pub fn n_layers(&self) -> usize {
        self.feature_layers.len() + usize::from(self.projector.is_some()) + 1
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(|(_, l)| l.n_params()).sum()
    }

    pub fn set_all_frozen(&mut self, frozen: bool) {
        self.layers_mut().for_each(|(_, l)| l.frozen = frozen);
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d_in() {
            return Err(Error::shape("model input columns (d_in)", self.d_in(), x.cols()));
        }
        Ok(())
    }

    /// Head input for every row of `x`.
    pub fn forward_features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.feature_layers {
            h = layer.forward(&h)?;
            relu_in_place(&mut h);
        }
        if let Some(p) = &self.projector {
            h = p.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_logits(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let features = self.forward_features(x)?;
        let logits = self.head.forward(&features)?;
        Ok((features, logits))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.forward_logits(x)?.1.argmax_rows())
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.clone());
        for layer in &self.feature_layers {
            let mut h = layer.forward(acts.last().unwrap())?;
            relu_in_place(&mut h);
            acts.push(h);
        }
        if let Some(p) = &self.projector {
            let h = p.forward(acts.last().unwrap())?;
            acts.push(h);
        }
        let logits = self.head.forward(acts.last().unwrap())?;
        acts.push(logits);
        Ok(Trace {
            acts,
            n_feature_layers: self.feature_layers.len(),
            has_projector: self.projector.is_some(),
        })
    }

    /// Reverse-mode pass through the layers below the point where `upstream`
    /// was taken. Frozen layers pass gradient through but receive none.
    pub fn backward(&self, trace: &Trace, upstream: &Upstream) -> Result<Gradients> {
        if trace.n_feature_layers != self.feature_layers.len()
            || trace.has_projector != self.projector.is_some()
        {
            return Err(Error::shape(
                "Mlp::backward trace",
                "trace from this model",
                "trace from a different architecture",
            ));
        }
        let n = trace.acts[0].rows();
        let n_layers = self.n_layers();
        let mut layers: Vec<Option<LinearGrad>> = vec![None; n_layers];
        let all: Vec<&Linear> = self.layers().map(|(_, l)| l).collect();

        // index of the first layer *below* the upstream point
        let (mut top, mut grad) = match upstream {
            Upstream::Logits(g) => {
                g.ensure_shape("Mlp::backward upstream (logits)", n, self.n_classes())?;
                (n_layers, g.clone())
            }
            Upstream::Features(g) => {
                g.ensure_shape("Mlp::backward upstream (features)", n, self.d_feat())?;
                (n_layers - 1, g.clone())
            }
        };
        while top > 0 {
            let idx = top - 1;
            let layer = all[idx];
            // feature layers are followed by ReLU: mask by their output
            if idx < self.feature_layers.len() {
                let out = &trace.acts[idx + 1];
                for (g, &h) in grad.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    if h <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let below_trainable = all[..idx].iter().any(|l| !l.frozen);
            let (lg, gin) = layer.backward(&trace.acts[idx], &grad, below_trainable);
            if !layer.frozen {
                layers[idx] = Some(lg);
            }
            match gin {
                Some(g) => grad = g,
                None => break,
            }
            top = idx;
        }
        Ok(Gradients { layers })
    }
}
