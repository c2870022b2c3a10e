//! Feature extractor, object classifier and domain discriminator.
//!
//! All three are plain MLPs over a shared [`ParamStore`]. Weights are stored
//! `fan_in × fan_out` so a layer computes `x @ W + b`.
//!
//! With CDAN conditioning the discriminator sees the row-wise outer product of
//! features and class probabilities, flattened feature-major / class-minor:
//! entry `f * num_classes + c` holds `feature[f] * prob[c]`. The outer product
//! is explicit; there is no randomized multilinear map.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Lower clamp applied to the discriminator's source probability.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    /// Discriminator sees the features directly.
    Plain,
    /// Discriminator sees `features ⊗ class_probs`.
    Cdan,
}

impl Conditioning {
    pub fn as_str(self) -> &'static str {
        match self {
            Conditioning::Plain => "plain",
            Conditioning::Cdan => "cdan",
        }
    }
}

impl std::str::FromStr for Conditioning {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(Conditioning::Plain),
            "cdan" => Ok(Conditioning::Cdan),
            other => Err(format!("expected `plain` or `cdan`, got `{other}`")),
        }
    }
}

/// Layer widths and conditioning of a [`ModelBundle`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Widths of the extractor layers; the last one is the feature dimension.
    pub extractor_widths: Vec<usize>,
    /// Hidden widths of the classifier head (empty = linear head).
    pub classifier_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub num_classes: usize,
    pub conditioning: Conditioning,
    /// Feed detached class probabilities into the CDAN conditioning.
    pub condition_detach: bool,
}

impl ModelSpec {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            input_dim,
            extractor_widths: vec![64, 32],
            classifier_hidden: Vec::new(),
            discriminator_hidden: vec![32],
            num_classes,
            conditioning: Conditioning::Plain,
            condition_detach: true,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.extractor_widths.last().unwrap_or(&self.input_dim)
    }

    pub fn discriminator_input_dim(&self) -> usize {
        match self.conditioning {
            Conditioning::Plain => self.feature_dim(),
            Conditioning::Cdan => self.feature_dim() * self.num_classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.extractor_widths.is_empty() {
            return Err(Error::invalid("extractor needs at least one layer"));
        }
        let all = self.extractor_widths.iter().chain(&self.classifier_hidden).chain(&self.discriminator_hidden);
        if all.into_iter().any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Stack of linear layers with relu between them; `relu_output` also
/// applies relu after the final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_output: bool,
}

impl Mlp {
    fn build(store: &mut ParamStore, prefix: &str, widths: &[usize], relu_output: bool) -> Mlp {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.insert(format!("{prefix}.{i}.weight"), zeros(w[0], w[1]));
                let bias = store.insert(format!("{prefix}.{i}.bias"), zeros(1, w[1]));
                Linear { weight, bias, fan_in: w[0], fan_out: w[1] }
            })
            .collect();
        Mlp { layers, relu_output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(store, layer.weight);
            let b = g.param(store, layer.bias);
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            if i < last || self.relu_output {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

fn zeros(rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, vec![0.0; rows * cols]).expect("positive widths")
}

/// Discriminator output for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainPrediction {
    pub p_source: f64,
}

impl DomainPrediction {
    pub fn new(p_source: f64) -> Self {
        DomainPrediction { p_source }
    }

    /// Probability of the target domain.
    pub fn p0(self) -> f64 {
        1.0 - self.p_source
    }
}

/// Parameters and layout of F (extractor), C (classifier), D (discriminator).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub extractor: Mlp,
    pub classifier: Mlp,
    pub discriminator: Mlp,
}

impl ModelBundle {
    /// All-zero parameters.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();

        let mut widths = vec![spec.input_dim];
        widths.extend(&spec.extractor_widths);
        let extractor = Mlp::build(&mut params, "extractor", &widths, true);

        let mut widths = vec![spec.feature_dim()];
        widths.extend(&spec.classifier_hidden);
        widths.push(spec.num_classes);
        let classifier = Mlp::build(&mut params, "classifier", &widths, false);

        let mut widths = vec![spec.discriminator_input_dim()];
        widths.extend(&spec.discriminator_hidden);
        widths.push(1);
        let discriminator = Mlp::build(&mut params, "discriminator", &widths, false);

        Ok(ModelBundle { spec, params, extractor, classifier, discriminator })
    }

    /// Weights and biases drawn from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        let mut model = ModelBundle::zeroed(spec)?;
        let layers: Vec<Linear> = model.layers().copied().collect();
        for layer in layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for id in [layer.weight, layer.bias] {
                for v in model.params.get_mut(id).data_mut() {
                    *v = rng.random_range(-bound..=bound);
                }
            }
        }
        Ok(model)
    }

    /// Builds the layout for `spec` and takes parameter values from `params`,
    /// rejecting any name or shape inconsistency.
    pub fn from_params(spec: ModelSpec, params: &ParamStore) -> Result<Self> {
        let mut model = ModelBundle::zeroed(spec)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.extractor.layers.iter().chain(&self.classifier.layers).chain(&self.discriminator.layers)
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Discriminator parameters only.
    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.discriminator.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn extractor_params(&self) -> Vec<ParamId> {
        self.extractor.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Inference pass over a batch of raw inputs.
    pub fn evaluate(&self, inputs: &Tensor) -> Result<Evaluation> {
        let mut g = Graph::inference();
        let x = g.constant(inputs.clone());
        let features = feature_extract(&mut g, self, x)?;
        let log_probs = classify(&mut g, self, features)?;
        let d_in = discriminator_input(&mut g, self, features, log_probs)?;
        let p = discriminate(&mut g, self, d_in)?;
        Ok(Evaluation {
            features: g.value(features).clone(),
            log_probs: g.value(log_probs).clone(),
            predictions: predictions(&g, p),
        })
    }
}

/// Outputs of [`ModelBundle::evaluate`].
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub features: Tensor,
    pub log_probs: Tensor,
    pub predictions: Vec<DomainPrediction>,
}

fn check_cols(op: &'static str, g: &Graph, x: Var, expected: usize) -> Result<()> {
    let shape = g.value(x).shape();
    match g.value(x).dims2() {
        Some((_, c)) if c == expected && shape.len() == 2 => Ok(()),
        _ => Err(Error::shape(op, format!("input {shape:?}, expected {expected} columns"))),
    }
}

/// `F(x)`: `n × d_in` inputs to `n × d_f` features.
pub fn feature_extract(g: &mut Graph, model: &ModelBundle, x: Var) -> Result<Var> {
    check_cols("feature_extract", g, x, model.spec.input_dim)?;
    model.extractor.forward(g, &model.params, x)
}

/// `C(F(x))` as per-class log-probabilities.
pub fn classify(g: &mut Graph, model: &ModelBundle, features: Var) -> Result<Var> {
    check_cols("classify", g, features, model.spec.feature_dim())?;
    let logits = model.classifier.forward(g, &model.params, features)?;
    g.log_softmax(logits)
}

/// `D(·)` as an `n × 1` column of source probabilities, clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn discriminate(g: &mut Graph, model: &ModelBundle, d_input: Var) -> Result<Var> {
    check_cols("discriminate", g, d_input, model.spec.discriminator_input_dim())?;
    let logit = model.discriminator.forward(g, &model.params, d_input)?;
    let p = g.sigmoid(logit)?;
    g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
}

/// Row-wise `features_i ⊗ probs_i`, feature-major.
pub fn cdan_condition(g: &mut Graph, features: Var, class_probs: Var) -> Result<Var> {
    let (nf, nc) = (g.value(features).rows(), g.value(class_probs).rows());
    if nf != nc {
        return Err(Error::shape("cdan_condition", format!("{nf} feature rows vs {nc} probability rows")));
    }
    g.outer_flatten(features, class_probs)
}

/// Discriminator input for the model's conditioning mode.
pub fn discriminator_input(g: &mut Graph, model: &ModelBundle, features: Var, log_probs: Var) -> Result<Var> {
    match model.spec.conditioning {
        Conditioning::Plain => Ok(features),
        Conditioning::Cdan => {
            let lp = if model.spec.condition_detach { g.detach(log_probs) } else { log_probs };
            let probs = g.exp(lp)?;
            cdan_condition(g, features, probs)
        }
    }
}

/// Reads an `n × 1` probability column as predictions.
pub fn predictions(g: &Graph, p_source: Var) -> Vec<DomainPrediction> {
    g.value(p_source).data().iter().map(|&p| DomainPrediction::new(p)).collect()
}
