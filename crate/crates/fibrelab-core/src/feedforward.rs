use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{apply_activation, mat_vec_mul_add, ActivationSpec, RMatrix, RVector};

/// Layer shape and hidden-activation choice for a feedforward network.
/// `dims` runs d_0..d_L; `activations` holds one spec per hidden layer
/// 1..L-1. The output layer has no activation: a network's result is the
/// pre-activation h^L.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuralArchitecture {
    pub dims: Vec<usize>,
    pub activations: Vec<ActivationSpec>,
}

impl NeuralArchitecture {
    pub fn new(dims: Vec<usize>, activations: Vec<ActivationSpec>) -> Result<Self> {
        let arch = NeuralArchitecture { dims, activations };
        arch.validate()?;
        Ok(arch)
    }

    /// All-identity hidden activations.
    pub fn linear(dims: Vec<usize>) -> Result<Self> {
        let acts = dims[1..dims.len().saturating_sub(1)]
            .iter()
            .map(|&d| ActivationSpec::identity(d))
            .collect();
        NeuralArchitecture::new(dims, acts)
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::Shape(format!(
                "architecture needs at least 1 layer, got dims {:?}",
                self.dims
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "zero-dimensional layer in dims {:?}",
                self.dims
            )));
        }
        let hidden = self.layer_count() - 1;
        if self.activations.len() != hidden {
            return Err(Error::Shape(format!(
                "expected {} hidden activation specs, got {}",
                hidden,
                self.activations.len()
            )));
        }
        for (i, spec) in self.activations.iter().enumerate() {
            spec.validate(self.dims[i + 1])?;
        }
        Ok(())
    }

    /// Activation applied on exit from layer `layer`, if it is hidden.
    pub fn activation_at(&self, layer: usize) -> Option<&ActivationSpec> {
        if layer >= 1 && layer < self.layer_count() {
            Some(&self.activations[layer - 1])
        } else {
            None
        }
    }
}

/// Weights and biases for an architecture: W^l is d_l x d_{l-1}, b^l is d_l.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetworkInstance {
    pub architecture: NeuralArchitecture,
    pub weights: Vec<RMatrix>,
    pub biases: Vec<RVector>,
}

impl NetworkInstance {
    pub fn new(
        architecture: NeuralArchitecture,
        weights: Vec<RMatrix>,
        biases: Vec<RVector>,
    ) -> Result<Self> {
        let inst = NetworkInstance {
            architecture,
            weights,
            biases,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let layers = self.architecture.layer_count();
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Shape(format!(
                "instance has {} weight matrices and {} biases for {} layers",
                self.weights.len(),
                self.biases.len(),
                layers
            )));
        }
        for l in 1..=layers {
            let w = &self.weights[l - 1];
            let b = &self.biases[l - 1];
            let (dr, dc) = (self.architecture.dims[l], self.architecture.dims[l - 1]);
            if w.rows != dr || w.cols != dc || b.dim() != dr {
                return Err(Error::Shape(format!(
                    "layer {l}: W is {}x{} and b has dim {}, expected {}x{} and {}",
                    w.rows,
                    w.cols,
                    b.dim(),
                    dr,
                    dc,
                    dr
                )));
            }
        }
        Ok(())
    }

    /// 1-layer network computing W·x + b.
    pub fn affine(w: RMatrix, b: RVector) -> Result<Self> {
        let arch = NeuralArchitecture::new(vec![w.cols, w.rows], vec![])?;
        NetworkInstance::new(arch, vec![w], vec![b])
    }

    /// 1-layer identity network on dimension n.
    pub fn identity(n: usize) -> Self {
        NetworkInstance::affine(RMatrix::identity(n), RVector::zeros(n))
            .expect("identity instance is well-shaped")
    }
}

/// Contiguous run of layers, `from` through `to` (0 = raw input).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub from: usize,
    pub to: usize,
}

impl LayerSpan {
    pub fn new(from: usize, to: usize) -> Self {
        LayerSpan { from, to }
    }
}

/// Full forward pass: h^l = W^l·x^{l-1} + b^l with x^l = sigma^l(h^l) on
/// hidden layers; returns the final pre-activation h^L.
pub fn run_network(n: &NetworkInstance, x: &RVector) -> Result<RVector> {
    run_span(n, LayerSpan::new(0, n.architecture.layer_count()), x)
}

/// Evaluate the sub-network spanning `span.from..=span.to`.
///
/// The input is the raw input when from = 0, otherwise the pre-activation
/// h^{from}; activations fire on exit from a layer, so the span applies
/// sigma^{from} first (when from >= 1) and returns the pre-activation h^{to}.
/// An empty span (from = to) returns the input unchanged.
pub fn run_span(n: &NetworkInstance, span: LayerSpan, v: &RVector) -> Result<RVector> {
    let layers = n.architecture.layer_count();
    if span.from > span.to || span.to > layers {
        return Err(Error::Shape(format!(
            "invalid span {}..{} in a {}-layer network",
            span.from, span.to, layers
        )));
    }
    let expect = n.architecture.dims[span.from];
    if v.dim() != expect {
        return Err(Error::dim(
            "run_span",
            format!(
                "input has dim {} but layer {} has dim {}",
                v.dim(),
                span.from,
                expect
            ),
        ));
    }
    if span.from == span.to {
        return Ok(v.clone());
    }
    let mut cur = v.clone();
    if span.from >= 1 {
        if let Some(spec) = n.architecture.activation_at(span.from) {
            cur = apply_activation(spec, &cur)?;
        }
    }
    for l in span.from + 1..=span.to {
        cur = mat_vec_mul_add(&n.weights[l - 1], &cur, &n.biases[l - 1])?;
        if l < span.to {
            if let Some(spec) = n.architecture.activation_at(l) {
                cur = apply_activation(spec, &cur)?;
            }
        }
    }
    Ok(cur)
}

/// Strict-positivity classifier on scalar-output networks.
pub fn classify(n: &NetworkInstance, x: &RVector) -> Result<bool> {
    if n.architecture.output_dim() != 1 {
        return Err(Error::Shape(format!(
            "classifier needs output dim 1, got {}",
            n.architecture.output_dim()
        )));
    }
    let out = run_network(n, x)?;
    Ok(out[0].is_positive())
}

// JSON schema: { "dims": [...], "layers": [ { "W": [[..]], "b": [..],
// "activation": {..}? } ] } with the activation omitted on the output layer.
#[derive(Serialize, Deserialize)]
struct LayerRepr {
    #[serde(rename = "W")]
    w: RMatrix,
    b: RVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<ActivationSpec>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    dims: Vec<usize>,
    layers: Vec<LayerRepr>,
}

impl Serialize for NetworkInstance {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let layers = (1..=self.architecture.layer_count())
            .map(|l| LayerRepr {
                w: self.weights[l - 1].clone(),
                b: self.biases[l - 1].clone(),
                activation: self.architecture.activation_at(l).cloned(),
            })
            .collect();
        InstanceRepr {
            dims: self.architecture.dims.clone(),
            layers,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NetworkInstance {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = InstanceRepr::deserialize(deserializer)?;
        let layers = repr.dims.len().saturating_sub(1);
        if repr.layers.len() != layers {
            return Err(de::Error::custom(format!(
                "dims {:?} imply {} layers but {} were given",
                repr.dims,
                layers,
                repr.layers.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut activations = Vec::new();
        for (i, layer) in repr.layers.into_iter().enumerate() {
            let l = i + 1;
            weights.push(layer.w);
            biases.push(layer.b);
            match layer.activation {
                Some(spec) if l < layers => activations.push(spec),
                None if l < layers => {
                    return Err(de::Error::custom(format!(
                        "hidden layer {l} is missing its activation"
                    )))
                }
                Some(_) => {
                    return Err(de::Error::custom(
                        "output layer must not carry an activation",
                    ))
                }
                None => {}
            }
        }
        let arch = NeuralArchitecture::new(repr.dims, activations)
            .map_err(|e| de::Error::custom(format!("{e}")))?;
        NetworkInstance::new(arch, weights, biases).map_err(|e| de::Error::custom(format!("{e}")))
    }
}
