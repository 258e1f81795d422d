use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{leaky_relu, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

/// Layer widths of a fully-connected network. Hidden layers use a leaky
/// rectifier; the output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub channels: Vec<usize>,
    pub negative_slope: f64,
}

impl MlpSpec {
    pub fn new(channels: Vec<usize>) -> Result<Self> {
        let spec = MlpSpec {
            channels,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Argument(format!("an MLP needs at least 2 widths, got {:?}", self.channels)));
        }
        if self.channels.contains(&0) {
            return Err(Error::Argument(format!("zero-width layer in {:?}", self.channels)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.channels[0]
    }

    pub fn output_width(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len() - 1
    }
}

/// Weight (in x out) and bias (1 x out) of one affine layer.
pub type Layer = (Array2<f64>, Array2<f64>);

fn check_layers(spec: &MlpSpec, layers: &[Layer]) -> Result<()> {
    spec.validate()?;
    if layers.len() != spec.num_layers() {
        return Err(Error::Shape(format!("{} layers for spec {:?}", layers.len(), spec.channels)));
    }
    for (l, (w, b)) in layers.iter().enumerate() {
        let (i, o) = (spec.channels[l], spec.channels[l + 1]);
        if w.dim() != (i, o) || b.dim() != (1, o) {
            return Err(Error::Shape(format!(
                "layer {l}: weight {:?}, bias {:?}, expected ({i}, {o})",
                w.dim(),
                b.dim()
            )));
        }
    }
    Ok(())
}

/// Plain evaluation of an MLP on a batch of rows.
pub fn mlp_forward(spec: &MlpSpec, layers: &[Layer], input: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_layers(spec, layers)?;
    if input.ncols() != spec.input_width() {
        return Err(Error::Shape(format!(
            "input width {} but network expects {}",
            input.ncols(),
            spec.input_width()
        )));
    }
    let last = layers.len() - 1;
    let mut x = input.to_owned();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = x.dot(w) + b;
        if l < last {
            z.mapv_inplace(|v| leaky_relu(v, spec.negative_slope));
        }
        x = z;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("mlp forward"));
    }
    Ok(x)
}

/// Directional derivative `J(x) t` of the network at each input row, for a
/// tangent given per row (or a single row broadcast to all inputs).
pub fn input_jvp(spec: &MlpSpec, layers: &[Layer], input: ArrayView2<f64>, tangent: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_layers(spec, layers)?;
    if input.ncols() != spec.input_width() || tangent.ncols() != spec.input_width() {
        return Err(Error::Shape(format!(
            "input {:?} / tangent {:?} for network input width {}",
            input.dim(),
            tangent.dim(),
            spec.input_width()
        )));
    }
    if tangent.nrows() != input.nrows() && tangent.nrows() != 1 {
        return Err(Error::Shape("tangent needs one row or one per input".into()));
    }
    let last = layers.len() - 1;
    let mut x = input.to_owned();
    let mut t = if tangent.nrows() == input.nrows() {
        tangent.to_owned()
    } else {
        let mut t = Array2::zeros(input.raw_dim());
        t.rows_mut().into_iter().for_each(|mut r| r.assign(&tangent.row(0)));
        t
    };
    for (l, (w, b)) in layers.iter().enumerate() {
        let z = x.dot(w) + b;
        let mut tz = t.dot(w);
        if l < last {
            ndarray::Zip::from(&mut tz)
                .and(&z)
                .for_each(|o, &z| *o *= if z >= 0.0 { 1.0 } else { spec.negative_slope });
            x = z.mapv(|v| leaky_relu(v, spec.negative_slope));
        } else {
            x = z;
        }
        t = tz;
    }
    Ok(t)
}

/// An MLP whose weights live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub name: String,
    layers: Vec<(ParamId, ParamId)>,
}

/// Tape nodes recorded by [`Mlp::forward`]: the output plus every hidden
/// pre-activation, which the tangent pass needs for its activation masks.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub output: Var,
    pub preacts: Vec<Var>,
}

impl Mlp {
    /// Creates parameters named `{name}.{layer}.weight` / `{name}.{layer}.bias`
    /// with uniform Glorot weights and zero biases.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.num_layers());
        for l in 0..spec.num_layers() {
            let (i, o) = (spec.channels[l], spec.channels[l + 1]);
            let bound = (6.0 / (i + o) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((i, o), || rng.random_range(-bound..=bound));
            let wid = store.add(format!("{name}.{l}.weight"), w);
            let bid = store.add(format!("{name}.{l}.bias"), Array2::zeros((1, o)));
            layers.push((wid, bid));
        }
        Ok(Mlp {
            spec,
            name: name.to_string(),
            layers,
        })
    }

    pub fn layer_ids(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Sets the output layer to zero so the network computes the constant 0.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let (w, b) = *self.layers.last().unwrap();
        store.get_mut(w).data.fill(0.0);
        store.get_mut(b).data.fill(0.0);
    }

    pub fn zero_all(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store.get_mut(id).data.fill(0.0);
        }
    }

    pub fn layers(&self, store: &ParamStore) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|&(w, b)| (store.data(w).clone(), store.data(b).clone()))
            .collect()
    }

    pub fn eval(&self, store: &ParamStore, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        mlp_forward(&self.spec, &self.layers(store), input)
    }

    pub fn eval_jvp(&self, store: &ParamStore, input: ArrayView2<f64>, tangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        input_jvp(&self.spec, &self.layers(store), input, tangent)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<MlpTrace> {
        let width = tape.value(x).ncols();
        if width != self.spec.input_width() {
            return Err(Error::Shape(format!(
                "{}: input width {width}, expected {}",
                self.name,
                self.spec.input_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut preacts = Vec::with_capacity(last);
        let mut h = x;
        for (l, &(wid, bid)) in self.layers.iter().enumerate() {
            let w = tape.param(wid);
            let b = tape.param(bid);
            let xw = tape.matmul(h, w)?;
            let z = tape.add_row(xw, b)?;
            if l < last {
                preacts.push(z);
                h = tape.leaky_relu(z, self.spec.negative_slope);
            } else {
                h = z;
            }
        }
        Ok(MlpTrace { output: h, preacts })
    }

    /// Pushes a tangent through the network along a recorded forward pass.
    pub fn tangent(&self, tape: &mut Tape, trace: &MlpTrace, t: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut t = t;
        for (l, &(wid, _)) in self.layers.iter().enumerate() {
            let w = tape.param(wid);
            let tz = tape.matmul(t, w)?;
            t = if l < last {
                tape.leaky_mask(tz, trace.preacts[l], self.spec.negative_slope)?
            } else {
                tz
            };
        }
        Ok(t)
    }
}
