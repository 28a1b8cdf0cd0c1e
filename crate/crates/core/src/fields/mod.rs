//! Neural fields: material, light, sky, opacity gate and object deformation.

pub mod mlp;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::sh::{sh_eval, sh_len};
use crate::geom::{UnitVec3, Vec3};
use crate::real::Real;
use crate::scene::{time_encoding, ObjectNode, TIME_FREQUENCIES};

pub use mlp::{Activation, GradTape, Layer, Mlp};

/// Positivity floor added to the light field output.
pub const LIGHT_FLOOR: f64 = 1e-4;
/// Initial bias of the gate's output layer; keeps geometry visible at start.
pub const GATE_BIAS_INIT: f64 = 4.0;

pub const ENC_N_DEGREE: usize = 1;
pub const ENC_R_DEGREE: usize = 4;
pub const ENC_V_DEGREE: usize = 3;
pub const ENC_N_LEN: usize = sh_len(ENC_N_DEGREE);
pub const ENC_R_LEN: usize = sh_len(ENC_R_DEGREE);
pub const ENC_V_LEN: usize = sh_len(ENC_V_DEGREE);
/// Length of the direction-encoding prefix of the light input.
pub const ENC_LEN: usize = ENC_N_LEN + ENC_R_LEN + ENC_V_LEN;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub geo_dim: usize,
    pub emb_dim: usize,
    pub object_feature_dim: usize,
    pub material_hidden: Vec<usize>,
    pub light_hidden: Vec<usize>,
    pub sky_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub deform_hidden: Vec<usize>,
    /// Feed the degree-1 normal encoding to the light field.
    pub normal_encoding: bool,
    /// Feed the degree-4 reflection encoding to the light field.
    pub reflection_encoding: bool,
    /// Multiply static opacities by the traversal-conditioned gate.
    pub gating: bool,
    pub rigid_objects: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            geo_dim: 16,
            emb_dim: 16,
            object_feature_dim: 8,
            material_hidden: vec![64, 64],
            light_hidden: vec![128, 128, 128],
            sky_hidden: vec![64, 64],
            gate_hidden: vec![32, 32],
            deform_hidden: vec![64, 64],
            normal_encoding: true,
            reflection_encoding: true,
            gating: true,
            rigid_objects: false,
        }
    }
}

impl FieldConfig {
    pub fn light_input_dim(&self) -> usize {
        ENC_LEN + self.geo_dim + self.emb_dim
    }

    pub fn sky_input_dim(&self) -> usize {
        ENC_V_LEN + self.emb_dim
    }

    pub fn gate_input_dim(&self) -> usize {
        self.geo_dim + self.emb_dim
    }

    pub fn deform_input_dim(&self) -> usize {
        3 + 2 * TIME_FREQUENCIES + self.object_feature_dim
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralFieldSet<T> {
    pub config: FieldConfig,
    pub material: Mlp<T>,
    pub light: Mlp<T>,
    pub sky: Mlp<T>,
    pub gate: Mlp<T>,
    pub deform: Mlp<T>,
}

/// The light field's input, in concatenation order.
#[derive(Clone, Debug, PartialEq)]
pub struct LightInput<T> {
    pub enc_n: Vec<T>,
    pub enc_r: Vec<T>,
    pub enc_v: Vec<T>,
    pub f_geo: Vec<T>,
    pub e_m: Vec<T>,
}

impl<T: Real> LightInput<T> {
    pub fn len(&self) -> usize {
        self.enc_n.len() + self.enc_r.len() + self.enc_v.len() + self.f_geo.len() + self.e_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<T> {
        [&self.enc_n[..], &self.enc_r, &self.enc_v, &self.f_geo, &self.e_m].concat()
    }
}

pub fn build_light_input<T: Real>(
    n: UnitVec3<T>,
    r: UnitVec3<T>,
    v: UnitVec3<T>,
    f_geo: &[T],
    e_m: &[T],
) -> LightInput<T> {
    let enc = |d: UnitVec3<T>, deg: usize| {
        let mut out = vec![T::zero(); sh_len(deg)];
        sh_eval(d.get(), deg, &mut out);
        out
    };
    LightInput {
        enc_n: enc(n, ENC_N_DEGREE),
        enc_r: enc(r, ENC_R_DEGREE),
        enc_v: enc(v, ENC_V_DEGREE),
        f_geo: f_geo.to_vec(),
        e_m: e_m.to_vec(),
    }
}

/// Composed static color `M ⊙ L`; not clamped.
pub fn static_color<T: Real>(m: [T; 3], l: [T; 3]) -> [T; 3] {
    [m[0] * l[0], m[1] * l[1], m[2] * l[2]]
}

fn row<T: Real>(v: &[T]) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((1, v.len()), v).expect("contiguous row")
}

fn rgb<T: Real>(a: &Array2<T>) -> [T; 3] {
    [a[[0, 0]], a[[0, 1]], a[[0, 2]]]
}

impl<T: Real> NeuralFieldSet<T> {
    pub fn new(config: &FieldConfig, rng: &mut impl Rng) -> Self {
        let c = config;
        let relu = Activation::Relu;
        Self {
            config: c.clone(),
            material: Mlp::new(&dims(c.geo_dim, &c.material_hidden, 3), relu, Activation::Sigmoid, rng)
                .with_constant_output(0.0),
            light: Mlp::new(&dims(c.light_input_dim(), &c.light_hidden, 3), relu, Activation::Softplus, rng)
                .with_constant_output(0.0),
            sky: Mlp::new(&dims(c.sky_input_dim(), &c.sky_hidden, 3), relu, Activation::Sigmoid, rng)
                .with_constant_output(0.0),
            gate: Mlp::new(&dims(c.gate_input_dim(), &c.gate_hidden, 1), relu, Activation::Sigmoid, rng)
                .with_constant_output(GATE_BIAS_INIT),
            deform: Mlp::new(&dims(c.deform_input_dim(), &c.deform_hidden, 3), relu, Activation::Identity, rng)
                .with_constant_output(0.0),
        }
    }

    /// Replace every output layer with random weights and biases. Used by
    /// gradient checks so that no path is trivially zero.
    pub fn randomize_output_layers(&mut self, rng: &mut impl Rng) {
        for mlp in [&mut self.material, &mut self.light, &mut self.sky, &mut self.gate, &mut self.deform] {
            let last = mlp.layers.last_mut().expect("non-empty");
            let a = (6.0 / (last.weight.nrows() + last.weight.ncols()) as f64).sqrt();
            last.weight.mapv_inplace(|_| T::lit(rng.random_range(-a..a)));
            last.bias.mapv_inplace(|_| T::lit(rng.random_range(-0.5..0.5)));
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            material: self.material.zeros_like(),
            light: self.light.zeros_like(),
            sky: self.sky.zeros_like(),
            gate: self.gate.zeros_like(),
            deform: self.deform.zeros_like(),
        }
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::invalid(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    pub fn material_forward(&self, f_geo: &[T]) -> Result<[T; 3]> {
        self.check_len("f_geo", f_geo.len(), self.config.geo_dim)?;
        Ok(rgb(&self.material.forward(row(f_geo))?.0))
    }

    pub fn light_forward(&self, input: &LightInput<T>) -> Result<[T; 3]> {
        self.check_len("light input", input.len(), self.config.light_input_dim())?;
        let mut x = input.to_vec();
        self.mask_light_input(&mut x);
        let out = self.light.forward(row(&x))?.0;
        Ok(rgb(&out).map(|v| v + T::lit(LIGHT_FLOOR)))
    }

    pub fn gate_forward(&self, f_geo: &[T], e_m: &[T]) -> Result<T> {
        self.check_len("f_geo", f_geo.len(), self.config.geo_dim)?;
        self.check_len("e_m", e_m.len(), self.config.emb_dim)?;
        let x = [f_geo, e_m].concat();
        Ok(self.gate.forward(row(&x))?.0[[0, 0]])
    }

    pub fn sky_forward(&self, v: UnitVec3<T>, e_m: &[T]) -> Result<[T; 3]> {
        self.check_len("e_m", e_m.len(), self.config.emb_dim)?;
        let mut x = vec![T::zero(); self.config.sky_input_dim()];
        sh_eval(v.get(), ENC_V_DEGREE, &mut x[..ENC_V_LEN]);
        x[ENC_V_LEN..].copy_from_slice(e_m);
        Ok(rgb(&self.sky.forward(row(&x))?.0))
    }

    /// Zero the encoding blocks disabled by configuration, in place.
    pub fn mask_light_input(&self, x: &mut [T]) {
        if !self.config.normal_encoding {
            x[..ENC_N_LEN].fill(T::zero());
        }
        if !self.config.reflection_encoding {
            x[ENC_N_LEN..ENC_N_LEN + ENC_R_LEN].fill(T::zero());
        }
    }

    /// Deformation-network input rows for every canonical Gaussian.
    pub fn deform_input(&self, object: &ObjectNode<T>, tau: f64) -> Result<Array2<T>> {
        self.check_len("object feature", object.feature.len(), self.config.object_feature_dim)?;
        let enc = time_encoding(&object.trajectory, tau);
        let n = object.canonical.len();
        let d = self.config.deform_input_dim();
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            let p = object.canonical.position(i);
            let mut r = x.row_mut(i);
            r[0] = p.x;
            r[1] = p.y;
            r[2] = p.z;
            for (k, e) in enc.iter().enumerate() {
                r[3 + k] = T::lit(*e);
            }
            for (k, f) in object.feature.iter().enumerate() {
                r[3 + enc.len() + k] = *f;
            }
        }
        Ok(x)
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a [T])) {
        self.material.visit("material", f);
        self.light.visit("light", f);
        self.sky.visit("sky", f);
        self.gate.visit("gate", f);
        self.deform.visit("deform", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut [T])) {
        self.material.visit_mut("material", f);
        self.light.visit_mut("light", f);
        self.sky.visit_mut("sky", f);
        self.gate.visit_mut("gate", f);
        self.deform.visit_mut("deform", f);
    }
}

/// Direction encodings of the light input for raw (possibly dual) vectors.
pub fn encode_directions<S: crate::real::Scalar>(n: Vec3<S>, r: Vec3<S>, v: Vec3<S>, out: &mut [S]) {
    sh_eval(n, ENC_N_DEGREE, &mut out[..ENC_N_LEN]);
    sh_eval(r, ENC_R_DEGREE, &mut out[ENC_N_LEN..ENC_N_LEN + ENC_R_LEN]);
    sh_eval(v, ENC_V_DEGREE, &mut out[ENC_N_LEN + ENC_R_LEN..ENC_LEN]);
}
