//! Fixed feature-extraction network, Gram matrices and the content, style and
//! hard-data losses.
//!
//! The network is the first ten 3x3 convolution layers of the VGG-16 layout
//! with 2x2 max-pools after layers 2, 4 and 7. Features are tapped at the relu
//! outputs of layers 2, 4, 7 and 10 (`relu1_2`, `relu2_2`, `relu3_3`, `relu4_3`).

use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geomodel::{GridModel, HardData};
use crate::nnw::NamedTensors;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NAMES: [&str; 10] = [
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1", "conv4_2", "conv4_3",
];
pub const WIDTHS: [usize; 10] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512];
const POOL_AFTER: [usize; 3] = [1, 3, 6];
const TAP_LAYERS: [usize; 4] = [1, 3, 6, 9];
/// Feature depth `N_z,k` at each tap.
pub const TAP_DEPTHS: [usize; 4] = [64, 128, 256, 512];
/// Zero-based index of the content tap.
pub const CONTENT_TAP: usize = 1;
pub const MIN_EXTENT: usize = 16;
/// Per-channel means of the image-classification training set (RGB, 0–255 scale).
pub const IMAGENET_OFFSETS: [f64; 3] = [123.68, 116.779, 103.939];

struct Layer {
    w: Arc<Tensor>,
    b: Arc<Tensor>,
}

pub struct LossNetwork {
    layers: Vec<Layer>,
    offsets: [f64; 3],
}

/// Tap activations of one model, each `[H_k, W_k, N_z,k]` (the transposed feature matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub taps: Vec<Tensor>,
}

impl FeatureSet {
    /// `N_c,k`: number of spatial positions at tap `k`.
    pub fn n_c(&self, k: usize) -> usize {
        let s = self.taps[k].shape();
        s[0] * s[1]
    }

    pub fn n_z(&self, k: usize) -> usize {
        self.taps[k].shape()[2]
    }
}

/// One `N_z,k x N_z,k` Gram matrix per tap.
#[derive(Clone, Debug, PartialEq)]
pub struct GramSet {
    pub grams: Vec<Tensor>,
}

fn layer_in(i: usize) -> usize {
    if i == 0 {
        3
    } else {
        WIDTHS[i - 1]
    }
}

impl LossNetwork {
    /// Seeded Gaussian filters with standard deviation `√(2/fan_in)`, zero biases and zero offsets.
    pub fn fallback(seed: u64) -> Self {
        let layers = (0..10)
            .map(|i| {
                let (cin, cout) = (layer_in(i), WIDTHS[i]);
                let std = (2.0 / (9 * cin) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                let mut rng = seeded(derive_seed(seed, i as u64));
                let w = Tensor::from_fn(&[3, 3, cin, cout], |_| dist.sample(&mut rng));
                Layer {
                    w: Arc::new(w),
                    b: Arc::new(Tensor::zeros(&[cout])),
                }
            })
            .collect();
        LossNetwork {
            layers,
            offsets: [0.0; 3],
        }
    }

    /// Loads `conv1_1.w` … `conv4_3.b` and optional `mean_offsets` (defaults to the
    /// image-classification channel means).
    pub fn from_named(nt: &NamedTensors) -> Result<Self> {
        let mut layers = Vec::with_capacity(10);
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            let (cin, cout) = (layer_in(i), WIDTHS[i]);
            let w = nt.expect(&format!("{name}.w"), &[3, 3, cin, cout])?.clone();
            let b = nt.expect(&format!("{name}.b"), &[cout])?.clone();
            layers.push(Layer {
                w: Arc::new(w),
                b: Arc::new(b),
            });
        }
        let offsets = match nt.get("mean_offsets") {
            Some(t) if t.len() == 3 => [t.data()[0], t.data()[1], t.data()[2]],
            Some(t) => {
                return Err(Error::format("NNW1", format!("`mean_offsets` has {} values, expected 3", t.len())));
            }
            None => IMAGENET_OFFSETS,
        };
        Ok(LossNetwork { layers, offsets })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_named(&NamedTensors::load(path)?)
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut nt = NamedTensors::new();
        for (l, name) in self.layers.iter().zip(LAYER_NAMES) {
            nt.push(format!("{name}.w"), (*l.w).clone());
            nt.push(format!("{name}.b"), (*l.b).clone());
        }
        nt.push("mean_offsets", Tensor::new(vec![3], self.offsets.to_vec()).unwrap());
        nt
    }

    pub fn offsets(&self) -> [f64; 3] {
        self.offsets
    }

    fn check_extents(h: usize, w: usize) -> Result<()> {
        if h < MIN_EXTENT || w < MIN_EXTENT {
            return Err(Error::shape(
                "loss network",
                format!("{w}x{h} grid is too small; both extents must be at least {MIN_EXTENT}"),
            ));
        }
        Ok(())
    }

    /// Records the network on `tape` for a `[N, H, W, 1]` batch of raw model values and
    /// returns the first `n_taps` tap activations.
    pub fn taps(&self, tape: &mut Tape, x: Var, n_taps: usize) -> Result<Vec<Var>> {
        let (_, h, w, _) = tape.value(x).nhwc()?;
        Self::check_extents(h, w)?;
        let n_taps = n_taps.clamp(1, 4);
        let last = TAP_LAYERS[n_taps - 1];
        let mut cur = tape.preprocess(x, self.offsets)?;
        let mut out = Vec::with_capacity(n_taps);
        for (i, layer) in self.layers.iter().enumerate().take(last + 1) {
            let wv = tape.shared(layer.w.clone(), false);
            let bv = tape.shared(layer.b.clone(), false);
            let y = tape.conv2d(cur, wv, Some(bv), 1, 1)?;
            cur = tape.relu(y)?;
            if TAP_LAYERS.contains(&i) {
                out.push(cur);
            }
            if POOL_AFTER.contains(&i) && i < last {
                cur = tape.max_pool2(cur)?;
            }
        }
        Ok(out)
    }

    pub fn features(&self, m: &GridModel) -> Result<FeatureSet> {
        let mut tape = Tape::new();
        let x = tape.constant(m.to_tensor());
        let taps = self.taps(&mut tape, x, 4)?;
        Ok(FeatureSet {
            taps: taps.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    pub fn grams(&self, m: &GridModel) -> Result<GramSet> {
        Ok(gram(&self.features(m)?))
    }

    /// `Σ_k Σ_n ‖G_k(x_n) − T_k‖²_F / N_z,k²` over a batch, with per-tap target Grams `targets`.
    pub fn style_term(&self, tape: &mut Tape, taps: &[Var], targets: &GramSet) -> Result<Var> {
        if taps.len() != 4 || targets.grams.len() != 4 {
            return Err(Error::invalid("style loss needs all four taps"));
        }
        let mut total: Option<Var> = None;
        for (k, (&t, target)) in taps.iter().zip(&targets.grams).enumerate() {
            let g = tape.gram(t)?;
            let c = tape.constant(target.clone());
            let d = tape.sub(g, c)?;
            let sq = tape.square(d)?;
            let s = tape.sum(sq)?;
            let nz = TAP_DEPTHS[k] as f64;
            let s = tape.scale(s, 1.0 / (nz * nz))?;
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        Ok(total.expect("four taps"))
    }

    /// `Σ_n ‖F_2(x_n) − F_2(target_n)‖²_F / (N_z,2·N_c,2)` for matching batches.
    pub fn content_term(&self, tape: &mut Tape, tap: Var, target: &Tensor) -> Result<Var> {
        let tv = tape.value(tap);
        if tv.shape() != target.shape() {
            return Err(Error::shape(
                "content loss",
                format!("feature shapes {:?} and {:?} differ", tv.shape(), target.shape()),
            ));
        }
        let (_, h, w, c) = tv.nhwc()?;
        let norm = 1.0 / (c * h * w) as f64;
        let cst = tape.constant(target.clone());
        let d = tape.sub(tap, cst)?;
        let sq = tape.square(d)?;
        let s = tape.sum(sq)?;
        tape.scale(s, norm)
    }

    pub fn style_loss(&self, x: &GridModel, m_ref: &GridModel) -> Result<f64> {
        let targets = self.grams(m_ref)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.to_tensor());
        let taps = self.taps(&mut tape, xv, 4)?;
        let l = self.style_term(&mut tape, &taps, &targets)?;
        tape.value(l).item()
    }

    pub fn content_loss(&self, x: &GridModel, m_pca: &GridModel) -> Result<f64> {
        if !x.same_extents(m_pca) {
            return Err(Error::shape(
                "content loss",
                format!("{}x{} vs {}x{}", x.nx(), x.ny(), m_pca.nx(), m_pca.ny()),
            ));
        }
        let mut tape = Tape::new();
        let pv = tape.constant(m_pca.to_tensor());
        let target = self.taps(&mut tape, pv, CONTENT_TAP + 1)?[CONTENT_TAP];
        let target = tape.value(target).clone();
        let xv = tape.constant(x.to_tensor());
        let tap = self.taps(&mut tape, xv, CONTENT_TAP + 1)?[CONTENT_TAP];
        let l = self.content_term(&mut tape, tap, &target)?;
        tape.value(l).item()
    }
}

/// `G_k = F_k F_kᵀ / (N_c,k·N_z,k)` for each tap.
pub fn gram(f: &FeatureSet) -> GramSet {
    GramSet {
        grams: f
            .taps
            .iter()
            .map(|t| {
                let g = crate::tensor::ops::gram(t).expect("tap activations are rank 3");
                let c = t.shape()[2];
                g.reshape(&[c, c]).expect("single item")
            })
            .collect(),
    }
}

/// `hᵀ(m_pca − f)² / N_h`.
pub fn hard_data_loss(m_pca: &GridModel, f_out: &GridModel, hd: &HardData) -> Result<f64> {
    if !m_pca.same_extents(f_out) || hd.n_cells() != m_pca.n_cells() {
        return Err(Error::shape("hard-data loss", "extents of models and hard data must agree"));
    }
    if hd.is_empty() {
        return Err(Error::invalid("hard-data loss needs at least one datum; use a zero weight instead"));
    }
    let s: f64 = hd
        .entries()
        .iter()
        .map(|&(i, _)| (m_pca.values()[i] - f_out.values()[i]).powi(2))
        .sum();
    Ok(s / hd.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomodel::{gen_synthetic_channels, ChannelParams, ModelKind};
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::Rng;

    fn net() -> &'static LossNetwork {
        static NET: std::sync::OnceLock<LossNetwork> = std::sync::OnceLock::new();
        NET.get_or_init(|| LossNetwork::fallback(7))
    }

    fn random_model(n: usize, seed: u64) -> GridModel {
        let mut rng = seeded(seed);
        GridModel::new(n, n, (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect(), ModelKind::Continuous).unwrap()
    }

    #[test]
    fn preprocess_scales_and_replicates() {
        let mut tape = Tape::new();
        let ones = tape.constant(GridModel::filled(4, 4, 1.0, ModelKind::Binary).unwrap().to_tensor());
        let p = tape.preprocess(ones, [0.0; 3]).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 255.0));
        let zeros = tape.constant(Tensor::zeros(&[4, 4, 1]));
        let p = tape.preprocess(zeros, [0.0; 3]).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
        let mixed = tape.constant(random_model(4, 1).to_tensor());
        let p = tape.preprocess(mixed, [0.0; 3]).unwrap();
        for c in tape.value(p).data().chunks(3) {
            assert!(c[0] == c[1] && c[1] == c[2]);
        }
    }

    #[test]
    fn tap_sizes_for_sixty_grid() {
        let f = net().features(&random_model(60, 2)).unwrap();
        let n_c: Vec<usize> = (0..4).map(|k| f.n_c(k)).collect();
        assert_eq!(n_c, [3600, 900, 225, 49]);
        assert_eq!((0..4).map(|k| f.n_z(k)).collect::<Vec<_>>(), TAP_DEPTHS);
    }

    #[test]
    fn too_small_grid_is_rejected() {
        assert!(net().features(&random_model(12, 2)).is_err());
    }

    #[test]
    fn features_are_pure() {
        let m = random_model(16, 3);
        assert_eq!(net().features(&m).unwrap(), net().features(&m).unwrap());
    }

    #[test]
    fn gram_examples() {
        let zero = FeatureSet {
            taps: vec![Tensor::zeros(&[2, 2, 3])],
        };
        assert!(gram(&zero).grams[0].data().iter().all(|&v| v == 0.0));
        // F = [[1,2],[3,4]]: channel 0 = (1,2), channel 1 = (3,4) over two positions
        let f = FeatureSet {
            taps: vec![Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap()],
        };
        assert_eq!(gram(&f).grams[0].data(), &[1.25, 2.75, 2.75, 6.25]);
    }

    #[test]
    fn grams_symmetric_psd_and_shape_invariant() {
        for (seed, n) in [(1, 16), (2, 24), (3, 20)] {
            let g = net().grams(&random_model(n, seed)).unwrap();
            for (k, gk) in g.grams.iter().enumerate() {
                let c = TAP_DEPTHS[k];
                assert_eq!(gk.shape(), &[c, c]);
                let m = DMatrix::from_row_slice(c, c, gk.data());
                assert!((&m - m.transpose()).abs().max() <= 1e-12 * m.abs().max());
                let tr = m.trace();
                let min = SymmetricEigen::new(m).eigenvalues.min();
                assert!(min >= -1e-9 * tr, "tap {k}: {min}");
            }
        }
    }

    #[test]
    fn style_loss_semantics() {
        let x = random_model(16, 4);
        assert_eq!(net().style_loss(&x, &x).unwrap(), 0.0);
        let chan = gen_synthetic_channels(&ChannelParams::new(32, 32, 3, 0.0, 4.0), 1, None).unwrap();
        let zero = GridModel::filled(16, 16, 0.0, ModelKind::Binary).unwrap();
        let a = net().style_loss(&zero, &chan).unwrap();
        assert!(a > 0.0);
        let y = random_model(16, 5);
        let (xy, yx) = (net().style_loss(&x, &y).unwrap(), net().style_loss(&y, &x).unwrap());
        assert!((xy - yx).abs() <= 1e-12 * xy);
    }

    #[test]
    fn content_loss_semantics() {
        let x = random_model(16, 6);
        assert_eq!(net().content_loss(&x, &x).unwrap(), 0.0);
        let mut v = x.values().to_vec();
        v[40] += 1.0;
        let y = GridModel::new(16, 16, v, ModelKind::Continuous).unwrap();
        assert!(net().content_loss(&y, &x).unwrap() > 0.0);
        assert!(net().content_loss(&x, &random_model(20, 1)).is_err());
    }

    #[test]
    fn content_normalization_matches_hand_sum() {
        let x = random_model(16, 8);
        let y = random_model(16, 9);
        let fx = net().features(&x).unwrap();
        let fy = net().features(&y).unwrap();
        let k = CONTENT_TAP;
        let s: f64 = fx.taps[k].data().iter().zip(fy.taps[k].data()).map(|(a, b)| (a - b).powi(2)).sum();
        let want = s / (fx.n_z(k) * fx.n_c(k)) as f64;
        let got = net().content_loss(&x, &y).unwrap();
        assert!((got - want).abs() <= 1e-12 * want);
        assert_eq!(fx.n_c(k), 64);
    }

    #[test]
    fn hard_data_loss_examples() {
        let hd = HardData::from_wells(4, 4, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 0.0), (3, 3, 0.0)]).unwrap();
        let m = random_model(4, 1);
        assert_eq!(hard_data_loss(&m, &m, &hd).unwrap(), 0.0);
        let mut v = m.values().to_vec();
        v[5] += 0.5;
        let f = GridModel::new(4, 4, v.clone(), ModelKind::Continuous).unwrap();
        assert!((hard_data_loss(&m, &f, &hd).unwrap() - 0.0625).abs() < 1e-15);
        v[1] += 100.0;
        v[14] -= 7.0;
        let g = GridModel::new(4, 4, v, ModelKind::Continuous).unwrap();
        assert_eq!(hard_data_loss(&m, &g, &hd).unwrap(), hard_data_loss(&m, &f, &hd).unwrap());
        let empty = HardData::new(16, vec![]).unwrap();
        assert!(hard_data_loss(&m, &m, &empty).is_err());
    }

    #[test]
    fn checkpoint_round_trip_promotes_f32() {
        let nt = net().to_named();
        assert_eq!(nt.len(), 21);
        let back = LossNetwork::from_named(&NamedTensors::from_bytes(&nt.to_bytes().unwrap()).unwrap()).unwrap();
        for (a, b) in back.layers.iter().zip(&net().layers) {
            for (x, y) in a.w.data().iter().zip(b.w.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        assert_eq!(back.offsets(), [0.0; 3]);
    }

    #[test]
    fn loader_checks_shapes_and_defaults_offsets() {
        let mut nt = NamedTensors::new();
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            nt.push(format!("{name}.w"), Tensor::zeros(&[3, 3, layer_in(i), WIDTHS[i]]));
            nt.push(format!("{name}.b"), Tensor::zeros(&[WIDTHS[i]]));
        }
        assert_eq!(LossNetwork::from_named(&nt).unwrap().offsets(), IMAGENET_OFFSETS);
        let mut bad = NamedTensors::new();
        bad.push("conv1_1.w", Tensor::zeros(&[3, 3, 1, 64]));
        assert!(LossNetwork::from_named(&bad).is_err());
    }
}
