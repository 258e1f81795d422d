//! Coordinate-mapping sub-networks.
//!
//! Global mode uses four maps: deform (2D lattice -> UV, residual), wrap
//! (UV -> 3D position + normal), cut (3D -> opened 3D, residual) and unwrap
//! (3D -> UV). Multi-chart mode uses a shared point embedding, a chart
//! assignment head and one unwrap/wrap pair per chart.
//!
//! The two-stage maps compute `second([first(x) ; x])`, optionally plus `x`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffkernel::{Mlp, MlpSpec, MlpTrace, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Hidden width of the published architecture.
pub const STANDARD_HIDDEN: usize = 512;
/// Latent width `h` between the two stages of each concatenation block.
pub const STANDARD_LATENT: usize = 64;

/// Channel lists for the global networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalArch {
    pub deform_a: MlpSpec,
    pub deform_b: MlpSpec,
    pub wrap_a: MlpSpec,
    pub wrap_b: MlpSpec,
    pub cut_a: MlpSpec,
    pub cut_b: MlpSpec,
    pub unwrap: MlpSpec,
}

fn spec(channels: Vec<usize>) -> MlpSpec {
    MlpSpec {
        channels,
        negative_slope: crate::diffkernel::DEFAULT_NEGATIVE_SLOPE,
    }
}

impl Default for GlobalArch {
    fn default() -> Self {
        Self::with_widths(STANDARD_HIDDEN, STANDARD_LATENT)
    }
}

impl GlobalArch {
    /// The published layout with every 512 replaced by `hidden` and every 64 by `latent`.
    pub fn with_widths(hidden: usize, latent: usize) -> Self {
        let (h, l) = (hidden, latent);
        GlobalArch {
            deform_a: spec(vec![2, h, h, h, l]),
            deform_b: spec(vec![l + 2, h, h, h, 2]),
            wrap_a: spec(vec![2, h, h, h, l]),
            wrap_b: spec(vec![l + 2, h, h, h, 6]),
            cut_a: spec(vec![3, h, h, l]),
            cut_b: spec(vec![l + 3, h, h, 3]),
            unwrap: spec(vec![3, h, h, 2]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_block("deform", &self.deform_a, &self.deform_b, 2, 2)?;
        check_block("wrap", &self.wrap_a, &self.wrap_b, 2, 6)?;
        check_block("cut", &self.cut_a, &self.cut_b, 3, 3)?;
        self.unwrap.validate()?;
        if self.unwrap.input_width() != 3 || self.unwrap.output_width() != 2 {
            return Err(Error::Argument(format!("unwrap must map 3 -> 2, got {:?}", self.unwrap.channels)));
        }
        Ok(())
    }
}

fn check_block(name: &str, a: &MlpSpec, b: &MlpSpec, input: usize, output: usize) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.input_width() != input {
        return Err(Error::Argument(format!("{name}.a must take {input} inputs, got {:?}", a.channels)));
    }
    if b.input_width() != a.output_width() + input {
        return Err(Error::Argument(format!(
            "{name}.b input width {} must equal {} + {input}",
            b.input_width(),
            a.output_width()
        )));
    }
    if b.output_width() != output {
        return Err(Error::Argument(format!("{name}.b must produce {output} outputs, got {:?}", b.channels)));
    }
    Ok(())
}

/// Channel lists for the multi-chart networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartArch {
    pub charts: usize,
    pub embed: MlpSpec,
    pub assign: MlpSpec,
    pub unwrap: MlpSpec,
    pub wrap_a: MlpSpec,
    pub wrap_b: MlpSpec,
}

impl ChartArch {
    pub fn standard(charts: usize) -> Self {
        Self::with_widths(charts, STANDARD_HIDDEN, STANDARD_HIDDEN / 2, STANDARD_LATENT)
    }

    /// `hidden` replaces the 512-wide layers; the per-chart wrap blocks use
    /// `wrap_hidden` and `latent`.
    pub fn with_widths(charts: usize, hidden: usize, wrap_hidden: usize, latent: usize) -> Self {
        let (h, w, l) = (hidden, wrap_hidden, latent);
        ChartArch {
            charts,
            embed: spec(vec![3, h, h]),
            assign: spec(vec![h, h, charts]),
            unwrap: spec(vec![h, h, h, 2]),
            wrap_a: spec(vec![2, w, w, l]),
            wrap_b: spec(vec![l + 2, w, w, 6]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.charts == 0 {
            return Err(Error::Argument("at least one chart is required".into()));
        }
        self.embed.validate()?;
        self.assign.validate()?;
        self.unwrap.validate()?;
        if self.embed.input_width() != 3 {
            return Err(Error::Argument("embedding must take 3D points".into()));
        }
        let d = self.embed.output_width();
        if self.assign.input_width() != d || self.unwrap.input_width() != d {
            return Err(Error::Argument(format!("assign/unwrap inputs must match embedding width {d}")));
        }
        if self.assign.output_width() != self.charts {
            return Err(Error::Argument(format!(
                "assign produces {} scores for {} charts",
                self.assign.output_width(),
                self.charts
            )));
        }
        if self.unwrap.output_width() != 2 {
            return Err(Error::Argument("chart unwrap must produce 2 outputs".into()));
        }
        check_block("chart wrap", &self.wrap_a, &self.wrap_b, 2, 6)
    }
}

/// `second([first(x) ; x]) (+ x)`.
#[derive(Debug, Clone)]
pub struct ConcatBlock {
    pub first: Mlp,
    pub second: Mlp,
    pub residual: bool,
}

#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub output: Var,
    first: MlpTrace,
    second: MlpTrace,
}

impl ConcatBlock {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, a: &MlpSpec, b: &MlpSpec, residual: bool, rng: &mut R) -> Result<Self> {
        let first = Mlp::new(store, &format!("{name}.a"), a.clone(), rng)?;
        let second = Mlp::new(store, &format!("{name}.b"), b.clone(), rng)?;
        if residual {
            // residual blocks start as the identity map
            second.zero_output_layer(store);
        }
        Ok(ConcatBlock { first, second, residual })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.first.param_ids().chain(self.second.param_ids())
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<BlockTrace> {
        let first = self.first.forward(tape, x)?;
        let cat = tape.concat(first.output, x)?;
        let second = self.second.forward(tape, cat)?;
        let output = if self.residual {
            tape.add(second.output, x)?
        } else {
            second.output
        };
        Ok(BlockTrace { output, first, second })
    }

    /// Tangent of the block output for an input tangent `t`, along `trace`.
    pub fn tangent(&self, tape: &mut Tape, trace: &BlockTrace, t: Var) -> Result<Var> {
        let th = self.first.tangent(tape, &trace.first, t)?;
        let tc = tape.concat(th, t)?;
        let ty = self.second.tangent(tape, &trace.second, tc)?;
        if self.residual {
            tape.add(ty, t)
        } else {
            Ok(ty)
        }
    }

    pub fn eval(&self, store: &ParamStore, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.first.eval(store, x)?;
        let cat = ndarray::concatenate(ndarray::Axis(1), &[h.view(), x]).expect("same row count");
        let y = self.second.eval(store, cat.view())?;
        Ok(if self.residual { y + x } else { y })
    }

    /// Input Jacobian-vector product, one tangent row per input row or a single broadcast row.
    pub fn eval_jvp(&self, store: &ParamStore, x: ArrayView2<f64>, t: ArrayView2<f64>) -> Result<Array2<f64>> {
        let t = if t.nrows() == 1 && x.nrows() != 1 {
            let mut full = Array2::zeros(x.raw_dim());
            full.rows_mut().into_iter().for_each(|mut r| r.assign(&t.row(0)));
            full
        } else {
            t.to_owned()
        };
        let h = self.first.eval(store, x)?;
        let th = self.first.eval_jvp(store, x, t.view())?;
        let cat = ndarray::concatenate(ndarray::Axis(1), &[h.view(), x]).expect("same row count");
        let tc = ndarray::concatenate(ndarray::Axis(1), &[th.view(), t.view()]).expect("same row count");
        let ty = self.second.eval_jvp(store, cat.view(), tc.view())?;
        Ok(if self.residual { ty + t } else { ty })
    }
}

/// Positions (first three wrap outputs) and raw normals (last three).
pub fn split_wrap_output(out: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    (
        out.slice(ndarray::s![.., 0..3]).to_owned(),
        out.slice(ndarray::s![.., 3..6]).to_owned(),
    )
}

/// Unit-length rows; zero rows become `(0, 0, 1)`.
pub fn normalize_normals(raw: ArrayView2<f64>) -> Array2<f64> {
    let mut out = raw.to_owned();
    for mut row in out.rows_mut() {
        let len = row.dot(&row).sqrt();
        if len > 0.0 {
            row.mapv_inplace(|x| x / len);
        } else {
            row.assign(&ndarray::arr1(&[0.0, 0.0, 1.0]));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GlobalNetworks {
    pub arch: GlobalArch,
    pub deform: ConcatBlock,
    pub wrap: ConcatBlock,
    pub cut: ConcatBlock,
    pub unwrap: Mlp,
}

impl GlobalNetworks {
    pub fn new<R: Rng>(store: &mut ParamStore, arch: GlobalArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let deform = ConcatBlock::new(store, "deform", &arch.deform_a, &arch.deform_b, true, rng)?;
        let wrap = ConcatBlock::new(store, "wrap", &arch.wrap_a, &arch.wrap_b, false, rng)?;
        let cut = ConcatBlock::new(store, "cut", &arch.cut_a, &arch.cut_b, true, rng)?;
        let unwrap = Mlp::new(store, "unwrap", arch.unwrap.clone(), rng)?;
        Ok(GlobalNetworks {
            arch,
            deform,
            wrap,
            cut,
            unwrap,
        })
    }

    /// Sets every parameter to zero (deform and cut become identities, wrap
    /// and unwrap the zero map).
    pub fn zero_all(&self, store: &mut ParamStore) {
        for m in [
            &self.deform.first,
            &self.deform.second,
            &self.wrap.first,
            &self.wrap.second,
            &self.cut.first,
            &self.cut.second,
            &self.unwrap,
        ] {
            m.zero_all(store);
        }
    }

    pub fn networks(&self) -> Vec<(&str, &Mlp)> {
        vec![
            ("deform.a", &self.deform.first),
            ("deform.b", &self.deform.second),
            ("wrap.a", &self.wrap.first),
            ("wrap.b", &self.wrap.second),
            ("cut.a", &self.cut.first),
            ("cut.b", &self.cut.second),
            ("unwrap", &self.unwrap),
        ]
    }

    pub fn deform(&self, store: &ParamStore, grid: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols("deform", grid, 2)?;
        self.deform.eval(store, grid)
    }

    /// Returns `(positions, unit normals)`.
    pub fn wrap(&self, store: &ParamStore, uv: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        check_cols("wrap", uv, 2)?;
        let out = self.wrap.eval(store, uv)?;
        let (p, n) = split_wrap_output(out.view());
        Ok((p, normalize_normals(n.view())))
    }

    pub fn cut(&self, store: &ParamStore, p: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols("cut", p, 3)?;
        self.cut.eval(store, p)
    }

    pub fn unwrap(&self, store: &ParamStore, p: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols("unwrap", p, 3)?;
        self.unwrap.eval(store, p)
    }

    /// UV coordinates of 3D points: `unwrap(cut(p))`.
    pub fn parameterize(&self, store: &ParamStore, p: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cut = self.cut(store, p)?;
        self.unwrap(store, cut.view())
    }
}

fn check_cols(name: &str, x: ArrayView2<f64>, want: usize) -> Result<()> {
    if x.ncols() != want {
        return Err(Error::Shape(format!("{name} expects {want} columns, got {}", x.ncols())));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ChartNetworks {
    pub unwrap: Mlp,
    pub wrap: ConcatBlock,
}

#[derive(Debug, Clone)]
pub struct MultiChartNetworks {
    pub arch: ChartArch,
    pub embed: Mlp,
    pub assign: Mlp,
    pub charts: Vec<ChartNetworks>,
}

impl MultiChartNetworks {
    pub fn new<R: Rng>(store: &mut ParamStore, arch: ChartArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let embed = Mlp::new(store, "embed", arch.embed.clone(), rng)?;
        let assign = Mlp::new(store, "assign", arch.assign.clone(), rng)?;
        let charts = (0..arch.charts)
            .map(|k| {
                let unwrap = Mlp::new(store, &format!("chart{k}.unwrap"), arch.unwrap.clone(), rng)?;
                let wrap = ConcatBlock::new(store, &format!("chart{k}.wrap"), &arch.wrap_a, &arch.wrap_b, false, rng)?;
                Ok(ChartNetworks { unwrap, wrap })
            })
            .collect::<Result<_>>()?;
        Ok(MultiChartNetworks {
            arch,
            embed,
            assign,
            charts,
        })
    }

    pub fn networks(&self) -> Vec<(String, &Mlp)> {
        let mut out = vec![("embed".to_string(), &self.embed), ("assign".to_string(), &self.assign)];
        for (k, c) in self.charts.iter().enumerate() {
            out.push((format!("chart{k}.unwrap"), &c.unwrap));
            out.push((format!("chart{k}.wrap.a"), &c.wrap.first));
            out.push((format!("chart{k}.wrap.b"), &c.wrap.second));
        }
        out
    }

    pub fn embed(&self, store: &ParamStore, p: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols("embed", p, 3)?;
        self.embed.eval(store, p)
    }

    /// Per-vertex chart probabilities (each row sums to one).
    pub fn assign(&self, store: &ParamStore, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        let logits = self.assign.eval(store, h)?;
        Ok(softmax_rows(logits.view()))
    }

    pub fn chart_uv(&self, store: &ParamStore, k: usize, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        let c = self
            .charts
            .get(k)
            .ok_or_else(|| Error::Argument(format!("chart {k} out of range")))?;
        c.unwrap.eval(store, h)
    }
}

pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Row-major prefix of the `m x m` lattice over `[-1, 1]^2`, `m = ceil(sqrt(count))`.
/// Row `r * m + c` is `(x_r, x_c)`.
pub fn sample_grid(count: usize) -> Array2<f64> {
    let mut m = (count as f64).sqrt().ceil() as usize;
    while m * m < count {
        m += 1;
    }
    let coord = |i: usize| {
        if m == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (m - 1) as f64
        }
    };
    Array2::from_shape_fn((count, 2), |(i, d)| if d == 0 { coord(i / m) } else { coord(i % m) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_global(seed: u64) -> (ParamStore, GlobalNetworks) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let nets = GlobalNetworks::new(&mut store, GlobalArch::with_widths(6, 4), &mut rng).unwrap();
        (store, nets)
    }

    fn randomize(store: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in store.iter_mut() {
            t.data.mapv_inplace(|_| rng.random_range(-0.8..0.8));
        }
    }

    #[test]
    fn grid_examples() {
        assert_eq!(sample_grid(4), array![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
        let g9 = sample_grid(9);
        assert_eq!(g9.row(4).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g9.row(1).to_vec(), vec![-1.0, 0.0]);
        let g5 = sample_grid(5);
        assert_eq!(g5, g9.slice(ndarray::s![..5, ..]).to_owned());
        assert!(sample_grid(37).iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn published_widths() {
        let a = GlobalArch::default();
        assert_eq!(a.deform_a.channels, vec![2, 512, 512, 512, 64]);
        assert_eq!(a.deform_b.channels, vec![66, 512, 512, 512, 2]);
        assert_eq!(a.wrap_a.channels, vec![2, 512, 512, 512, 64]);
        assert_eq!(a.wrap_b.channels, vec![66, 512, 512, 512, 6]);
        assert_eq!(a.cut_a.channels, vec![3, 512, 512, 64]);
        assert_eq!(a.cut_b.channels, vec![67, 512, 512, 3]);
        assert_eq!(a.unwrap.channels, vec![3, 512, 512, 2]);
        let c = ChartArch::standard(8);
        assert_eq!(c.embed.channels, vec![3, 512, 512]);
        assert_eq!(c.assign.channels, vec![512, 512, 8]);
        assert_eq!(c.unwrap.channels, vec![512, 512, 512, 2]);
        assert_eq!(c.wrap_b.channels, vec![66, 256, 256, 6]);
        assert!(a.validate().is_ok() && c.validate().is_ok());
    }

    #[test]
    fn malformed_wiring_is_rejected() {
        let mut a = GlobalArch::with_widths(8, 4);
        a.cut_b.channels[0] = 6;
        assert!(a.validate().is_err());
        let mut c = ChartArch::with_widths(3, 8, 8, 4);
        c.assign.channels[2] = 2;
        assert!(c.validate().is_err());
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(GlobalNetworks::new(&mut store, a, &mut rng).is_err());
    }

    #[test]
    fn fresh_residual_blocks_are_identities() {
        let (store, nets) = small_global(1);
        let g = sample_grid(25);
        assert_eq!(nets.deform(&store, g.view()).unwrap(), g);
        let p = array![[0.1, -0.2, 0.3], [0.4, 0.0, -0.5]];
        assert_eq!(nets.cut(&store, p.view()).unwrap(), p);
    }

    #[test]
    fn zero_networks() {
        let (mut store, nets) = small_global(2);
        randomize(&mut store, 3);
        nets.zero_all(&mut store);
        let g = sample_grid(9);
        assert_eq!(nets.deform(&store, g.view()).unwrap(), g);
        let (p, n) = nets.wrap(&store, g.view()).unwrap();
        assert_eq!(p.dim(), (9, 3));
        assert!(p.iter().all(|&x| x == 0.0));
        assert!(n.rows().into_iter().all(|r| r.to_vec() == vec![0.0, 0.0, 1.0]));
        let p3 = array![[0.3, 0.2, 0.1]];
        assert_eq!(nets.cut(&store, p3.view()).unwrap(), p3);
        assert_eq!(nets.unwrap(&store, p3.view()).unwrap(), array![[0.0, 0.0]]);
    }

    #[test]
    fn block_matches_hand_evaluation() {
        let (mut store, nets) = small_global(4);
        randomize(&mut store, 5);
        let x = array![[0.25, -0.6]];
        let h = nets.deform.first.eval(&store, x.view()).unwrap();
        let mut cat = h.into_raw_vec_and_offset().0;
        cat.extend_from_slice(&[0.25, -0.6]);
        let y = nets
            .deform
            .second
            .eval(&store, Array2::from_shape_vec((1, cat.len()), cat).unwrap().view())
            .unwrap();
        let out = nets.deform(&store, x.view()).unwrap();
        for d in 0..2 {
            assert!((out[[0, d]] - (y[[0, d]] + x[[0, d]])).abs() < 1e-14);
        }
        assert_eq!(nets.unwrap(&store, array![[0.1, 0.2, 0.3]].view()).unwrap().dim(), (1, 2));
        let (p, n) = nets.wrap(&store, x.view()).unwrap();
        assert_eq!((p.dim(), n.dim()), ((1, 3), (1, 3)));
        assert!((n.row(0).dot(&n.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_are_evaluated_independently() {
        let (mut store, nets) = small_global(6);
        randomize(&mut store, 7);
        let p = array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.0], [0.2, 0.2, -0.2]];
        let base = nets.parameterize(&store, p.view()).unwrap();
        let mut moved = p.clone();
        moved[[1, 0]] += 0.37;
        let after = nets.parameterize(&store, moved.view()).unwrap();
        assert_eq!(base.row(0), after.row(0));
        assert_eq!(base.row(2), after.row(2));
        assert_ne!(base.row(1), after.row(1));
    }

    #[test]
    fn assignment_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let nets = MultiChartNetworks::new(&mut store, ChartArch::with_widths(3, 8, 6, 4), &mut rng).unwrap();
        let p = Array2::from_shape_fn((10, 3), |_| rng.random_range(-0.5..0.5));
        let h = nets.embed(&store, p.view()).unwrap();
        assert_eq!(h.ncols(), 8);
        let s = nets.assign(&store, h.view()).unwrap();
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        nets.assign.zero_all(&mut store);
        let s = nets.assign(&store, h.view()).unwrap();
        assert!(s.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let names: Vec<String> = nets.networks().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"chart2.wrap.b".to_string()));
    }

    #[test]
    fn softmax_closed_form() {
        let s = softmax_rows(array![[0.0, 2f64.ln()]].view());
        assert!((s[[0, 0]] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s[[0, 1]] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn charts_share_no_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let nets = MultiChartNetworks::new(&mut store, ChartArch::with_widths(2, 4, 4, 2), &mut rng).unwrap();
        let a: Vec<ParamId> = nets.charts[0].unwrap.param_ids().chain(nets.charts[0].wrap.param_ids()).collect();
        let b: Vec<ParamId> = nets.charts[1].unwrap.param_ids().chain(nets.charts[1].wrap.param_ids()).collect();
        assert!(a.iter().all(|id| !b.contains(id)));
    }
}
