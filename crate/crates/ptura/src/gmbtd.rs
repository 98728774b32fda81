//! Rank-adaptive mean-field variational CP decomposition of the received
//! tensor, specialized to constant-energy (Grassmannian) symbol factors:
//! shared-precision column sparsity, noise-precision learning, constant
//! energy renormalization, and on-the-fly pruning.
//!
//! The expensive step of every update is one tall matrix product per mode,
//! (unfolded data) x conj(Khatri-Rao co-factor). The data unfoldings are
//! fixed per run, so they are precomputed; the contribution of already
//! recovered components is folded in through small cross-Gram matrices
//! instead of materializing their reconstruction.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::tensor::{fro_norm2, unfold, CMat, DenseTensor};

#[derive(Debug, Clone)]
pub struct GmbtdConfig {
    pub t_l: Vec<usize>,
    pub m: usize,
    /// Component energy threshold for pruning.
    pub eps_a: f64,
    /// Relative factor-change convergence threshold.
    pub eps_iter: f64,
    /// Over-provisioning factor of the initial component count.
    pub c_k: f64,
    pub a0: f64,
    pub b0: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub max_iters: usize,
    /// Constant-energy renormalization; disabling it yields the plain
    /// Bayesian CP baseline (test use only).
    pub renormalize: bool,
}

impl GmbtdConfig {
    pub fn new(t_l: Vec<usize>, m: usize) -> GmbtdConfig {
        GmbtdConfig {
            t_l,
            m,
            eps_a: 1e-2,
            eps_iter: 1e-6,
            c_k: 1.1,
            a0: 1e-6,
            b0: 1e-6,
            a_lambda: 1e-6,
            b_lambda: 1e-6,
            a_gamma: 1e-6,
            b_gamma: 1e-6,
            max_iters: 200,
            renormalize: true,
        }
    }

    pub fn from_system(cfg: &SystemConfig) -> GmbtdConfig {
        GmbtdConfig {
            t_l: cfg.t_l.clone(),
            m: cfg.m,
            eps_a: cfg.eps_a,
            eps_iter: cfg.eps_iter,
            c_k: cfg.c_k,
            a0: cfg.a0,
            b0: cfg.b0,
            a_lambda: cfg.a_lambda,
            b_lambda: cfg.b_lambda,
            a_gamma: cfg.a_gamma,
            b_gamma: cfg.b_gamma,
            max_iters: cfg.max_vb_iters,
            renormalize: true,
        }
    }

    pub fn t_total(&self) -> usize {
        self.t_l.iter().product()
    }
}

/// All variational posterior statistics of one decomposition.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub k: usize,
    pub x_hat: Vec<CMat>,
    pub theta: Vec<CMat>,
    pub h_hat: CMat,
    pub phi: CMat,
    pub lambda_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub n0_inv_hat: f64,
    pub h_r_hat: CMat,
    pub xi: CMat,
    /// Known symbols of recovered components, never updated.
    pub recovered_symbols: Vec<CMat>,
    /// Mode-(L+1) correlation of the residual with the co-factor
    /// Khatri-Rao product, cached by the channel update for the noise
    /// update that follows it.
    residual_corr: Option<CMat>,
}

impl PosteriorState {
    pub fn k_r(&self) -> usize {
        self.h_r_hat.ncols()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterTrace {
    pub iter: usize,
    pub k: usize,
    pub residual: f64,
    pub n0_inv: f64,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub x_hat: Vec<CMat>,
    pub h_hat: CMat,
    pub h_r_hat: CMat,
    /// e[k][l] = Theta[l][k,k]: per-component, per-mode error ratio.
    pub e: Vec<Vec<f64>>,
    pub k_u_hat: usize,
    pub iters: usize,
    pub n0_inv: f64,
    pub trace: Vec<IterTrace>,
}

/// Initial component count from the data energy statistic.
pub fn estimate_initial_k(y: &DenseTensor, k_r: usize, c_k: f64) -> usize {
    if y.is_empty() {
        return 0;
    }
    let mean = y.mean();
    let sumsq: f64 = y.data.iter().map(|v| (v - mean).norm_sqr()).sum();
    let k = c_k * sumsq / y.len() as f64 - k_r as f64;
    k.round().max(0.0) as usize
}

fn random_complex<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn init_state<R: Rng>(
    y: &DenseTensor,
    recovered_symbols: Vec<CMat>,
    cfg: &GmbtdConfig,
    rng: &mut R,
) -> PosteriorState {
    let k_r = recovered_symbols.first().map_or(0, |m| m.ncols());
    let k = estimate_initial_k(y, k_r, cfg.c_k);
    let mut x_hat = Vec::with_capacity(cfg.t_l.len());
    for &t_l in &cfg.t_l {
        let mut f = CMat::zeros(t_l, k);
        for c in 0..k {
            let mut col: Vec<Complex64> = (0..t_l).map(|_| random_complex(rng)).collect();
            let norm: f64 = col.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let scale = (t_l as f64).sqrt() / norm;
            for v in col.iter_mut() {
                *v *= scale;
            }
            for (r, v) in col.into_iter().enumerate() {
                f[(r, c)] = v;
            }
        }
        x_hat.push(f);
    }
    let h_hat = CMat::from_fn(cfg.m, k, |_, _| random_complex(rng) / 2f64.sqrt());
    PosteriorState {
        k,
        x_hat,
        theta: cfg.t_l.iter().map(|_| CMat::identity(k, k)).collect(),
        h_hat,
        phi: CMat::identity(k, k),
        lambda_hat: vec![cfg.a_lambda / cfg.b_lambda; k],
        gamma_hat: vec![cfg.a_gamma / cfg.b_gamma; k],
        n0_inv_hat: cfg.a0 / cfg.b0,
        h_r_hat: CMat::zeros(cfg.m, k_r),
        xi: CMat::identity(k_r, k_r),
        recovered_symbols,
        residual_corr: None,
    }
}

/// Transposed Khatri-Rao product: K x prod(rows), the last factor's row
/// index varying fastest, each output column contiguous.
pub fn khatri_rao_transposed(factors: &[&CMat]) -> CMat {
    let k = factors.first().map_or(0, |f| f.ncols());
    let dims: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let p: usize = dims.iter().product();
    let n = factors.len();
    let mut out = CMat::zeros(k, p);
    if p == 0 || k == 0 {
        return out;
    }
    let ft: Vec<CMat> = factors.iter().map(|f| f.transpose()).collect();
    let mut digits = vec![0usize; n];
    let mut prefix = vec![vec![Complex64::new(1.0, 0.0); k]; n];
    let refresh = |prefix: &mut Vec<Vec<Complex64>>, digits: &[usize], from: usize| {
        for i in from..n {
            if i == 0 {
                prefix[0].copy_from_slice(ft[0].column(digits[0]).as_slice());
            } else {
                let (lo, hi) = prefix.split_at_mut(i);
                let col = ft[i].column(digits[i]);
                let col = col.as_slice();
                for kk in 0..k {
                    hi[0][kk] = lo[i - 1][kk] * col[kk];
                }
            }
        }
    };
    refresh(&mut prefix, &digits, 0);
    for col in 0..p {
        out.column_mut(col).copy_from_slice(&prefix[n - 1]);
        let mut lvl = n;
        while lvl > 0 {
            let i = lvl - 1;
            digits[i] += 1;
            if digits[i] < dims[i] {
                refresh(&mut prefix, &digits, i);
                break;
            }
            digits[i] = 0;
            lvl -= 1;
        }
    }
    out
}

/// a * conj(bt)^T for a: R x P and bt: K x P, i.e. out[r,k] =
/// sum_p a[r,p] * conj(bt[k,p]); rank-one accumulation over contiguous
/// columns, the workhorse of every factor update.
pub fn matmul_conj_bt(a: &CMat, bt: &CMat) -> CMat {
    let (r, p) = a.shape();
    let k = bt.nrows();
    assert_eq!(bt.ncols(), p);
    let mut out = CMat::zeros(r, k);
    let asl = a.as_slice();
    let bsl = bt.as_slice();
    let osl = out.as_mut_slice();
    for pp in 0..p {
        let ac = &asl[pp * r..(pp + 1) * r];
        let bc = &bsl[pp * k..(pp + 1) * k];
        for kk in 0..k {
            let w = bc[kk].conj();
            let dst = &mut osl[kk * r..(kk + 1) * r];
            for rr in 0..r {
                dst[rr] += ac[rr] * w;
            }
        }
    }
    out
}

/// Inverse of a Hermitian positive-definite matrix, with a trace-scaled
/// jitter fallback when the factorization fails numerically.
fn hermitian_inverse(a: &CMat) -> Result<CMat> {
    let k = a.nrows();
    if k == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let symmetrize = |m: CMat| -> CMat {
        let adj = m.adjoint();
        (m + adj) * Complex64::new(0.5, 0.0)
    };
    if let Some(ch) = a.clone().cholesky() {
        return Ok(symmetrize(ch.inverse()));
    }
    let tr: f64 = (0..k).map(|i| a[(i, i)].re).sum();
    let jitter = 1e-12 * tr.max(1.0) / k as f64;
    let mut b = a.clone();
    for i in 0..k {
        b[(i, i)] += Complex64::new(jitter, 0.0);
    }
    if let Some(ch) = b.clone().cholesky() {
        return Ok(symmetrize(ch.inverse()));
    }
    b.lu()
        .try_inverse()
        .map(symmetrize)
        .ok_or_else(|| Error::Degenerate("singular posterior covariance system".into()))
}

fn diag_from(v: &[f64]) -> CMat {
    let k = v.len();
    CMat::from_fn(k, k, |i, j| {
        if i == j {
            Complex64::new(v[i], 0.0)
        } else {
            Complex64::default()
        }
    })
}

fn hadamard(a: &CMat, b: &CMat) -> CMat {
    a.component_mul(b)
}

fn entry_sum_re(a: &CMat) -> f64 {
    a.iter().map(|v| v.re).sum::<f64>()
}

/// Driver owning the data-side precomputations of one decomposition run.
pub struct Gmbtd<'a> {
    pub cfg: &'a GmbtdConfig,
    /// Mode unfoldings of the data tensor, modes 1..L then the antenna mode.
    y_unfolds: Vec<CMat>,
    y_norm2: f64,
    /// Antenna-mode data correlation with the recovered-symbol Khatri-Rao
    /// product (fixed per run).
    y_corr_recovered: Option<CMat>,
}

impl<'a> Gmbtd<'a> {
    pub fn new(cfg: &'a GmbtdConfig, y: &DenseTensor) -> Result<Gmbtd<'a>> {
        let order = cfg.t_l.len() + 1;
        let mut expected = cfg.t_l.clone();
        expected.push(cfg.m);
        if y.shape != expected {
            return Err(Error::Shape(format!(
                "data tensor shape {:?} does not match configuration {:?}",
                y.shape, expected
            )));
        }
        let mut y_unfolds = Vec::with_capacity(order);
        for mode in 0..order {
            y_unfolds.push(unfold(y, mode)?);
        }
        Ok(Gmbtd {
            cfg,
            y_unfolds,
            y_norm2: fro_norm2(y),
            y_corr_recovered: None,
        })
    }

    fn n_modes(&self) -> usize {
        self.cfg.t_l.len()
    }

    fn prepare_recovered(&mut self, state: &PosteriorState) {
        if state.k_r() == 0 || self.y_corr_recovered.is_some() {
            return;
        }
        let l = self.n_modes();
        let factors: Vec<&CMat> = (0..l).rev().map(|i| &state.recovered_symbols[i]).collect();
        let krt = khatri_rao_transposed(&factors);
        self.y_corr_recovered = Some(matmul_conj_bt(&self.y_unfolds[l], &krt));
    }

    /// Cross-Gram of recovered vs current factors for one mode: K_r x K.
    fn cross_gram(&self, state: &PosteriorState, mode: usize) -> CMat {
        state.recovered_symbols[mode].adjoint() * &state.x_hat[mode]
    }

    /// Hadamard product of conj(cross grams) over the co-factors of
    /// `skip_mode` (the antenna mode always participates).
    fn recovered_cofactor_weight(&self, state: &PosteriorState, skip_mode: Option<usize>) -> CMat {
        let mut w = (state.h_r_hat.adjoint() * &state.h_hat).conjugate();
        for l in 0..self.n_modes() {
            if Some(l) == skip_mode {
                continue;
            }
            w = hadamard(&w, &self.cross_gram(state, l).conjugate());
        }
        w
    }

    /// Co-factor Khatri-Rao transpose for a symbol mode: the antenna
    /// factor leads, then symbol modes in descending order, skipping `l`.
    fn cofactor_krt(&self, state: &PosteriorState, skip_mode: usize) -> CMat {
        let mut factors: Vec<&CMat> = vec![&state.h_hat];
        for l in (0..self.n_modes()).rev() {
            if l != skip_mode {
                factors.push(&state.x_hat[l]);
            }
        }
        khatri_rao_transposed(&factors)
    }

    fn symbol_krt(&self, state: &PosteriorState) -> CMat {
        let factors: Vec<&CMat> = (0..self.n_modes()).rev().map(|l| &state.x_hat[l]).collect();
        khatri_rao_transposed(&factors)
    }

    /// Gram-plus-covariance block of one mode: X^H X + T_l conj(Theta).
    fn mode_moment(&self, state: &PosteriorState, l: usize) -> CMat {
        let g = state.x_hat[l].adjoint() * &state.x_hat[l];
        let t = Complex64::new(self.cfg.t_l[l] as f64, 0.0);
        g + state.theta[l].conjugate() * t
    }

    fn channel_moment(&self, state: &PosteriorState) -> CMat {
        let g = state.h_hat.adjoint() * &state.h_hat;
        g + state.phi.conjugate() * Complex64::new(self.cfg.m as f64, 0.0)
    }

    pub fn update_symbol_factors(&mut self, state: &mut PosteriorState) -> Result<()> {
        self.prepare_recovered(state);
        let n0 = Complex64::new(state.n0_inv_hat, 0.0);
        let ch_moment = self.channel_moment(state);
        for l in 0..self.n_modes() {
            let mut j_l = CMat::from_element(state.k, state.k, Complex64::new(1.0, 0.0));
            for lp in 0..self.n_modes() {
                if lp != l {
                    j_l = hadamard(&j_l, &self.mode_moment(state, lp));
                }
            }
            let system = hadamard(&j_l, &ch_moment) * n0 + diag_from(&state.lambda_hat);
            state.theta[l] = hermitian_inverse(&system)?;
            let krt = self.cofactor_krt(state, l);
            let mut corr = matmul_conj_bt(&self.y_unfolds[l], &krt);
            if state.k_r() > 0 {
                corr -= &state.recovered_symbols[l]
                    * self.recovered_cofactor_weight(state, Some(l));
            }
            state.x_hat[l] = corr * state.theta[l].transpose() * n0;
        }
        state.residual_corr = None;
        Ok(())
    }

    pub fn update_channel_factor(&mut self, state: &mut PosteriorState) -> Result<()> {
        self.prepare_recovered(state);
        let n0 = Complex64::new(state.n0_inv_hat, 0.0);
        let mut j = CMat::from_element(state.k, state.k, Complex64::new(1.0, 0.0));
        for l in 0..self.n_modes() {
            j = hadamard(&j, &self.mode_moment(state, l));
        }
        let system = j.clone() * n0 + diag_from(&state.gamma_hat);
        state.phi = hermitian_inverse(&system)?;
        let krt = self.symbol_krt(state);
        let mut corr = matmul_conj_bt(&self.y_unfolds[self.n_modes()], &krt);
        if state.k_r() > 0 {
            let mut w = self.cross_gram(state, 0).conjugate();
            for l in 1..self.n_modes() {
                w = hadamard(&w, &self.cross_gram(state, l).conjugate());
            }
            corr -= &state.h_r_hat * w;
        }
        state.h_hat = &corr * state.phi.transpose() * n0;
        state.residual_corr = Some(corr);
        Ok(())
    }

    pub fn update_recovered_channels(&mut self, state: &mut PosteriorState) -> Result<()> {
        if state.k_r() == 0 {
            return Ok(());
        }
        self.prepare_recovered(state);
        let n0 = Complex64::new(state.n0_inv_hat, 0.0);
        let k_r = state.k_r();
        let mut gr = CMat::from_element(k_r, k_r, Complex64::new(1.0, 0.0));
        for xs in &state.recovered_symbols {
            gr = hadamard(&gr, &(xs.adjoint() * xs));
        }
        let system = gr * n0 + CMat::identity(k_r, k_r);
        state.xi = hermitian_inverse(&system)?;
        let mut corr = self.y_corr_recovered.clone().unwrap();
        if state.k > 0 {
            let mut cross = self.cross_gram(state, 0);
            for l in 1..self.n_modes() {
                cross = hadamard(&cross, &self.cross_gram(state, l));
            }
            corr -= &state.h_hat * cross.transpose();
        }
        state.h_r_hat = corr * state.xi.transpose() * n0;
        Ok(())
    }

    /// Expected residual power given the current posterior; also the
    /// numerator of the noise-precision update.
    fn expected_residual(&mut self, state: &mut PosteriorState) -> f64 {
        self.prepare_recovered(state);
        let mut d = self.y_norm2;
        if state.k > 0 {
            let mut j = CMat::from_element(state.k, state.k, Complex64::new(1.0, 0.0));
            for l in 0..self.n_modes() {
                j = hadamard(&j, &self.mode_moment(state, l));
            }
            d += entry_sum_re(&hadamard(&j, &self.channel_moment(state)));
            let corr = match &state.residual_corr {
                Some(c) => c.clone(),
                None => {
                    let krt = self.symbol_krt(state);
                    let mut c = matmul_conj_bt(&self.y_unfolds[self.n_modes()], &krt);
                    if state.k_r() > 0 {
                        let mut w = self.cross_gram(state, 0).conjugate();
                        for l in 1..self.n_modes() {
                            w = hadamard(&w, &self.cross_gram(state, l).conjugate());
                        }
                        c -= &state.h_r_hat * w;
                    }
                    c
                }
            };
            let dot: f64 = corr
                .iter()
                .zip(state.h_hat.iter())
                .map(|(g, h)| (g.conj() * h).re)
                .sum();
            d -= 2.0 * dot;
        }
        if state.k_r() > 0 {
            let k_r = state.k_r();
            let mut gr = CMat::from_element(k_r, k_r, Complex64::new(1.0, 0.0));
            for xs in &state.recovered_symbols {
                gr = hadamard(&gr, &(xs.adjoint() * xs));
            }
            let hr_moment = state.h_r_hat.adjoint() * &state.h_r_hat
                + state.xi.clone() * Complex64::new(self.cfg.m as f64, 0.0);
            d += entry_sum_re(&hadamard(&gr, &hr_moment));
            let dot: f64 = self
                .y_corr_recovered
                .as_ref()
                .unwrap()
                .iter()
                .zip(state.h_r_hat.iter())
                .map(|(g, h)| (g.conj() * h).re)
                .sum();
            d -= 2.0 * dot;
        }
        d
    }

    pub fn update_noise_precision(&mut self, state: &mut PosteriorState) -> f64 {
        let c0 = (self.cfg.t_total() * self.cfg.m) as f64 + self.cfg.a0;
        let mut d0 = self.cfg.b0 + self.expected_residual(state);
        if d0 <= 0.0 {
            d0 = self.cfg.b0 + 1e-12;
        }
        state.n0_inv_hat = c0 / d0;
        d0
    }

    pub fn update_lambda(&self, state: &mut PosteriorState) {
        let t_sum: f64 = self.cfg.t_l.iter().sum::<usize>() as f64;
        for k in 0..state.k {
            let mut energy = 0.0;
            for l in 0..self.n_modes() {
                energy += state.x_hat[l].column(k).norm_squared()
                    + self.cfg.t_l[l] as f64 * state.theta[l][(k, k)].re;
            }
            state.lambda_hat[k] = (t_sum + self.cfg.a_lambda) / (energy + self.cfg.b_lambda);
        }
    }

    pub fn update_gamma(&self, state: &mut PosteriorState) {
        let m = self.cfg.m as f64;
        for k in 0..state.k {
            let energy = state.h_hat.column(k).norm_squared() + m * state.phi[(k, k)].re;
            state.gamma_hat[k] = (m + self.cfg.a_gamma) / (energy + self.cfg.b_gamma);
        }
    }

    pub fn renormalize(&self, state: &mut PosteriorState) {
        let mut total = vec![1.0f64; state.k];
        for l in 0..self.n_modes() {
            let target = (self.cfg.t_l[l] as f64).sqrt();
            let mut scale = vec![1.0f64; state.k];
            for k in 0..state.k {
                let norm = state.x_hat[l].column(k).norm();
                if norm > 1e-300 {
                    scale[k] = target / norm;
                }
            }
            for k in 0..state.k {
                let s = Complex64::new(scale[k], 0.0);
                state.x_hat[l].column_mut(k).scale_mut(scale[k]);
                total[k] *= scale[k];
                for i in 0..state.k {
                    state.theta[l][(i, k)] *= s;
                    state.theta[l][(k, i)] *= s;
                }
            }
        }
        for k in 0..state.k {
            let inv = 1.0 / total[k];
            state.h_hat.column_mut(k).scale_mut(inv);
            for i in 0..state.k {
                state.phi[(i, k)] *= Complex64::new(inv, 0.0);
                state.phi[(k, i)] *= Complex64::new(inv, 0.0);
            }
        }
        state.residual_corr = None;
    }

    pub fn prune(&self, state: &mut PosteriorState) {
        let keep: Vec<usize> = (0..state.k)
            .filter(|&k| state.h_hat.column(k).norm_squared() > self.cfg.eps_a)
            .collect();
        if keep.len() == state.k {
            return;
        }
        let select_cols = |m: &CMat| -> CMat {
            let mut out = CMat::zeros(m.nrows(), keep.len());
            for (j, &k) in keep.iter().enumerate() {
                out.column_mut(j).copy_from(&m.column(k));
            }
            out
        };
        let select_both = |m: &CMat| -> CMat {
            CMat::from_fn(keep.len(), keep.len(), |i, j| m[(keep[i], keep[j])])
        };
        for l in 0..self.n_modes() {
            state.x_hat[l] = select_cols(&state.x_hat[l]);
            state.theta[l] = select_both(&state.theta[l]);
        }
        state.h_hat = select_cols(&state.h_hat);
        state.phi = select_both(&state.phi);
        state.lambda_hat = keep.iter().map(|&k| state.lambda_hat[k]).collect();
        state.gamma_hat = keep.iter().map(|&k| state.gamma_hat[k]).collect();
        state.k = keep.len();
        state.residual_corr = None;
    }

    fn result_from(&self, state: &PosteriorState, iters: usize, trace: Vec<IterTrace>) -> DecompositionResult {
        let e = (0..state.k)
            .map(|k| {
                (0..self.n_modes())
                    .map(|l| state.theta[l][(k, k)].re)
                    .collect()
            })
            .collect();
        DecompositionResult {
            x_hat: state.x_hat.clone(),
            h_hat: state.h_hat.clone(),
            h_r_hat: state.h_r_hat.clone(),
            e,
            k_u_hat: state.k,
            iters,
            n0_inv: state.n0_inv_hat,
            trace: trace.clone(),
        }
    }

    /// Full decomposition loop; `collect_trace` appends one row per
    /// iteration.
    pub fn run_state(
        &mut self,
        state: &mut PosteriorState,
        collect_trace: bool,
    ) -> Result<DecompositionResult> {
        let mut trace = Vec::new();
        let mut snapshot: Option<Vec<CMat>> = None;
        let mut iters = 0;
        for iter in 1..=self.cfg.max_iters {
            iters = iter;
            if state.k > 0 {
                self.update_symbol_factors(state)?;
                self.update_channel_factor(state)?;
            }
            let d0 = self.update_noise_precision(state);
            self.update_lambda(state);
            self.update_gamma(state);
            if self.cfg.renormalize && state.k > 0 {
                self.renormalize(state);
            }
            let k_before = state.k;
            self.prune(state);
            if collect_trace {
                trace.push(IterTrace {
                    iter,
                    k: state.k,
                    residual: (d0 - self.cfg.b0) / self.y_norm2.max(1e-300),
                    n0_inv: state.n0_inv_hat,
                });
            }
            // With no active columns left, only the recovered-channel block
            // remains and its closed-form refit settles after one extra pass.
            let converged = if state.k == 0 {
                k_before == 0
            } else {
                match &snapshot {
                    Some(old) if state.k == k_before && old[0].ncols() == state.k => {
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for (o, n) in old.iter().zip(&state.x_hat) {
                            num += (n - o).norm_squared();
                            den += o.norm_squared();
                        }
                        den > 0.0 && num / den < self.cfg.eps_iter
                    }
                    _ => false,
                }
            };
            snapshot = Some(state.x_hat.clone());
            self.update_recovered_channels(state)?;
            if converged || (state.k == 0 && state.k_r() == 0) {
                break;
            }
        }
        Ok(self.result_from(state, iters, trace))
    }
}

/// One-call decomposition of a data tensor.
pub fn run<R: Rng>(
    y: &DenseTensor,
    recovered_symbols: Vec<CMat>,
    cfg: &GmbtdConfig,
    rng: &mut R,
    collect_trace: bool,
) -> Result<DecompositionResult> {
    let mut driver = Gmbtd::new(cfg, y)?;
    let mut state = init_state(y, recovered_symbols, cfg, rng);
    if state.k == 0 && state.k_r() == 0 {
        return Ok(driver.result_from(&state, 0, Vec::new()));
    }
    driver.run_state(&mut state, collect_trace)
}

/// Per-iteration complex multiplication count of the update sequence.
pub fn complexity_estimate(t_l: &[usize], m: usize, k: usize, k_r: usize) -> u64 {
    let l = t_l.len() as u64;
    let t_sum: u64 = t_l.iter().map(|&t| t as u64).sum();
    let t: u64 = t_l.iter().map(|&t| t as u64).product();
    let (k, k_r, m) = (k as u64, k_r as u64, m as u64);
    let mut ops = 0u64;
    ops += k_r * t * m;
    ops += k * k * t_sum + l * (l - 1) * k * k + l * k * k * k;
    ops += k * k * t_sum + l * k * t * m;
    ops += k * k * m + (l - 1) * k * k + k * k * k;
    ops += k * k * m + k * t * m;
    ops += l * k * k + k_r * k_r + 2 * t * m;
    ops += k * t_sum;
    ops += k * m;
    ops += k * t * m;
    ops += k_r * k_r * m + k_r * t * m;
    ops
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::tensor::kruskal;

    /// Random factors with constant-energy columns plus a channel factor,
    /// and their noiseless tensor.
    pub fn planted_scene<R: Rng>(
        rng: &mut R,
        t_l: &[usize],
        m: usize,
        k_u: usize,
        n0: f64,
    ) -> (Vec<CMat>, CMat, DenseTensor) {
        let mut factors = Vec::new();
        for &t in t_l {
            let mut f = CMat::from_fn(t, k_u, |_, _| random_complex(rng));
            for c in 0..k_u {
                let s = (t as f64).sqrt() / f.column(c).norm();
                f.column_mut(c).scale_mut(s);
            }
            factors.push(f);
        }
        let h = CMat::from_fn(m, k_u, |_, _| random_complex(rng) / 2f64.sqrt());
        let mut refs: Vec<&CMat> = factors.iter().collect();
        refs.push(&h);
        let mut y = kruskal(&refs).unwrap();
        if n0 > 0.0 {
            let s = (n0 / 2.0).sqrt();
            for v in y.data.iter_mut() {
                *v += Complex64::new(s, 0.0) * random_complex(rng);
            }
        }
        (factors, h, y)
    }

    /// Greedy max-correlation matching of estimated to planted components
    /// over the stacked factor columns; returns per-match cosine values.
    pub fn match_cosines(truth: &[CMat], est: &[CMat]) -> Vec<f64> {
        let k_t = truth[0].ncols();
        let k_e = est[0].ncols();
        // Each mode of an estimated component carries its own arbitrary
        // phase and scale, so cosines are per mode; a component's score is
        // the worst mode.
        let score = |ct: usize, ce: usize| -> f64 {
            truth
                .iter()
                .zip(est)
                .map(|(tm, em)| {
                    let dot: Complex64 = tm
                        .column(ct)
                        .iter()
                        .zip(em.column(ce).iter())
                        .map(|(x, y)| x.conj() * y)
                        .sum();
                    dot.norm() / (tm.column(ct).norm() * em.column(ce).norm())
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut used = vec![false; k_e];
        let mut out = Vec::new();
        for ct in 0..k_t {
            let mut best = (0.0, None);
            for ce in 0..k_e {
                if used[ce] {
                    continue;
                }
                let c = score(ct, ce);
                if c > best.0 {
                    best = (c, Some(ce));
                }
            }
            if let Some(ce) = best.1 {
                used[ce] = true;
            }
            out.push(best.0);
        }
        out
    }
}
