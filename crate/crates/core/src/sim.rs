//! Seeded data-generating mechanisms.
//!
//! Every subject draws from its own ChaCha8 stream, keyed by the run seed and
//! the subject id, so datasets are reproducible and subject-level generation
//! is order independent.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use crate::data::{CorrFamily, LongitudinalDataset, RandomEffectSpec, ResidualSpec, SubjectRecord, TimeUnit};
use crate::design::Term;
use crate::error::{invalid, Error, Result};
use crate::joint::JointSpec;
use crate::lmm::LmmSpec;

/// One week, in years.
pub const WEEK_YEARS: f64 = 1.0 / 52.0;

pub fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws `L·z` scaled by the standard deviations; zero SDs give exact zeros.
fn draw_effects<R: Rng + ?Sized>(sds: &[f64], chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let q = sds.len();
    let z = DVector::from_fn(q, |_, _| normal(rng));
    let c = chol * z;
    DVector::from_fn(q, |i, _| if sds[i] == 0.0 { 0.0 } else { sds[i] * c[i] })
}

/// `n_subjects x q` matrix of independent `N(0, Ψ)` draws.
pub fn gen_random_effects(spec: &RandomEffectSpec, n_subjects: usize, seed: u64) -> Result<DMatrix<f64>> {
    let chol = spec.corr_cholesky()?;
    let q = spec.dim();
    let mut out = DMatrix::zeros(n_subjects, q);
    for i in 0..n_subjects {
        let mut rng = subject_rng(seed, i as u64 + 1);
        out.set_row(i, &draw_effects(&spec.sds, &chol, &mut rng).transpose());
    }
    Ok(out)
}

/// Observed interval around a recommended interval `r`: Weibull with scale `r`.
pub fn gen_adherence(r: f64, shape: f64, seed: u64) -> Result<f64> {
    adherence_draw(r, shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn adherence_draw<R: Rng + ?Sized>(r: f64, shape: f64, rng: &mut R) -> Result<f64> {
    if !(r > 0.0) {
        return invalid(format!("recommended interval {r} must be positive"));
    }
    let w = Weibull::new(r, shape).map_err(|e| Error::Invalid(format!("Weibull(shape {shape}): {e}")))?;
    Ok(w.sample(rng).max(f64::MIN_POSITIVE))
}

/// Interval process with memory: `S_ij = Hᵀα + γᵀb + t_ij·γ_tᵀb + η_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryIntervalParams {
    /// Baseline terms forming `H`.
    pub h_terms: Vec<Term>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Loadings multiplied by the visit time; empty means none.
    #[serde(default)]
    pub gamma_time: Vec<f64>,
    pub sigma_eta: f64,
    pub re_spec: RandomEffectSpec,
    pub tau: f64,
    /// Draws below this value are recorded as the floor.
    pub floor: f64,
}

impl MemoryIntervalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0) {
            return invalid("interval floor must be positive");
        }
        if !(self.sigma_eta > 0.0) {
            return invalid("sigma_eta must be positive");
        }
        if !(self.tau > 0.0) {
            return invalid("tau must be positive");
        }
        if self.h_terms.len() != self.alpha.len() {
            return Err(Error::Dimension("alpha does not match the H terms".into()));
        }
        let q = self.re_spec.dim();
        if self.gamma.len() != q || !(self.gamma_time.is_empty() || self.gamma_time.len() == q) {
            return Err(Error::Dimension("gamma does not match the random effects".into()));
        }
        Ok(())
    }

    fn h_alpha(&self, subject: &SubjectRecord) -> Result<f64> {
        let mut m = 0.0;
        for (term, a) in self.h_terms.iter().zip(&self.alpha) {
            m += a * term.eval(0.0, subject)?;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalDraws {
    pub s: Vec<f64>,
    /// Visit times; the first visit is at 0.
    pub times: Vec<f64>,
    pub n_visits: usize,
    pub u_sum: f64,
}

fn draw_memory_intervals<R: Rng + ?Sized>(p: &MemoryIntervalParams, mean: f64, b: &DVector<f64>, rng: &mut R) -> IntervalDraws {
    let gb: f64 = p.gamma.iter().zip(b.iter()).map(|(g, b)| g * b).sum();
    let gtb: f64 = p.gamma_time.iter().zip(b.iter()).map(|(g, b)| g * b).sum();
    let mut t = 0.0;
    let mut s = Vec::new();
    let mut times = Vec::new();
    loop {
        times.push(t);
        let draw = mean + gb + t * gtb + p.sigma_eta * normal(rng);
        let si = draw.max(p.floor);
        s.push(si);
        t += si;
        if t > p.tau {
            break;
        }
    }
    IntervalDraws { n_visits: s.len(), u_sum: t, s, times }
}

#[derive(Debug, Clone)]
pub struct MemoryDraws {
    pub subjects: Vec<IntervalDraws>,
    pub effects: DMatrix<f64>,
    pub warnings: Vec<String>,
}

fn degeneracy_warning(n_low: usize, n: usize, floor: f64) -> Option<String> {
    (2 * n_low > n).then(|| {
        let msg = format!("expected interval is at or below the floor {floor} for {n_low} of {n} subjects");
        log::warn!("{msg}");
        msg
    })
}

/// Draws intervals until their running sum exceeds `tau`, one subject per
/// entry of `baselines` (covariates used by the `H` terms).
pub fn gen_intervals_memory(
    params: &MemoryIntervalParams,
    baselines: &[BTreeMap<String, f64>],
    seed: u64,
) -> Result<MemoryDraws> {
    params.validate()?;
    let chol = params.re_spec.corr_cholesky()?;
    let n = baselines.len();
    let mut effects = DMatrix::zeros(n, params.re_spec.dim());
    let mut subjects = Vec::with_capacity(n);
    let mut n_low = 0;
    for (i, base) in baselines.iter().enumerate() {
        let mut rng = subject_rng(seed, i as u64 + 1);
        let b = draw_effects(&params.re_spec.sds, &chol, &mut rng);
        let holder = SubjectRecord { baseline: base.clone(), ..empty_subject(i as u64 + 1) };
        let mean = params.h_alpha(&holder)?;
        let gb: f64 = params.gamma.iter().zip(b.iter()).map(|(g, b)| g * b).sum();
        if mean + gb <= params.floor {
            n_low += 1;
        }
        subjects.push(draw_memory_intervals(params, mean, &b, &mut rng));
        effects.set_row(i, &b.transpose());
    }
    let warnings = degeneracy_warning(n_low, n, params.floor).into_iter().collect();
    Ok(MemoryDraws { subjects, effects, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorylessVisits {
    pub times: Vec<Vec<f64>>,
    pub clipped: bool,
}

/// Bernoulli thinning on the grid `0, Δ, 2Δ, … < τ` with per-point visit
/// probability `exp(μ(t) + γᵀb_i)`, clipped at 1.
pub fn gen_visits_memoryless<F: Fn(f64) -> f64>(
    mu: F,
    gamma: &[f64],
    b: &DMatrix<f64>,
    grid_step: f64,
    tau: f64,
    seed: u64,
) -> Result<MemorylessVisits> {
    if !(grid_step > 0.0) || !(tau > 0.0) {
        return invalid("grid step and tau must be positive");
    }
    if b.ncols() != gamma.len() {
        return Err(Error::Dimension("gamma does not match the random-effect draws".into()));
    }
    let n_grid = (tau / grid_step - 1e-9).ceil().max(0.0) as usize;
    let mut clipped = false;
    let mut times = Vec::with_capacity(b.nrows());
    for i in 0..b.nrows() {
        let mut rng = subject_rng(seed, i as u64 + 1);
        let gb: f64 = gamma.iter().enumerate().map(|(k, g)| g * b[(i, k)]).sum();
        let mut ti = Vec::new();
        for k in 0..n_grid {
            let t = k as f64 * grid_step;
            let mut p = (mu(t) + gb).exp();
            if p > 1.0 {
                p = 1.0;
                clipped = true;
            }
            if p > 0.0 && rng.random::<f64>() < p {
                ti.push(t);
            }
        }
        times.push(ti);
    }
    if clipped {
        log::warn!("visit probabilities above 1 were clipped");
    }
    Ok(MemorylessVisits { times, clipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CovariateDist {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: CovariateDist,
}

impl CovariateSpec {
    pub fn bernoulli(name: &str, p: f64) -> Self {
        Self { name: name.into(), dist: CovariateDist::Bernoulli { p } }
    }

    pub fn normal(name: &str, mean: f64, sd: f64) -> Self {
        Self { name: name.into(), dist: CovariateDist::Normal { mean, sd } }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.dist {
            CovariateDist::Bernoulli { p } => (rng.random::<f64>() < p) as u8 as f64,
            CovariateDist::Normal { mean, sd } => mean + sd * normal(rng),
        }
    }
}

fn empty_subject(id: u64) -> SubjectRecord {
    SubjectRecord {
        id,
        visit_times: Vec::new(),
        y: Vec::new(),
        r: None,
        s: None,
        baseline: BTreeMap::new(),
        u_sum: None,
    }
}

/// Outcome with iid errors observed at visits from the interval process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryScenario {
    pub intervals: MemoryIntervalParams,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    pub y_fixed: Vec<Term>,
    pub beta: Vec<f64>,
    /// Outcome random-effect terms, aligned with `intervals.re_spec`.
    pub y_random: Vec<Term>,
    pub sigma_eps: f64,
}

impl MemoryScenario {
    /// Random intercept linked to the intervals; time in days.
    pub fn intercept_only() -> Self {
        Self {
            intervals: MemoryIntervalParams {
                h_terms: vec![Term::Intercept],
                alpha: vec![200.0 / 3.0],
                gamma: vec![-1.0],
                gamma_time: Vec::new(),
                sigma_eta: 1.0,
                re_spec: RandomEffectSpec::independent(&["b0"], &[2f64.sqrt()]),
                tau: 200.0,
                floor: 7.0,
            },
            covariates: Vec::new(),
            y_fixed: vec![Term::Intercept],
            beta: vec![0.0],
            y_random: vec![Term::Intercept],
            sigma_eps: 5.0,
        }
    }

    /// Binary baseline covariate shifting both the outcome and the mean interval.
    pub fn binary_baseline(alpha1: f64) -> Self {
        let mut s = Self::intercept_only();
        s.intervals.h_terms.push(Term::covariate("x"));
        s.intervals.alpha.push(alpha1);
        s.covariates.push(CovariateSpec::bernoulli("x", 0.5));
        s.y_fixed.push(Term::covariate("x"));
        s.beta = vec![0.0, 1.0];
        s
    }

    /// Random intercept and slope, both loading on the intervals.
    pub fn random_slope() -> Self {
        let g = -10.0 / 3f64.sqrt();
        Self {
            intervals: MemoryIntervalParams {
                h_terms: vec![Term::Intercept],
                alpha: vec![200.0 / 3.0],
                gamma: vec![g, 0.0],
                gamma_time: vec![0.0, g],
                sigma_eta: 10.0 / 3f64.sqrt(),
                re_spec: RandomEffectSpec::independent(&["b0", "b1"], &[2f64.sqrt(), 2f64.sqrt() / 100.0])
                    .with_corr(0, 1, -0.9),
                tau: 200.0,
                floor: 7.0,
            },
            covariates: Vec::new(),
            y_fixed: vec![Term::Intercept, Term::Time],
            beta: vec![0.0, -0.01],
            y_random: vec![Term::Intercept, Term::Time],
            sigma_eps: 5.0,
        }
    }

    /// Outcome covariate `x1` with no random effect and no link to the
    /// intervals, next to a linked covariate `x2` with a random slope.
    pub fn unconnected_covariate() -> Self {
        Self {
            intervals: MemoryIntervalParams {
                h_terms: vec![Term::Intercept, Term::covariate("h")],
                alpha: vec![200.0 / 3.0, 10.0],
                gamma: vec![-1.0, -1.0],
                gamma_time: Vec::new(),
                sigma_eta: 1.0,
                re_spec: RandomEffectSpec::independent(&["b0", "b2"], &[2f64.sqrt(), 1.0]),
                tau: 200.0,
                floor: 7.0,
            },
            covariates: vec![
                CovariateSpec::normal("x1", 0.0, 1.0),
                CovariateSpec::bernoulli("x2", 0.5),
                CovariateSpec::bernoulli("h", 0.5),
            ],
            y_fixed: vec![Term::Intercept, Term::covariate("x1"), Term::covariate("x2")],
            beta: vec![0.0, 1.0, 1.0],
            y_random: vec![Term::Intercept, Term::covariate("x2")],
            sigma_eps: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intervals.validate()?;
        if self.y_fixed.len() != self.beta.len() {
            return Err(Error::Dimension("beta does not match the fixed terms".into()));
        }
        if self.y_random.len() != self.intervals.re_spec.dim() {
            return Err(Error::Dimension("random terms do not match the random-effect spec".into()));
        }
        if !(self.sigma_eps >= 0.0) {
            return invalid("sigma_eps must be non-negative");
        }
        Ok(())
    }

    fn simulate(&self, n: usize, seed: u64) -> Result<(LongitudinalDataset, Vec<String>)> {
        self.validate()?;
        let p = &self.intervals;
        let chol = p.re_spec.corr_cholesky()?;
        let mut subjects = Vec::with_capacity(n);
        let mut n_low = 0;
        for i in 0..n {
            let id = i as u64 + 1;
            let mut rng = subject_rng(seed, id);
            let mut subj = empty_subject(id);
            for c in &self.covariates {
                subj.baseline.insert(c.name.clone(), c.draw(&mut rng));
            }
            let b = draw_effects(&p.re_spec.sds, &chol, &mut rng);
            let mean = p.h_alpha(&subj)?;
            let gb: f64 = p.gamma.iter().zip(b.iter()).map(|(g, b)| g * b).sum();
            if mean + gb <= p.floor {
                n_low += 1;
            }
            let draws = draw_memory_intervals(p, mean, &b, &mut rng);
            let mut y = Vec::with_capacity(draws.n_visits);
            for &t in &draws.times {
                let mut v = 0.0;
                for (term, beta) in self.y_fixed.iter().zip(&self.beta) {
                    v += beta * term.eval(t, &subj)?;
                }
                for (k, term) in self.y_random.iter().enumerate() {
                    v += b[k] * term.eval(t, &subj)?;
                }
                y.push(v + self.sigma_eps * normal(&mut rng));
            }
            subj.visit_times = draws.times;
            subj.y = y;
            subj.s = Some(draws.s);
            subj.u_sum = Some(draws.u_sum);
            subjects.push(subj);
        }
        let warnings = degeneracy_warning(n_low, n, p.floor).into_iter().collect();
        Ok((LongitudinalDataset::new(subjects, p.tau, TimeUnit::Days), warnings))
    }
}

/// Outcome and recommended-interval processes of the clinic simulation
/// studies. Time is in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicScenario {
    pub beta0: f64,
    pub beta1: f64,
    /// Treatment effect on the outcome.
    #[serde(default)]
    pub beta2: f64,
    /// Late-time asymptote of the decaying outcome.
    #[serde(default)]
    pub beta3: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Shift in the treated group's recommended interval.
    #[serde(default)]
    pub alpha2: f64,
    /// Outcome effects first, then interval effects: `(b0, b1, u0, u1)`,
    /// or `(b0, u0)` without random slopes.
    pub re_spec: RandomEffectSpec,
    pub residual: ResidualSpec,
    pub weibull_shape: f64,
    pub tau: f64,
    #[serde(default)]
    pub decay_rate: Option<f64>,
    #[serde(default = "half")]
    pub treat_prob: f64,
    /// Everyone follows the control-group visit scheme.
    #[serde(default)]
    pub homogenized: bool,
    #[serde(default = "week")]
    pub r_floor: f64,
}

fn half() -> f64 {
    0.5
}

fn week() -> f64 {
    WEEK_YEARS
}

fn study1_re() -> RandomEffectSpec {
    RandomEffectSpec::independent(&["b0", "b1", "u0", "u1"], &[1.6, 1.2, 0.06, 0.05])
        .with_corr(0, 1, -0.5)
        .with_corr(0, 2, -0.7)
        .with_corr(1, 3, -0.7)
}

impl ClinicScenario {
    pub fn study1() -> Self {
        Self {
            beta0: 7.0,
            beta1: -0.10,
            beta2: 0.0,
            beta3: 0.0,
            alpha0: 1.0,
            alpha1: (2.0 / 52.0 - 1.0) / 15.0,
            alpha2: 0.0,
            re_spec: study1_re(),
            residual: ResidualSpec::exponential(1.5, 0.05, 0.0, 0.5, 0.4),
            weibull_shape: 10.0,
            tau: 2.0,
            decay_rate: None,
            treat_prob: 0.5,
            homogenized: false,
            r_floor: WEEK_YEARS,
        }
    }

    pub fn study2() -> Self {
        Self {
            beta2: -1.0,
            alpha2: -46.0 / 52.0,
            residual: ResidualSpec::iid(1.5, 0.05, 0.0),
            ..Self::study1()
        }
    }

    pub fn study3() -> Self {
        Self {
            beta0: 7.0,
            beta1: -5.0,
            beta3: 2.0,
            alpha1: (2.0 / 52.0 - 1.0) / 12.0,
            re_spec: RandomEffectSpec::independent(&["b0", "u0"], &[1.0, 0.06]).with_corr(0, 1, -0.7),
            residual: ResidualSpec::iid(1.2, 0.05, 0.0),
            decay_rate: Some(4.0),
            ..Self::study1()
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    /// Correlation between the outcome and interval random slopes.
    pub fn with_slope_corr(mut self, rho: f64) -> Result<Self> {
        let (Some(i), Some(j)) = (self.re_spec.index_of("b1"), self.re_spec.index_of("u1")) else {
            return invalid("scenario has no random slopes");
        };
        self.re_spec = self.re_spec.with_corr(i, j, rho);
        Ok(self)
    }

    /// Divides every random-effect variance by `divisor`.
    pub fn with_re_divisor(mut self, divisor: f64) -> Self {
        self.re_spec = self.re_spec.scaled(1.0 / divisor.sqrt());
        self
    }

    pub fn homogenized(mut self) -> Self {
        self.homogenized = true;
        self
    }

    pub fn with_decay(mut self, rate: f64) -> Self {
        self.decay_rate = Some(rate);
        self
    }

    fn has_slopes(&self) -> bool {
        self.re_spec.dim() == 4
    }

    pub fn validate(&self, study: Study) -> Result<()> {
        if !(self.weibull_shape > 0.0) {
            return invalid("weibull_shape must be positive");
        }
        if !(self.tau > 0.0) || !(self.r_floor > 0.0) {
            return invalid("tau and r_floor must be positive");
        }
        match self.re_spec.dim() {
            2 | 4 => {}
            q => return Err(Error::Dimension(format!("expected 2 or 4 random effects, got {q}"))),
        }
        if study == Study::Study3 && !self.decay_rate.is_some_and(|k| k > 0.0) {
            return invalid("study 3 needs a positive decay rate");
        }
        if !(self.residual.sigma_eps >= 0.0 && self.residual.sigma_zeta >= 0.0) {
            return invalid("residual standard deviations must be non-negative");
        }
        if self.residual.corr_family == CorrFamily::Exponential
            && (!(self.residual.range_d > 0.0) || !(0.0..=1.0).contains(&self.residual.nugget_c0))
        {
            return invalid("exponential residuals need d > 0 and c0 in [0, 1]");
        }
        Ok(())
    }

    fn y_mean(&self, study: Study, t: f64, treat: f64) -> f64 {
        match study {
            Study::Study3 => {
                let w = (-self.decay_rate.unwrap_or(0.0) * t).exp();
                (self.beta0 + self.beta1 * t) * w + self.beta3 * (1.0 - w)
            }
            _ => self.beta0 + self.beta1 * t + self.beta2 * treat,
        }
    }

    fn simulate(&self, study: Study, n: usize, seed: u64) -> Result<LongitudinalDataset> {
        self.validate(study)?;
        let chol = self.re_spec.corr_cholesky()?;
        let slopes = self.has_slopes();
        let res = &self.residual;
        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            let id = i as u64 + 1;
            let mut rng = subject_rng(seed, id);
            let mut subj = empty_subject(id);
            let treat = if study == Study::Study2 {
                let x = (rng.random::<f64>() < self.treat_prob) as u8 as f64;
                subj.baseline.insert("treat".into(), x);
                x
            } else {
                0.0
            };
            let b = draw_effects(&self.re_spec.sds, &chol, &mut rng);
            let (b0, b1, u0, u1) = if slopes { (b[0], b[1], b[2], b[3]) } else { (b[0], 0.0, b[1], 0.0) };
            let mut eps = ResidualProcess::new(res.corr_family, res.range_d, res.nugget_c0);
            let (mut ys, mut rs, mut ss, mut ts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut t = 0.0;
            loop {
                let e = res.sigma_eps * eps.next(t, &mut rng);
                let y = self.y_mean(study, t, treat) + b0 + b1 * t + e;
                let zeta = res.sigma_zeta * normal(&mut rng);
                let r = if treat == 1.0 && !self.homogenized {
                    self.alpha0 + self.alpha2 + zeta
                } else {
                    self.alpha0 + self.alpha1 * y + u0 + u1 * t + zeta
                };
                let r = r.max(self.r_floor);
                let s = adherence_draw(r, self.weibull_shape, &mut rng)?;
                ts.push(t);
                ys.push(y);
                rs.push(r);
                ss.push(s);
                t += s;
                if t > self.tau {
                    break;
                }
            }
            subj.visit_times = ts;
            subj.y = ys;
            subj.r = Some(rs);
            subj.u_sum = Some(t);
            subj.s = Some(ss);
            subjects.push(subj);
        }
        Ok(LongitudinalDataset::new(subjects, self.tau, TimeUnit::Years))
    }
}

/// Unit-variance residual process with correlation `(1 - c0)·exp(-h/d)`
/// between distinct times, drawn one visit at a time.
///
/// The exponential part is an Ornstein-Uhlenbeck process, which is Markov, so
/// the Gaussian conditional given all past values only involves the last one.
struct ResidualProcess {
    family: CorrFamily,
    d: f64,
    c0: f64,
    last: Option<(f64, f64)>,
}

impl ResidualProcess {
    fn new(family: CorrFamily, d: f64, c0: f64) -> Self {
        Self { family, d, c0, last: None }
    }

    fn next<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> f64 {
        match self.family {
            CorrFamily::Iid => normal(rng),
            CorrFamily::Exponential => {
                let z = normal(rng);
                let s = match self.last {
                    None => z,
                    Some((t_prev, s_prev)) => {
                        let rho = (-(t - t_prev).abs() / self.d).exp();
                        rho * s_prev + (1.0 - rho * rho).max(0.0).sqrt() * z
                    }
                };
                self.last = Some((t, s));
                (1.0 - self.c0).sqrt() * s + self.c0.sqrt() * normal(rng)
            }
        }
    }
}

/// Draws `(Y, R)` from the separable bivariate mixed model itself; visits are
/// scheduled from `R` through Weibull adherence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModelScenario {
    pub y_fixed: Vec<Term>,
    pub r_fixed: Vec<Term>,
    pub y_random: Vec<Term>,
    pub r_random: Vec<Term>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Stacked `(b, u)`.
    pub re_spec: RandomEffectSpec,
    pub residual: ResidualSpec,
    pub weibull_shape: f64,
    pub tau: f64,
    #[serde(default = "week")]
    pub r_floor: f64,
}

impl JointModelScenario {
    /// Linear-time joint model with parameters near the reduced form of the
    /// first clinic study.
    pub fn linear_time() -> Self {
        let lin = vec![Term::Intercept, Term::Time];
        Self {
            y_fixed: lin.clone(),
            r_fixed: lin.clone(),
            y_random: lin.clone(),
            r_random: lin,
            beta: vec![7.0, -0.1],
            alpha: vec![0.55, 0.0064],
            re_spec: study1_re(),
            residual: ResidualSpec::exponential(1.5, 0.1, -0.5, 0.5, 0.4),
            weibull_shape: 10.0,
            tau: 2.0,
            r_floor: WEEK_YEARS,
        }
    }

    /// No linkage between the processes, weak clustering and frequent visits.
    pub fn decoupled() -> Self {
        Self {
            y_random: vec![Term::Intercept],
            r_random: vec![Term::Intercept],
            beta: vec![7.0, -0.1],
            alpha: vec![0.2, 0.0],
            re_spec: RandomEffectSpec::independent(&["b0", "u0"], &[0.3, 0.02]),
            residual: ResidualSpec::iid(1.5, 0.03, 0.0),
            ..Self::linear_time()
        }
    }

    pub fn spec(&self) -> JointSpec {
        JointSpec::new(self.y_fixed.clone(), self.r_fixed.clone(), self.y_random.clone(), self.r_random.clone())
            .with_residual(self.residual.corr_family)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y_fixed.len() != self.beta.len() || self.r_fixed.len() != self.alpha.len() {
            return Err(Error::Dimension("fixed effects do not match their terms".into()));
        }
        if self.re_spec.dim() != self.y_random.len() + self.r_random.len() {
            return Err(Error::Dimension("random-effect spec does not match the random terms".into()));
        }
        self.residual.validate()?;
        if !(self.weibull_shape > 0.0) || !(self.tau > 0.0) || !(self.r_floor > 0.0) {
            return invalid("weibull_shape, tau and r_floor must be positive");
        }
        Ok(())
    }

    fn simulate(&self, n: usize, seed: u64) -> Result<LongitudinalDataset> {
        self.validate()?;
        let chol = self.re_spec.corr_cholesky()?;
        let lam = crate::linalg::cholesky_lower(&self.residual.lambda())?;
        let qy = self.y_random.len();
        let res = &self.residual;
        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            let id = i as u64 + 1;
            let mut rng = subject_rng(seed, id);
            let mut subj = empty_subject(id);
            let b = draw_effects(&self.re_spec.sds, &chol, &mut rng);
            let mut p1 = ResidualProcess::new(res.corr_family, res.range_d, res.nugget_c0);
            let mut p2 = ResidualProcess::new(res.corr_family, res.range_d, res.nugget_c0);
            let (mut ys, mut rs, mut ss, mut ts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut t = 0.0;
            loop {
                let v1 = p1.next(t, &mut rng);
                let v2 = p2.next(t, &mut rng);
                let e = lam[(0, 0)] * v1;
                let z = lam[(1, 0)] * v1 + lam[(1, 1)] * v2;
                let mut y = e;
                for (term, c) in self.y_fixed.iter().zip(&self.beta) {
                    y += c * term.eval(t, &subj)?;
                }
                for (k, term) in self.y_random.iter().enumerate() {
                    y += b[k] * term.eval(t, &subj)?;
                }
                let mut r = z;
                for (term, c) in self.r_fixed.iter().zip(&self.alpha) {
                    r += c * term.eval(t, &subj)?;
                }
                for (k, term) in self.r_random.iter().enumerate() {
                    r += b[qy + k] * term.eval(t, &subj)?;
                }
                let r = r.max(self.r_floor);
                let s = adherence_draw(r, self.weibull_shape, &mut rng)?;
                ts.push(t);
                ys.push(y);
                rs.push(r);
                ss.push(s);
                t += s;
                if t > self.tau {
                    break;
                }
            }
            subj.visit_times = ts;
            subj.y = ys;
            subj.r = Some(rs);
            subj.s = Some(ss);
            subj.u_sum = Some(t);
            subjects.push(subj);
        }
        Ok(LongitudinalDataset::new(subjects, self.tau, TimeUnit::Years))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    InterceptOnly,
    BinaryBaseline,
    RandomSlope,
    UnconnectedCovariate,
    Study1,
    Study2,
    Study3,
    JointModel,
}

/// A complete data-generating mechanism, tagged by `study` in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum StudyScenario {
    InterceptOnly(MemoryScenario),
    BinaryBaseline(MemoryScenario),
    RandomSlope(MemoryScenario),
    UnconnectedCovariate(MemoryScenario),
    Study1(ClinicScenario),
    Study2(ClinicScenario),
    Study3(ClinicScenario),
    JointModel(JointModelScenario),
}

/// The quantity a replication study tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimand {
    /// Coefficient name in the fitted models.
    pub name: String,
    pub truth: f64,
}

impl StudyScenario {
    pub fn study1() -> Self {
        StudyScenario::Study1(ClinicScenario::study1())
    }

    pub fn study2() -> Self {
        StudyScenario::Study2(ClinicScenario::study2())
    }

    pub fn study3() -> Self {
        StudyScenario::Study3(ClinicScenario::study3())
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "intercept_only" => StudyScenario::InterceptOnly(MemoryScenario::intercept_only()),
            "binary_baseline" => StudyScenario::BinaryBaseline(MemoryScenario::binary_baseline(100.0 / 3.0)),
            "random_slope" => StudyScenario::RandomSlope(MemoryScenario::random_slope()),
            "unconnected_covariate" => StudyScenario::UnconnectedCovariate(MemoryScenario::unconnected_covariate()),
            "study1" => Self::study1(),
            "study2" => Self::study2(),
            "study3" => Self::study3(),
            "joint_model" => StudyScenario::JointModel(JointModelScenario::linear_time()),
            "decoupled" => StudyScenario::JointModel(JointModelScenario::decoupled()),
            other => return Err(Error::Config(format!("unknown scenario preset '{other}'"))),
        })
    }

    pub fn study(&self) -> Study {
        match self {
            StudyScenario::InterceptOnly(_) => Study::InterceptOnly,
            StudyScenario::BinaryBaseline(_) => Study::BinaryBaseline,
            StudyScenario::RandomSlope(_) => Study::RandomSlope,
            StudyScenario::UnconnectedCovariate(_) => Study::UnconnectedCovariate,
            StudyScenario::Study1(_) => Study::Study1,
            StudyScenario::Study2(_) => Study::Study2,
            StudyScenario::Study3(_) => Study::Study3,
            StudyScenario::JointModel(_) => Study::JointModel,
        }
    }

    pub fn tau(&self) -> f64 {
        match self {
            StudyScenario::InterceptOnly(m)
            | StudyScenario::BinaryBaseline(m)
            | StudyScenario::RandomSlope(m)
            | StudyScenario::UnconnectedCovariate(m) => m.intervals.tau,
            StudyScenario::Study1(c) | StudyScenario::Study2(c) | StudyScenario::Study3(c) => c.tau,
            StudyScenario::JointModel(j) => j.tau,
        }
    }

    pub fn clinic_mut(&mut self) -> Option<&mut ClinicScenario> {
        match self {
            StudyScenario::Study1(c) | StudyScenario::Study2(c) | StudyScenario::Study3(c) => Some(c),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StudyScenario::InterceptOnly(m)
            | StudyScenario::BinaryBaseline(m)
            | StudyScenario::RandomSlope(m)
            | StudyScenario::UnconnectedCovariate(m) => m.validate(),
            StudyScenario::Study1(c) | StudyScenario::Study2(c) | StudyScenario::Study3(c) => c.validate(self.study()),
            StudyScenario::JointModel(j) => j.validate(),
        }
    }

    /// The outcome model a univariate analysis would fit.
    pub fn univariate_spec(&self) -> LmmSpec {
        match self {
            StudyScenario::InterceptOnly(m)
            | StudyScenario::BinaryBaseline(m)
            | StudyScenario::RandomSlope(m)
            | StudyScenario::UnconnectedCovariate(m) => LmmSpec::new(m.y_fixed.clone(), m.y_random.clone()),
            StudyScenario::JointModel(j) => j.spec().y_spec(),
            _ => self.joint_spec().expect("clinic scenarios have a joint spec").y_spec(),
        }
    }

    /// The reduced-form joint model for scenarios that record `R`.
    pub fn joint_spec(&self) -> Option<JointSpec> {
        let lin = || vec![Term::Intercept, Term::Time];
        match self {
            StudyScenario::Study1(c) => {
                let rand = if c.has_slopes() { lin() } else { vec![Term::Intercept] };
                Some(JointSpec::new(lin(), lin(), rand.clone(), rand).with_residual(c.residual.corr_family))
            }
            StudyScenario::Study2(c) => {
                let treat = Term::covariate("treat");
                let tt = Term::CovariateTime { name: "treat".into() };
                let rand = if c.has_slopes() { lin() } else { vec![Term::Intercept] };
                Some(
                    JointSpec::new(
                        vec![Term::Intercept, Term::Time, treat.clone()],
                        vec![Term::Intercept, Term::Time, treat, tt],
                        rand.clone(),
                        rand,
                    )
                    .with_residual(c.residual.corr_family),
                )
            }
            StudyScenario::Study3(c) => {
                let k = c.decay_rate.unwrap_or(4.0);
                let basis = vec![
                    Term::ExpDecay { rate: k },
                    Term::TimeExpDecay { rate: k },
                    Term::OneMinusExpDecay { rate: k },
                ];
                Some(
                    JointSpec::new(basis.clone(), basis, vec![Term::Intercept], vec![Term::Intercept])
                        .with_residual(c.residual.corr_family),
                )
            }
            StudyScenario::JointModel(j) => Some(j.spec()),
            _ => None,
        }
    }

    /// Default estimand: the time slope, or the treatment effect in study 2.
    pub fn estimand(&self) -> Estimand {
        match self {
            StudyScenario::InterceptOnly(m) => Estimand { name: Term::Intercept.to_string(), truth: m.beta[0] },
            StudyScenario::BinaryBaseline(m) => Estimand { name: "x".into(), truth: m.beta[1] },
            StudyScenario::RandomSlope(m) => Estimand { name: Term::Time.to_string(), truth: m.beta[1] },
            StudyScenario::UnconnectedCovariate(m) => Estimand { name: "x1".into(), truth: m.beta[1] },
            StudyScenario::Study1(c) => Estimand { name: Term::Time.to_string(), truth: c.beta1 },
            StudyScenario::Study2(c) => Estimand { name: "treat".into(), truth: c.beta2 },
            StudyScenario::Study3(c) => Estimand {
                name: Term::TimeExpDecay { rate: c.decay_rate.unwrap_or(4.0) }.to_string(),
                truth: c.beta1,
            },
            StudyScenario::JointModel(j) => Estimand { name: j.y_fixed[1.min(j.y_fixed.len() - 1)].to_string(), truth: j.beta[1.min(j.beta.len() - 1)] },
        }
    }
}

/// Simulates `n_subjects` subjects; warnings (e.g. a binding interval floor)
/// are logged and returned.
pub fn simulate_study_with_warnings(
    scenario: &StudyScenario,
    n_subjects: usize,
    seed: u64,
) -> Result<(LongitudinalDataset, Vec<String>)> {
    match scenario {
        StudyScenario::InterceptOnly(m)
        | StudyScenario::BinaryBaseline(m)
        | StudyScenario::RandomSlope(m)
        | StudyScenario::UnconnectedCovariate(m) => m.simulate(n_subjects, seed),
        StudyScenario::Study1(c) | StudyScenario::Study2(c) | StudyScenario::Study3(c) => {
            Ok((c.simulate(scenario.study(), n_subjects, seed)?, Vec::new()))
        }
        StudyScenario::JointModel(j) => Ok((j.simulate(n_subjects, seed)?, Vec::new())),
    }
}

pub fn simulate_study(scenario: &StudyScenario, n_subjects: usize, seed: u64) -> Result<LongitudinalDataset> {
    simulate_study_with_warnings(scenario, n_subjects, seed).map(|(ds, _)| ds)
}
