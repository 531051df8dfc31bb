//! Market models, option contracts and their parametrizations.
//!
//! Two models are supported: Black–Scholes (parameters σ, q, r, priced on
//! the asset grid S) and Heston (parameters ξ, ρ, γ, κ, r, priced on the
//! variance × log-price grid (v, x)). Both enter the solvers only through
//! a small affine parameter map [`affine_theta`] multiplying fixed
//! parameter-independent operator components.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    BlackScholes,
    Heston,
}

impl ModelKind {
    pub fn parameter_dim(self) -> usize {
        match self {
            ModelKind::BlackScholes => 3,
            ModelKind::Heston => 5,
        }
    }

    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::BlackScholes => &["sigma", "q", "r"],
            ModelKind::Heston => &["xi", "rho", "gamma", "kappa", "r"],
        }
    }

    /// Number of parameter-independent operator components.
    pub fn n_affine_terms(self) -> usize {
        match self {
            ModelKind::BlackScholes => 3,
            ModelKind::Heston => 6,
        }
    }
}

/// A concrete parameter point μ for one of the models.
///
/// Black–Scholes: μ = (σ, q, r) — volatility, dividend rate, interest rate.
/// Heston: μ = (ξ, ρ, γ, κ, r) — vol-of-vol, correlation, long-run
/// variance, mean-reversion speed, interest rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(kind: ModelKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != kind.parameter_dim() {
            return Err(Error::Config(format!(
                "{:?} expects {} parameters, got {}",
                kind,
                kind.parameter_dim(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite parameter value {v}")));
        }
        Ok(ModelParams { kind, values })
    }

    pub fn rate(&self) -> f64 {
        match self.kind {
            ModelKind::BlackScholes => self.values[2],
            ModelKind::Heston => self.values[4],
        }
    }

    /// Heston Feller condition ξ² < 2κγ. Violations are allowed (the
    /// discretization does not require the condition) but worth a warning.
    pub fn feller_ok(&self) -> bool {
        match self.kind {
            ModelKind::BlackScholes => true,
            ModelKind::Heston => {
                let (xi, gamma, kappa) = (self.values[0], self.values[2], self.values[3]);
                xi * xi < 2.0 * kappa * gamma
            }
        }
    }
}

/// Affine coefficient functions θ_q(μ) such that the parametrized bilinear
/// form decomposes as a(·,·;μ) = Σ_q θ_q(μ) a_q(·,·).
///
/// Black–Scholes: θ = (σ², r−q, r).
/// Heston: θ = (1, ξ², ρξ, κ, κγ, r).
pub fn affine_theta(params: &ModelParams) -> Vec<f64> {
    match params.kind {
        ModelKind::BlackScholes => {
            let (sigma, q, r) = (params.values[0], params.values[1], params.values[2]);
            vec![sigma * sigma, r - q, r]
        }
        ModelKind::Heston => {
            let (xi, rho, gamma, kappa, r) = (
                params.values[0],
                params.values[1],
                params.values[2],
                params.values[3],
                params.values[4],
            );
            vec![1.0, xi * xi, rho * xi, kappa, kappa * gamma, r]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionType {
    EuropeanCall,
    AmericanPut,
}

/// Option contract: type, strike and maturity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSpec {
    pub option: OptionType,
    pub strike: f64,
    pub maturity: f64,
}

impl OptionSpec {
    pub fn new(option: OptionType, strike: f64, maturity: f64) -> Result<Self> {
        if !(strike > 0.0) || !(maturity > 0.0) {
            return Err(Error::Config(format!(
                "strike and maturity must be positive, got K={strike}, T={maturity}"
            )));
        }
        Ok(OptionSpec { option, strike, maturity })
    }

    /// The European call is combined with Heston only; American puts are
    /// supported under both models.
    pub fn validate_for(&self, kind: ModelKind) -> Result<()> {
        if self.option == OptionType::EuropeanCall && kind == ModelKind::BlackScholes {
            return Err(Error::Config(
                "European call is only supported under the Heston model".into(),
            ));
        }
        Ok(())
    }

    /// Payoff in the pricing coordinate of the model: Black–Scholes uses the
    /// asset price S directly, Heston uses the log-price x (so the asset
    /// price is K·eˣ).
    pub fn payoff(&self, kind: ModelKind, coord: f64) -> f64 {
        let k = self.strike;
        match (self.option, kind) {
            (OptionType::AmericanPut, ModelKind::BlackScholes) => (k - coord).max(0.0),
            (OptionType::AmericanPut, ModelKind::Heston) => (k - k * coord.exp()).max(0.0),
            (OptionType::EuropeanCall, ModelKind::Heston) => (k * coord.exp() - k).max(0.0),
            (OptionType::EuropeanCall, ModelKind::BlackScholes) => {
                unreachable!("rejected by OptionSpec::validate_for")
            }
        }
    }
}

/// Hyper-rectangular parameter domain with a subset of active coordinates;
/// inactive coordinates are pinned to the default point μ*.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub active: Vec<bool>,
    pub mu_star: Vec<f64>,
}

impl ParameterBox {
    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if self.upper.len() != d || self.active.len() != d || self.mu_star.len() != d {
            return Err(Error::Config("parameter box component lengths differ".into()));
        }
        for i in 0..d {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(Error::Config(format!(
                    "box coordinate {i}: lower {} > upper {}",
                    self.lower[i], self.upper[i]
                )));
            }
            if self.mu_star[i] < self.lower[i] || self.mu_star[i] > self.upper[i] {
                return Err(Error::Config(format!(
                    "default point coordinate {i} = {} outside [{}, {}]",
                    self.mu_star[i], self.lower[i], self.upper[i]
                )));
            }
        }
        if !self.active.iter().any(|&a| a) {
            return Err(Error::Config("parameter box has no active coordinates".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.active[i]).collect()
    }

    /// Training box for the Black–Scholes American put: (σ, q, r).
    pub fn bs_american_baseline() -> Self {
        ParameterBox {
            lower: vec![0.0475, 0.0014, 0.4750],
            upper: vec![0.0525, 0.0016, 0.5250],
            active: vec![true, true, true],
            mu_star: vec![0.05, 0.0015, 0.5],
        }
    }

    /// Training box for the Heston European call: (ξ, ρ, γ, κ, r).
    pub fn heston_european_baseline() -> Self {
        ParameterBox {
            lower: vec![0.1, 0.21, 0.08, 1.2, 0.01],
            upper: vec![0.4, 0.9, 0.15, 3.0, 0.2],
            active: vec![true, true, true, true, true],
            mu_star: vec![0.3, 0.21, 0.095, 2.0, 0.0198],
        }
    }

    /// Training box for the Heston American put: (ξ, ρ, γ, κ, r).
    pub fn heston_american_baseline() -> Self {
        ParameterBox {
            lower: vec![0.6, 0.21, 0.16, 3.0, 0.01],
            upper: vec![0.9, 0.9, 0.25, 5.0, 0.2],
            active: vec![true, true, true, true, true],
            mu_star: vec![0.9, 0.21, 0.16, 3.0, 0.0198],
        }
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// Uniform sample on the active coordinates, μ* on the pinned ones.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        use rand::RngExt as _;
        let mut mu = self.mu_star.clone();
        for i in 0..self.dim() {
            if self.active[i] {
                mu[i] = if self.lower[i] == self.upper[i] {
                    self.lower[i]
                } else {
                    rng.random_range(self.lower[i]..self.upper[i])
                };
            }
        }
        mu
    }

    /// Equidistant tensor grid over the active coordinates (endpoints
    /// included; a count of 1 yields the midpoint), pinned coordinates at
    /// μ*. Enumeration is lexicographic with the last active coordinate
    /// varying fastest, so the first element is the all-lower corner.
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<Vec<f64>>> {
        let act = self.active_indices();
        if counts.len() != act.len() {
            return Err(Error::Config(format!(
                "grid counts ({}) must match active coordinates ({})",
                counts.len(),
                act.len()
            )));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("grid counts must be positive".into()));
        }
        let axes: Vec<Vec<f64>> = act
            .iter()
            .zip(counts)
            .map(|(&i, &c)| {
                if c == 1 {
                    vec![0.5 * (self.lower[i] + self.upper[i])]
                } else {
                    (0..c)
                        .map(|k| {
                            self.lower[i]
                                + (self.upper[i] - self.lower[i]) * k as f64 / (c - 1) as f64
                        })
                        .collect()
                }
            })
            .collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; act.len()];
        for _ in 0..total {
            let mut mu = self.mu_star.clone();
            for (k, &i) in act.iter().enumerate() {
                mu[i] = axes[k][idx[k]];
            }
            out.push(mu);
            // Odometer increment, last coordinate fastest.
            for k in (0..act.len()).rev() {
                idx[k] += 1;
                if idx[k] < counts[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(out)
    }
}

/// Computational domain for the Black–Scholes asset grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsDomain {
    pub s_min: f64,
    pub s_max: f64,
}

impl BsDomain {
    /// Baseline domain used throughout the validation studies.
    pub fn baseline() -> Self {
        BsDomain { s_min: 0.0, s_max: 300.0 }
    }
}

/// Computational domain for the Heston (variance, log-price) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonDomain {
    pub v_min: f64,
    pub v_max: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl HestonDomain {
    /// Baseline domain used throughout the validation studies.
    pub fn baseline() -> Self {
        HestonDomain { v_min: 0.0025, v_max: 0.5, x_min: -5.0, x_max: 5.0 }
    }
}

/// Boundary segments of the Heston rectangle.
/// Γ1: v = v_min, Γ2: v = v_max, Γ3: x = x_min, Γ4: x = x_max.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HestonSegment {
    Gamma1,
    Gamma2,
    Gamma3,
    Gamma4,
}

/// Dirichlet data for the European call on the Heston rectangle at backward
/// time t (time since issue of the initial data).
///
/// * Γ1 (v = v_min): the one-dimensional lognormal price
///   K·eˣ·Φ(d₊) − K·e^{−rt}·Φ(d₋) with σ = √v_min and
///   d± = (x + (r ± σ²/2)t)/(σ√t).
/// * Γ2 (v = v_max): K·eˣ.
/// * Γ3 (x = x_min): the convex blend between the Γ1 and Γ2 values at
///   x_min with weight λ = (v − v_min)/(v_max − v_min).
///
/// At t = 0 the data is the payoff trace on every segment.
pub fn heston_dirichlet_data(
    spec: &OptionSpec,
    params: &ModelParams,
    domain: &HestonDomain,
    t: f64,
    segment: HestonSegment,
    v: f64,
    x: f64,
) -> f64 {
    debug_assert_eq!(params.kind, ModelKind::Heston);
    debug_assert_eq!(spec.option, OptionType::EuropeanCall);
    if t == 0.0 {
        return spec.payoff(ModelKind::Heston, x);
    }
    let k = spec.strike;
    let r = params.rate();
    match segment {
        HestonSegment::Gamma1 => {
            let sigma2 = domain.v_min;
            let sigma = sigma2.sqrt();
            let st = sigma * t.sqrt();
            let d_plus = (x + (r + 0.5 * sigma2) * t) / st;
            let d_minus = (x + (r - 0.5 * sigma2) * t) / st;
            k * x.exp() * normal_cdf(d_plus) - k * (-r * t).exp() * normal_cdf(d_minus)
        }
        HestonSegment::Gamma2 => k * x.exp(),
        HestonSegment::Gamma3 => {
            let lambda = (v - domain.v_min) / (domain.v_max - domain.v_min);
            let top = heston_dirichlet_data(
                spec,
                params,
                domain,
                t,
                HestonSegment::Gamma2,
                domain.v_max,
                domain.x_min,
            );
            let bottom = heston_dirichlet_data(
                spec,
                params,
                domain,
                t,
                HestonSegment::Gamma1,
                domain.v_min,
                domain.x_min,
            );
            lambda * top + (1.0 - lambda) * bottom
        }
        HestonSegment::Gamma4 => {
            unreachable!("Γ4 carries a flux condition, not Dirichlet data")
        }
    }
}

/// Conormal flux datum on Γ4 (x = x_max) for the European call: ½·v·K·eˣ.
pub fn heston_gamma4_flux(spec: &OptionSpec, v: f64, x_max: f64) -> f64 {
    0.5 * v * spec.strike * x_max.exp()
}

/// Standard normal cumulative distribution function.
///
/// Uses the complementary error function with the rational minimax
/// approximations of W. J. Cody; absolute error stays far below 1e-12 over
/// the whole real line.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function (Cody's rational approximations).
fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let val = if ax <= 4.0 { erfc_mid(ax) } else { erfc_large(ax) };
    if x < 0.0 {
        2.0 - val
    } else {
        val
    }
}

// erf on |x| ≤ 0.46875
fn erf_small(x: f64) -> f64 {
    const P: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const Q: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let z = x * x;
    let mut num = P[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + P[i]) * z;
        den = (den + Q[i]) * z;
    }
    x * (num + P[3]) / (den + Q[3])
}

// erfc on 0.46875 < x ≤ 4
fn erfc_mid(x: f64) -> f64 {
    const P: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const Q: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    let mut num = P[8] * x;
    let mut den = x;
    for i in 0..7 {
        num = (num + P[i]) * x;
        den = (den + Q[i]) * x;
    }
    let frac = (num + P[7]) / (den + Q[7]);
    exp_mx2(x) * frac
}

// erfc on x > 4
fn erfc_large(x: f64) -> f64 {
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    if x >= 26.6 {
        return 0.0; // underflows double precision
    }
    let z = 1.0 / (x * x);
    let mut num = P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + P[i]) * z;
        den = (den + Q[i]) * z;
    }
    let frac = z * (num + P[4]) / (den + Q[4]);
    let sqrt_pi_inv = 5.64189583547756287e-1; // 1/√π
    exp_mx2(x) * (sqrt_pi_inv - frac) / x
}

// exp(-x²) split to preserve accuracy for large x (Cody's trick).
fn exp_mx2(x: f64) -> f64 {
    let xh = (x * 16.0).trunc() / 16.0;
    let d = (x - xh) * (x + xh);
    (-xh * xh).exp() * (-d).exp()
}
