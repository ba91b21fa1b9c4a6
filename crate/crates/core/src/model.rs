//! Model ingredients: loading from configuration text, sign validation by
//! sampling, and sampling onto a grid.

use thiserror::Error;

use crate::expr::{self, EvalError, Expr, ParseError, Var};
use crate::grid::Grid;

pub const INGREDIENT_KEYS: [&str; 8] = ["beta0", "beta1", "beta2", "b0", "b2", "mu", "gamma", "d"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("duplicate key: {0}")]
    DuplicateKey(String),
    #[error("missing key {0}")]
    MissingKey(&'static str),
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("key {key}: expected {expected}")]
    WrongType { key: String, expected: &'static str },
    #[error("key {key}: {source}")]
    Parse {
        key: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("key {key}: variable `y` is only allowed in beta1")]
    UnexpectedVariable { key: &'static str },
    #[error("m must be a positive finite number (got {0})")]
    InvalidDomain(f64),
    #[error("at least 2 validation samples are required (got {0})")]
    TooFewSamples(usize),
    #[error("{name} not positive at {at}")]
    NotPositive { name: &'static str, at: String },
    #[error("{name} negative at {at} (value {value})")]
    Negative {
        name: &'static str,
        at: String,
        value: f64,
    },
    #[error("{name} is not finite at {at}")]
    NonFinite { name: &'static str, at: String },
    #[error("{name} at {at}: {source}")]
    Eval {
        name: &'static str,
        at: String,
        #[source]
        source: EvalError,
    },
    #[error("grid domain m = {grid} does not match model domain m = {model}")]
    GridMismatch { grid: f64, model: f64 },
}

/// The parsed model: domain length and the eight ingredient functions.
///
/// `beta0`, `b0` take the total population size; `beta2`, `b2` a proportion
/// in `[-1, 1]`; `mu`, `gamma`, `d` the load `x ∈ [0, m]`; `beta1` the pair
/// `(x, y)` of offspring and mother loads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDefinition {
    pub m: f64,
    pub beta0: Expr,
    pub beta1: Expr,
    pub beta2: Expr,
    pub b0: Expr,
    pub b2: Expr,
    pub mu: Expr,
    pub gamma: Expr,
    pub d: Expr,
}

impl ModelDefinition {
    /// Build from expression strings keyed like the config file.
    pub fn from_strs(m: f64, ingredients: &[(&str, &str)]) -> Result<Self, ModelError> {
        let mut text = format!("m = {m:?}\n");
        for (k, v) in ingredients {
            text.push_str(&format!("{k} = \"{v}\"\n"));
        }
        load_config(&text)
    }

    fn get(&self, key: &str) -> &Expr {
        match key {
            "beta0" => &self.beta0,
            "beta1" => &self.beta1,
            "beta2" => &self.beta2,
            "b0" => &self.b0,
            "b2" => &self.b2,
            "mu" => &self.mu,
            "gamma" => &self.gamma,
            "d" => &self.d,
            _ => unreachable!("not an ingredient key: {key}"),
        }
    }

    /// Config text that [`load_config`] reads back to an equal definition.
    pub fn to_config(&self) -> String {
        let mut s = format!("m = {:?}\n", self.m);
        for k in INGREDIENT_KEYS {
            s.push_str(&format!("{k} = \"{}\"\n", self.get(k)));
        }
        s
    }
}

/// Parse `key = value` configuration text (`#` comments, quoted expressions).
pub fn load_config(text: &str) -> Result<ModelDefinition, ModelError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        if msg.contains("duplicate key") {
            ModelError::DuplicateKey(msg)
        } else {
            ModelError::Syntax(e.to_string())
        }
    })?;
    for key in table.keys() {
        if key != "m" && !INGREDIENT_KEYS.contains(&key.as_str()) {
            return Err(ModelError::UnknownKey(key.clone()));
        }
    }
    let m = match table.get("m") {
        None => return Err(ModelError::MissingKey("m")),
        Some(toml::Value::Float(v)) => *v,
        Some(toml::Value::Integer(v)) => *v as f64,
        Some(_) => {
            return Err(ModelError::WrongType {
                key: "m".into(),
                expected: "a number",
            })
        }
    };
    if !(m > 0.0 && m.is_finite()) {
        return Err(ModelError::InvalidDomain(m));
    }
    let ingredient = |key: &'static str| -> Result<Expr, ModelError> {
        let text = match table.get(key) {
            None => return Err(ModelError::MissingKey(key)),
            Some(toml::Value::String(s)) => s,
            Some(_) => {
                return Err(ModelError::WrongType {
                    key: key.into(),
                    expected: "a quoted expression string",
                })
            }
        };
        let e = expr::parse(text).map_err(|source| ModelError::Parse { key, source })?;
        if key != "beta1" && e.uses(Var::Y) {
            return Err(ModelError::UnexpectedVariable { key });
        }
        Ok(e)
    };
    Ok(ModelDefinition {
        m,
        beta0: ingredient("beta0")?,
        beta1: ingredient("beta1")?,
        beta2: ingredient("beta2")?,
        b0: ingredient("b0")?,
        b2: ingredient("b2")?,
        mu: ingredient("mu")?,
        gamma: ingredient("gamma")?,
        d: ingredient("d")?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub samples: usize,
    /// Right end of the sampled window for `beta0`, `b0` (population sizes).
    pub population_window: f64,
    /// Argument at which `beta0`, `b0` are checked for vanishing.
    pub far_argument: f64,
    pub vanish_threshold: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            samples: 201,
            population_window: 100.0,
            far_argument: 1e6,
            vanish_threshold: 1e-6,
        }
    }
}

/// Sample-based certificates recorded by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Certificates {
    /// Number of equispaced points per ingredient domain (per axis for `beta1`).
    pub samples: usize,
    /// Minimum sampled mortality.
    pub mu_lower_bound: f64,
    pub beta0_decreasing: bool,
    pub b0_decreasing: bool,
    pub beta0_vanishing: bool,
    pub b0_vanishing: bool,
}

impl Certificates {
    /// Strict decrease of both `beta0` and `b0` on the sampled window.
    pub fn monotone_beta0_b0(&self) -> bool {
        self.beta0_decreasing && self.b0_decreasing
    }

    pub fn vanishing_at_infinity(&self) -> bool {
        self.beta0_vanishing && self.b0_vanishing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    def: ModelDefinition,
    cert: Certificates,
}

impl ValidatedModel {
    pub fn definition(&self) -> &ModelDefinition {
        &self.def
    }

    pub fn certificates(&self) -> &Certificates {
        &self.cert
    }

    pub fn m(&self) -> f64 {
        self.def.m
    }
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 })
}

fn eval_at(name: &'static str, e: &Expr, x: f64, y: Option<f64>) -> Result<f64, ModelError> {
    let at = || match y {
        Some(y) => format!("(x={x}, y={y})"),
        None => format!("x={x}"),
    };
    let v = e.eval(x, y).map_err(|source| ModelError::Eval {
        name,
        at: at(),
        source,
    })?;
    if !v.is_finite() {
        return Err(ModelError::NonFinite { name, at: at() });
    }
    Ok(v)
}

fn sample_1d(
    name: &'static str,
    e: &Expr,
    lo: f64,
    hi: f64,
    n: usize,
    sign: Sign,
) -> Result<Vec<f64>, ModelError> {
    linspace(lo, hi, n)
        .map(|x| {
            let v = eval_at(name, e, x, None)?;
            sign.check(name, v, || format!("x={x}"))?;
            Ok(v)
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Sign {
    Any,
    NonNegative,
    Positive,
}

impl Sign {
    fn check(self, name: &'static str, v: f64, at: impl Fn() -> String) -> Result<(), ModelError> {
        match self {
            Sign::Positive if v <= 0.0 => Err(ModelError::NotPositive { name, at: at() }),
            Sign::NonNegative if v < 0.0 => Err(ModelError::Negative {
                name,
                at: at(),
                value: v,
            }),
            _ => Ok(()),
        }
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|p| p[1] < p[0])
}

/// Check the standing sign assumptions on equispaced samples and record the
/// monotonicity/limit flags used by the steady-state search.
pub fn validate(def: &ModelDefinition, opts: &ValidationOptions) -> Result<ValidatedModel, ModelError> {
    let n = opts.samples;
    if n < 2 {
        return Err(ModelError::TooFewSamples(n));
    }
    let m = def.m;
    let pw = opts.population_window;
    let beta0 = sample_1d("beta0", &def.beta0, 0.0, pw, n, Sign::NonNegative)?;
    let b0 = sample_1d("b0", &def.b0, 0.0, pw, n, Sign::NonNegative)?;
    sample_1d("beta2", &def.beta2, -1.0, 1.0, n, Sign::NonNegative)?;
    sample_1d("b2", &def.b2, -1.0, 1.0, n, Sign::NonNegative)?;
    let mu = sample_1d("mu", &def.mu, 0.0, m, n, Sign::NonNegative)?;
    sample_1d("gamma", &def.gamma, 0.0, m, n, Sign::Any)?;
    sample_1d("d", &def.d, 0.0, m, n, Sign::Positive)?;
    for x in linspace(0.0, m, n) {
        for y in linspace(0.0, m, n) {
            let v = eval_at("beta1", &def.beta1, x, Some(y))?;
            Sign::NonNegative.check("beta1", v, || format!("(x={x}, y={y})"))?;
        }
    }
    let far = |name, e: &Expr| -> Result<bool, ModelError> {
        Ok(eval_at(name, e, opts.far_argument, None)?.abs() < opts.vanish_threshold)
    };
    let cert = Certificates {
        samples: n,
        mu_lower_bound: mu.iter().copied().fold(f64::INFINITY, f64::min),
        beta0_decreasing: strictly_decreasing(&beta0),
        b0_decreasing: strictly_decreasing(&b0),
        beta0_vanishing: far("beta0", &def.beta0)?,
        b0_vanishing: far("b0", &def.b0)?,
    };
    Ok(ValidatedModel {
        def: def.clone(),
        cert,
    })
}

/// A one-variable ingredient evaluated through its expression, optionally
/// with the argument clamped to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ScalarIngredient {
    name: &'static str,
    expr: Expr,
    clamp_unit: bool,
}

impl ScalarIngredient {
    fn new(name: &'static str, expr: Expr, clamp_unit: bool) -> Self {
        ScalarIngredient {
            name,
            expr,
            clamp_unit,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn eval(&self, arg: f64) -> Result<f64, ModelError> {
        let a = if self.clamp_unit { arg.clamp(-1.0, 1.0) } else { arg };
        eval_at(self.name, &self.expr, a, None)
    }

    /// Central difference with step `1e-6·max(1, |arg|)`, on the unclamped expression.
    pub fn derivative(&self, arg: f64) -> Result<f64, ModelError> {
        let step = 1e-6 * arg.abs().max(1.0);
        let fp = eval_at(self.name, &self.expr, arg + step, None)?;
        let fm = eval_at(self.name, &self.expr, arg - step, None)?;
        Ok((fp - fm) / (2.0 * step))
    }
}

/// Ingredients evaluated on a grid.
#[derive(Debug, Clone)]
pub struct SampledIngredients {
    /// `μ(0)`.
    pub mu_boundary: f64,
    /// `μ(x_i)`, length N.
    pub mu_centers: Vec<f64>,
    /// `γ(ξ_i)`, length N+1.
    pub gamma_interfaces: Vec<f64>,
    /// `d(ξ_i)`, length N+1.
    pub d_interfaces: Vec<f64>,
    /// `β₁(x_i, y_j)` row-major N×N.
    pub beta1: Vec<f64>,
    /// `β₁(0, y_j)`, length N.
    pub beta1_boundary: Vec<f64>,
    pub beta0: ScalarIngredient,
    pub beta2: ScalarIngredient,
    pub b0: ScalarIngredient,
    pub b2: ScalarIngredient,
    pub grid: Grid,
}

impl SampledIngredients {
    pub fn beta1_at(&self, i: usize, j: usize) -> f64 {
        self.beta1[i * self.grid.cells() + j]
    }
}

pub fn sample_ingredients(vm: &ValidatedModel, grid: &Grid) -> Result<SampledIngredients, ModelError> {
    if grid.m() != vm.m() {
        return Err(ModelError::GridMismatch {
            grid: grid.m(),
            model: vm.m(),
        });
    }
    let def = &vm.def;
    let n = grid.cells();
    let at = |name, e: &Expr, x: f64| eval_at(name, e, x, None);
    let centers: Vec<f64> = (1..=n).map(|i| grid.center(i)).collect();
    let interfaces: Vec<f64> = (0..=n).map(|i| grid.interface(i)).collect();
    let mu_centers = centers
        .iter()
        .map(|&x| at("mu", &def.mu, x))
        .collect::<Result<Vec<_>, _>>()?;
    let gamma_interfaces = interfaces
        .iter()
        .map(|&x| at("gamma", &def.gamma, x))
        .collect::<Result<Vec<_>, _>>()?;
    let d_interfaces = interfaces
        .iter()
        .map(|&x| at("d", &def.d, x))
        .collect::<Result<Vec<_>, _>>()?;
    let mut beta1 = Vec::with_capacity(n * n);
    for &x in &centers {
        for &y in &centers {
            beta1.push(eval_at("beta1", &def.beta1, x, Some(y))?);
        }
    }
    let beta1_boundary = centers
        .iter()
        .map(|&y| eval_at("beta1", &def.beta1, 0.0, Some(y)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampledIngredients {
        mu_boundary: at("mu", &def.mu, 0.0)?,
        mu_centers,
        gamma_interfaces,
        d_interfaces,
        beta1,
        beta1_boundary,
        beta0: ScalarIngredient::new("beta0", def.beta0.clone(), false),
        beta2: ScalarIngredient::new("beta2", def.beta2.clone(), true),
        b0: ScalarIngredient::new("b0", def.b0.clone(), false),
        b2: ScalarIngredient::new("b2", def.b2.clone(), true),
        grid: grid.clone(),
    })
}
