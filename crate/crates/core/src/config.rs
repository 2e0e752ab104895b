//! Run configuration in a flat, sectioned key-value format.
//!
//! ```text
//! # comment
//! [grid]
//! d = 1
//! N = 128
//! [model]
//! n = 1
//! eps = 0.1
//! C = 1, 0.1; 0.1, 1
//! ```
//!
//! One assignment per line, `#` starts a comment, every key belongs to a
//! section and may appear once. Unknown sections and keys are errors.
//! Matrices are either a scalar (`L`: every off-diagonal entry; `C`: a
//! multiple of the identity) or rows separated by `;` with entries separated
//! by `,` or whitespace.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::kernel::{make_profile, DEFAULT_MIN_ANNULUS_CELLS, DEFAULT_SUPPORT};
use crate::model::{Model, ModelKind, ModelParams};
use crate::scheme::{S1Preconditioner, S2Method, SchemeParams};

const KEYS: &[(&str, &[&str])] = &[
    ("grid", &["d", "N", "extent", "dealias"]),
    ("model", &["n", "kind", "eps", "L", "C", "support", "min_annulus_cells"]),
    (
        "scheme",
        &[
            "tau",
            "outer_tol",
            "outer_max",
            "s2_tol",
            "s2_max",
            "s2_damping",
            "cg_tol",
            "cg_max",
            "s2_method",
            "preconditioner",
            "retry",
            "verify_fixed_point",
        ],
    ),
    ("init", &["preset", "seed", "amplitude", "modes", "alpha", "width", "floor", "fractions"]),
    ("run", &["t_final"]),
    ("output", &["dir", "snapshot_every", "strict_deterministic", "threads"]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Uniform,
    PerturbedUniform,
    DirichletRandom,
    TanhInterface,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Uniform => "uniform",
            Preset::PerturbedUniform => "perturbed_uniform",
            Preset::DirichletRandom => "dirichlet_random",
            Preset::TanhInterface => "tanh_interface",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
    pub extent: f64,
    pub dealias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum KindConfig {
    Nonlocal { eps: f64 },
    Local,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of species, `n + 1`.
    pub species: usize,
    pub kind: KindConfig,
    pub support: (f64, f64),
    pub min_annulus_cells: f64,
    pub l: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Sup norm of the perturbation of `perturbed_uniform` (in log space).
    pub amplitude: f64,
    /// Highest retained mode number per axis.
    pub modes: usize,
    /// Dirichlet concentration.
    pub alpha: f64,
    /// Interface width of `tanh_interface`.
    pub width: f64,
    /// Smallest volume fraction of `tanh_interface`.
    pub floor: f64,
    /// Mean volume fractions for `uniform` and `perturbed_uniform`.
    pub fractions: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot_every: usize,
    pub strict_deterministic: bool,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub scheme: SchemeParams,
    pub init: InitConfig,
    pub t_final: f64,
    pub output: OutputConfig,
}

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
}

struct Table {
    entries: BTreeMap<(String, String), Entry>,
}

impl Table {
    fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn parsed<T>(&mut self, section: &str, key: &str, parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).ok_or_else(|| Error::Config {
                line: e.line,
                message: format!("{section}.{key}: expected {what}, got '{}'", e.value),
            }),
        }
    }

    fn float(&mut self, section: &str, key: &str) -> Result<Option<f64>> {
        self.parsed(section, key, |s| s.parse::<f64>().ok().filter(|v| v.is_finite()), "a finite number")
    }

    fn uint(&mut self, section: &str, key: &str) -> Result<Option<usize>> {
        self.parsed(section, key, |s| s.parse::<usize>().ok(), "a nonnegative integer")
    }

    fn boolean(&mut self, section: &str, key: &str) -> Result<Option<bool>> {
        self.parsed(
            section,
            key,
            |s| match s {
                "true" | "yes" | "1" => Some(true),
                "false" | "no" | "0" => Some(false),
                _ => None,
            },
            "true or false",
        )
    }

    fn list(&mut self, section: &str, key: &str) -> Result<Option<(Vec<f64>, usize)>> {
        let Some(e) = self.take(section, key) else {
            return Ok(None);
        };
        let v = parse_list(&e.value).ok_or_else(|| Error::Config {
            line: e.line,
            message: format!("{section}.{key}: expected a list of numbers, got '{}'", e.value),
        })?;
        Ok(Some((v, e.line)))
    }

    fn required<T>(value: Option<T>, section: &str, key: &str) -> Result<T> {
        value.ok_or_else(|| Error::Validation(format!("missing required key {section}.{key}")))
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let v: Option<Vec<f64>> = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();
    v.filter(|v| !v.is_empty())
}

fn parse_matrix(s: &str, species: usize, scalar: impl Fn(f64) -> DMatrix<f64>) -> std::result::Result<DMatrix<f64>, String> {
    let rows: Vec<&str> = s.split(';').map(str::trim).filter(|r| !r.is_empty()).collect();
    if rows.len() == 1 {
        if let Some(v) = parse_list(rows[0]).filter(|v| v.len() == 1) {
            return Ok(scalar(v[0]));
        }
    }
    if rows.len() != species {
        return Err(format!("expected a scalar or {species} rows, got {}", rows.len()));
    }
    let mut m = DMatrix::zeros(species, species);
    for (i, row) in rows.iter().enumerate() {
        let v = parse_list(row).ok_or_else(|| format!("row {} is not a list of numbers", i + 1))?;
        if v.len() != species {
            return Err(format!("row {} has {} entries, expected {species}", i + 1, v.len()));
        }
        for (j, x) in v.into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m)
}

fn tokenize(text: &str) -> Result<Table> {
    let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                line,
                message: format!("malformed section header '{content}'"),
            })?;
            let name = name.trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Config {
                    line,
                    message: format!("unknown section [{name}]"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected 'key = value', got '{content}'"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.as_deref().ok_or_else(|| Error::Config {
            line,
            message: format!("key '{key}' appears before any section"),
        })?;
        let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return Err(Error::Config {
                line,
                message: format!("unknown key '{key}' in [{sec}]"),
            });
        }
        if value.is_empty() {
            return Err(Error::Config {
                line,
                message: format!("{sec}.{key} has an empty value"),
            });
        }
        let slot = (sec.to_string(), key.to_string());
        if let Some(prev) = entries.get(&slot) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key {sec}.{key} (first set on line {}, again on line {line})", prev.line),
            });
        }
        entries.insert(
            slot,
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(Table { entries })
}

/// Parses and validates a configuration. Parameter invariants (grid shape,
/// `L`, `C`, kernel support, tolerances, preset compatibility) are checked
/// here; the kernel resolution guard is checked when the model is built.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut t = tokenize(text)?;

    let grid = GridConfig {
        d: Table::required(t.uint("grid", "d")?, "grid", "d")?,
        n: Table::required(t.uint("grid", "N")?, "grid", "N")?,
        extent: t.float("grid", "extent")?.unwrap_or(1.0),
        dealias: t.boolean("grid", "dealias")?.unwrap_or(false),
    };

    let n = Table::required(t.uint("model", "n")?, "model", "n")?;
    if n < 1 {
        return Err(Error::Validation("model.n must be at least 1".into()));
    }
    let species = n + 1;
    let kind_entry = t.take("model", "kind");
    let kind_name = kind_entry.as_ref().map_or("nonlocal", |e| e.value.as_str()).to_string();
    let eps = t.float("model", "eps")?;
    let kind = match kind_name.as_str() {
        "nonlocal" => KindConfig::Nonlocal {
            eps: Table::required(eps, "model", "eps")?,
        },
        "local" => KindConfig::Local,
        other => {
            return Err(Error::Config {
                line: kind_entry.map_or(0, |e| e.line),
                message: format!("model.kind must be 'nonlocal' or 'local', got '{other}'"),
            })
        }
    };
    let matrix = |t: &mut Table, key: &str, scalar: &dyn Fn(f64) -> DMatrix<f64>, default: f64| -> Result<DMatrix<f64>> {
        match t.take("model", key) {
            None => Ok(scalar(default)),
            Some(e) => parse_matrix(&e.value, species, scalar).map_err(|m| Error::Config {
                line: e.line,
                message: format!("model.{key}: {m}"),
            }),
        }
    };
    let l = matrix(
        &mut t,
        "L",
        &|v| DMatrix::from_fn(species, species, |i, j| if i == j { 0.0 } else { v }),
        1.0,
    )?;
    let c = matrix(&mut t, "C", &|v| DMatrix::identity(species, species) * v, 1.0)?;
    let support = match t.list("model", "support")? {
        None => DEFAULT_SUPPORT,
        Some((v, line)) if v.len() == 2 => {
            let _ = line;
            (v[0], v[1])
        }
        Some((_, line)) => {
            return Err(Error::Config {
                line,
                message: "model.support needs two numbers a, b".into(),
            })
        }
    };
    let model = ModelConfig {
        species,
        kind,
        support,
        min_annulus_cells: t.float("model", "min_annulus_cells")?.unwrap_or(DEFAULT_MIN_ANNULUS_CELLS),
        l,
        c,
    };

    let mut scheme = SchemeParams::new(Table::required(t.float("scheme", "tau")?, "scheme", "tau")?);
    if let Some(v) = t.float("scheme", "outer_tol")? {
        scheme.outer_tol = v;
    }
    if let Some(v) = t.uint("scheme", "outer_max")? {
        scheme.outer_max = v;
    }
    if let Some(v) = t.float("scheme", "s2_tol")? {
        scheme.s2_tol = v;
    }
    if let Some(v) = t.uint("scheme", "s2_max")? {
        scheme.s2_max = v;
    }
    if let Some(v) = t.float("scheme", "s2_damping")? {
        scheme.s2_damping = v;
    }
    if let Some(v) = t.float("scheme", "cg_tol")? {
        scheme.cg_tol = v;
    }
    if let Some(v) = t.uint("scheme", "cg_max")? {
        scheme.cg_max = v;
    }
    if let Some(v) = t.parsed(
        "scheme",
        "s2_method",
        |s| match s {
            "newton" => Some(S2Method::Newton),
            "softmax_picard" => Some(S2Method::SoftmaxPicard),
            _ => None,
        },
        "'newton' or 'softmax_picard'",
    )? {
        scheme.s2_method = v;
    }
    if let Some(v) = t.parsed(
        "scheme",
        "preconditioner",
        |s| match s {
            "mean_mobility" => Some(S1Preconditioner::MeanMobility),
            "h2_block" => Some(S1Preconditioner::H2Block),
            _ => None,
        },
        "'mean_mobility' or 'h2_block'",
    )? {
        scheme.preconditioner = v;
    }
    if let Some(v) = t.boolean("scheme", "retry")? {
        scheme.retry = v;
    }
    if let Some(v) = t.boolean("scheme", "verify_fixed_point")? {
        scheme.verify_fixed_point = v;
    }

    let preset = Table::required(
        t.parsed(
            "init",
            "preset",
            |s| match s {
                "uniform" => Some(Preset::Uniform),
                "perturbed_uniform" => Some(Preset::PerturbedUniform),
                "dirichlet_random" => Some(Preset::DirichletRandom),
                "tanh_interface" => Some(Preset::TanhInterface),
                _ => None,
            },
            "one of uniform, perturbed_uniform, dirichlet_random, tanh_interface",
        )?,
        "init",
        "preset",
    )?;
    let seed = t.parsed("init", "seed", |s| s.parse::<u64>().ok(), "a nonnegative integer")?;
    let init = InitConfig {
        preset,
        seed: seed.unwrap_or(0),
        amplitude: t.float("init", "amplitude")?.unwrap_or(0.05),
        modes: t.uint("init", "modes")?.unwrap_or(3),
        alpha: t.float("init", "alpha")?.unwrap_or(1.0),
        width: t.float("init", "width")?.unwrap_or(0.05 * grid.extent),
        floor: t.float("init", "floor")?.unwrap_or(1e-3),
        fractions: t.list("init", "fractions")?.map(|(v, _)| v),
    };

    let t_final = Table::required(t.float("run", "t_final")?, "run", "t_final")?;
    let output = OutputConfig {
        dir: t.take("output", "dir").map_or_else(|| PathBuf::from("output"), |e| PathBuf::from(e.value)),
        snapshot_every: t.uint("output", "snapshot_every")?.unwrap_or(10),
        strict_deterministic: t.boolean("output", "strict_deterministic")?.unwrap_or(true),
        threads: t.uint("output", "threads")?.unwrap_or(1),
    };
    debug_assert!(t.entries.is_empty(), "unconsumed keys: {:?}", t.entries.keys());

    let cfg = RunConfig {
        grid,
        model,
        scheme,
        init,
        t_final,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Checks every parameter invariant that does not require building the
    /// nonlocal operator.
    pub fn validate(&self) -> Result<()> {
        self.build_grid()?;
        self.model_params()?;
        self.scheme.validate()?;
        if !(self.t_final >= 0.0) {
            return Err(Error::Validation(format!("run.t_final must be >= 0, got {}", self.t_final)));
        }
        if self.output.threads == 0 {
            return Err(Error::Validation("output.threads must be at least 1".into()));
        }
        let init = &self.init;
        if init.amplitude < 0.0 || init.alpha <= 0.0 || init.width <= 0.0 {
            return Err(Error::Validation(
                "init.amplitude must be >= 0, init.alpha and init.width > 0".into(),
            ));
        }
        if !(init.floor > 0.0 && init.floor < 0.5) {
            return Err(Error::Validation(format!("init.floor must lie in (0, 0.5), got {}", init.floor)));
        }
        if init.modes == 0 && matches!(init.preset, Preset::PerturbedUniform | Preset::DirichletRandom) {
            return Err(Error::Validation("init.modes must be at least 1".into()));
        }
        if let Some(f) = &init.fractions {
            if !matches!(init.preset, Preset::Uniform | Preset::PerturbedUniform) {
                return Err(Error::Validation(format!(
                    "init.fractions is only used by uniform and perturbed_uniform, not {}",
                    init.preset.name()
                )));
            }
            if f.len() != self.model.species || f.iter().any(|&v| v <= 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!(
                    "init.fractions must hold {} positive numbers summing to 1",
                    self.model.species
                )));
            }
        }
        if init.preset == Preset::TanhInterface && (self.model.species != 2 || self.grid.d > 2) {
            return Err(Error::Validation(
                "preset tanh_interface needs n = 1 and d <= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<TorusGrid> {
        TorusGrid::with_dealiasing(self.grid.d, self.grid.n, self.grid.extent, self.grid.dealias)
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        Ok(match self.model.kind {
            KindConfig::Nonlocal { eps } => ModelKind::Nonlocal {
                eps,
                profile: make_profile(self.grid.d, self.model.support)?,
                min_annulus_cells: self.model.min_annulus_cells,
            },
            KindConfig::Local => ModelKind::Local,
        })
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.model.l.clone(), self.model.c.clone(), self.model_kind()?)
    }

    /// Grid, parameters and interaction operator; fails on the resolution guard.
    pub fn build_model(&self) -> Result<Model> {
        Model::new(self.model_params()?, &self.build_grid()?)
    }

    /// Copy with a different interaction.
    pub fn with_kind(&self, kind: KindConfig) -> Self {
        let mut c = self.clone();
        c.model.kind = kind;
        c
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        let mut c = self.clone();
        c.scheme.tau = tau;
        c
    }

    /// Effective thread count: `NLCH_THREADS` overrides the configured value,
    /// strict-deterministic mode forces one.
    pub fn effective_threads(&self) -> usize {
        if self.output.strict_deterministic {
            return 1;
        }
        std::env::var("NLCH_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&v| v > 0)
            .unwrap_or(self.output.threads)
    }

    /// The configuration written back in its own grammar.
    pub fn to_text(&self) -> String {
        let row = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect::<Vec<_>>().join(", "))
                .collect::<Vec<_>>()
                .join("; ")
        };
        let s = &self.scheme;
        let mut out = String::new();
        out.push_str(&format!(
            "[grid]\nd = {}\nN = {}\nextent = {}\ndealias = {}\n\n",
            self.grid.d, self.grid.n, self.grid.extent, self.grid.dealias
        ));
        out.push_str(&format!("[model]\nn = {}\n", self.model.species - 1));
        match self.model.kind {
            KindConfig::Nonlocal { eps } => out.push_str(&format!("kind = nonlocal\neps = {eps}\n")),
            KindConfig::Local => out.push_str("kind = local\n"),
        }
        out.push_str(&format!(
            "L = {}\nC = {}\nsupport = {}, {}\nmin_annulus_cells = {}\n\n",
            row(&self.model.l),
            row(&self.model.c),
            self.model.support.0,
            self.model.support.1,
            self.model.min_annulus_cells
        ));
        out.push_str(&format!(
            "[scheme]\ntau = {}\nouter_tol = {}\nouter_max = {}\ns2_tol = {}\ns2_max = {}\ns2_damping = {}\n\
             cg_tol = {}\ncg_max = {}\ns2_method = {}\npreconditioner = {}\nretry = {}\nverify_fixed_point = {}\n\n",
            s.tau,
            s.outer_tol,
            s.outer_max,
            s.s2_tol,
            s.s2_max,
            s.s2_damping,
            s.cg_tol,
            s.cg_max,
            match s.s2_method {
                S2Method::Newton => "newton",
                S2Method::SoftmaxPicard => "softmax_picard",
            },
            match s.preconditioner {
                S1Preconditioner::MeanMobility => "mean_mobility",
                S1Preconditioner::H2Block => "h2_block",
            },
            s.retry,
            s.verify_fixed_point
        ));
        let i = &self.init;
        out.push_str(&format!(
            "[init]\npreset = {}\nseed = {}\namplitude = {}\nmodes = {}\nalpha = {}\nwidth = {}\nfloor = {}\n",
            i.preset.name(),
            i.seed,
            i.amplitude,
            i.modes,
            i.alpha,
            i.width,
            i.floor
        ));
        if let Some(f) = &i.fractions {
            out.push_str(&format!(
                "fractions = {}\n",
                f.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
            ));
        }
        out.push_str(&format!("\n[run]\nt_final = {}\n\n", self.t_final));
        out.push_str(&format!(
            "[output]\ndir = {}\nsnapshot_every = {}\nstrict_deterministic = {}\nthreads = {}\n",
            self.output.dir.display(),
            self.output.snapshot_every,
            self.output.strict_deterministic,
            self.output.threads
        ));
        out
    }
}
