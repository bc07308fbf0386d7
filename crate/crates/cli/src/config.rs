//! Flat sectioned `key = value` run configuration: diff-able, fully
//! defaulted, and round-trip stable (parse -> serialize -> parse is the
//! identity). Manifests embed the same format plus a `[manifest]` section
//! that the parser accepts and ignores, so a manifest file can be fed back
//! as a configuration.

use std::fmt::Write as _;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    TwoLevel,
    Full,
}

impl EngineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineKind::TwoLevel => "two-level",
            EngineKind::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Auto,
    Dense,
    ShiftInvert,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Auto => "auto",
            BackendKind::Dense => "dense",
            BackendKind::ShiftInvert => "shift-invert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScale {
    Log,
    Linear,
}

impl GridScale {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridScale::Log => "log",
            GridScale::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Duration,
    Radius,
    DurationRadius,
    Phase,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Duration => "T",
            SweepAxis::Radius => "r",
            SweepAxis::DurationRadius => "rT",
            SweepAxis::Phase => "phi0",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "T" => Some(SweepAxis::Duration),
            "r" => Some(SweepAxis::Radius),
            "rT" => Some(SweepAxis::DurationRadius),
            "phi0" => Some(SweepAxis::Phase),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMode {
    Point,
    Loop,
}

impl SpectrumMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpectrumMode::Point => "point",
            SpectrumMode::Loop => "loop",
        }
    }
}

/// Fully resolved run configuration; every field has a documented default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [basis]
    pub n_max: usize,
    pub sturmian_scale: f64,
    pub rotation_angle: f64,
    // [center]
    pub gamma: f64,
    pub f: f64,
    pub energy_re: f64,
    pub energy_im: f64,
    // [fit]
    pub octagon_radius: f64,
    pub c_re: f64,
    pub c_im: f64,
    // [loop]
    pub r: f64,
    pub t: f64,
    pub phi0: f64,
    pub cycles: usize,
    // [engine]
    pub engine: EngineKind,
    pub tracked: usize,
    pub subspace: usize,
    pub refreshes_per_cycle: usize,
    pub output_samples: usize,
    pub convergence_tol: f64,
    pub im_energy_guard: f64,
    // [integrator]
    pub rtol: f64,
    pub atol: f64,
    // [solver]
    pub backend: BackendKind,
    pub residual_tol: f64,
    // [sweep]
    pub axis: SweepAxis,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub t_scale: GridScale,
    pub r_min: f64,
    pub r_max: f64,
    pub r_points: usize,
    pub r_scale: GridScale,
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_points: usize,
    pub full_spot_checks: usize,
    // [spectrum]
    pub spectrum_mode: SpectrumMode,
    pub count: usize,
    pub loop_points: usize,
    // [output]
    pub directory: String,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_max: 35,
            sturmian_scale: 0.20,
            rotation_angle: 0.15,
            gamma: 1.445263e-2,
            f: 3.176736e-4,
            energy_re: -2.703665e-2,
            energy_im: -4.171979e-4,
            octagon_radius: 0.05,
            c_re: 1.0,
            c_im: 0.0,
            r: 1e-3,
            t: 2.39e3,
            phi0: 0.0,
            cycles: 1,
            engine: EngineKind::TwoLevel,
            tracked: 6,
            subspace: 24,
            refreshes_per_cycle: 200,
            output_samples: 1000,
            convergence_tol: 1e-6,
            im_energy_guard: 1e-6,
            rtol: 1e-8,
            atol: 1e-12,
            backend: BackendKind::Auto,
            residual_tol: 1e-9,
            axis: SweepAxis::Duration,
            t_min: 1e2,
            t_max: 1e4,
            t_points: 100,
            t_scale: GridScale::Log,
            r_min: 5e-3,
            r_max: 0.4,
            r_points: 100,
            r_scale: GridScale::Log,
            phi_min: 0.0,
            phi_max: 4.0 * std::f64::consts::PI,
            phi_points: 100,
            full_spot_checks: 0,
            spectrum_mode: SpectrumMode::Point,
            count: 6,
            loop_points: 128,
            directory: "out".into(),
            jobs: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T, CliError> {
    value.parse::<T>().map_err(|_| {
        CliError::Config(format!("line {line}: cannot parse value `{value}` for key `{key}`"))
    })
}

impl RunConfig {
    /// Parse the sectioned text format; unknown sections, unknown keys, and
    /// malformed lines fail with the offending line number. A `[manifest]`
    /// section is accepted and skipped so manifests re-run directly.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(CliError::Config(format!(
                        "line {line_no}: unterminated section header `{line}`"
                    )));
                }
                section = line[1..line.len() - 1].trim().to_string();
                let known = [
                    "basis", "center", "fit", "loop", "engine", "integrator", "solver",
                    "sweep", "spectrum", "output", "manifest",
                ];
                if !known.contains(&section.as_str()) {
                    return Err(CliError::Config(format!(
                        "line {line_no}: unknown section `[{section}]`"
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {line_no}: expected `key = value`, got `{line}`"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if section == "manifest" {
                continue; // provenance metadata, not configuration
            }
            match (section.as_str(), key) {
                ("basis", "n_max") => cfg.n_max = parse_num(value, line_no, key)?,
                ("basis", "sturmian_scale") => {
                    cfg.sturmian_scale = parse_num(value, line_no, key)?
                }
                ("basis", "rotation_angle") => {
                    cfg.rotation_angle = parse_num(value, line_no, key)?
                }
                ("center", "gamma") => cfg.gamma = parse_num(value, line_no, key)?,
                ("center", "f") => cfg.f = parse_num(value, line_no, key)?,
                ("center", "energy_re") => cfg.energy_re = parse_num(value, line_no, key)?,
                ("center", "energy_im") => cfg.energy_im = parse_num(value, line_no, key)?,
                ("fit", "octagon_radius") => {
                    cfg.octagon_radius = parse_num(value, line_no, key)?
                }
                ("fit", "c_re") => cfg.c_re = parse_num(value, line_no, key)?,
                ("fit", "c_im") => cfg.c_im = parse_num(value, line_no, key)?,
                ("loop", "r") => cfg.r = parse_num(value, line_no, key)?,
                ("loop", "T") => cfg.t = parse_num(value, line_no, key)?,
                ("loop", "phi0") => cfg.phi0 = parse_num(value, line_no, key)?,
                ("loop", "cycles") => cfg.cycles = parse_num(value, line_no, key)?,
                ("engine", "kind") => {
                    cfg.engine = match value {
                        "two-level" => EngineKind::TwoLevel,
                        "full" => EngineKind::Full,
                        other => {
                            return Err(CliError::Config(format!(
                                "line {line_no}: engine kind must be `two-level` or `full`, got `{other}`"
                            )))
                        }
                    }
                }
                ("engine", "tracked") => cfg.tracked = parse_num(value, line_no, key)?,
                ("engine", "subspace") => cfg.subspace = parse_num(value, line_no, key)?,
                ("engine", "refreshes_per_cycle") => {
                    cfg.refreshes_per_cycle = parse_num(value, line_no, key)?
                }
                ("engine", "output_samples") => {
                    cfg.output_samples = parse_num(value, line_no, key)?
                }
                ("engine", "convergence_tol") => {
                    cfg.convergence_tol = parse_num(value, line_no, key)?
                }
                ("engine", "im_energy_guard") => {
                    cfg.im_energy_guard = parse_num(value, line_no, key)?
                }
                ("integrator", "rtol") => cfg.rtol = parse_num(value, line_no, key)?,
                ("integrator", "atol") => cfg.atol = parse_num(value, line_no, key)?,
                ("solver", "backend") => {
                    cfg.backend = match value {
                        "auto" => BackendKind::Auto,
                        "dense" => BackendKind::Dense,
                        "shift-invert" => BackendKind::ShiftInvert,
                        other => {
                            return Err(CliError::Config(format!(
                                "line {line_no}: solver backend must be auto|dense|shift-invert, got `{other}`"
                            )))
                        }
                    }
                }
                ("solver", "residual_tol") => {
                    cfg.residual_tol = parse_num(value, line_no, key)?
                }
                ("sweep", "axis") => {
                    cfg.axis = SweepAxis::parse(value).ok_or_else(|| {
                        CliError::Config(format!(
                            "line {line_no}: sweep axis must be T|r|rT|phi0, got `{value}`"
                        ))
                    })?
                }
                ("sweep", "t_min") => cfg.t_min = parse_num(value, line_no, key)?,
                ("sweep", "t_max") => cfg.t_max = parse_num(value, line_no, key)?,
                ("sweep", "t_points") => cfg.t_points = parse_num(value, line_no, key)?,
                ("sweep", "t_scale") => {
                    cfg.t_scale = match value {
                        "log" => GridScale::Log,
                        "linear" => GridScale::Linear,
                        other => {
                            return Err(CliError::Config(format!(
                                "line {line_no}: scale must be log|linear, got `{other}`"
                            )))
                        }
                    }
                }
                ("sweep", "r_min") => cfg.r_min = parse_num(value, line_no, key)?,
                ("sweep", "r_max") => cfg.r_max = parse_num(value, line_no, key)?,
                ("sweep", "r_points") => cfg.r_points = parse_num(value, line_no, key)?,
                ("sweep", "r_scale") => {
                    cfg.r_scale = match value {
                        "log" => GridScale::Log,
                        "linear" => GridScale::Linear,
                        other => {
                            return Err(CliError::Config(format!(
                                "line {line_no}: scale must be log|linear, got `{other}`"
                            )))
                        }
                    }
                }
                ("sweep", "phi_min") => cfg.phi_min = parse_num(value, line_no, key)?,
                ("sweep", "phi_max") => cfg.phi_max = parse_num(value, line_no, key)?,
                ("sweep", "phi_points") => cfg.phi_points = parse_num(value, line_no, key)?,
                ("sweep", "full_spot_checks") => {
                    cfg.full_spot_checks = parse_num(value, line_no, key)?
                }
                ("spectrum", "mode") => {
                    cfg.spectrum_mode = match value {
                        "point" => SpectrumMode::Point,
                        "loop" => SpectrumMode::Loop,
                        other => {
                            return Err(CliError::Config(format!(
                                "line {line_no}: spectrum mode must be point|loop, got `{other}`"
                            )))
                        }
                    }
                }
                ("spectrum", "count") => cfg.count = parse_num(value, line_no, key)?,
                ("spectrum", "loop_points") => {
                    cfg.loop_points = parse_num(value, line_no, key)?
                }
                ("output", "directory") => cfg.directory = value.to_string(),
                ("output", "jobs") => cfg.jobs = parse_num(value, line_no, key)?,
                ("", _) => {
                    return Err(CliError::Config(format!(
                        "line {line_no}: key `{key}` appears before any section header"
                    )))
                }
                (sec, _) => {
                    return Err(CliError::Config(format!(
                        "line {line_no}: unknown key `{key}` in section `[{sec}]`"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("basis.sturmian_scale", self.sturmian_scale),
            ("fit.octagon_radius", self.octagon_radius),
            ("loop.r", self.r),
            ("loop.T", self.t),
            ("integrator.rtol", self.rtol),
            ("integrator.atol", self.atol),
            ("solver.residual_tol", self.residual_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_max < 1 {
            return Err(CliError::Config("basis.n_max must be at least 1".into()));
        }
        if !(0.0..std::f64::consts::FRAC_PI_4).contains(&self.rotation_angle) {
            return Err(CliError::Config(
                "basis.rotation_angle must lie in [0, pi/4)".into(),
            ));
        }
        if self.gamma < 0.0 || self.f < 0.0 {
            return Err(CliError::Config("center fields must be non-negative".into()));
        }
        if self.cycles == 0 {
            return Err(CliError::Config("loop.cycles must be at least 1".into()));
        }
        if self.tracked < 2 {
            return Err(CliError::Config("engine.tracked must be at least 2".into()));
        }
        if self.c_re == 0.0 && self.c_im == 0.0 {
            return Err(CliError::Config("fit.c must be nonzero".into()));
        }
        for (name, n) in [
            ("sweep.t_points", self.t_points),
            ("sweep.r_points", self.r_points),
            ("sweep.phi_points", self.phi_points),
            ("spectrum.loop_points", self.loop_points),
            ("engine.refreshes_per_cycle", self.refreshes_per_cycle),
            ("engine.output_samples", self.output_samples),
        ] {
            if n < 2 {
                return Err(CliError::Config(format!("{name} must be at least 2, got {n}")));
            }
        }
        Ok(())
    }

    /// Canonical serialization with every resolved value; float formatting
    /// uses the shortest round-trip representation.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let f = |x: f64| format!("{x:?}");
        let _ = writeln!(s, "[basis]");
        let _ = writeln!(s, "n_max = {}", self.n_max);
        let _ = writeln!(s, "sturmian_scale = {}", f(self.sturmian_scale));
        let _ = writeln!(s, "rotation_angle = {}", f(self.rotation_angle));
        let _ = writeln!(s, "\n[center]");
        let _ = writeln!(s, "gamma = {}", f(self.gamma));
        let _ = writeln!(s, "f = {}", f(self.f));
        let _ = writeln!(s, "energy_re = {}", f(self.energy_re));
        let _ = writeln!(s, "energy_im = {}", f(self.energy_im));
        let _ = writeln!(s, "\n[fit]");
        let _ = writeln!(s, "octagon_radius = {}", f(self.octagon_radius));
        let _ = writeln!(s, "c_re = {}", f(self.c_re));
        let _ = writeln!(s, "c_im = {}", f(self.c_im));
        let _ = writeln!(s, "\n[loop]");
        let _ = writeln!(s, "r = {}", f(self.r));
        let _ = writeln!(s, "T = {}", f(self.t));
        let _ = writeln!(s, "phi0 = {}", f(self.phi0));
        let _ = writeln!(s, "cycles = {}", self.cycles);
        let _ = writeln!(s, "\n[engine]");
        let _ = writeln!(s, "kind = {}", self.engine.as_str());
        let _ = writeln!(s, "tracked = {}", self.tracked);
        let _ = writeln!(s, "subspace = {}", self.subspace);
        let _ = writeln!(s, "refreshes_per_cycle = {}", self.refreshes_per_cycle);
        let _ = writeln!(s, "output_samples = {}", self.output_samples);
        let _ = writeln!(s, "convergence_tol = {}", f(self.convergence_tol));
        let _ = writeln!(s, "im_energy_guard = {}", f(self.im_energy_guard));
        let _ = writeln!(s, "\n[integrator]");
        let _ = writeln!(s, "rtol = {}", f(self.rtol));
        let _ = writeln!(s, "atol = {}", f(self.atol));
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "backend = {}", self.backend.as_str());
        let _ = writeln!(s, "residual_tol = {}", f(self.residual_tol));
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "axis = {}", self.axis.as_str());
        let _ = writeln!(s, "t_min = {}", f(self.t_min));
        let _ = writeln!(s, "t_max = {}", f(self.t_max));
        let _ = writeln!(s, "t_points = {}", self.t_points);
        let _ = writeln!(s, "t_scale = {}", self.t_scale.as_str());
        let _ = writeln!(s, "r_min = {}", f(self.r_min));
        let _ = writeln!(s, "r_max = {}", f(self.r_max));
        let _ = writeln!(s, "r_points = {}", self.r_points);
        let _ = writeln!(s, "r_scale = {}", self.r_scale.as_str());
        let _ = writeln!(s, "phi_min = {}", f(self.phi_min));
        let _ = writeln!(s, "phi_max = {}", f(self.phi_max));
        let _ = writeln!(s, "phi_points = {}", self.phi_points);
        let _ = writeln!(s, "full_spot_checks = {}", self.full_spot_checks);
        let _ = writeln!(s, "\n[spectrum]");
        let _ = writeln!(s, "mode = {}", self.spectrum_mode.as_str());
        let _ = writeln!(s, "count = {}", self.count);
        let _ = writeln!(s, "loop_points = {}", self.loop_points);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "directory = {}", self.directory);
        let _ = writeln!(s, "jobs = {}", self.jobs);
        s
    }
}
