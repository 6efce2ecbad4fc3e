//! Run configuration: preset defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use egp_core::{
    make_cantilever3d_problem, make_inverter_problem, make_mbb_problem, DensityFilterKind,
    FilterConfig, MaterialSpec, OcFilterKind, OptimizerConfig, PipelineOrder, ProblemDefinition,
    SensitivityFilterKind,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mbb,
    Inverter,
    #[serde(rename = "cantilever3d")]
    #[value(name = "cantilever3d")]
    Cantilever3d,
}

impl Preset {
    /// Paper-scale mesh.
    pub fn default_size(self) -> [usize; 3] {
        match self {
            Preset::Mbb => [60, 20, 0],
            Preset::Inverter => [100, 100, 0],
            Preset::Cantilever3d => [60, 20, 10],
        }
    }

    pub fn build(self, [nx, ny, nz]: [usize; 3]) -> Result<ProblemDefinition, egp_core::ModelError> {
        match self {
            Preset::Mbb => make_mbb_problem(nx, ny),
            Preset::Inverter => make_inverter_problem(nx, ny),
            Preset::Cantilever3d => make_cantilever3d_problem(nx, ny, nz),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Mbb => "mbb",
            Preset::Inverter => "inverter",
            Preset::Cantilever3d => "cantilever3d",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Egp,
    Oc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Egp => "egp",
            Method::Oc => "oc",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub preset: Option<Preset>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nz: Option<usize>,
    pub volume_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub young_modulus_solid: Option<f64>,
    pub young_modulus_void: Option<f64>,
    pub poisson_ratio: Option<f64>,
    pub penalization: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub density_kind: Option<DensityFilterKind>,
    pub density_radius: Option<f64>,
    pub sensitivity_kind: Option<SensitivityFilterKind>,
    pub sensitivity_radius: Option<f64>,
    pub sigma_ratio: Option<f64>,
    pub oc_radius: Option<f64>,
    pub oc_kind: Option<OcFilterKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub method: Option<Method>,
    pub clip_multiplier: Option<f64>,
    pub upper_threshold: Option<f64>,
    pub lower_threshold: Option<f64>,
    pub max_iterations: Option<usize>,
    pub stop_tolerance: Option<f64>,
    pub pipeline_order: Option<PipelineOrder>,
    pub oc_move_limit: Option<f64>,
    pub oc_damping: Option<f64>,
}

/// Contents of a configuration file; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub material: MaterialSection,
    #[serde(default)]
    pub filters: FilterSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            CliError::Config {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    1 + text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count()
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub method: Option<Method>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nz: Option<usize>,
    pub volume_fraction: Option<f64>,
    pub penalization: Option<f64>,
    pub density_radius: Option<f64>,
    pub sensitivity_radius: Option<f64>,
    pub oc_radius: Option<f64>,
    /// Sets both snap widths.
    pub threshold: Option<f64>,
    pub clip_multiplier: Option<f64>,
    pub max_iterations: Option<usize>,
    pub stop_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedProblem {
    pub preset: Preset,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub volume_fraction: f64,
}

/// Every parameter of a run after defaulting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub method: Method,
    pub problem: ResolvedProblem,
    pub material: MaterialSpec,
    pub filters: FilterConfig,
    pub optimizer: OptimizerConfig,
}

macro_rules! layer {
    ($target:expr, $($src:expr),+ $(,)?) => {
        $( if let Some(v) = $src { $target = v; } )+
    };
}

impl ResolvedConfig {
    /// Layers `file` over the preset defaults and `cli` over both. `preset`
    /// comes from the subcommand; `custom` runs take it from the file.
    pub fn resolve(
        preset: Option<Preset>,
        file: Option<&ConfigFile>,
        file_path: Option<&Path>,
        cli: &Overrides,
    ) -> Result<(Self, ProblemDefinition), CliError> {
        let empty = ConfigFile::default();
        let file = file.unwrap_or(&empty);
        let config_err = |field: &str, message: String| CliError::Config {
            path: file_path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<command line>")),
            line: None,
            message: format!("{field}: {message}"),
        };
        let preset = preset
            .or(file.problem.preset)
            .ok_or_else(|| config_err("problem.preset", "missing; expected mbb, inverter or cantilever3d".into()))?;
        let mut size = preset.default_size();
        layer!(size[0], file.problem.nx, cli.nx);
        layer!(size[1], file.problem.ny, cli.ny);
        layer!(size[2], file.problem.nz, cli.nz);
        if preset != Preset::Cantilever3d {
            size[2] = 0;
        }
        let mut problem = preset
            .build(size)
            .map_err(|e| config_err("problem", e.to_string()))?;

        let mut method = Method::Egp;
        layer!(method, file.optimizer.method, cli.method);
        layer!(problem.volume_fraction, file.problem.volume_fraction, cli.volume_fraction);

        let m = &mut problem.material;
        let fm = &file.material;
        layer!(m.young_modulus_solid, fm.young_modulus_solid);
        layer!(m.young_modulus_void, fm.young_modulus_void);
        layer!(m.poisson_ratio, fm.poisson_ratio);
        layer!(m.penalization, fm.penalization, cli.penalization);

        let f = &mut problem.filters;
        let ff = &file.filters;
        layer!(f.density_kind, ff.density_kind);
        layer!(f.density_radius, ff.density_radius, cli.density_radius);
        layer!(f.sensitivity_kind, ff.sensitivity_kind);
        layer!(f.sensitivity_radius, ff.sensitivity_radius, cli.sensitivity_radius);
        layer!(f.sigma_ratio, ff.sigma_ratio);
        layer!(f.oc_radius, ff.oc_radius, cli.oc_radius);
        layer!(f.oc_kind, ff.oc_kind);

        let o = &mut problem.optimizer;
        let fo = &file.optimizer;
        layer!(o.clip_multiplier, fo.clip_multiplier, cli.clip_multiplier);
        layer!(o.upper_threshold, fo.upper_threshold, cli.threshold);
        layer!(o.lower_threshold, fo.lower_threshold, cli.threshold);
        layer!(o.max_iterations, fo.max_iterations, cli.max_iterations);
        layer!(o.stop_tolerance, fo.stop_tolerance, cli.stop_tolerance);
        layer!(o.pipeline_order, fo.pipeline_order);
        layer!(o.oc_move_limit, fo.oc_move_limit);
        layer!(o.oc_damping, fo.oc_damping);

        problem
            .validate()
            .map_err(|e| config_err("parameters", e.to_string()))?;
        let resolved = ResolvedConfig {
            method,
            problem: ResolvedProblem {
                preset,
                nx: size[0],
                ny: size[1],
                nz: size[2],
                volume_fraction: problem.volume_fraction,
            },
            material: problem.material,
            filters: problem.filters,
            optimizer: problem.optimizer,
        };
        Ok((resolved, problem))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ConfigFile, CliError> {
        ConfigFile::parse(text, Path::new("t.toml"))
    }

    #[test]
    fn sections_parse() {
        let c = parse(
            "[problem]\npreset = \"cantilever3d\"\nnx = 12\n[filters]\ndensity_kind = \"morph_close\"\n\
             [optimizer]\nmethod = \"oc\"\npipeline_order = \"clip_then_filter\"\n",
        )
        .unwrap();
        assert_eq!(c.problem.preset, Some(Preset::Cantilever3d));
        assert_eq!(c.problem.nx, Some(12));
        assert_eq!(c.filters.density_kind, Some(DensityFilterKind::MorphClose));
        assert_eq!(c.optimizer.method, Some(Method::Oc));
        assert_eq!(c.optimizer.pipeline_order, Some(PipelineOrder::ClipThenFilter));
    }

    #[test]
    fn errors_name_line_and_field() {
        let err = parse("[problem]\nnx = 4\n\n[filters]\ndensity_radus = 2.0\n").unwrap_err();
        match err {
            CliError::Config { line, message, .. } => {
                assert_eq!(line, Some(5));
                assert!(message.contains("density_radus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let err = parse("[optimizer]\nmax_iterations = \"many\"\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: Some(2), .. }));
    }

    #[test]
    fn custom_needs_a_preset() {
        let err = ResolvedConfig::resolve(None, Some(&ConfigFile::default()), None, &Overrides::default())
            .unwrap_err();
        assert!(err.to_string().contains("problem.preset"));
    }

    #[test]
    fn threshold_override_sets_both_widths() {
        let cli = Overrides {
            threshold: Some(0.1),
            ..Overrides::default()
        };
        let (r, p) = ResolvedConfig::resolve(Some(Preset::Mbb), None, None, &cli).unwrap();
        assert_eq!(r.optimizer.upper_threshold, 0.1);
        assert_eq!(p.optimizer.lower_threshold, 0.1);
        assert_eq!(r.problem.nz, 0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cli = Overrides {
            threshold: Some(0.4),
            ..Overrides::default()
        };
        assert!(ResolvedConfig::resolve(Some(Preset::Mbb), None, None, &cli).is_err());
    }
}
