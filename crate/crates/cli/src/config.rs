use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use dsm_minmax::ntf::{BandSpec, DesignSpec, ZeroAssignment};
use dsm_minmax::sim::UniformQuantizer;

/// Settings shared by every subcommand. Each one may come from the command
/// line or from the `--config` file; the command line wins.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand the file was written for; must match when present.
    #[arg(skip)]
    pub subcommand: Option<String>,
    /// FIR order N of the loop filter.
    #[arg(long)]
    pub order: Option<usize>,
    /// Oversampling ratio; the band halfwidth is pi / OSR.
    #[arg(long)]
    pub osr: Option<f64>,
    /// H-infinity cap on each stage's NTF (`inf` for none).
    #[arg(long)]
    pub hinf: Option<f64>,
    /// Band center in cycles/sample; 0 selects lowpass.
    #[arg(long)]
    pub f0: Option<f64>,
    /// Place NTF zeros at the band centers.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub zeros: Option<bool>,
    /// Band centers in cycles/sample for a multi-band design.
    #[arg(long, value_delimiter = ',')]
    pub multiband: Option<Vec<f64>>,
    /// Halfwidth of each band in cycles/sample (default 1 / (2 OSR)).
    #[arg(long)]
    pub halfwidth: Option<f64>,
    /// Number of cascaded error-feedback stages.
    #[arg(long)]
    pub cascade: Option<usize>,
    /// Quantizer output level count (even).
    #[arg(long)]
    pub levels: Option<usize>,
    /// Quantizer half step.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Simulation length in samples.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test tone amplitude.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Test tone frequency in cycles/sample.
    #[arg(long)]
    pub tone: Option<f64>,
    /// Design file to read (default `<out_dir>/design.toml`).
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub sweep_lo_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sweep_hi_db: Option<f64>,
    #[arg(long)]
    pub sweep_step_db: Option<f64>,
}

impl RunConfig {
    /// Fills every unset field of `self` from `file`.
    pub fn or(self, file: RunConfig) -> RunConfig {
        RunConfig {
            subcommand: self.subcommand.or(file.subcommand),
            order: self.order.or(file.order),
            osr: self.osr.or(file.osr),
            hinf: self.hinf.or(file.hinf),
            f0: self.f0.or(file.f0),
            zeros: self.zeros.or(file.zeros),
            multiband: self.multiband.or(file.multiband),
            halfwidth: self.halfwidth.or(file.halfwidth),
            cascade: self.cascade.or(file.cascade),
            levels: self.levels.or(file.levels),
            delta: self.delta.or(file.delta),
            length: self.length.or(file.length),
            out_dir: self.out_dir.or(file.out_dir),
            seed: self.seed.or(file.seed),
            amplitude: self.amplitude.or(file.amplitude),
            tone: self.tone.or(file.tone),
            design: self.design.or(file.design),
            sweep_lo_db: self.sweep_lo_db.or(file.sweep_lo_db),
            sweep_hi_db: self.sweep_hi_db.or(file.sweep_hi_db),
            sweep_step_db: self.sweep_step_db.or(file.sweep_step_db),
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    pub fn resolve(self, subcommand: &str) -> Result<Settings, String> {
        if let Some(s) = &self.subcommand {
            if s != subcommand {
                return Err(format!("config file is for `{s}`, not `{subcommand}`"));
            }
        }
        let out_dir = self.out_dir.unwrap_or_else(|| PathBuf::from("."));
        let s = Settings {
            order: self.order.unwrap_or(32),
            osr: self.osr.unwrap_or(32.0),
            hinf: self.hinf.unwrap_or(1.5),
            f0: self.f0.unwrap_or(0.0),
            zeros: self.zeros.unwrap_or(false),
            multiband: self.multiband,
            halfwidth: self.halfwidth,
            cascade: self.cascade,
            levels: self.levels.unwrap_or(4),
            delta: self.delta.unwrap_or(0.5),
            length: self.length.unwrap_or(1 << 16),
            seed: self.seed.unwrap_or(0),
            amplitude: self.amplitude.unwrap_or(0.5),
            tone: self.tone.unwrap_or(0.0325 / (2.0 * PI)),
            design: self.design.unwrap_or_else(|| out_dir.join("design.toml")),
            out_dir,
            sweep_lo_db: self.sweep_lo_db.unwrap_or(-80.0),
            sweep_hi_db: self.sweep_hi_db.unwrap_or(0.0),
            sweep_step_db: self.sweep_step_db.unwrap_or(1.0),
        };
        s.validate()?;
        Ok(s)
    }
}

/// [`RunConfig`] with defaults applied and values checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub order: usize,
    pub osr: f64,
    pub hinf: f64,
    pub f0: f64,
    pub zeros: bool,
    pub multiband: Option<Vec<f64>>,
    pub halfwidth: Option<f64>,
    /// Unset means "as stored in the design file" (1 when designing).
    pub cascade: Option<usize>,
    pub levels: usize,
    pub delta: f64,
    pub length: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub amplitude: f64,
    pub tone: f64,
    pub design: PathBuf,
    pub sweep_lo_db: f64,
    pub sweep_hi_db: f64,
    pub sweep_step_db: f64,
}

fn cycles(name: &str, v: f64) -> Result<(), String> {
    if (0.0..0.5).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} must lie in [0, 0.5) cycles/sample, got {v}"))
    }
}

impl Settings {
    fn validate(&self) -> Result<(), String> {
        if self.order == 0 {
            return Err("order must be at least 1".into());
        }
        if !(self.osr.is_finite() && self.osr > 1.0) {
            return Err(format!("osr must exceed 1, got {}", self.osr));
        }
        if !(self.hinf > 1.0) {
            return Err(format!("hinf must exceed 1, got {}", self.hinf));
        }
        cycles("f0", self.f0)?;
        if let Some(bands) = &self.multiband {
            if bands.is_empty() {
                return Err("multiband needs at least one center".into());
            }
            for f in bands {
                cycles("multiband center", *f)?;
            }
        }
        if let Some(h) = self.halfwidth {
            if !(h > 0.0 && h < 0.5) {
                return Err(format!("halfwidth must lie in (0, 0.5) cycles/sample, got {h}"));
            }
        }
        if self.cascade == Some(0) {
            return Err("cascade must be at least 1".into());
        }
        UniformQuantizer::new(self.delta, self.levels).map_err(|e| e.to_string())?;
        if self.length == 0 {
            return Err("zero-length input: length must be at least 1".into());
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(format!("amplitude must be finite and nonnegative, got {}", self.amplitude));
        }
        cycles("tone", self.tone)?;
        if !(self.sweep_step_db > 0.0 && self.sweep_hi_db >= self.sweep_lo_db) {
            return Err("sweep range needs sweep_lo_db <= sweep_hi_db and a positive step".into());
        }
        Ok(())
    }

    pub fn quantizer(&self) -> UniformQuantizer {
        UniformQuantizer::new(self.delta, self.levels).expect("validated")
    }

    /// Band halfwidth in radians/sample.
    fn omega_halfwidth(&self) -> f64 {
        match self.halfwidth {
            Some(h) => 2.0 * PI * h,
            None => PI / self.osr,
        }
    }

    /// Test tone in radians/sample.
    pub fn tone_omega(&self) -> f64 {
        2.0 * PI * self.tone
    }

    pub fn design_spec(&self) -> Result<DesignSpec, String> {
        let hw = self.omega_halfwidth();
        let centers: Vec<f64> = match &self.multiband {
            Some(c) => c.iter().map(|f| 2.0 * PI * f).collect(),
            None => vec![2.0 * PI * self.f0],
        };
        let bands = centers
            .iter()
            .map(|c| BandSpec::new(*c, hw))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let mut spec = DesignSpec::lowpass(self.order, hw).map_err(|e| e.to_string())?;
        spec.bands = bands;
        if self.hinf.is_finite() {
            spec = spec.with_cap(self.hinf);
        }
        if self.zeros {
            for c in &centers {
                spec = spec.with_zero(ZeroAssignment::new(*c, 1).map_err(|e| e.to_string())?);
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_call() {
        let s = RunConfig::default().resolve("design").unwrap();
        assert_eq!((s.order, s.osr, s.hinf, s.f0, s.zeros), (32, 32.0, 1.5, 0.0, false));
        let spec = s.design_spec().unwrap();
        assert_eq!(spec.bands, vec![BandSpec::lowpass(PI / 32.0).unwrap()]);
        assert_eq!(spec.hinf_cap, Some(1.5));
        assert!((s.tone_omega() - 0.0325).abs() < 1e-15);
    }

    #[test]
    fn flags_override_file() {
        let cli = RunConfig {
            order: Some(8),
            ..Default::default()
        };
        let file = RunConfig {
            order: Some(16),
            osr: Some(64.0),
            ..Default::default()
        };
        let s = cli.or(file).resolve("design").unwrap();
        assert_eq!((s.order, s.osr), (8, 64.0));
    }

    #[test]
    fn multiband_centers_and_halfwidth_are_cycles() {
        let cfg = RunConfig {
            multiband: Some(vec![0.125, 0.25, 0.375]),
            halfwidth: Some(0.03125),
            zeros: Some(true),
            ..Default::default()
        };
        let spec = cfg.resolve("design").unwrap().design_spec().unwrap();
        assert_eq!(spec.bands.len(), 3);
        assert!((spec.bands[1].center - PI / 2.0).abs() < 1e-15);
        assert!((spec.bands[1].halfwidth - PI / 16.0).abs() < 1e-15);
        assert_eq!(spec.zeros.len(), 3);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            RunConfig { length: Some(0), ..Default::default() },
            RunConfig { f0: Some(0.5), ..Default::default() },
            RunConfig { levels: Some(3), ..Default::default() },
            RunConfig { hinf: Some(0.9), ..Default::default() },
            RunConfig { subcommand: Some("sweep".into()), ..Default::default() },
        ];
        for b in bad {
            assert!(b.resolve("design").is_err());
        }
    }

    #[test]
    fn file_rejects_unknown_keys() {
        assert!(toml::from_str::<RunConfig>("order = 4\nspeed = 1").is_err());
        let c: RunConfig = toml::from_str("order = 4\nmultiband = [0.1, 0.2]\nzeros = true").unwrap();
        assert_eq!(c.multiband, Some(vec![0.1, 0.2]));
    }
}
