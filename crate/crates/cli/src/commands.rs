use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use dsm_minmax::io::{self, OutputSet};
use dsm_minmax::lti::{band_max, freq_response, hinf_norm, mag_to_db, FirFilter};
use dsm_minmax::metrics::{db_range, snap_to_bin, snr_pp, snr_sweep, sqnr, SweepSetup};
use dsm_minmax::ntf::{design, BandSpec, DesignResult, ZeroAssignment};
use dsm_minmax::sim::{check_certificates, random_input, simulate_cascade_with, sine, CertificateCheck};
use dsm_minmax::stability::{effective_loop_filter, input_bound, stability_report, StabilityReport};
use dsm_minmax::Error;

use crate::config::Settings;

/// Points of the exported NTF response.
const RESPONSE_POINTS: usize = 4096;
/// Samples of the randomized certificate run in `verify`.
const VERIFY_SAMPLES: usize = 4096;
/// Lee threshold used when no cap was given.
const LEE_DEFAULT: f64 = 1.5;

pub enum Failure {
    Usage(String),
    Infeasible(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Infeasible(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_) => Failure::Infeasible(e.to_string()),
            Error::NumericalTrouble(_) | Error::Verification(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Contents of `design.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub cascade: usize,
    pub zeros: Vec<ZeroAssignment>,
    pub design: DesignResult,
}

impl DesignFile {
    fn stage_cascade(&self, s: &Settings) -> usize {
        s.cascade.unwrap_or(self.cascade)
    }

    fn cascaded(&self, m: usize) -> FirFilter {
        self.design.ntf.pow(m)
    }

    /// Lee threshold for the cascaded NTF.
    fn lee_threshold(&self, m: usize) -> f64 {
        self.design.hinf_cap.map_or(LEE_DEFAULT, |c| c.powi(m as i32))
    }
}

fn load_design(s: &Settings) -> Result<DesignFile, Failure> {
    let text = std::fs::read_to_string(&s.design)
        .map_err(|e| Failure::Usage(format!("cannot read design file {}: {e}", s.design.display())))?;
    io::from_toml(&text).map_err(|e| Failure::Usage(format!("bad design file {}: {e}", s.design.display())))
}

fn report(file: &DesignFile, s: &Settings, m: usize) -> Result<StabilityReport, Failure> {
    let q = s.quantizer().spec()?;
    Ok(stability_report(
        &FirFilter::identity(),
        &file.design.r,
        m,
        &q,
        s.amplitude,
        file.lee_threshold(m),
    )?)
}

fn band_of_tone(bands: &[BandSpec], omega: f64) -> Result<BandSpec, Failure> {
    bands
        .iter()
        .find(|b| (b.lo().max(0.0)..=b.hi().min(PI)).contains(&omega))
        .copied()
        .ok_or_else(|| Failure::Usage(format!("tone at {omega} rad/sample lies outside every design band")))
}

fn clipped(b: &BandSpec) -> (f64, f64) {
    (b.lo().max(0.0), b.hi().min(PI))
}

pub fn cmd_design(s: &Settings) -> Outcome {
    let spec = s.design_spec().map_err(Failure::Usage)?;
    let m = s.cascade.unwrap_or(1);
    let result = design(&spec)?;
    let file = DesignFile {
        cascade: m,
        zeros: spec.zeros.clone(),
        design: result,
    };
    let rep = report(&file, s, m)?;
    let cascaded = file.cascaded(m);
    let mut out = OutputSet::new();
    out.add(s.out_dir.join("design.toml"), io::to_toml(&file)?);
    out.add(s.out_dir.join("ntf_response.csv"), io::response_csv(&cascaded, RESPONSE_POINTS)?);
    out.add(s.out_dir.join("stability.toml"), io::to_toml(&rep)?);
    out.commit()?;

    let d = &file.design;
    println!("status {:?}, {} iterations, gap {:.3e}", d.status, d.iterations, d.gap);
    for b in &d.bands {
        let (lo, hi) = clipped(&b.band);
        println!(
            "band [{lo:.6}, {hi:.6}]: gamma {:.4} dB, grid max {:.4} dB, cascaded max {:.4} dB",
            mag_to_db(b.gamma),
            mag_to_db(b.grid_max),
            mag_to_db(band_max(&cascaded, lo, hi)?)
        );
    }
    println!("||1+R||_inf {:.6}, cascaded {:.6}", d.hinf_norm, hinf_norm(&cascaded));
    println!("input bound {:.6} ({:.3} dB)", rep.u_max, mag_to_db(rep.u_max));
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    stages: usize,
    levels: usize,
    delta: f64,
    length: usize,
    amplitude: f64,
    tone_omega: f64,
    band_lo: f64,
    band_hi: f64,
    max_ntf_db: f64,
    snr_pp_db: f64,
    sqnr_db: f64,
    overloads: usize,
    input_bound: f64,
}

pub fn cmd_simulate(s: &Settings) -> Outcome {
    let file = load_design(s)?;
    let m = file.stage_cascade(s);
    let q = s.quantizer();
    let omega = snap_to_bin(s.tone_omega(), s.length);
    let band = band_of_tone(&file.design.bands.iter().map(|b| b.band).collect::<Vec<_>>(), omega)?;
    let (lo, hi) = clipped(&band);
    let u = sine(s.amplitude, omega, s.length);
    let p = FirFilter::identity();
    let tr = simulate_cascade_with(&p, &file.design.r, m, &q, &u, false)?;
    let spec = dsm_minmax::metrics::spectrum(&tr.y, dsm_minmax::metrics::Window::Hann)?;
    let reff = effective_loop_filter(&file.design.r, m)?;
    let summary = SimulateSummary {
        stages: m,
        levels: q.levels,
        delta: q.delta,
        length: s.length,
        amplitude: s.amplitude,
        tone_omega: omega,
        band_lo: lo,
        band_hi: hi,
        max_ntf_db: mag_to_db(band_max(&file.cascaded(m), lo, hi)?),
        snr_pp_db: snr_pp(&tr.y, &u, lo, hi)?,
        sqnr_db: sqnr(&tr.y, omega, lo, hi)?,
        overloads: tr.overload_count(),
        input_bound: input_bound(&p, &reff, &q.spec()?)?,
    };
    let mut out = OutputSet::new();
    out.add(s.out_dir.join("trace.csv"), io::trace_csv(&tr)?);
    out.add(s.out_dir.join("spectrum.csv"), io::spectrum_csv(&spec)?);
    out.add(s.out_dir.join("simulate.toml"), io::to_toml(&summary)?);
    out.commit()?;
    println!(
        "max NTF {:.2} dB, SNR_pp {:.2} dB, SQNR {:.2} dB, {} overloads",
        summary.max_ntf_db, summary.snr_pp_db, summary.sqnr_db, summary.overloads
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    stages: usize,
    points: usize,
    peak_snr_db: f64,
    peak_amp_db: f64,
    bound: f64,
    bound_db: f64,
}

pub fn cmd_sweep(s: &Settings) -> Outcome {
    let file = load_design(s)?;
    let m = file.stage_cascade(s);
    let omega = snap_to_bin(s.tone_omega(), s.length);
    let band = band_of_tone(&file.design.bands.iter().map(|b| b.band).collect::<Vec<_>>(), omega)?;
    let (lo, hi) = clipped(&band);
    let setup = SweepSetup {
        p: FirFilter::identity(),
        r: file.design.r.clone(),
        stages: m,
        quantizer: s.quantizer(),
        omega,
        len: s.length,
        lo,
        hi,
    };
    let amps = db_range(s.sweep_lo_db, s.sweep_hi_db, s.sweep_step_db)?;
    let sw = snr_sweep(&setup, &amps)?;
    let summary = SweepSummary {
        stages: m,
        points: amps.len(),
        peak_snr_db: sw.peak_snr,
        peak_amp_db: mag_to_db(sw.peak_amplitude),
        bound: sw.bound,
        bound_db: mag_to_db(sw.bound),
    };
    let mut out = OutputSet::new();
    out.add(s.out_dir.join("sweep.csv"), io::sweep_csv(&sw)?);
    out.add(s.out_dir.join("sweep.toml"), io::to_toml(&summary)?);
    out.commit()?;
    println!(
        "peak SNR {:.2} dB at {:.1} dB; stability bound {:.4} ({:.3} dB)",
        summary.peak_snr_db, summary.peak_amp_db, summary.bound, summary.bound_db
    );
    Ok(())
}

pub fn cmd_stability(s: &Settings) -> Outcome {
    let file = load_design(s)?;
    let m = file.stage_cascade(s);
    let rep = report(&file, s, m)?;
    io::write_atomic(&s.out_dir.join("stability.toml"), io::to_toml(&rep)?.as_bytes())?;
    println!(
        "input bound {:.6} ({:.3} dB); ||r||_1 {:.4}; Lee {:.4} ({}); l1 test {}; H-inf test {}",
        rep.u_max,
        mag_to_db(rep.u_max),
        rep.l1_r,
        rep.lee_value,
        if rep.lee_passes { "pass" } else { "fail" },
        rep.l1_sufficient,
        rep.hinf_sufficient
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct BandCheck {
    lo: f64,
    hi: f64,
    gamma: f64,
    grid_max: f64,
    ok: bool,
}

#[derive(Debug, Serialize)]
struct ZeroCheck {
    freq: f64,
    magnitude: f64,
    ok: bool,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    passed: bool,
    hinf_norm: f64,
    hinf_ok: bool,
    bands: Vec<BandCheck>,
    zeros: Vec<ZeroCheck>,
    input_bound: f64,
    certificate: Option<CertificateCheck>,
}

pub fn cmd_verify(s: &Settings) -> Outcome {
    let file = load_design(s)?;
    let d = &file.design;
    let m = file.stage_cascade(s);
    let bands: Vec<BandCheck> = d
        .bands
        .iter()
        .map(|b| {
            let (lo, hi) = clipped(&b.band);
            let grid_max = band_max(&d.ntf, lo, hi)?;
            Ok(BandCheck {
                lo,
                hi,
                gamma: b.gamma,
                grid_max,
                ok: grid_max <= b.gamma * (1.0 + 1e-3),
            })
        })
        .collect::<Result<_, Error>>()?;
    let zeros: Vec<ZeroCheck> = file
        .zeros
        .iter()
        .map(|z| {
            let magnitude = freq_response(&d.ntf, z.freq)?.norm();
            Ok(ZeroCheck {
                freq: z.freq,
                magnitude,
                ok: magnitude < 1e-6,
            })
        })
        .collect::<Result<_, Error>>()?;
    let hinf = hinf_norm(&d.ntf);
    let hinf_ok = d.hinf_cap.is_none_or(|c| hinf <= c * (1.0 + 1e-3));
    let q = s.quantizer();
    let p = FirFilter::identity();
    let bound = input_bound(&p, &effective_loop_filter(&d.r, m)?, &q.spec()?)?;
    let certificate = if bound > 0.0 {
        let u = random_input(bound, s.length.min(VERIFY_SAMPLES), s.seed)?;
        Some(check_certificates(&p, &d.r, m, &q, &u)?)
    } else {
        None
    };
    let passed = hinf_ok
        && bands.iter().all(|b| b.ok)
        && zeros.iter().all(|z| z.ok)
        && certificate.as_ref().is_none_or(|c| c.holds());
    let rep = VerifyReport {
        passed,
        hinf_norm: hinf,
        hinf_ok,
        bands,
        zeros,
        input_bound: bound,
        certificate,
    };
    io::write_atomic(&s.out_dir.join("verify.toml"), io::to_toml(&rep)?.as_bytes())?;
    if passed {
        println!("verification passed");
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "verification failed; see {}",
            s.out_dir.join("verify.toml").display()
        )))
    }
}
