//! The N = 32, OSR 32 lowpass modulator with two cascaded stages.

use std::f64::consts::PI;
use std::sync::OnceLock;

use dsm_minmax::lti::{mag_to_db, FirFilter};
use dsm_minmax::metrics::{db_range, snap_to_bin, snr_sweep, SweepSetup};
use dsm_minmax::ntf::{design, DesignSpec};
use dsm_minmax::sim::UniformQuantizer;

const LEN: usize = 1 << 16;
const BAND: f64 = PI / 32.0;

fn loop_filter() -> &'static FirFilter {
    static R: OnceLock<FirFilter> = OnceLock::new();
    R.get_or_init(|| {
        design(&DesignSpec::lowpass(32, BAND).unwrap().with_cap(1.5f64.sqrt()))
            .unwrap()
            .r
    })
}

fn quantizer() -> UniformQuantizer {
    UniformQuantizer::new(0.5, 4).unwrap()
}

#[test]
fn small_signal_snr_grows_one_db_per_db() {
    let setup = SweepSetup {
        p: FirFilter::identity(),
        r: loop_filter().clone(),
        stages: 2,
        quantizer: quantizer(),
        omega: snap_to_bin(0.0325, LEN),
        len: LEN,
        lo: 0.0,
        hi: BAND,
    };
    let probe = snr_sweep(&setup, &[1.0]).unwrap();
    let amps = db_range(-80.0, mag_to_db(probe.bound / 2.0), 1.0).unwrap();
    let sw = snr_sweep(&setup, &amps).unwrap();
    let offsets: Vec<f64> = sw.snr_db.iter().zip(&sw.amplitudes_db).map(|(s, a)| s - a).collect();
    // unit-slope line with the best minimax intercept
    let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
    let mid = 0.5 * (hi + lo);
    for (a, o) in sw.amplitudes_db.iter().zip(&offsets) {
        assert!((o - mid).abs() <= 3.0, "at {a:.1} dB the SNR is {:.2} dB off the line", o - mid);
    }
}
