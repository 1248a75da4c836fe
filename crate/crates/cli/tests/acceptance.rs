//! One test per acceptance criterion. Each prints a single
//! `PASS criterion N: ...` or `FAIL criterion N: ...` line, then asserts.
//! Run with `cargo test -p sounder-cli --test acceptance -- --nocapture`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sounder_core::campaign::process::CIRS_FILE;
use sounder_core::campaign::{read_cirs, read_results, MeasurementRecord};
use sounder_core::chanmodel::{
    apply_channel, fe2r_pl, fspl, two_ray_lengths, wavelength, ChannelRealization, ChannelTap,
    ImpairmentSpec,
};
use sounder_core::geometry::link_geometry;
use sounder_core::metrics::{delay_moments, fit_path_loss, PathLossSample};
use sounder_core::sounder::{
    derotate, estimate_cfo, extract_cir, CirConfig, CirEstimate, Correlator, IqSnapshot,
    LinkBudget,
};
use sounder_core::waveform::{build_frame, generate_mseq, reference_correlator, MSequenceSpec};
use sounder_core::{Real, SPEED_OF_LIGHT};

const FS: f64 = 50e6;
const FC: f64 = 3.5e9;

/// Prints the verdict line, then fails the test if the criterion or its
/// time budget was missed.
fn verdict(n: &str, pass: bool, detail: String, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    println!(
        "{} criterion {n}: {detail} [{:.2} s, budget {} s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {n} not met: {detail}");
    assert!(in_time, "criterion {n} over its time budget: {elapsed:?} > {budget:?}");
}

fn frame(periods: usize) -> Vec<Complex<f64>> {
    let seq = generate_mseq(&MSequenceSpec::default()).unwrap();
    build_frame::<f64>(&seq, periods, 1).unwrap().to_iq(1.0)
}

fn correlator(repeats: usize) -> Correlator<f64> {
    let seq = generate_mseq(&MSequenceSpec::default()).unwrap();
    Correlator::new(reference_correlator(&seq, repeats).unwrap())
}

/// Real-gain taps given as (dB, ns).
fn channel(taps: &[(f64, f64)]) -> ChannelRealization<f64> {
    ChannelRealization::new(
        taps.iter()
            .map(|&(db, ns)| ChannelTap::new(10f64.powf(db / 20.0), 0.0, ns * 1e-9))
            .collect(),
        0,
    )
    .unwrap()
}

/// Noise density giving `snr_db` per sample against the channel's total power
/// for a unit-power transmit signal.
fn psd_for_snr(ch: &ChannelRealization<f64>, snr_db: f64) -> f64 {
    ch.total_power().to_db() - snr_db - FS.to_db()
}

fn bin() -> f64 {
    1.0 / FS
}

#[test]
fn criterion_1_mseq_identity() {
    let t = Instant::now();
    let seq = generate_mseq(&MSequenceSpec::default()).unwrap();
    let acf = seq.periodic_autocorrelation();
    let pass = seq.len() == 4095 && acf[0] == 4095 && acf[1..].iter().all(|&v| v == -1);
    let off: Vec<_> = acf[1..].iter().filter(|&&v| v != -1).take(3).collect();
    verdict(
        "1",
        pass,
        format!("length {}, R[0] = {}, off-peak values other than -1: {off:?}", seq.len(), acf[0]),
        t,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_2_processing_gain() {
    let t = Instant::now();
    let tx = frame(20);
    let unit = channel(&[(0.0, 0.0)]);
    // 0 dB per-sample input SNR; output SNR is the coherent peak over the mean
    // off-peak noise power.
    let snr_in_db = 0.0;
    let imp = ImpairmentSpec { noise_psd_dbm_hz: Some(psd_for_snr(&unit, snr_in_db)), ..Default::default() };
    let trials = 12;
    let mut lines = Vec::new();
    let mut pass = true;
    for (repeats, expected) in [(1usize, 36.12), (4, 42.14), (8, 45.15)] {
        let corr = correlator(repeats);
        let mut peak = Complex::new(0.0, 0.0);
        let mut noise = 0.0;
        let mut bins = 0usize;
        for seed in 0..trials {
            let rx = apply_channel(&tx, &unit, &imp, FS, 1000 + seed).unwrap();
            let prof = corr.correlate(&IqSnapshot::new(rx, FS, FC, 0), repeats).unwrap();
            peak += prof.values[0];
            noise += prof.values[1..].iter().map(|z| z.norm_sqr()).sum::<f64>();
            bins += prof.values.len() - 1;
        }
        let peak = peak / trials as f64;
        let gain = (peak.norm_sqr() / (noise / bins as f64)).to_db() - snr_in_db;
        pass &= (gain - expected).abs() <= 0.5;
        lines.push(format!("R={repeats}: {gain:.2} dB (expect {expected} ±0.5)"));
    }
    verdict("2", pass, lines.join(", "), t, Duration::from_secs(30));
}

/// Checks a recovered CIR against the 3-tap loopback channel.
fn check_three_taps(cir: &CirEstimate<f64>) -> (bool, String) {
    let expected = [(0.0, 0usize), (-6.0, 5), (-15.0, 20)];
    let lags: Vec<usize> = cir.taps.iter().map(|t| (t.delay / bin()).round() as usize).collect();
    let on_grid = cir
        .taps
        .iter()
        .all(|t| (t.delay / bin() - (t.delay / bin()).round()).abs() < 1e-9);
    let mut pass = cir.taps.len() == 3 && on_grid;
    let mut worst: f64 = 0.0;
    if pass {
        for ((tap, &got), &(db, lag)) in cir.taps.iter().zip(&lags).zip(&expected) {
            pass &= got == lag;
            worst = worst.max((tap.rel_power_db - db).abs());
        }
        pass &= worst <= 0.5;
    }
    let delays_ns: Vec<f64> = cir.taps.iter().map(|t| t.delay * 1e9).collect();
    (
        pass,
        format!(
            "{} taps at {delays_ns:?} ns, worst power error {worst:.3} dB, -25 dB tap {}",
            cir.taps.len(),
            if cir.taps.len() == 3 { "excluded" } else { "not excluded" }
        ),
    )
}

fn loopback_channel() -> ChannelRealization<f64> {
    channel(&[(0.0, 0.0), (-6.0, 100.0), (-15.0, 400.0), (-25.0, 1000.0)])
}

#[test]
fn criterion_3_loopback_cir() {
    let t = Instant::now();
    let ch = loopback_channel();
    let imp = ImpairmentSpec {
        noise_psd_dbm_hz: Some(psd_for_snr(&ch, 20.0)),
        cfo_hz: 0.0,
        timing_offset_samples: 1234,
    };
    let rx = apply_channel(&frame(20), &ch, &imp, FS, 3).unwrap();
    let prof = correlator(8).correlate(&IqSnapshot::new(rx, FS, FC, 0), 8).unwrap();
    let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
    let (pass, detail) = check_three_taps(&cir);
    verdict("3", pass, detail, t, Duration::from_secs(10));
}

#[test]
fn criterion_4_rms_delay_spread() {
    let t = Instant::now();
    let (_, single) = delay_moments::<f64>(&[0.0], &[1.0]).unwrap();
    let (_, equal) = delay_moments::<f64>(&[0.0, 100e-9], &[1.0, 1.0]).unwrap();
    let (_, unequal) = delay_moments(&[0.0, 100e-9], &[1.0, 10f64.powf(-0.6)]).unwrap();
    // Hand computation: p = 1, 0.2512; mean = 25.12/1.2512 = 20.076 ns;
    // second moment = 2512/1.2512 = 2007.6 ns^2; sigma = sqrt(2007.6 - 403.05).
    let oracle = (2007.6f64 - 20.076f64.powi(2)).sqrt();
    let pass = single == 0.0
        && (equal * 1e9 - 50.0).abs() <= 0.01
        && (unequal * 1e9 - 40.06).abs() <= 0.05
        && (unequal * 1e9 - oracle).abs() <= 0.05;
    verdict(
        "4",
        pass,
        format!(
            "single {single} s, equal {:.4} ns, 0/-6 dB {:.4} ns (hand oracle {oracle:.3})",
            equal * 1e9,
            unequal * 1e9
        ),
        t,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_5_path_loss_fit() {
    let t = Instant::now();
    let (eta, pl0) = (2.166, 34.650);
    let n = 3333;
    let d = |i: usize| 85.0 + 1000.0 * i as f64 / (n - 1) as f64;
    let clean: Vec<_> = (0..n)
        .map(|i| PathLossSample { distance: d(i), pl_db: pl0 + 10.0 * eta * d(i).log10(), time_ns: i as i64 })
        .collect();
    let exact = fit_path_loss(&clean, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shadow = Normal::new(0.0, 2.0).unwrap();
    let noisy: Vec<_> = clean
        .iter()
        .map(|s| PathLossSample { pl_db: s.pl_db + shadow.sample(&mut rng), ..*s })
        .collect();
    let shadowed = fit_path_loss(&noisy, 1.0).unwrap();
    let pass = (exact.eta - eta).abs() < 1e-9
        && (exact.pl0_db - pl0).abs() < 1e-9
        && (shadowed.eta - eta).abs() < 0.05;
    verdict(
        "5",
        pass,
        format!(
            "noiseless |Δη| = {:.1e}, |ΔPL0| = {:.1e} dB; 2 dB shadowing |Δη| = {:.4}",
            (exact.eta - eta).abs(),
            (exact.pl0_db - pl0).abs(),
            (shadowed.eta - eta).abs()
        ),
        t,
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_6_reference_models() {
    let t = Instant::now();
    let lambda = wavelength(FC);
    let at_1m = fspl(1.0, lambda).unwrap();
    let mut worst: f64 = 0.0;
    for &(d, h_t, h_r) in &[(1.0, 1.0, 1.0), (85.0, 100.0, 3.0), (1085.0, 100.0, 100.0), (1e5, 30.0, 2.0)] {
        let two_ray = fe2r_pl(d, h_t, h_r, lambda, Complex::new(0.0, 0.0)).unwrap();
        // Γ = 0 leaves only the direct ray, whose length includes the height offset.
        let (l_d, _) = two_ray_lengths(d, h_t, h_r);
        worst = worst.max((two_ray - fspl(l_d, lambda).unwrap()).abs());
    }
    let pass = (at_1m - 43.33).abs() <= 0.01 && worst <= 1e-9;
    verdict(
        "6",
        pass,
        format!("FSPL(1 m) = {at_1m:.4} dB; FE2R(Γ=0) - FSPL max {worst:.1e} dB"),
        t,
        Duration::from_secs(1),
    );
}

/// Same criterion, slope part. Uses the campaign's 100 m / 100 m antenna
/// heights; see the decisions ledger for why this does not reach 40 dB/decade.
#[test]
fn criterion_6_fe2r_slope() {
    let t = Instant::now();
    let lambda = wavelength(FC);
    let gamma = Complex::new(-1.0, 0.0);
    let (h_t, h_r) = (100.0, 100.0);
    let slope = fe2r_pl(100e3, h_t, h_r, lambda, gamma).unwrap() - fe2r_pl(10e3, h_t, h_r, lambda, gamma).unwrap();
    let breakpoint = 4.0 * std::f64::consts::PI * h_t * h_r / lambda;
    verdict(
        "6",
        (slope - 40.0).abs() <= 1.0,
        format!(
            "FE2R(Γ=-1) slope 10-100 km at {h_t}/{h_r} m = {slope:.2} dB/decade (expect 40 ±1; two-ray breakpoint at {:.0} km)",
            breakpoint / 1e3
        ),
        t,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_7_cfo_loop() {
    let t = Instant::now();
    let ch = loopback_channel();
    let imp = ImpairmentSpec {
        noise_psd_dbm_hz: Some(psd_for_snr(&ch, 20.0)),
        cfo_hz: 100.0,
        timing_offset_samples: 1234,
    };
    let rx = apply_channel(&frame(20), &ch, &imp, FS, 7).unwrap();
    let snap = IqSnapshot::new(rx, FS, FC, 0);
    let corr = correlator(8);
    let cfo = estimate_cfo(&corr, &snap, 13.0).unwrap();
    let aligned = derotate(&snap, cfo);
    let prof = corr.correlate(&aligned, 8).unwrap();
    let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
    let (cir_ok, detail) = check_three_taps(&cir);
    verdict(
        "7",
        (cfo - 100.0).abs() <= 1.0 && cir_ok,
        format!("estimated {cfo:.3} Hz for 100 Hz injected; after derotation {detail}"),
        t,
        Duration::from_secs(10),
    );
}

fn chansound(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_chansound")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "chansound {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn criterion_8_end_to_end_campaign() {
    end_to_end(10, Duration::from_secs(120));
}

/// Full-rate run of all 3334 snapshots (about 2.2 GB per record on disk).
#[test]
#[ignore = "full-rate campaign; run with --ignored"]
fn criterion_8_end_to_end_campaign_full_rate() {
    end_to_end(1, Duration::from_secs(20 * 60));
}

fn end_to_end(decimate: usize, budget: Duration) {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (fs_rec, fs_res) = (tmp.path().join("fs"), tmp.path().join("fs_res"));
    let decimate = decimate.to_string();
    let common = ["--preset", "a2a", "--decimate", &decimate, "--seed", "8"];
    chansound(&[&["simulate"][..], &common, &["--channel", "free-space", "--out", path(&fs_rec)]].concat());
    chansound(&["process", "--record", path(&fs_rec), "--out", path(&fs_res)]);
    let rows = read_results(&fs_res).unwrap();
    let samples: Vec<_> = rows
        .iter()
        .map(|r| PathLossSample { distance: r.distance_m, pl_db: r.pl_db, time_ns: r.time_ns })
        .collect();
    let fit = fit_path_loss(&samples, 1.0).unwrap();
    let eta_ok = (fit.eta - 2.0).abs() <= 0.02;

    let (tr_rec, tr_res) = (tmp.path().join("fe2r"), tmp.path().join("fe2r_res"));
    chansound(&[&["simulate"][..], &common, &["--channel", "fe2r", "--out", path(&tr_rec)]].concat());
    chansound(&["process", "--record", path(&tr_rec), "--out", path(&tr_res)]);
    let record = MeasurementRecord::open(&tr_rec).unwrap();
    let cirs = read_cirs(&tr_res.join(CIRS_FILE)).unwrap();
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    let mut trace = Vec::new();
    for c in &cirs {
        let g = link_geometry(&record.tx_log.at(c.time_ns).unwrap(), &record.rx_log.at(c.time_ns).unwrap()).unwrap();
        let (l_d, l_r) = two_ray_lengths(g.ground_distance, g.tx_alt, g.rx_alt);
        let expected_ns = (l_r - l_d) / SPEED_OF_LIGHT * 1e9;
        match c.taps.get(1) {
            Some(tap) => {
                worst = worst.max((tap.delay_ns - expected_ns).abs());
                trace.push(tap.delay_ns);
            }
            None => missing += 1,
        }
    }
    let all_snapshots = cirs.len() == record.len() && missing == 0;
    let shrinking = trace.first() > trace.last();
    let delay_ok = all_snapshots && worst <= 20.0 && shrinking;
    verdict(
        "8",
        eta_ok && delay_ok,
        format!(
            "free-space η = {:.4} over {} snapshots (expect 2.00 ±0.02); FE2R reflection delay worst error {worst:.1} ns \
             over {}/{} snapshots ({missing} without a reflection), {:.0} ns -> {:.0} ns",
            fit.eta,
            rows.len(),
            cirs.len() - missing,
            record.len(),
            trace.first().copied().unwrap_or(f64::NAN),
            trace.last().copied().unwrap_or(f64::NAN)
        ),
        t,
        budget,
    );
}

fn checksum(stdout: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("sha256 "))
        .expect("simulate prints a checksum")
        .to_string()
}

#[test]
fn criterion_9_determinism() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut sums = Vec::new();
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let rec = tmp.path().join(format!("rec_{run}"));
        let res = tmp.path().join(format!("res_{run}"));
        let out = chansound(&["simulate", "--preset", "a2g", "--decimate", "10", "--seed", "42", "--out", path(&rec)]);
        sums.push(checksum(&out));
        chansound(&["process", "--record", path(&rec), "--out", path(&res)]);
        tables.push((
            std::fs::read(res.join("results.csv")).unwrap(),
            std::fs::read(res.join(CIRS_FILE)).unwrap(),
            std::fs::read(rec.join("tx_log.csv")).unwrap(),
        ));
    }
    let pass = sums[0] == sums[1] && tables[0] == tables[1];
    verdict(
        "9",
        pass,
        format!(
            "IQ sha256 {} vs {}; results, CIR and log files {}",
            &sums[0][..16],
            &sums[1][..16],
            if tables[0] == tables[1] { "identical" } else { "differ" }
        ),
        t,
        Duration::from_secs(120),
    );
}
