use ehrtok_core::reproduce::{main_fullshot_rows, transfer_rows};
use ehrtok_core::stats::{
    axis_wins, factorial_report, fit_lmm_reml, paired_differences, AurocTableRow, Axis, Formula, LABEL_TIME,
    TIME_TOKENS,
};
use ehrtok_core::tokenizer::{EventEncoding, TimeEncoding};
use nalgebra::{DMatrix, DVector};

/// Least squares on the main-effects design; equals the REML fixed
/// effects for a balanced layout.
fn ols(rows: &[AurocTableRow]) -> Vec<f64> {
    let n = rows.len();
    let mut x = DMatrix::zeros(n, 4);
    for (i, r) in rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = f64::from(u8::from(r.time_encoding == TimeEncoding::TimeTokens));
        x[(i, 2)] = f64::from(u8::from(r.event_encoding == EventEncoding::Joint));
        x[(i, 3)] = f64::from(u8::from(r.workflow));
    }
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.auroc));
    let qr = x.qr();
    qr.r().solve_upper_triangular(&(qr.q().transpose() * y)).unwrap().iter().copied().collect()
}

#[test]
fn balanced_fixtures_match_least_squares() {
    for rows in [main_fullshot_rows().unwrap(), transfer_rows().unwrap()] {
        let fit = fit_lmm_reml(&rows, Formula::MainEffects).unwrap();
        for (a, b) in fit.beta.iter().zip(ols(&rows)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn reported_time_effect_is_negated() {
    let rows = main_fullshot_rows().unwrap();
    let report = factorial_report(&rows, Formula::MainEffects).unwrap();
    let raw = report.fit.effect(TIME_TOKENS).unwrap();
    let shown = report.effect(LABEL_TIME).unwrap();
    assert_eq!(shown.estimate, -raw.estimate);
    assert_eq!(shown.ci95, (-raw.ci95.1, -raw.ci95.0));
    assert_eq!(shown.p, raw.p);
}

#[test]
fn fixture_direction_counts() {
    let rows = main_fullshot_rows().unwrap();
    let event = axis_wins(&rows, Axis::Event).unwrap();
    assert_eq!((event.favors_a, event.favors_b, event.ties), (73, 1, 0));
    let time = axis_wins(&rows, Axis::Time).unwrap();
    assert_eq!(time.favors_a + time.favors_b + time.ties, 74);
    let diffs = paired_differences(&rows, Axis::Time).unwrap();
    assert!(diffs.iter().all(|d| d.n_pairs == 4));
}

/// Builds a table with known fixed effects, task offsets and small
/// deterministic noise, across shot sizes 2..=128.
fn shot_table() -> Vec<AurocTableRow> {
    let beta = [0.80, -0.006, 0.008, 0.007, 0.02, 0.001, -0.002, 0.0005];
    let mut rows = Vec::new();
    let mut state = 12345u64;
    let mut noise = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.004
    };
    for task in 0..20 {
        let offset = (task as f64 * 0.37).sin() * 0.05;
        for k in [2u32, 4, 8, 16, 32, 64, 128] {
            let c = f64::from(k).log2() - 5.0;
            for tt in [false, true] {
                for j in [false, true] {
                    for w in [false, true] {
                        let ind = [f64::from(u8::from(tt)), f64::from(u8::from(j)), f64::from(u8::from(w))];
                        let mean = beta[0]
                            + ind.iter().zip(&beta[1..4]).map(|(a, b)| a * b).sum::<f64>()
                            + beta[4] * c
                            + ind.iter().zip(&beta[5..8]).map(|(a, b)| a * b * c).sum::<f64>();
                        rows.push(AurocTableRow {
                            task: format!("task{task}"),
                            time_encoding: if tt { TimeEncoding::TimeTokens } else { TimeEncoding::TimePositions },
                            event_encoding: if j { EventEncoding::Joint } else { EventEncoding::Factorized },
                            workflow: w,
                            shot_size: Some(k),
                            auroc: mean + offset + noise(),
                        });
                    }
                }
            }
        }
    }
    rows
}

#[test]
fn shot_interaction_recovers_coefficients() {
    let rows = shot_table();
    let fit = fit_lmm_reml(&rows, Formula::ShotInteraction).unwrap();
    let truth = [0.80, -0.006, 0.008, 0.007, 0.02, 0.001, -0.002, 0.0005];
    assert_eq!(fit.names.len(), 8);
    for (j, (b, t)) in fit.beta.iter().zip(truth).enumerate() {
        let tol = if j == 0 { 0.03 } else { 1e-3 };
        assert!((b - t).abs() < tol, "{}: {b} vs {t}", fit.names[j]);
    }
    assert!(fit.sigma2_task > fit.sigma2_resid);
}

#[test]
fn csv_with_shot_sizes_parses() {
    let text = "task,time_encoding,event_encoding,workflow,shot_size,auroc\na,positions,joint,no,32,0.8\n";
    let rows = ehrtok_core::stats::parse_auroc_csv(text.as_bytes()).unwrap();
    assert_eq!(rows[0].shot_size, Some(32));
}
