//! The built-in presets must agree with the checked-in tables.

use std::f64::consts::TAU;

use paramp::presets;

fn rows(text: &str) -> Vec<Vec<&str>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').collect())
        .collect()
}

#[test]
fn parameter_presets_match_table() {
    let table = rows(include_str!("../data/presets.csv"));
    assert_eq!(table.len(), presets::all().len());
    for row in table {
        let p = presets::by_name(row[0])
            .unwrap_or_else(|| panic!("missing preset {}", row[0]))
            .params;
        let v: Vec<f64> = row[1..].iter().map(|s| s.parse().unwrap()).collect();
        let got = [
            p.omega_c / TAU,
            p.omega_s / TAU,
            p.g / TAU,
            p.gamma / TAU,
            p.kappa / TAU,
            p.lambda_drive / TAU,
            p.temperature,
        ];
        for (i, (g, want)) in got.iter().zip(&v).enumerate() {
            assert!(
                (g - want).abs() <= 1e-12 * want.abs(),
                "{} column {i}: {g} vs {want}",
                row[0]
            );
        }
    }
}

#[test]
fn smoothed_mode_tables_match() {
    let table = rows(include_str!("../data/smoothed_modes.csv"));
    let mut seen = 0;
    for set in presets::published_modes() {
        let mine: Vec<_> = table.iter().filter(|r| r[0] == set.name).collect();
        assert_eq!(mine.len(), set.q.len(), "{}", set.name);
        for (i, r) in mine.iter().enumerate() {
            assert_eq!(r[1].parse::<u32>().unwrap(), set.q[i]);
            assert_eq!(r[2].parse::<f64>().unwrap(), set.a[i]);
            assert_eq!(r[3].parse::<f64>().unwrap(), set.phi[i]);
        }
        seen += mine.len();
    }
    assert_eq!(seen, table.len());
}

#[test]
fn frequency_ratio_is_five() {
    let d = presets::fig1_global::<f64>(0.02).derived();
    assert_eq!(d.harmonic_ratio_m, Some(5));
}
