use zonetrust::datagen::{gen_attack, gen_benign, group_indices, AttackProfile, BenignShape, FeatureGroup, FEATURE_COUNT};

fn column_means(d: &ndarray::Array2<f64>) -> Vec<f64> {
    d.mean_axis(ndarray::Axis(0)).unwrap().to_vec()
}

#[test]
fn benign_means_within_three_standard_errors() {
    let profile = BenignShape::default().expand().unwrap();
    let n = 10_000;
    let d = gen_benign(&profile, n, 7).unwrap();
    let sample = column_means(&d.rows);
    let mu = profile.mean_at(0);
    let var = profile.variance();
    for j in 0..FEATURE_COUNT {
        let se = (var[j] / n as f64).sqrt();
        assert!((sample[j] - mu[j]).abs() <= 3.0 * se, "feature {j}: {} vs {} (se {se})", sample[j], mu[j]);
    }
}

#[test]
fn inflated_groups_scale_by_factor() {
    let profile = BenignShape::default().expand().unwrap();
    let benign = column_means(&gen_benign(&profile, 5000, 1).unwrap().rows);
    for attack in [AttackProfile::mirai_flood(), AttackProfile::mirai_scan()] {
        let rows = gen_attack(&attack, &profile, 5000, 2).unwrap().rows;
        let means = column_means(&rows);
        for inf in &attack.inflations {
            for j in group_indices(inf.group) {
                assert!(
                    means[j] >= 0.9 * inf.factor * benign[j],
                    "{} feature {j}: {} < 0.9 * {} * {}",
                    attack.name,
                    means[j],
                    inf.factor,
                    benign[j]
                );
            }
        }
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn untouched_groups_match_benign_distribution() {
    let profile = BenignShape::default().expand().unwrap();
    let (n, m) = (3000usize, 3000usize);
    let benign = gen_benign(&profile, n, 11).unwrap().rows;
    let all_groups = [
        FeatureGroup::PacketRate,
        FeatureGroup::PacketSize,
        FeatureGroup::InterArrival,
        FeatureGroup::Connection,
    ];
    for attack in [AttackProfile::mirai_flood(), AttackProfile::mirai_scan()] {
        let rows = gen_attack(&attack, &profile, m, 12).unwrap().rows;
        let cols: Vec<usize> = all_groups
            .iter()
            .filter(|g| !attack.affects(**g))
            .flat_map(|&g| group_indices(g))
            .collect();
        // Bonferroni over the tested columns at family-wise alpha 0.05.
        let alpha = 0.05 / cols.len() as f64;
        let crit = (-(alpha / 2.0).ln() / 2.0).sqrt() * (((n + m) as f64) / (n * m) as f64).sqrt();
        for j in cols {
            let d = ks(&benign.column(j).to_vec(), &rows.column(j).to_vec());
            assert!(d < crit, "{} feature {j}: KS {d} >= {crit}", attack.name);
        }
    }
}
