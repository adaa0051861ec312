use clvae_core::attribution::{perturb_importance, AttributionOptions, Policy};
use clvae_core::frame::TimeSeriesFrame;
use clvae_core::scoring::{assemble_scores, score_frame};
use clvae_core::vae::{LstmVaeModel, VaeConfig};

fn model(features: &[&str], seed: u64) -> LstmVaeModel<f64> {
    let mut cfg = VaeConfig::new(features.len());
    cfg.hidden = 5;
    cfg.latent = 2;
    LstmVaeModel::new(cfg, features.iter().map(|s| s.to_string()).collect(), seed).unwrap()
}

fn frame(order: &[usize]) -> TimeSeriesFrame<f64> {
    let names = ["a", "b", "c", "d"];
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|j| {
            (0..80)
                .map(|i| ((i * (j + 2)) as f64 * 0.13).sin() + if j == 2 && (50..55).contains(&i) { 3.0 } else { 0.0 })
                .collect()
        })
        .collect();
    TimeSeriesFrame::from_columns(
        order.iter().map(|&j| names[j].to_string()).collect(),
        &order.iter().map(|&j| cols[j].clone()).collect::<Vec<_>>(),
    )
    .unwrap()
}

fn ranking(order: &[usize], policy: Policy) -> clvae_core::attribution::ImportanceRanking {
    let models = vec![model(&["a", "c"], 1), model(&["b", "d"], 2)];
    let f = frame(order);
    let comps = score_frame(&models, &f, 6).unwrap();
    let base = assemble_scores(&comps, 1.0, 1.0, true).unwrap();
    let labels: Vec<bool> = (0..80).map(|i| (50..55).contains(&i)).collect();
    let opts = AttributionOptions {
        policy,
        repeats: 3,
        seed: 4,
    };
    perturb_importance(&models, &f, &base, &labels, 6, &opts).unwrap()
}

#[test]
fn column_order_does_not_matter() {
    for policy in [Policy::Permute, Policy::Gaussian { sigma: 1.0 }] {
        let a = ranking(&[0, 1, 2, 3], policy);
        let b = ranking(&[3, 1, 0, 2], policy);
        assert_eq!(a.entries, b.entries);
        assert!((a.total() - b.total()).abs() < 1e-12);
        assert!(a.entries.iter().all(|e| e.importance >= 0.0));
    }
}

#[test]
fn csv_is_ranked() {
    let r = ranking(&[0, 1, 2, 3], Policy::Permute);
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,feature,importance");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with(&format!("1,{},", r.entries[0].feature)));
}
