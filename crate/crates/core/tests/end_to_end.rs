use cellscreen::campaign::{run_module, sample_modules};
use cellscreen::diagnostics::{analyze_module, voltage_window};
use cellscreen::io::config::{CampaignConfig, PositionNormal};
use cellscreen::io::log::{read_log, write_log};
use cellscreen::protocol::TestPlan;

const Q: [f64; 3] = [218.80, 218.96, 218.95];

fn injected() -> CampaignConfig {
    let mut cfg = CampaignConfig::single(Q);
    cfg.r0_constant_mohm = Some(PositionNormal {
        mean: [0.2185, 0.1996, 0.2181],
        sd: [0.0; 3],
    });
    cfg
}

#[test]
fn standard_run_follows_the_plan_and_recovers_capacity() {
    let cfg = injected();
    let spec = &sample_modules(&cfg).unwrap()[0];
    let log = run_module(&cfg, spec, 0).unwrap();
    assert!(log.meta.abort.is_none(), "{:?}", log.meta.abort);

    let plan = TestPlan::standard(25.0);
    let labels: Vec<&str> = plan.segments.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(log.meta.segments, labels);
    let visited: Vec<u32> = log.segment_ranges().into_iter().map(|(id, _)| id).collect();
    assert!(visited.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(visited.len(), labels.len());

    let w = voltage_window(std::slice::from_ref(&log)).unwrap();
    assert!(w.v_lower >= 3.3 && w.v_upper <= 4.2, "{w:?}");
    let m = analyze_module(&[&log], Some(&w)).unwrap();
    for (c, q) in m.cells.iter().zip(Q) {
        let got = c.q_ah.unwrap();
        assert!((got / q - 1.0).abs() < 0.005, "{got} vs {q}");
        assert_eq!(c.resistance.len(), 3);
    }
}

#[test]
fn written_log_reads_back_identically() {
    let cfg = injected();
    let spec = &sample_modules(&cfg).unwrap()[0];
    let mut cfg_hppc = cfg.clone();
    cfg_hppc.plan = "hppc".into();
    let log = run_module(&cfg_hppc, spec, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    // text logs are fixed at six decimals; the structured variant is exact
    for (name, expected) in [("m.csv", log.quantized()), ("m.json", log.clone())] {
        let path = dir.path().join(name);
        write_log(&path, &log).unwrap();
        let back = read_log(&path).unwrap();
        assert_eq!(back.meta, expected.meta, "{name}");
        assert_eq!(back.records.len(), expected.records.len());
        let first_diff = back.records.iter().zip(&expected.records).position(|(a, b)| a != b);
        if let Some(k) = first_diff {
            panic!("{name}: {:?}\n vs {:?}", back.records[k], expected.records[k]);
        }
    }
}
