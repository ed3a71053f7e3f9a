use cellscreen::campaign::run_campaign;
use cellscreen::io::config::CampaignConfig;
use cellscreen::io::log::LogFormat;

fn small_campaign() -> CampaignConfig {
    let mut cfg = CampaignConfig::single([218.80, 218.96, 218.95]);
    cfg.modules = 3;
    cfg.plan = "hppc".into();
    cfg.temperatures = vec![25.0, 35.0];
    cfg.capacity_ah.sd = [0.64, 0.60, 0.60];
    cfg
}

#[test]
fn same_seed_gives_byte_identical_logs() {
    let cfg = small_campaign();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = run_campaign(&cfg, a.path(), LogFormat::Csv).unwrap();
    let pb = run_campaign(&cfg, b.path(), LogFormat::Csv).unwrap();
    assert_eq!(pa.len(), 6);
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(x.file_name(), y.file_name());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{x:?} differs");
    }
}

#[test]
fn different_seed_changes_the_logs() {
    let mut cfg = small_campaign();
    cfg.modules = 1;
    cfg.temperatures = vec![25.0];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = run_campaign(&cfg, a.path(), LogFormat::Csv).unwrap();
    cfg.seed += 1;
    let pb = run_campaign(&cfg, b.path(), LogFormat::Csv).unwrap();
    assert_ne!(std::fs::read(&pa[0]).unwrap(), std::fs::read(&pb[0]).unwrap());
}
