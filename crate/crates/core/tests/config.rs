use hmpdm::config::*;

#[test]
fn canonical_text_is_order_independent() {
    let a = RunConfig::parse("p_sc = 0.5\nhistory = 4 # comment\n").unwrap();
    let b = RunConfig::parse("# header\n history=4\n\np_sc   =   0.5").unwrap();
    assert_eq!(a.canonical_text(), b.canonical_text());
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), RunConfig::default().hash());
}

#[test]
fn canonical_text_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.widths = [32, 64, 96];
    cfg.codec = CodecMode::Learned;
    cfg.lr = 3.5e-4;
    assert_eq!(RunConfig::parse(&cfg.canonical_text()).unwrap(), cfg);
    let keys: Vec<_> = cfg.entries().into_iter().map(|(k, _)| k).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn rejects_unknown_duplicate_and_invalid() {
    assert!(RunConfig::parse("colour = red").unwrap_err().to_string().contains("unknown key"));
    assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
    assert!(RunConfig::parse("p_sc = 1.5").is_err());
    assert!(RunConfig::parse("history = 0").is_err());
    assert!(RunConfig::parse("height = 24").is_err());
    assert!(RunConfig::parse("codec = vae").is_err());
    assert!(RunConfig::parse("widths = 1,2").is_err());
}

#[test]
fn identity_channels_follow_factor() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.codec_channels(), 48);
    assert_eq!((cfg.latent_height(), cfg.latent_width()), (8, 8));
}
