use std::path::PathBuf;

use ino_cli::{Config, ConfigError};

#[test]
fn parses_all_keys() {
    let cfg = Config::parse(
        "# repository\n\
         dataDir = /var/ino\n\
         port=9000\n\
         apiKey = s3cret\n\
         ontologyPath=/etc/ino/ontology.txt\n\
         \n\
         pageSize = 7\n",
    )
    .unwrap();
    assert_eq!(
        cfg,
        Config {
            data_dir: PathBuf::from("/var/ino"),
            port: 9000,
            api_key: Some("s3cret".into()),
            ontology_path: Some(PathBuf::from("/etc/ino/ontology.txt")),
            page_size: 7,
        }
    );
}

#[test]
fn defaults_apply_to_omitted_keys() {
    let cfg = Config::parse("dataDir=d").unwrap();
    assert_eq!(cfg.port, 8080);
    assert_eq!(cfg.api_key, None);
    assert_eq!(cfg.page_size, 100);
}

#[test]
fn rejects_bad_input() {
    assert!(matches!(Config::parse("port=1"), Err(ConfigError::Missing("dataDir"))));
    for (text, line) in [
        ("dataDir=d\nport=http", 2),
        ("dataDir=d\npageSize=0", 2),
        ("colour=blue\ndataDir=d", 1),
        ("dataDir=d\n\njust words", 3),
        ("dataDir=d\nport=70000", 2),
    ] {
        match Config::parse(text) {
            Err(ConfigError::Syntax { line: l, .. }) => assert_eq!(l, line, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn load_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ino.conf");
    std::fs::write(&path, "dataDir=data\nontologyPath=onto.txt\n").unwrap();
    let cfg = Config::load(&path).unwrap();
    assert_eq!(cfg.data_dir, dir.path().join("data"));
    assert_eq!(cfg.ontology_path, Some(dir.path().join("onto.txt")));
    assert!(matches!(Config::load(&dir.path().join("missing")), Err(ConfigError::Io { .. })));
}
