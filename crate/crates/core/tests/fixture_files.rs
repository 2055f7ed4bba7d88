//! The JSON files under `fixtures/` must stay identical to the in-code
//! fixtures they were written from.

use std::path::PathBuf;

use fluidnet::fixtures;
use fluidnet::network::{Network, NetworkSpec};

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn network_files_match_fixtures() {
    for (name, spec) in [
        ("rs.json", fixtures::rybko_stolyar_spec()),
        ("sq.json", fixtures::single_queue_spec()),
        ("det_sq.json", fixtures::deterministic_queue_spec()),
        ("overloaded.json", fixtures::overloaded_queue_spec()),
    ] {
        let loaded = NetworkSpec::load(path(name)).unwrap();
        assert_eq!(loaded, spec, "{name}");
    }
}

#[test]
fn witness_files_match_fixtures() {
    let rs = fixtures::rybko_stolyar();
    let w = fluidnet::divergence::Witness::load(&rs, path("rs_witness.json")).unwrap();
    assert_eq!(&w, &fixtures::rs_witness(&rs).unwrap());
    let ov = Network::load(path("overloaded.json")).unwrap();
    let w = fluidnet::divergence::Witness::load(&ov, path("overloaded_witness.json")).unwrap();
    assert_eq!(&w, &fixtures::overloaded_witness(&ov).unwrap());
}
