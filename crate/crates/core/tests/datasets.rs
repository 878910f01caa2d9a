use std::path::PathBuf;

use kgrelpred::graph::{load_dataset, Split};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn check(name: &str, sizes: [usize; 3], entities: usize, relations: usize) {
    let g = load_dataset(data(name)).unwrap();
    let got = [Split::Train, Split::Valid, Split::Test].map(|s| g.split(s).len());
    assert_eq!(got, sizes, "{name} split sizes");
    assert_eq!(g.num_entities(), entities, "{name} entities");
    assert_eq!(g.num_relations(), relations, "{name} relations");
    // incidence completeness: every train edge appears at both endpoints
    for &e in g.split(Split::Train) {
        let t = g.edge(e);
        for v in [t.head, t.tail] {
            assert!(g.incidence(v).iter().any(|&(id, _)| id == e));
        }
    }
    let total: usize = (0..g.num_entities()).map(|v| g.incidence(v).len()).sum();
    assert_eq!(total, 2 * sizes[0]);
}

#[test]
fn umls_statistics() {
    check("umls", [5216, 652, 661], 135, 46);
}

#[test]
fn kinship_statistics() {
    check("kinship", [8544, 1068, 1074], 104, 25);
}
